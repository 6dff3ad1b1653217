//! Weighted cross-fade merging of overlapping tiles.
//!
//! Two overlapping pieces A (already placed) and B (incoming) are combined as
//! `I = (1 - w) * I_A + w * I_B` with `w = (j / N)^gamma`, where `N` is the
//! overlap length along the merge axis and `j` counts voxels from the start of
//! B. The weight of A falls from 1 toward 0 across the overlap; past the
//! overlap B is copied.
//!
//! Assembly is hierarchical and strictly sequential along each axis: tiles are
//! merged into long cuboids along the first configured axis, cuboids into flat
//! slabs along the second, and slabs into the volume along the third, always in
//! ascending lattice order. The scheme is order dependent, so the order is part
//! of the contract.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{linear_index, voxel_count, Axis, Dims, Grid};
use crate::plan::{TilePlan, TileSpec};
use crate::scalar::Real;

/// `w = (j / N)^gamma` with `gamma > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightFunction<T> {
    gamma: T,
}

impl<T: Real> WeightFunction<T> {
    pub fn new(gamma: T) -> Result<Self> {
        if !gamma.is_finite() || gamma <= T::zero() {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite and > 0, got {gamma}"
            )));
        }
        Ok(WeightFunction { gamma })
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// Weight of the incoming piece at offset `j` of an `n`-voxel overlap.
    pub fn weight(&self, j: usize, n: usize) -> Result<T> {
        if n < 1 {
            return Err(Error::InvalidParameter("overlap length must be at least 1".into()));
        }
        if j >= n {
            return Err(Error::InvalidParameter(format!(
                "overlap offset {j} out of range 0..{n}"
            )));
        }
        Ok(self.weight_unchecked(j, n))
    }

    #[inline]
    fn weight_unchecked(&self, j: usize, n: usize) -> T {
        let ratio = T::from_usize(j).unwrap() / T::from_usize(n).unwrap();
        if j == 0 {
            T::zero()
        } else if self.gamma == T::one() {
            ratio
        } else {
            ratio.powf(self.gamma)
        }
    }

    /// Weights for offsets `0..n`.
    pub fn table(&self, n: usize) -> Vec<T> {
        (0..n).map(|j| self.weight_unchecked(j, n)).collect()
    }
}

pub fn weight<T: Real>(j: usize, n: usize, gamma: T) -> Result<T> {
    WeightFunction::new(gamma)?.weight(j, n)
}

/// `(1 - w) * a + w * b`.
#[inline]
pub fn blend_pair<T: Real>(a: T, b: T, w: T) -> T {
    (T::one() - w) * a + w * b
}

/// Free parameters of a merge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Overlap fraction per axis (x, y, z).
    pub overlap: [f64; 3],
    pub gamma: f64,
    /// Tiles merge along `axis_order[0]` first, then `[1]`, then `[2]`.
    pub axis_order: [Axis; 3],
    /// Value of voxels covered by no retained tile, in the units being merged.
    pub fill: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            overlap: [0.5; 3],
            gamma: 1.0,
            axis_order: [Axis::X, Axis::Y, Axis::Z],
            fill: 0.0,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 3];
        for a in self.axis_order {
            seen[a.index()] = true;
        }
        if seen.contains(&false) {
            return Err(Error::InvalidParameter(format!(
                "axis order {:?} is not a permutation of x, y, z",
                self.axis_order
            )));
        }
        if let Some(&p) = self.overlap.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::OverlapOutOfRange(p));
        }
        if !self.fill.is_finite() {
            return Err(Error::InvalidParameter("fill value must be finite".into()));
        }
        WeightFunction::new(self.gamma)?;
        Ok(())
    }
}

/// Read-only view of a box of values placed in volume coordinates.
///
/// `covered` is `None` for a fully populated box such as a predicted tile.
#[derive(Clone, Copy, Debug)]
pub struct Piece<'a, T> {
    pub origin: Dims,
    pub dims: Dims,
    pub values: &'a [T],
    pub covered: Option<&'a [bool]>,
}

impl<'a, T: Real> Piece<'a, T> {
    pub fn tile(spec: &TileSpec, values: &'a Grid<T>) -> Result<Self> {
        if values.dims() != spec.size {
            return Err(Error::DimMismatch {
                left: spec.size,
                right: values.dims(),
            });
        }
        Ok(Piece {
            origin: spec.origin,
            dims: spec.size,
            values: values.values(),
            covered: None,
        })
    }
}

/// Accumulator for merging pieces along one axis.
///
/// Tracks which voxels hold placed data and where the placed extent ends along
/// the merge axis; an incoming piece only blends where it overlaps that extent
/// and the voxel is covered on both sides.
#[derive(Clone, Debug)]
pub struct Canvas<T> {
    origin: Dims,
    dims: Dims,
    axis: Axis,
    values: Vec<T>,
    covered: Vec<bool>,
    covered_end: Option<usize>,
}

impl<T: Real> Canvas<T> {
    pub fn new(origin: Dims, dims: Dims, axis: Axis, fill: T) -> Self {
        let n = voxel_count(dims);
        Canvas {
            origin,
            dims,
            axis,
            values: vec![fill; n],
            covered: vec![false; n],
            covered_end: None,
        }
    }

    pub fn origin(&self) -> Dims {
        self.origin
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn covered(&self) -> &[bool] {
        &self.covered
    }

    /// End (exclusive, volume coordinates) of the placed extent along the merge axis.
    pub fn covered_end(&self) -> Option<usize> {
        self.covered_end
    }

    pub fn is_blank(&self) -> bool {
        self.covered_end.is_none()
    }

    pub fn as_piece(&self) -> Piece<'_, T> {
        Piece {
            origin: self.origin,
            dims: self.dims,
            values: &self.values,
            covered: Some(&self.covered),
        }
    }

    /// Places `piece`, cross-fading over its overlap with the placed extent.
    ///
    /// The overlap length is `N = covered_end - piece start`; a piece starting
    /// past the placed extent leaves the gap at the fill value and is copied.
    /// Returns the `N` used (0 when nothing blended).
    pub fn merge_along_axis(&mut self, piece: Piece<'_, T>, weights: &WeightFunction<T>) -> Result<usize> {
        let ax = self.axis.index();
        for a in 0..3 {
            let inside =
                piece.origin[a] >= self.origin[a] && piece.origin[a] + piece.dims[a] <= self.origin[a] + self.dims[a];
            if a != ax && (piece.origin[a] != self.origin[a] || piece.dims[a] != self.dims[a]) {
                return Err(Error::InvalidParameter(format!(
                    "cross-section mismatch on axis {a}: piece [{}, +{}) vs canvas [{}, +{})",
                    piece.origin[a], piece.dims[a], self.origin[a], self.dims[a]
                )));
            }
            if !inside {
                return Err(Error::InvalidParameter(format!(
                    "piece at {:?}+{:?} lies outside canvas {:?}+{:?}",
                    piece.origin, piece.dims, self.origin, self.dims
                )));
            }
        }
        if piece.values.len() != voxel_count(piece.dims) || piece.covered.is_some_and(|c| c.len() != piece.values.len())
        {
            return Err(Error::InvalidParameter(
                "piece buffer length disagrees with its dims".into(),
            ));
        }

        let start = piece.origin[ax];
        let overlap = self.covered_end.map_or(0, |end| end.saturating_sub(start));
        let table = weights.table(overlap);

        let [px, py, pz] = piece.dims;
        let off = [0, 1, 2].map(|a| piece.origin[a] - self.origin[a]);
        for z in 0..pz {
            for y in 0..py {
                let prow = linear_index(piece.dims, 0, y, z);
                let crow = linear_index(self.dims, off[0], off[1] + y, off[2] + z);
                for x in 0..px {
                    let pi = prow + x;
                    if let Some(cov) = piece.covered {
                        if !cov[pi] {
                            continue;
                        }
                    }
                    let ci = crow + x;
                    let j = match self.axis {
                        Axis::X => x,
                        Axis::Y => y,
                        Axis::Z => z,
                    };
                    let incoming = piece.values[pi];
                    if j < overlap && self.covered[ci] {
                        self.values[ci] = blend_pair(self.values[ci], incoming, table[j]);
                    } else {
                        self.values[ci] = incoming;
                        self.covered[ci] = true;
                    }
                }
            }
        }
        let end = start + piece.dims[ax];
        self.covered_end = Some(self.covered_end.map_or(end, |e| e.max(end)));
        Ok(overlap)
    }

    /// Crops the canvas to `[0, dims)` of the volume; uncovered voxels keep the fill value.
    fn into_grid(self, dims: Dims) -> Result<Grid<T>> {
        debug_assert_eq!(self.origin, [0, 0, 0]);
        if dims == self.dims {
            return Grid::new(dims, crate::grid::UNIT_SPACING, self.values);
        }
        let mut values = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let row = linear_index(self.dims, 0, y, z);
                values.extend_from_slice(&self.values[row..row + dims[0]]);
            }
        }
        Grid::new(dims, crate::grid::UNIT_SPACING, values)
    }
}

/// Assembles the volume, asking `predict` for each retained tile.
///
/// Slabs (one per lattice index of the last merge axis) are built
/// independently on the current rayon pool and folded into the volume in
/// ascending order, so the result does not depend on the thread count.
/// `predict` is called for every retained tile exactly once.
pub fn assemble_with<T, F>(plan: &TilePlan, config: &MergeConfig, predict: F) -> Result<Grid<T>>
where
    T: Real,
    F: Fn(&TileSpec) -> Result<Grid<T>> + Sync,
{
    config.validate()?;
    if config.overlap != plan.overlap() {
        return Err(Error::InvalidParameter(format!(
            "merge overlap {:?} differs from plan overlap {:?}",
            config.overlap,
            plan.overlap()
        )));
    }
    let weights = WeightFunction::new(T::from_f64_lossy(config.gamma))?;
    let fill = T::from_f64_lossy(config.fill);
    let [a0, a1, a2] = config.axis_order.map(Axis::index);
    let counts = plan.lattice_counts();
    let padded = plan.padded_dims();
    let tile = plan.tile_size();

    let build_slab = |i2: usize| -> Result<Option<Canvas<T>>> {
        let o2 = plan.origins(a2)[i2];
        let mut slab_origin = [0; 3];
        let mut slab_dims = padded;
        slab_origin[a2] = o2;
        slab_dims[a2] = tile[a2];
        let mut slab = Canvas::new(slab_origin, slab_dims, config.axis_order[1], fill);
        for i1 in 0..counts[a1] {
            let mut row_origin = slab_origin;
            let mut row_dims = slab_dims;
            row_origin[a1] = plan.origins(a1)[i1];
            row_dims[a1] = tile[a1];
            let mut row = Canvas::new(row_origin, row_dims, config.axis_order[0], fill);
            for i0 in 0..counts[a0] {
                let mut lattice = [0; 3];
                lattice[a0] = i0;
                lattice[a1] = i1;
                lattice[a2] = i2;
                if !plan.is_retained(lattice) {
                    continue;
                }
                let spec = plan.tile(lattice);
                let values = predict(&spec)?;
                if let Some(index) = values.values().iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { index });
                }
                row.merge_along_axis(Piece::tile(&spec, &values)?, &weights)?;
            }
            if !row.is_blank() {
                slab.merge_along_axis(row.as_piece(), &weights)?;
            }
        }
        Ok((!slab.is_blank()).then_some(slab))
    };

    let mut volume = Canvas::new([0; 3], padded, config.axis_order[2], fill);
    let batch = rayon::current_num_threads().max(1);
    let slab_indices: Vec<usize> = (0..counts[a2]).collect();
    for chunk in slab_indices.chunks(batch) {
        let slabs: Vec<Result<Option<Canvas<T>>>> = if chunk.len() > 1 {
            chunk.par_iter().map(|&i2| build_slab(i2)).collect()
        } else {
            chunk.iter().map(|&i2| build_slab(i2)).collect()
        };
        for slab in slabs {
            if let Some(slab) = slab? {
                volume.merge_along_axis(slab.as_piece(), &weights)?;
            }
        }
    }
    volume.into_grid(plan.volume_dims())
}

/// Assembles the volume from predictions keyed by lattice index.
///
/// Every retained tile needs a prediction; predictions for skipped tiles are rejected.
pub fn assemble<T: Real>(
    plan: &TilePlan,
    tiles: &HashMap<[usize; 3], Grid<T>>,
    config: &MergeConfig,
) -> Result<Grid<T>> {
    if let Some(extra) = tiles.keys().find(|l| {
        let counts = plan.lattice_counts();
        (0..3).any(|a| l[a] >= counts[a]) || !plan.is_retained(**l)
    }) {
        return Err(Error::InvalidParameter(format!(
            "prediction supplied for lattice index {extra:?}, which is not a retained tile"
        )));
    }
    assemble_with(plan, config, |spec| {
        let grid = tiles.get(&spec.lattice).ok_or(Error::MissingTile(spec.lattice))?;
        if grid.dims() != spec.size {
            return Err(Error::DimMismatch {
                left: spec.size,
                right: grid.dims(),
            });
        }
        Ok(grid.clone())
    })
}
