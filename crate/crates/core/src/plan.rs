//! Tile lattice planning.
//!
//! Per axis the stride is `round(tile_len * (1 - p))`, at least one voxel.
//! Origins advance by the stride and the last tile is clamped against the far
//! boundary, so it may overlap its predecessor by more than `tile_len - stride`.
//! An axis shorter than the tile gets a single origin and right padding.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{linear_index, voxel_count, BinaryMask, Dims};

/// Default subvolume size (x, y, z).
pub const DEFAULT_TILE: Dims = [32, 96, 96];

/// Stride for a tile of `tile_len` voxels at overlap fraction `p`.
pub fn stride_for(tile_len: usize, p: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::OverlapOutOfRange(p));
    }
    if tile_len == 0 {
        return Err(Error::InvalidParameter("tile length must be at least 1".into()));
    }
    let raw = tile_len as f64 * (1.0 - p);
    // snap away representation noise such as 96 * 0.3 = 28.799999999999997 before half-up rounding
    let snapped = (raw * 1e9).round() / 1e9;
    Ok(((snapped + 0.5).floor() as usize).max(1))
}

/// Tile origins along one axis of `extent` voxels.
pub fn plan_axis(extent: usize, tile_len: usize, p: f64) -> Result<Vec<usize>> {
    let stride = stride_for(tile_len, p)?;
    if extent == 0 {
        return Err(Error::InvalidParameter("extent must be at least 1".into()));
    }
    if extent <= tile_len {
        return Ok(vec![0]);
    }
    let last = extent - tile_len;
    let mut origins: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|&o| o + tile_len < extent)
        .collect();
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    Ok(origins)
}

/// One subvolume of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct TileSpec {
    /// First voxel, in volume coordinates.
    pub origin: Dims,
    pub size: Dims,
    /// Position in the lattice.
    pub lattice: [usize; 3],
    /// Plan-order index (lattice linearized x fastest).
    pub index: usize,
}

/// Lattice of subvolumes covering a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct TilePlan {
    volume_dims: Dims,
    tile_size: Dims,
    overlap: [f64; 3],
    origins: [Vec<usize>; 3],
    stride: Dims,
    padding: Dims,
    retained: Vec<bool>,
}

pub fn plan_volume(dims: Dims, tile_size: Dims, overlap: [f64; 3]) -> Result<TilePlan> {
    let mut origins: [Vec<usize>; 3] = Default::default();
    let mut stride = [0; 3];
    let mut padding = [0; 3];
    for a in 0..3 {
        origins[a] = plan_axis(dims[a], tile_size[a], overlap[a])?;
        stride[a] = stride_for(tile_size[a], overlap[a])?;
        padding[a] = tile_size[a].saturating_sub(dims[a]);
    }
    let total = origins.iter().map(Vec::len).product();
    Ok(TilePlan {
        volume_dims: dims,
        tile_size,
        overlap,
        origins,
        stride,
        padding,
        retained: vec![true; total],
    })
}

impl TilePlan {
    pub fn volume_dims(&self) -> Dims {
        self.volume_dims
    }

    pub fn tile_size(&self) -> Dims {
        self.tile_size
    }

    pub fn overlap(&self) -> [f64; 3] {
        self.overlap
    }

    pub fn origins(&self, axis: usize) -> &[usize] {
        &self.origins[axis]
    }

    pub fn stride(&self) -> Dims {
        self.stride
    }

    /// Nominal pairwise overlap `tile_len - stride` per axis.
    pub fn overlap_len(&self) -> Dims {
        [0, 1, 2].map(|a| self.tile_size[a] - self.stride[a])
    }

    /// Right padding per axis where the volume is shorter than the tile.
    pub fn padding(&self) -> Dims {
        self.padding
    }

    /// Volume dims grown by the padding.
    pub fn padded_dims(&self) -> Dims {
        [0, 1, 2].map(|a| self.volume_dims[a] + self.padding[a])
    }

    pub fn lattice_counts(&self) -> Dims {
        [0, 1, 2].map(|a| self.origins[a].len())
    }

    pub fn total(&self) -> usize {
        self.retained.len()
    }

    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }

    pub fn lattice_index(&self, lattice: [usize; 3]) -> usize {
        linear_index(self.lattice_counts(), lattice[0], lattice[1], lattice[2])
    }

    pub fn is_retained(&self, lattice: [usize; 3]) -> bool {
        self.retained[self.lattice_index(lattice)]
    }

    pub fn tile(&self, lattice: [usize; 3]) -> TileSpec {
        TileSpec {
            origin: [0, 1, 2].map(|a| self.origins[a][lattice[a]]),
            size: self.tile_size,
            lattice,
            index: self.lattice_index(lattice),
        }
    }

    /// Every tile in plan order.
    pub fn tiles(&self) -> impl Iterator<Item = TileSpec> + '_ {
        let [nx, ny, nz] = self.lattice_counts();
        (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| self.tile([x, y, z]))))
    }

    pub fn retained(&self) -> impl Iterator<Item = TileSpec> + '_ {
        self.tiles().filter(|t| self.retained[t.index])
    }

    pub fn skipped(&self) -> impl Iterator<Item = TileSpec> + '_ {
        self.tiles().filter(|t| !self.retained[t.index])
    }

    /// Keeps the tiles whose footprint holds at least one mask voxel.
    pub fn filter_by_mask(&self, mask: &BinaryMask) -> Result<TilePlan> {
        mask.check_dims(self.volume_dims)?;
        let table = PrefixCount::new(mask);
        let retained = self
            .tiles()
            .map(|t| {
                let hi = [0, 1, 2].map(|a| (t.origin[a] + t.size[a]).min(self.volume_dims[a]));
                table.count(t.origin, hi) > 0
            })
            .collect();
        Ok(TilePlan {
            retained,
            ..self.clone()
        })
    }

    pub fn count_report(&self) -> CountReport {
        let total = self.total();
        let retained = self.retained_count();
        CountReport {
            overlap: self.overlap,
            total,
            retained,
            skipped: total - retained,
            lattice_counts: self.lattice_counts(),
            per_axis_origins: self.origins.clone(),
            stride: self.stride,
            overlap_n: self.overlap_len(),
        }
    }
}

/// Tile counts of a plan, the compute side of the overlap trade-off.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountReport {
    pub overlap: [f64; 3],
    pub total: usize,
    pub retained: usize,
    pub skipped: usize,
    pub lattice_counts: Dims,
    pub per_axis_origins: [Vec<usize>; 3],
    pub stride: Dims,
    pub overlap_n: Dims,
}

/// Summed-volume table of mask voxels for O(1) box counts.
struct PrefixCount {
    dims: Dims,
    table: Vec<u32>,
}

impl PrefixCount {
    fn new(mask: &BinaryMask) -> Self {
        let [nx, ny, nz] = mask.dims();
        let dims = [nx + 1, ny + 1, nz + 1];
        let mut table = vec![0u32; voxel_count(dims)];
        let at = |x, y, z| linear_index(dims, x, y, z);
        for z in 1..=nz {
            for y in 1..=ny {
                for x in 1..=nx {
                    let v = mask.get(x - 1, y - 1, z - 1) as u32;
                    table[at(x, y, z)] = v
                        .wrapping_add(table[at(x - 1, y, z)])
                        .wrapping_add(table[at(x, y - 1, z)])
                        .wrapping_add(table[at(x, y, z - 1)])
                        .wrapping_sub(table[at(x - 1, y - 1, z)])
                        .wrapping_sub(table[at(x - 1, y, z - 1)])
                        .wrapping_sub(table[at(x, y - 1, z - 1)])
                        .wrapping_add(table[at(x - 1, y - 1, z - 1)]);
                }
            }
        }
        PrefixCount { dims, table }
    }

    /// Mask voxels in `[lo, hi)`.
    fn count(&self, lo: Dims, hi: Dims) -> u32 {
        let t = |x, y, z| self.table[linear_index(self.dims, x, y, z)];
        let [x0, y0, z0] = lo;
        let [x1, y1, z1] = hi;
        t(x1, y1, z1)
            .wrapping_sub(t(x0, y1, z1))
            .wrapping_sub(t(x1, y0, z1))
            .wrapping_sub(t(x1, y1, z0))
            .wrapping_add(t(x0, y0, z1))
            .wrapping_add(t(x0, y1, z0))
            .wrapping_add(t(x1, y0, z0))
            .wrapping_sub(t(x0, y0, z0))
    }
}
