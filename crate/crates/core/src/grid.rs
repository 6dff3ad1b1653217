//! Dense voxel grids and binary masks.
//!
//! Voxels are linearized with x fastest, then y, then z.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Voxel counts along (x, y, z).
pub type Dims = [usize; 3];

/// Default voxel spacing in millimeters.
pub const UNIT_SPACING: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_char(c: char) -> Option<Axis> {
        match c.to_ascii_lowercase() {
            'x' => Some(Axis::X),
            'y' => Some(Axis::Y),
            'z' => Some(Axis::Z),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub(crate) fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidGrid(format!("dims must be positive, got {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidGrid(format!("dims {dims:?} overflow")))?;
    Ok(())
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidGrid(format!(
            "spacing must be finite and positive, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Dense 3D scalar field with voxel spacing in millimeters.
///
/// Every value is finite; constructors reject anything else.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    spacing: [f64; 3],
    values: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn new(dims: Dims, spacing: [f64; 3], values: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        let expected = voxel_count(dims);
        if values.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "dims {dims:?} need {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Grid { dims, spacing, values })
    }

    /// Grid with every voxel set to `value`, unit spacing.
    pub fn filled(dims: Dims, value: T) -> Result<Self> {
        check_dims(dims)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(Grid {
            dims,
            spacing: UNIT_SPACING,
            values: vec![value; voxel_count(dims)],
        })
    }

    /// Grid evaluated from voxel coordinates, unit spacing.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        check_dims(dims)?;
        let mut values = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    values.push(f(x, y, z));
                }
            }
        }
        Grid::new(dims, UNIT_SPACING, values)
    }

    /// Constructor for values produced by an operation already known to keep them finite.
    pub(crate) fn from_parts_unchecked(dims: Dims, spacing: [f64; 3], values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), voxel_count(dims));
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Grid { dims, spacing, values }
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        linear_index(self.dims, x, y, z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.values[self.index(x, y, z)]
    }

    /// Elementwise map; fails if `f` produces a non-finite value.
    pub fn try_map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        let values: Vec<T> = self.values.iter().map(|&v| f(v)).collect();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Grid::from_parts_unchecked(self.dims, self.spacing, values))
    }

    /// Converts the voxel type, rounding to nearest.
    pub fn cast<U: Real>(&self) -> Result<Grid<U>> {
        let values: Vec<U> = self.values.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect();
        Grid::new(self.dims, self.spacing, values)
    }

    /// Minimum and maximum voxel values.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.values.iter().fold(None, |acc, &v| {
            let v = v.as_f64();
            Some(match acc {
                None => (v, v),
                Some((lo, hi)) => (lo.min(v), hi.max(v)),
            })
        })
    }

    /// Copies the box `[origin, origin + size)`; voxels beyond the grid read as `pad`.
    pub fn extract(&self, origin: Dims, size: Dims, pad: T) -> Result<Self> {
        check_dims(size)?;
        if !pad.is_finite() {
            return Err(Error::InvalidParameter("pad value must be finite".into()));
        }
        let mut values = vec![pad; voxel_count(size)];
        let avail = [0, 1, 2].map(|a| self.dims[a].saturating_sub(origin[a]).min(size[a]));
        if avail.iter().all(|&n| n > 0) {
            for z in 0..avail[2] {
                for y in 0..avail[1] {
                    let src = self.index(origin[0], origin[1] + y, origin[2] + z);
                    let dst = linear_index(size, 0, y, z);
                    values[dst..dst + avail[0]].copy_from_slice(&self.values[src..src + avail[0]]);
                }
            }
        }
        Ok(Grid::from_parts_unchecked(size, self.spacing, values))
    }
}

/// Voxelwise {0, 1} indicator congruent with a grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        check_dims(dims)?;
        if bits.len() != voxel_count(dims) {
            return Err(Error::InvalidGrid(format!(
                "mask dims {dims:?} need {} bits, got {}",
                voxel_count(dims),
                bits.len()
            )));
        }
        Ok(BinaryMask { dims, bits })
    }

    pub fn full(dims: Dims) -> Result<Self> {
        check_dims(dims)?;
        Ok(BinaryMask {
            dims,
            bits: vec![true; voxel_count(dims)],
        })
    }

    pub fn empty(dims: Dims) -> Result<Self> {
        check_dims(dims)?;
        Ok(BinaryMask {
            dims,
            bits: vec![false; voxel_count(dims)],
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        check_dims(dims)?;
        let mut bits = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    bits.push(f(x, y, z));
                }
            }
        }
        Ok(BinaryMask { dims, bits })
    }

    /// Binarizes a grid: voxels strictly above `threshold` are set.
    pub fn from_grid<T: Real>(grid: &Grid<T>, threshold: f64) -> Self {
        BinaryMask {
            dims: grid.dims(),
            bits: grid.values().iter().map(|v| v.as_f64() > threshold).collect(),
        }
    }

    /// The mask as a {0, 1} grid.
    pub fn to_grid<T: Real>(&self) -> Grid<T> {
        let values = self
            .bits
            .iter()
            .map(|&b| if b { T::one() } else { T::zero() })
            .collect();
        Grid::from_parts_unchecked(self.dims, UNIT_SPACING, values)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[linear_index(self.dims, x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fails unless `dims` equals the mask dims.
    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return Err(Error::DimMismatch {
                left: dims,
                right: self.dims,
            });
        }
        Ok(())
    }
}
