//! Intensity normalization and masking.
//!
//! MRI is divided by a fixed 1000. CT is shifted by its own minimum so the
//! result is nonnegative, then divided by 2000; the shift is kept in a
//! [`NormalizationRecord`] so predictions can be mapped back to HU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};
use crate::scalar::Real;

pub const MRI_SCALE: f64 = 1000.0;
pub const CT_SCALE: f64 = 2000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    mri_scale: f64,
    ct_scale: f64,
    ct_offset: f64,
}

impl NormalizationRecord {
    pub fn new(ct_offset: f64) -> Result<Self> {
        if !ct_offset.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ct offset must be finite, got {ct_offset}"
            )));
        }
        Ok(NormalizationRecord {
            mri_scale: MRI_SCALE,
            ct_scale: CT_SCALE,
            ct_offset,
        })
    }

    pub fn mri_scale(&self) -> f64 {
        self.mri_scale
    }

    pub fn ct_scale(&self) -> f64 {
        self.ct_scale
    }

    /// HU value subtracted before scaling (the volume minimum).
    pub fn ct_offset(&self) -> f64 {
        self.ct_offset
    }

    /// Maps one HU value into normalized units.
    pub fn to_normalized(&self, hu: f64) -> f64 {
        (hu - self.ct_offset) / self.ct_scale
    }

    /// Maps one normalized value back to HU.
    pub fn to_hu(&self, normalized: f64) -> f64 {
        normalized * self.ct_scale + self.ct_offset
    }
}

pub fn normalize_mri<T: Real>(grid: &Grid<T>) -> Grid<T> {
    let values = grid
        .values()
        .iter()
        .map(|&v| T::from_f64_lossy(v.as_f64() / MRI_SCALE))
        .collect();
    Grid::from_parts_unchecked(grid.dims(), grid.spacing(), values)
}

/// Shifts by the global volume minimum and scales by 1/2000.
///
/// The minimum voxel maps to exactly zero.
pub fn normalize_ct<T: Real>(grid: &Grid<T>) -> Result<(Grid<T>, NormalizationRecord)> {
    let (min, _) = grid.min_max().ok_or(Error::EmptyVolume)?;
    let record = NormalizationRecord::new(min)?;
    let values = grid
        .values()
        .iter()
        .map(|&v| T::from_f64_lossy(record.to_normalized(v.as_f64())))
        .collect();
    Ok((Grid::from_parts_unchecked(grid.dims(), grid.spacing(), values), record))
}

pub fn denormalize_ct<T: Real>(grid: &Grid<T>, record: &NormalizationRecord) -> Result<Grid<T>> {
    grid.try_map(|v| T::from_f64_lossy(record.to_hu(v.as_f64())))
}

/// Zeroes every voxel outside the mask.
pub fn apply_mask<T: Real>(grid: &Grid<T>, mask: &BinaryMask) -> Result<Grid<T>> {
    mask.check_dims(grid.dims())?;
    let values = grid
        .values()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { v } else { T::zero() })
        .collect();
    Ok(Grid::from_parts_unchecked(grid.dims(), grid.spacing(), values))
}
