//! File formats: the native raw grid format and a read-only NIfTI-1 reader.

pub mod nifti;
pub mod vgrid;

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::VoxelGrid;

pub use nifti::{read_nifti, NiftiHeader};
pub use vgrid::{read_vgrid, vgrid_paths, write_vgrid, GridHeader};

/// Reads a volume by extension: `.nii` as NIfTI-1, anything else as a vgrid
/// (header path, `.vgrid.raw` payload path, or bare stem).
pub fn read_volume(path: &Path) -> Result<VoxelGrid> {
    if is_nifti(path) {
        return Ok(read_nifti(path, false)?.0);
    }
    let (header, payload) = vgrid_paths(path);
    read_vgrid(&header, &payload)
}

/// Reads a mask: voxels strictly above 0.5 are set.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    if is_nifti(path) {
        return read_nifti(path, true)?
            .1
            .ok_or_else(|| Error::Malformed("mask requested but not produced".into()));
    }
    Ok(BinaryMask::from_grid(&read_volume(path)?, 0.5))
}

/// Writes a vgrid pair derived from `path`.
pub fn write_volume(grid: &VoxelGrid, path: &Path) -> Result<()> {
    let (header, payload) = vgrid_paths(path);
    write_vgrid(grid, &header, &payload)
}

fn is_nifti(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("nii"))
}
