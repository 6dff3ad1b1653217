//! Minimal read-only NIfTI-1 reader for single-file, uncompressed `.nii` volumes.
//!
//! Supports datatypes uint8 (2), int16 (4) and float32 (16), either byte order.
//! Orientation (qform/sform) is NOT applied: axes are returned in storage order.
//! Paired volumes are compared voxel by voxel, so this only matters when mixing
//! files with different orientations, which this reader does not attempt.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::grid::{voxel_count, BinaryMask, Dims};
use crate::VoxelGrid;

pub const HEADER_SIZE: usize = 348;
pub const MAGIC: &[u8; 4] = b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
    little_endian: bool,
}

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::Malformed(format!(
                "truncated NIfTI header: {} of {HEADER_SIZE} bytes",
                bytes.len()
            )));
        }
        let endian = if LittleEndian::read_i32(bytes) == HEADER_SIZE as i32 {
            Endian::Little
        } else if BigEndian::read_i32(bytes) == HEADER_SIZE as i32 {
            Endian::Big
        } else {
            return Err(Error::Malformed(format!(
                "sizeof_hdr is {}, expected 348",
                LittleEndian::read_i32(bytes)
            )));
        };
        let i16_at = |off: usize| match endian {
            Endian::Little => LittleEndian::read_i16(&bytes[off..]),
            Endian::Big => BigEndian::read_i16(&bytes[off..]),
        };
        let f32_at = |off: usize| match endian {
            Endian::Little => LittleEndian::read_f32(&bytes[off..]),
            Endian::Big => BigEndian::read_f32(&bytes[off..]),
        };
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[344..348]);
        if &magic != MAGIC {
            return Err(Error::MagicMismatch {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let header = NiftiHeader {
            sizeof_hdr: HEADER_SIZE as i32,
            dim: std::array::from_fn(|i| i16_at(40 + 2 * i)),
            datatype: i16_at(70),
            bitpix: i16_at(72),
            pixdim: std::array::from_fn(|i| f32_at(76 + 4 * i)),
            vox_offset: f32_at(108),
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            magic,
            little_endian: endian == Endian::Little,
        };
        header.volume_dims()?;
        header.bytes_per_voxel()?;
        header.payload_offset()?;
        Ok(header)
    }

    pub fn is_little_endian(&self) -> bool {
        self.little_endian
    }

    /// Spatial dims; rank must be 3, or 4 with a trailing extent of 1.
    pub fn volume_dims(&self) -> Result<Dims> {
        let rank = self.dim[0];
        let ok = rank == 3 || (rank == 4 && self.dim[4] == 1);
        if !ok {
            return Err(Error::Malformed(format!(
                "unsupported dimensionality: dim[0]={rank}, dim[4]={}",
                self.dim[4]
            )));
        }
        let dims = [self.dim[1], self.dim[2], self.dim[3]];
        if dims.iter().any(|&d| d < 1) {
            return Err(Error::Malformed(format!("non-positive extent in dims {dims:?}")));
        }
        Ok(dims.map(|d| d as usize))
    }

    /// Voxel spacing in mm; missing or invalid entries fall back to 1.
    pub fn spacing(&self) -> [f64; 3] {
        [1, 2, 3].map(|i| {
            let s = (self.pixdim[i] as f64).abs();
            if s.is_finite() && s > 0.0 {
                s
            } else {
                1.0
            }
        })
    }

    fn bytes_per_voxel(&self) -> Result<usize> {
        let (size, bits) = match self.datatype {
            DT_UINT8 => (1, 8),
            DT_INT16 => (2, 16),
            DT_FLOAT32 => (4, 32),
            code => return Err(Error::UnsupportedDatatype(code)),
        };
        if self.bitpix != bits {
            return Err(Error::Malformed(format!(
                "bitpix {} disagrees with datatype {}",
                self.bitpix, self.datatype
            )));
        }
        Ok(size)
    }

    fn payload_offset(&self) -> Result<usize> {
        let off = self.vox_offset;
        if !off.is_finite() || off < HEADER_SIZE as f32 || off.fract() != 0.0 {
            return Err(Error::Malformed(format!("invalid vox_offset {off}")));
        }
        Ok(off as usize)
    }

    /// Slope and intercept to apply, or `None` when `scl_slope` is 0 (or not finite).
    pub fn scaling(&self) -> Option<(f64, f64)> {
        let slope = self.scl_slope as f64;
        if slope == 0.0 || !slope.is_finite() {
            return None;
        }
        let inter = self.scl_inter as f64;
        Some((slope, if inter.is_finite() { inter } else { 0.0 }))
    }
}

/// Parses an in-memory `.nii` image.
///
/// With `as_mask`, values above 0.5 (after scaling) also come back as a mask.
pub fn parse_nifti(bytes: &[u8], as_mask: bool) -> Result<(VoxelGrid, Option<BinaryMask>)> {
    let header = NiftiHeader::parse(bytes)?;
    let dims = header.volume_dims()?;
    let width = header.bytes_per_voxel()?;
    let offset = header.payload_offset()?;
    let n = voxel_count(dims);
    let needed = n
        .checked_mul(width)
        .and_then(|len| len.checked_add(offset))
        .ok_or_else(|| Error::Malformed(format!("dims {dims:?} overflow")))?;
    if bytes.len() < needed {
        return Err(Error::Malformed(format!(
            "truncated payload: need {needed} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[offset..needed];
    let little = header.is_little_endian();
    let raw = |i: usize| -> f64 {
        let b = &payload[i * width..];
        match (header.datatype, little) {
            (DT_UINT8, _) => b[0] as f64,
            (DT_INT16, true) => LittleEndian::read_i16(b) as f64,
            (DT_INT16, false) => BigEndian::read_i16(b) as f64,
            (_, true) => LittleEndian::read_f32(b) as f64,
            (_, false) => BigEndian::read_f32(b) as f64,
        }
    };
    let scaling = header.scaling();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let v = match scaling {
            Some((slope, inter)) => raw(i) * slope + inter,
            None => raw(i),
        };
        let v = v as f32;
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        values.push(v);
    }
    let grid = VoxelGrid::new(dims, header.spacing(), values)?;
    let mask = as_mask.then(|| BinaryMask::from_grid(&grid, 0.5));
    Ok((grid, mask))
}

pub fn read_nifti(path: &Path, as_mask: bool) -> Result<(VoxelGrid, Option<BinaryMask>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti(&bytes, as_mask)
}
