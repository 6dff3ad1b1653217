//! Native grid format: a JSON header plus a raw little-endian f32 payload.
//!
//! ```json
//! {"magic":"VGRID1","dims":[nx,ny,nz],"spacing_mm":[sx,sy,sz],"dtype":"f32le","order":"x-fastest"}
//! ```
//!
//! The payload holds exactly `nx * ny * nz * 4` bytes, x fastest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{voxel_count, Dims};
use crate::VoxelGrid;

pub const MAGIC: &str = "VGRID1";
pub const DTYPE: &str = "f32le";
pub const ORDER: &str = "x-fastest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub magic: String,
    pub dims: Dims,
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
}

impl GridHeader {
    pub fn for_grid(grid: &VoxelGrid) -> Self {
        GridHeader {
            magic: MAGIC.into(),
            dims: grid.dims(),
            spacing_mm: grid.spacing(),
            dtype: DTYPE.into(),
            order: ORDER.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (expected, found) in [(MAGIC, &self.magic), (DTYPE, &self.dtype), (ORDER, &self.order)] {
            if found != expected {
                return Err(Error::MagicMismatch {
                    expected: expected.into(),
                    found: found.clone(),
                });
            }
        }
        Ok(())
    }

    fn payload_len(&self) -> Result<u64> {
        self.dims
            .iter()
            .try_fold(4u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::Malformed(format!("dims {:?} overflow", self.dims)))
    }
}

/// Header and payload paths for a path given as `*.vgrid.json`, `*.vgrid.raw` or a bare stem.
pub fn vgrid_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(".vgrid.json")
        .or_else(|| s.strip_suffix(".vgrid.raw"))
        .unwrap_or(&s);
    (
        PathBuf::from(format!("{stem}.vgrid.json")),
        PathBuf::from(format!("{stem}.vgrid.raw")),
    )
}

pub fn read_vgrid(header_path: &Path, payload_path: &Path) -> Result<VoxelGrid> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: GridHeader =
        serde_json::from_str(&text).map_err(|e| Error::Malformed(format!("{}: {e}", header_path.display())))?;
    header.validate()?;
    let expected = header.payload_len()?;
    let actual = fs::metadata(payload_path)
        .map_err(|e| Error::io(payload_path, e))?
        .len();
    if actual != expected {
        return Err(Error::SizeMismatch { expected, actual });
    }
    let bytes = fs::read(payload_path).map_err(|e| Error::io(payload_path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut values = vec![0f32; voxel_count(header.dims)];
    LittleEndian::read_f32_into(&bytes, &mut values);
    VoxelGrid::new(header.dims, header.spacing_mm, values)
}

pub fn write_vgrid(grid: &VoxelGrid, header_path: &Path, payload_path: &Path) -> Result<()> {
    let header =
        serde_json::to_string_pretty(&GridHeader::for_grid(grid)).map_err(|e| Error::Malformed(e.to_string()))?;
    fs::write(header_path, header + "\n").map_err(|e| Error::io(header_path, e))?;
    let mut bytes = vec![0u8; grid.len() * 4];
    LittleEndian::write_f32_into(grid.values(), &mut bytes);
    let mut file = fs::File::create(payload_path).map_err(|e| Error::io(payload_path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(payload_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paths(dir: &Path) -> (PathBuf, PathBuf) {
        vgrid_paths(&dir.join("g"))
    }

    #[test]
    fn path_derivation() {
        let expect = (PathBuf::from("a/b.vgrid.json"), PathBuf::from("a/b.vgrid.raw"));
        assert_eq!(vgrid_paths(Path::new("a/b")), expect);
        assert_eq!(vgrid_paths(Path::new("a/b.vgrid.json")), expect);
        assert_eq!(vgrid_paths(Path::new("a/b.vgrid.raw")), expect);
    }

    #[test]
    fn zeros_payload() {
        let dir = tempfile::tempdir().unwrap();
        let (h, p) = paths(dir.path());
        fs::write(
            &h,
            r#"{"magic":"VGRID1","dims":[2,2,2],"spacing_mm":[1,1,1],"dtype":"f32le","order":"x-fastest"}"#,
        )
        .unwrap();
        fs::write(&p, [0u8; 32]).unwrap();
        let g = read_vgrid(&h, &p).unwrap();
        assert_eq!(g.dims(), [2, 2, 2]);
        assert!(g.values().iter().all(|&v| v == 0.0));

        fs::write(&p, [0u8; 31]).unwrap();
        match read_vgrid(&h, &p) {
            Err(Error::SizeMismatch { expected, actual }) => assert_eq!((expected, actual), (32, 31)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_voxel_and_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let (h, p) = paths(dir.path());
        let g = VoxelGrid::new([1, 1, 1], [1.0, 1.0, 1.0], vec![3.5]).unwrap();
        write_vgrid(&g, &h, &p).unwrap();
        assert_eq!(read_vgrid(&h, &p).unwrap().values(), &[3.5]);

        let g = VoxelGrid::filled([3, 4, 5], 0.0)
            .unwrap()
            .with_spacing([0.5, 1.0, 2.0])
            .unwrap();
        write_vgrid(&g, &h, &p).unwrap();
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&h).unwrap()).unwrap();
        assert_eq!(json["dims"], serde_json::json!([3, 4, 5]));
        assert_eq!(json["spacing_mm"], serde_json::json!([0.5, 1.0, 2.0]));
        assert_eq!(json["magic"], "VGRID1");
        assert_eq!(json["dtype"], "f32le");
        assert_eq!(json["order"], "x-fastest");
        assert_eq!(fs::metadata(&p).unwrap().len(), 3 * 4 * 5 * 4);
    }

    #[test]
    fn malformed_headers_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (h, p) = paths(dir.path());
        fs::write(&p, [0u8; 4]).unwrap();
        let cases = [
            (
                r#"{"magic":"VGRID2","dims":[1,1,1],"spacing_mm":[1,1,1],"dtype":"f32le","order":"x-fastest"}"#,
                "magic",
            ),
            (
                r#"{"magic":"VGRID1","dims":[1,1,1],"spacing_mm":[1,1,1],"dtype":"f64le","order":"x-fastest"}"#,
                "magic",
            ),
            (
                r#"{"magic":"VGRID1","dims":[1,1,1],"spacing_mm":[1,1,1],"dtype":"f32le","order":"z-fastest"}"#,
                "magic",
            ),
            (
                r#"{"magic":"VGRID1","dims":[1,1],"spacing_mm":[1,1,1],"dtype":"f32le","order":"x-fastest"}"#,
                "malformed",
            ),
            (
                r#"{"magic":"VGRID1","dims":[1,1,1],"spacing_mm":[1,-1,1],"dtype":"f32le","order":"x-fastest"}"#,
                "spacing",
            ),
            (
                r#"{"magic":"VGRID1","dims":[0,1,1],"spacing_mm":[1,1,1],"dtype":"f32le","order":"x-fastest"}"#,
                "mismatch",
            ),
            (
                r#"{"magic":"VGRID1","dims":[18446744073709551615,2,2],"spacing_mm":[1,1,1],"dtype":"f32le","order":"x-fastest"}"#,
                "overflow",
            ),
            ("not json", "malformed"),
        ];
        for (text, needle) in cases {
            fs::write(&h, text).unwrap();
            let err = read_vgrid(&h, &p).unwrap_err().to_string();
            assert!(err.contains(needle), "{text}: {err}");
        }
    }

    #[test]
    fn non_finite_payload_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let (h, p) = paths(dir.path());
        write_vgrid(&VoxelGrid::filled([3, 1, 1], 1.0).unwrap(), &h, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        LittleEndian::write_f32(&mut bytes[8..], f32::INFINITY);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_vgrid(&h, &p), Err(Error::NonFinite { index: 2 })));
    }

    #[test]
    fn missing_files_name_the_path() {
        let err = read_vgrid(
            Path::new("/nonexistent/x.vgrid.json"),
            Path::new("/nonexistent/x.vgrid.raw"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.vgrid.json"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_read_bit_exact(
            dims in (1usize..8, 1usize..8, 1usize..8),
            bits in proptest::collection::vec(any::<u32>(), 512),
        ) {
            let dims = [dims.0, dims.1, dims.2];
            let values: Vec<f32> = bits.iter().take(voxel_count(dims))
                .map(|&b| { let v = f32::from_bits(b); if v.is_finite() { v } else { 0.0 } })
                .collect();
            let g = VoxelGrid::new(dims, [1.0, 0.7, 2.5], values).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (h, p) = paths(dir.path());
            write_vgrid(&g, &h, &p).unwrap();
            let back = read_vgrid(&h, &p).unwrap();
            prop_assert_eq!(back.dims(), g.dims());
            prop_assert_eq!(back.spacing(), g.spacing());
            prop_assert!(back.values().iter().zip(g.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
