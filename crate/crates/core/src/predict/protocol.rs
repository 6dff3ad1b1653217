//! Framed binary protocol between the merger and an external predictor process.
//!
//! All integers are little-endian `u32`, payloads are little-endian `f32`, x fastest.
//!
//! ```text
//! request:  "TILE" | version=1 | tile_index | nx | ny | nz | nx*ny*nz f32
//! response: "PRED" | tile_index | nx | ny | nz | nx*ny*nz f32
//! ```
//!
//! The stream is synchronous: the predictor reads one request, writes exactly
//! one response for the same tile index and dims, and repeats until its stdin
//! closes.

use std::io::{self, Read, Write};

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::grid::Dims;

pub const REQUEST_MAGIC: &[u8; 4] = b"TILE";
pub const RESPONSE_MAGIC: &[u8; 4] = b"PRED";
pub const VERSION: u32 = 1;

/// Upper bound on voxels per frame, so a corrupt header cannot trigger a huge allocation.
pub const MAX_FRAME_VOXELS: u64 = 1 << 30;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub tile_index: u32,
    pub dims: [u32; 3],
    pub payload: Vec<f32>,
}

impl Frame {
    pub fn voxel_dims(&self) -> Dims {
        self.dims.map(|d| d as usize)
    }
}

fn protocol(tile_index: u32, message: impl Into<String>) -> Error {
    Error::Protocol {
        tile_index,
        message: message.into(),
    }
}

fn io_err(tile_index: u32, what: &str, e: io::Error) -> Error {
    protocol(tile_index, format!("{what}: {e}"))
}

fn encode_dims(tile_index: u32, dims: Dims) -> Result<[u32; 3]> {
    let mut out = [0u32; 3];
    for a in 0..3 {
        out[a] = u32::try_from(dims[a]).map_err(|_| protocol(tile_index, format!("dims {dims:?} exceed u32")))?;
    }
    Ok(out)
}

fn write_body<W: Write>(w: &mut W, tile_index: u32, dims: Dims, payload: &[f32]) -> Result<()> {
    let d = encode_dims(tile_index, dims)?;
    if payload.len() != dims.iter().product::<usize>() {
        return Err(protocol(tile_index, "payload length disagrees with dims"));
    }
    let err = |e| io_err(tile_index, "write failed", e);
    w.write_u32::<LittleEndian>(tile_index).map_err(err)?;
    for v in d {
        w.write_u32::<LittleEndian>(v).map_err(err)?;
    }
    let mut bytes = vec![0u8; payload.len() * 4];
    LittleEndian::write_f32_into(payload, &mut bytes);
    w.write_all(&bytes).map_err(err)?;
    w.flush().map_err(err)
}

pub fn write_request<W: Write>(w: &mut W, tile_index: u32, dims: Dims, payload: &[f32]) -> Result<()> {
    let err = |e| io_err(tile_index, "write failed", e);
    w.write_all(REQUEST_MAGIC).map_err(err)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(err)?;
    write_body(w, tile_index, dims, payload)
}

pub fn write_response<W: Write>(w: &mut W, tile_index: u32, dims: Dims, payload: &[f32]) -> Result<()> {
    w.write_all(RESPONSE_MAGIC)
        .map_err(|e| io_err(tile_index, "write failed", e))?;
    write_body(w, tile_index, dims, payload)
}

fn read_body<R: Read>(r: &mut R, context: u32) -> Result<Frame> {
    let err = |e| io_err(context, "truncated frame", e);
    let tile_index = r.read_u32::<LittleEndian>().map_err(err)?;
    let mut dims = [0u32; 3];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>().map_err(err)?;
    }
    let n = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .unwrap_or(u64::MAX);
    if n > MAX_FRAME_VOXELS {
        return Err(protocol(tile_index, format!("frame dims {dims:?} too large")));
    }
    let mut bytes = vec![0u8; n as usize * 4];
    r.read_exact(&mut bytes).map_err(err)?;
    let mut payload = vec![0f32; n as usize];
    LittleEndian::read_f32_into(&bytes, &mut payload);
    Ok(Frame {
        tile_index,
        dims,
        payload,
    })
}

/// Reads a magic tag, or `None` at a clean end of stream.
fn read_magic<R: Read>(r: &mut R, context: u32) -> Result<Option<[u8; 4]>> {
    let mut magic = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut magic[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(protocol(context, "truncated frame magic")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(io_err(context, "read failed", e)),
        }
    }
    Ok(Some(magic))
}

/// Next request, or `None` when the peer closed the stream between frames.
pub fn read_request<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let Some(magic) = read_magic(r, u32::MAX)? else {
        return Ok(None);
    };
    if &magic != REQUEST_MAGIC {
        return Err(protocol(u32::MAX, format!("bad request magic {magic:?}")));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| io_err(u32::MAX, "truncated frame", e))?;
    if version != VERSION {
        return Err(protocol(u32::MAX, format!("unsupported protocol version {version}")));
    }
    read_body(r, u32::MAX).map(Some)
}

/// Reads the response to request `expected_index` and checks index and dims.
pub fn read_response<R: Read>(r: &mut R, expected_index: u32, expected_dims: Dims) -> Result<Frame> {
    let magic = read_magic(r, expected_index)?
        .ok_or_else(|| protocol(expected_index, "predictor closed its output before responding"))?;
    if &magic != RESPONSE_MAGIC {
        return Err(protocol(
            expected_index,
            format!("bad response magic {:?}", String::from_utf8_lossy(&magic)),
        ));
    }
    let frame = read_body(r, expected_index)?;
    if frame.tile_index != expected_index {
        return Err(protocol(
            expected_index,
            format!(
                "response tile_index mismatch: expected {expected_index}, got {}",
                frame.tile_index
            ),
        ));
    }
    if frame.voxel_dims() != expected_dims {
        return Err(protocol(
            expected_index,
            format!(
                "response dims mismatch: expected {expected_dims:?}, got {:?}",
                frame.dims
            ),
        ));
    }
    Ok(frame)
}
