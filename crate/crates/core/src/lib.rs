//! Reconstruction of full 3D volumes from overlapping subvolume predictions.
//!
//! Tiles are planned on a regular lattice over the volume ([`plan`]), predicted
//! independently ([`predict`]) and merged back hierarchically ([`blend`]): tiles
//! into long cuboids along the first axis, cuboids into flat slabs along the
//! second, slabs into the volume along the third. Every overlap is cross-faded
//! with the weight `w = (j / N)^gamma`.
//!
//! The numeric core is generic over [`Real`] (`f32` and `f64`). Files and the
//! external predictor protocol carry 32-bit values, so the aliases
//! [`VoxelGrid`] and [`VoxelGrid64`] name the two concrete instantiations.

pub mod blend;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod normalize;
pub mod phantom;
pub mod plan;
pub mod predict;
pub mod scalar;

pub use blend::{assemble, assemble_with, blend_pair, weight, Canvas, MergeConfig, Piece, WeightFunction};
pub use error::{Error, Result};
pub use grid::{Axis, BinaryMask, Dims, Grid};
pub use normalize::{apply_mask, denormalize_ct, normalize_ct, normalize_mri, NormalizationRecord};
pub use plan::{plan_axis, plan_volume, CountReport, TilePlan, TileSpec};
pub use scalar::Real;

/// Storage precision grid: 32-bit voxels, the format used on disk and on the wire.
pub type VoxelGrid = Grid<f32>;
/// Double precision grid, used where reference computations need the headroom.
pub type VoxelGrid64 = Grid<f64>;
/// Weight function over storage precision.
pub type WeightFunction32 = WeightFunction<f32>;
/// Weight function over double precision.
pub type WeightFunction64 = WeightFunction<f64>;
