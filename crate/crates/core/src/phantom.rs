//! Synthetic head phantom: a paired MRI-like / CT-like volume and its mask.
//!
//! The head is an ellipsoid with a bone shell around soft tissue, in air. Soft
//! tissue carries a smooth seeded modulation made of three separable
//! low-frequency sinusoids. Only the modulation parameters are drawn from the
//! seed; voxels are evaluated in closed form, so generation is deterministic
//! and order independent.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims};
use crate::VoxelGrid;

pub const CT_RANGE: (f64, f64) = (-1024.0, 3000.0);
/// Peak CT modulation, summed over all terms.
pub const MAX_CT_MODULATION: f64 = 30.0;
/// Peak MRI modulation (normalized units), summed over all terms.
pub const MAX_MRI_MODULATION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    pub ct_hu: f64,
    /// Normalized MRI intensity.
    pub mri: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueTable {
    pub background: Tissue,
    pub shell: Tissue,
    pub interior: Tissue,
}

impl Default for TissueTable {
    fn default() -> Self {
        TissueTable {
            background: Tissue {
                ct_hu: -1000.0,
                mri: 0.0,
            },
            shell: Tissue {
                ct_hu: 1000.0,
                mri: 0.1,
            },
            interior: Tissue { ct_hu: 40.0, mri: 0.6 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub seed: u64,
    /// Ellipsoid semi-axes in voxels, centered in the volume.
    pub semi_axes: [f64; 3],
    /// Fraction of the normalized radius taken by the bone shell.
    pub shell_fraction: f64,
    pub tissues: TissueTable,
}

impl PhantomSpec {
    /// Defaults: semi-axes at 45% of each extent, a 10% shell.
    pub fn new(dims: Dims, seed: u64) -> Self {
        PhantomSpec {
            dims,
            seed,
            semi_axes: dims.map(|d| 0.45 * d as f64),
            shell_fraction: 0.1,
            tissues: TissueTable::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            let s = self.semi_axes[a];
            if self.dims[a] == 0 {
                return Err(Error::InvalidParameter(format!(
                    "phantom dims {:?} must be positive",
                    self.dims
                )));
            }
            if !s.is_finite() || s <= 0.0 || 2.0 * s > self.dims[a] as f64 {
                return Err(Error::InvalidParameter(format!(
                    "semi-axis {s} on axis {a} does not fit inside extent {}",
                    self.dims[a]
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.shell_fraction) {
            return Err(Error::InvalidParameter(format!(
                "shell fraction {} outside [0, 1]",
                self.shell_fraction
            )));
        }
        let t = &self.tissues;
        for tissue in [t.background, t.shell, t.interior] {
            if !(CT_RANGE.0..=CT_RANGE.1).contains(&tissue.ct_hu) {
                return Err(Error::InvalidParameter(format!(
                    "tissue CT value {} HU outside [-1024, 3000]",
                    tissue.ct_hu
                )));
            }
            if !(0.0..=1.0).contains(&tissue.mri) {
                return Err(Error::InvalidParameter(format!(
                    "tissue MRI value {} outside [0, 1]",
                    tissue.mri
                )));
            }
        }
        Ok(())
    }

    /// Normalized ellipsoid radius of the voxel center; the mask is `<= 1`.
    pub fn radius(&self, x: usize, y: usize, z: usize) -> f64 {
        let p = [x, y, z];
        (0..3)
            .map(|a| {
                let c = (self.dims[a] as f64 - 1.0) / 2.0;
                let d = (p[a] as f64 - c) / self.semi_axes[a];
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct Phantom {
    /// Normalized MRI-like intensities in [0, 1].
    pub mri: VoxelGrid,
    /// CT-like intensities in HU.
    pub ct: VoxelGrid,
    pub mask: BinaryMask,
}

/// Separable term `amp * sin(fx x + px) * sin(fy y + py) * sin(fz z + pz)`, unit amplitude.
struct Wave {
    freq: [f64; 3],
    phase: [f64; 3],
}

fn waves(spec: &PhantomSpec) -> Vec<Wave> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..3)
        .map(|_| Wave {
            // 0.5 to 2 cycles across each extent
            freq: spec.dims.map(|d| rng.gen_range(0.5..2.0) * TAU / d as f64),
            phase: [(); 3].map(|_| rng.gen_range(0.0..TAU)),
        })
        .collect()
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let waves = waves(spec);
    // per-axis sine tables
    let tables: Vec<[Vec<f64>; 3]> = waves
        .iter()
        .map(|w| {
            [0, 1, 2].map(|a| {
                (0..spec.dims[a])
                    .map(|i| (w.freq[a] * i as f64 + w.phase[a]).sin())
                    .collect()
            })
        })
        .collect();
    let modulation = |x: usize, y: usize, z: usize| -> f64 {
        tables.iter().map(|t| t[0][x] * t[1][y] * t[2][z]).sum::<f64>() / tables.len() as f64
    };
    let inner = 1.0 - spec.shell_fraction;
    let t = spec.tissues;
    let region = |x, y, z| {
        let r = spec.radius(x, y, z);
        if r > 1.0 {
            0
        } else if r > inner {
            1
        } else {
            2
        }
    };
    let ct = VoxelGrid::from_fn(spec.dims, |x, y, z| match region(x, y, z) {
        0 => t.background.ct_hu as f32,
        1 => t.shell.ct_hu as f32,
        _ => (t.interior.ct_hu + MAX_CT_MODULATION * modulation(x, y, z)).clamp(CT_RANGE.0, CT_RANGE.1) as f32,
    })?;
    let mri = VoxelGrid::from_fn(spec.dims, |x, y, z| match region(x, y, z) {
        0 => t.background.mri as f32,
        1 => t.shell.mri as f32,
        _ => (t.interior.mri + MAX_MRI_MODULATION * modulation(x, y, z)).clamp(0.0, 1.0) as f32,
    })?;
    let mask = BinaryMask::from_fn(spec.dims, |x, y, z| region(x, y, z) != 0)?;
    Ok(Phantom { mri, ct, mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_and_center() {
        let spec = PhantomSpec::new([33, 41, 37], 7);
        let p = make_phantom(&spec).unwrap();
        assert_eq!(p.ct.get(0, 0, 0), -1000.0);
        assert_eq!(p.mri.get(0, 0, 0), 0.0);
        assert!(!p.mask.get(0, 0, 0));
        let c = p.ct.get(16, 20, 18);
        assert!((10.0..=70.0).contains(&c), "{c}");
        assert!(p.mask.get(16, 20, 18));
    }

    #[test]
    fn ranges() {
        let p = make_phantom(&PhantomSpec::new([40, 48, 44], 99)).unwrap();
        let (lo, hi) = p.ct.min_max().unwrap();
        assert!(lo >= -1024.0 && hi <= 3000.0);
        assert_eq!(lo, -1000.0);
        let (lo, hi) = p.mri.min_max().unwrap();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_phantom(&PhantomSpec::new([24, 20, 16], 5)).unwrap();
        let b = make_phantom(&PhantomSpec::new([24, 20, 16], 5)).unwrap();
        let c = make_phantom(&PhantomSpec::new([24, 20, 16], 6)).unwrap();
        let bits = |g: &VoxelGrid| g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.ct), bits(&b.ct));
        assert_eq!(bits(&a.mri), bits(&b.mri));
        assert_eq!(a.mask, b.mask);
        assert_ne!(bits(&a.ct), bits(&c.ct));
    }

    #[test]
    fn mask_volume_near_analytic() {
        let spec = PhantomSpec::new([60, 50, 40], 1);
        let p = make_phantom(&spec).unwrap();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * spec.semi_axes.iter().product::<f64>();
        let d = spec.dims;
        // voxels on either side of the discretized surface
        let mut surface = 0usize;
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    let inside = p.mask.get(x, y, z);
                    let nbrs = [
                        (x.wrapping_sub(1), y, z),
                        (x + 1, y, z),
                        (x, y.wrapping_sub(1), z),
                        (x, y + 1, z),
                        (x, y, z.wrapping_sub(1)),
                        (x, y, z + 1),
                    ];
                    let differs = nbrs.iter().any(|&(a, b, c)| {
                        let n = if a < d[0] && b < d[1] && c < d[2] {
                            p.mask.get(a, b, c)
                        } else {
                            false
                        };
                        n != inside
                    });
                    surface += differs as usize;
                }
            }
        }
        let count = p.mask.count() as f64;
        assert!(
            (count - analytic).abs() <= surface as f64,
            "count {count}, analytic {analytic}, surface {surface}"
        );
        // mask is exactly the ellipsoid indicator
        assert!((0..d[2])
            .all(|z| (0..d[1]).all(|y| (0..d[0]).all(|x| p.mask.get(x, y, z) == (spec.radius(x, y, z) <= 1.0)))));
    }

    #[test]
    fn rejects_oversized_axes() {
        let mut spec = PhantomSpec::new([20, 20, 20], 0);
        spec.semi_axes[1] = 10.5;
        assert!(make_phantom(&spec).is_err());
        let mut spec = PhantomSpec::new([20, 20, 20], 0);
        spec.tissues.shell.ct_hu = 3500.0;
        assert!(make_phantom(&spec).is_err());
    }
}
