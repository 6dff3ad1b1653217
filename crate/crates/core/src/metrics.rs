//! Mask-restricted error metrics and seam diagnostics.
//!
//! Reductions accumulate in `f64` in voxel order, so results are reproducible
//! bit for bit.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};
use crate::plan::TilePlan;
use crate::scalar::Real;

fn check_pair<T: Real>(pred: &Grid<T>, reference: &Grid<T>, mask: &BinaryMask) -> Result<()> {
    if pred.dims() != reference.dims() {
        return Err(Error::DimMismatch {
            left: pred.dims(),
            right: reference.dims(),
        });
    }
    mask.check_dims(pred.dims())
}

fn masked_pairs<'a, T: Real>(
    pred: &'a Grid<T>,
    reference: &'a Grid<T>,
    mask: &'a BinaryMask,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.values()
        .iter()
        .zip(reference.values())
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|((&p, &r), _)| (p.as_f64(), r.as_f64()))
}

/// Mean absolute error over mask voxels.
pub fn mae<T: Real>(pred: &Grid<T>, reference: &Grid<T>, mask: &BinaryMask) -> Result<f64> {
    check_pair(pred, reference, mask)?;
    let (sum, n) = masked_pairs(pred, reference, mask).fold((0.0, 0usize), |(s, n), (p, r)| (s + (p - r).abs(), n + 1));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Mean squared error over mask voxels.
pub fn mse<T: Real>(pred: &Grid<T>, reference: &Grid<T>, mask: &BinaryMask) -> Result<f64> {
    check_pair(pred, reference, mask)?;
    let (sum, n) =
        masked_pairs(pred, reference, mask).fold((0.0, 0usize), |(s, n), (p, r)| (s + (p - r) * (p - r), n + 1));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Peak {
    /// Dynamic range of the reference inside the mask.
    Auto,
    Value(f64),
}

impl std::str::FromStr for Peak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Peak::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("peak must be 'auto' or a number, got {s:?}")))?;
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::InvalidParameter(format!("peak must be positive, got {v}")));
        }
        Ok(Peak::Value(v))
    }
}

/// PSNR in dB, or the sentinel for a zero-error comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.6}"),
            Psnr::Identical => f.write_str("identical"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Identical => s.serialize_str("identical"),
        }
    }
}

/// `10 log10(peak^2 / MSE)`; returns the peak actually used.
pub fn psnr<T: Real>(pred: &Grid<T>, reference: &Grid<T>, mask: &BinaryMask, peak: Peak) -> Result<(Psnr, f64)> {
    let mse = mse(pred, reference, mask)?;
    let peak = match peak {
        Peak::Value(v) => v,
        Peak::Auto => {
            let (lo, hi) = masked_pairs(pred, reference, mask)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, r)| {
                    (lo.min(r), hi.max(r))
                });
            hi - lo
        }
    };
    if mse == 0.0 {
        return Ok((Psnr::Identical, peak));
    }
    if peak <= 0.0 {
        return Err(Error::InvalidParameter(
            "PSNR peak is zero: the reference is constant inside the mask".into(),
        ));
    }
    Ok((Psnr::Db(10.0 * (peak * peak / mse).log10()), peak))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub mae: f64,
    pub psnr: Psnr,
    pub peak_used: f64,
    pub voxels_evaluated: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seam_gradient_mean: Option<f64>,
}

impl MetricReport {
    pub fn evaluate<T: Real>(pred: &Grid<T>, reference: &Grid<T>, mask: &BinaryMask, peak: Peak) -> Result<Self> {
        let mae = mae(pred, reference, mask)?;
        let (psnr, peak_used) = psnr(pred, reference, mask, peak)?;
        Ok(MetricReport {
            mae,
            psnr,
            peak_used,
            voxels_evaluated: mask.count(),
            seam_gradient_mean: None,
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let seam = self.seam_gradient_mean.map(|v| v.to_string()).unwrap_or_default();
        let rows = [
            ["mae_hu", "psnr_db", "peak_used", "voxels_evaluated", "seam_gradient"].map(String::from),
            [
                self.mae.to_string(),
                self.psnr.to_string(),
                self.peak_used.to_string(),
                self.voxels_evaluated.to_string(),
                seam,
            ],
        ];
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Malformed(format!("csv: {e}"))
}

/// Planes between voxel `b - 1` and `b` along `axis` where some tile starts or ends.
pub fn boundary_planes(plan: &TilePlan, axis: usize) -> Vec<usize> {
    let extent = plan.volume_dims()[axis];
    let len = plan.tile_size()[axis];
    let mut planes: Vec<usize> = plan
        .origins(axis)
        .iter()
        .flat_map(|&o| [o, o + len])
        .filter(|&b| b > 0 && b < extent)
        .collect();
    planes.sort_unstable();
    planes.dedup();
    planes
}

/// Mean `|v(b) - v(b - 1)|` across plane `b` on `axis`, over voxel pairs with both voxels in the mask.
///
/// `None` when no pair on the plane lies in the mask.
pub fn seam_gradient_at<T: Real>(
    volume: &Grid<T>,
    mask: &BinaryMask,
    axis: usize,
    plane: usize,
) -> Result<Option<f64>> {
    mask.check_dims(volume.dims())?;
    let dims = volume.dims();
    if axis > 2 || plane == 0 || plane >= dims[axis] {
        return Err(Error::InvalidParameter(format!(
            "boundary index {plane} out of range on axis {axis} (extent {:?})",
            dims.get(axis)
        )));
    }
    let (u, v) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut sum = 0.0;
    let mut n = 0usize;
    for b in 0..dims[v] {
        for a in 0..dims[u] {
            let mut hi = [0; 3];
            hi[axis] = plane;
            hi[u] = a;
            hi[v] = b;
            let mut lo = hi;
            lo[axis] = plane - 1;
            if mask.get(lo[0], lo[1], lo[2]) && mask.get(hi[0], hi[1], hi[2]) {
                sum += (volume.get(hi[0], hi[1], hi[2]).as_f64() - volume.get(lo[0], lo[1], lo[2]).as_f64()).abs();
                n += 1;
            }
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeamSample {
    pub plane: usize,
    pub gradient: f64,
}

/// Seam gradient at every internal tile boundary of `plan` along `axis`.
pub fn seam_profile<T: Real>(
    volume: &Grid<T>,
    mask: &BinaryMask,
    plan: &TilePlan,
    axis: usize,
) -> Result<Vec<SeamSample>> {
    if plan.volume_dims() != volume.dims() {
        return Err(Error::DimMismatch {
            left: plan.volume_dims(),
            right: volume.dims(),
        });
    }
    let mut out = Vec::new();
    for plane in boundary_planes(plan, axis) {
        if let Some(gradient) = seam_gradient_at(volume, mask, axis, plane)? {
            out.push(SeamSample { plane, gradient });
        }
    }
    Ok(out)
}

/// Mean seam gradient over the boundaries of all three axes.
pub fn seam_gradient_mean<T: Real>(volume: &Grid<T>, mask: &BinaryMask, plan: &TilePlan) -> Result<Option<f64>> {
    let mut all = Vec::new();
    for axis in 0..3 {
        all.extend(seam_profile(volume, mask, plan, axis)?);
    }
    Ok((!all.is_empty()).then(|| all.iter().map(|s| s.gradient).sum::<f64>() / all.len() as f64))
}
