//! End-to-end pipeline and the gamma / overlap ablation sweeps.
//!
//! The pipeline normalizes the input, plans and mask-filters tiles, predicts
//! each retained tile, merges in normalized units and maps the result back to
//! HU. Sweeps rerun it over a list of gamma or overlap values and record error
//! metrics, seam strength, tile counts and wall time.

mod svg;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blend::{assemble_with, MergeConfig};
use crate::error::{Error, Result};
use crate::grid::{Axis, BinaryMask, Dims};
use crate::metrics::{csv_err, seam_gradient_mean, MetricReport, Peak};
use crate::normalize::{denormalize_ct, normalize_ct, normalize_mri, NormalizationRecord};
use crate::plan::{plan_volume, TilePlan, DEFAULT_TILE};
use crate::predict::Predictor;
use crate::VoxelGrid;

pub use svg::line_chart;

/// CSV schema version written in the leading comment line.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// How the input volume is brought into network units and the output back to HU.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InputNormalization {
    /// Input is CT in HU; its own minimum is the offset for the output.
    Ct,
    /// Input is raw MRI; the output uses the given CT offset.
    Mri { ct_offset: f64 },
    /// Input is already in the units the predictor expects; output is not rescaled.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tile: Dims,
    pub overlap: [f64; 3],
    pub gamma: f64,
    pub axis_order: [Axis; 3],
    /// Value for voxels in no retained tile, in output units (HU unless normalization is `None`).
    pub fill: f64,
    /// Worker threads; 0 picks the number of logical CPUs.
    pub workers: usize,
    pub normalization: InputNormalization,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tile: DEFAULT_TILE,
            overlap: [0.5; 3],
            gamma: 1.0,
            axis_order: [Axis::X, Axis::Y, Axis::Z],
            fill: -1000.0,
            workers: 0,
            normalization: InputNormalization::Ct,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// Assembled volume in output units.
    pub volume: VoxelGrid,
    /// Mask-filtered plan that was executed.
    pub plan: TilePlan,
    pub record: Option<NormalizationRecord>,
}

pub fn run_pipeline(
    input: &VoxelGrid,
    mask: &BinaryMask,
    predictor: &dyn Predictor,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    mask.check_dims(input.dims())?;
    let (normalized, record) = match config.normalization {
        InputNormalization::Ct => {
            let (g, r) = normalize_ct(input)?;
            (g, Some(r))
        }
        InputNormalization::Mri { ct_offset } => (normalize_mri(input), Some(NormalizationRecord::new(ct_offset)?)),
        InputNormalization::None => (input.clone(), None),
    };
    let fill = record.map_or(config.fill, |r| r.to_normalized(config.fill));
    let merge = MergeConfig {
        overlap: config.overlap,
        gamma: config.gamma,
        axis_order: config.axis_order,
        fill,
    };
    merge.validate()?;
    let plan = plan_volume(input.dims(), config.tile, config.overlap)?.filter_by_mask(mask)?;
    let pad = fill as f32;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let merged = pool.install(|| {
        assemble_with(&plan, &merge, |spec| {
            let tile = normalized.extract(spec.origin, spec.size, pad)?;
            predictor.predict(spec, &tile)
        })
    })?;
    let merged = merged.with_spacing(input.spacing())?;
    let volume = match record {
        Some(r) => denormalize_ct(&merged, &r)?,
        None => merged,
    };
    Ok(PipelineOutput { volume, plan, record })
}

/// Metrics of a pipeline output against a reference.
///
/// The seam gradient is measured on the residual `output - reference`, so it
/// isolates stitching error from anatomy crossing the tile boundaries.
pub fn evaluate(output: &PipelineOutput, reference: &VoxelGrid, mask: &BinaryMask) -> Result<MetricReport> {
    let mut report = MetricReport::evaluate(&output.volume, reference, mask, Peak::Auto)?;
    let residual_values = output
        .volume
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| a - b)
        .collect();
    let residual = VoxelGrid::new(reference.dims(), reference.spacing(), residual_values)?;
    report.seam_gradient_mean = seam_gradient_mean(&residual, mask, &output.plan)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Gamma,
    Overlap,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub overlap: f64,
    pub gamma: f64,
    pub retained_tiles: usize,
    pub mae_hu: f64,
    /// `None` when output and reference are identical.
    pub psnr_db: Option<f64>,
    pub seam_gradient: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

/// Everything a sweep needs besides the swept values.
pub struct SweepInputs<'a> {
    pub input: &'a VoxelGrid,
    pub mask: &'a BinaryMask,
    pub reference: &'a VoxelGrid,
    pub predictor: &'a dyn Predictor,
    pub base: PipelineConfig,
}

fn sweep_point(inputs: &SweepInputs<'_>, config: &PipelineConfig) -> Result<SweepRow> {
    let start = Instant::now();
    let output = run_pipeline(inputs.input, inputs.mask, inputs.predictor, config)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let report = evaluate(&output, inputs.reference, inputs.mask)?;
    Ok(SweepRow {
        overlap: config.overlap[0],
        gamma: config.gamma,
        retained_tiles: output.plan.retained_count(),
        mae_hu: report.mae,
        psnr_db: report.psnr.db(),
        seam_gradient: report.seam_gradient_mean,
        wall_time_s,
    })
}

fn sorted(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(format!("{what} list is empty")));
    }
    let mut v = values.to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} list has non-finite entries")));
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

/// One pipeline run per gamma at the base overlap; rows ascend in gamma.
pub fn sweep_gamma(inputs: &SweepInputs<'_>, gammas: &[f64]) -> Result<SweepResult> {
    let rows = sorted(gammas, "gamma")?
        .into_iter()
        .map(|gamma| {
            sweep_point(
                inputs,
                &PipelineConfig {
                    gamma,
                    ..inputs.base.clone()
                },
            )
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        kind: SweepKind::Gamma,
        rows,
    })
}

/// One pipeline run per isotropic overlap fraction at the base gamma; rows ascend in overlap.
pub fn sweep_overlap(inputs: &SweepInputs<'_>, overlaps: &[f64]) -> Result<SweepResult> {
    let rows = sorted(overlaps, "overlap")?
        .into_iter()
        .map(|p| {
            sweep_point(
                inputs,
                &PipelineConfig {
                    overlap: [p; 3],
                    ..inputs.base.clone()
                },
            )
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        kind: SweepKind::Overlap,
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepResult {
    pub fn header(&self) -> &'static [&'static str] {
        match self.kind {
            SweepKind::Gamma => &["gamma", "mae_hu", "psnr_db", "seam_gradient", "wall_time_s"],
            SweepKind::Overlap => &[
                "overlap",
                "retained_tiles",
                "mae_hu",
                "psnr_db",
                "seam_gradient",
                "wall_time_s",
            ],
        }
    }

    /// CSV with a leading `# volmerge sweep-<kind> v<N>` comment line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let tag = match self.kind {
            SweepKind::Gamma => "gamma",
            SweepKind::Overlap => "overlap",
        };
        writeln!(out, "# volmerge sweep-{tag} v{CSV_SCHEMA_VERSION}").map_err(|e| Error::io("<csv>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header()).map_err(csv_err)?;
        for r in &self.rows {
            let record = match self.kind {
                SweepKind::Gamma => vec![
                    r.gamma.to_string(),
                    r.mae_hu.to_string(),
                    opt(r.psnr_db),
                    opt(r.seam_gradient),
                    r.wall_time_s.to_string(),
                ],
                SweepKind::Overlap => vec![
                    r.overlap.to_string(),
                    r.retained_tiles.to_string(),
                    r.mae_hu.to_string(),
                    opt(r.psnr_db),
                    opt(r.seam_gradient),
                    r.wall_time_s.to_string(),
                ],
            };
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// MAE against the swept variable as a standalone SVG document.
    pub fn to_svg(&self) -> String {
        let (x_label, title) = match self.kind {
            SweepKind::Gamma => ("gamma", "MAE versus gamma"),
            SweepKind::Overlap => ("overlap fraction", "MAE versus overlap fraction"),
        };
        let points: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| {
                let x = match self.kind {
                    SweepKind::Gamma => r.gamma,
                    SweepKind::Overlap => r.overlap,
                };
                (x, r.mae_hu)
            })
            .collect();
        line_chart(title, x_label, "MAE (HU)", &points)
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParameter(format!("cannot parse range {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step): (f64, f64, f64) = (
                start.trim().parse().map_err(|_| bad())?,
                stop.trim().parse().map_err(|_| bad())?,
                step.trim().parse().map_err(|_| bad())?,
            );
            if !step.is_finite() || step <= 0.0 || !start.is_finite() || !stop.is_finite() || stop < start {
                return Err(bad());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            // k * step rather than accumulation, then snap to 12 decimals
            Ok((0..=n)
                .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        [_] => s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect(),
        _ => Err(bad()),
    }
}
