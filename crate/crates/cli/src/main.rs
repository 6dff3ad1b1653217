//! `volmerge`: tile planning, phantom synthesis, predict-and-merge, evaluation and sweeps.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 predictor or protocol failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use volmerge::harness::{
    evaluate, parse_range, run_pipeline, sweep_gamma, sweep_overlap, InputNormalization, PipelineConfig, SweepInputs,
    SweepResult,
};
use volmerge::io::{read_mask, read_volume, write_volume};
use volmerge::metrics::{MetricReport, Peak};
use volmerge::phantom::{make_phantom, PhantomSpec};
use volmerge::plan::{plan_volume, CountReport};
use volmerge::predict::{ExternalPredictor, Predictor, PredictorSpec};
use volmerge::{Axis, BinaryMask, Dims, VoxelGrid};

#[derive(Parser)]
#[command(
    name = "volmerge",
    version,
    about = "Reassemble volumes from overlapping tile predictions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tile counts for a volume, optionally filtered by a mask.
    Plan(PlanArgs),
    /// Writes a synthetic MRI/CT/mask phantom as vgrid files.
    Phantom(PhantomArgs),
    /// Predicts every retained tile and merges the results.
    Merge(MergeArgs),
    /// MAE and PSNR of a prediction against a reference inside a mask.
    Eval(EvalArgs),
    /// Reruns merge over a list of gamma values.
    SweepGamma(SweepGammaArgs),
    /// Reruns merge over a list of overlap fractions.
    SweepOverlap(SweepOverlapArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Normalize {
    Ct,
    Mri,
    None,
}

#[derive(Args)]
struct PlanArgs {
    /// Volume dims X,Y,Z.
    #[arg(long, value_parser = parse_dims, conflicts_with = "input", required_unless_present = "input")]
    dims: Option<Dims>,
    /// Volume whose dims are planned.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_dims, default_value = "32,96,96")]
    tile: Dims,
    /// One fraction for all axes, or X,Y,Z.
    #[arg(long, value_parser = parse_overlap, default_value = "0.5")]
    overlap: [f64; 3],
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, value_parser = parse_dims, default_value = "128,192,192")]
    dims: Dims,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives mri, ct and mask vgrid pairs.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long)]
    input: PathBuf,
    /// Mask volume; every voxel counts when absent.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// identity | constant:C | affine:A,B,C,D | edge-bias:BETA,Q[/INNER] | external:CMD ARGS
    #[arg(long, default_value = "identity")]
    predictor: String,
    #[arg(long, value_parser = parse_dims, default_value = "32,96,96")]
    tile: Dims,
    /// Value for voxels outside every retained tile, in output units.
    #[arg(long, default_value_t = -1000.0, allow_negative_numbers = true)]
    fill: f64,
    /// Worker threads; 0 uses every logical CPU.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Input normalization: CT in HU, raw MRI, or none.
    #[arg(long, value_enum, default_value = "ct")]
    normalize: Normalize,
    /// CT offset in HU used to map MRI-normalized outputs back to HU.
    #[arg(long, default_value_t = -1000.0, allow_negative_numbers = true)]
    ct_offset: f64,
    /// Merge order as a permutation of xyz.
    #[arg(long, value_parser = parse_axis_order, default_value = "xyz")]
    axis_order: [Axis; 3],
}

#[derive(Args)]
struct MergeArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, value_parser = parse_overlap, default_value = "0.5")]
    overlap: [f64; 3],
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Output vgrid path.
    #[arg(long)]
    out: PathBuf,
    /// Reference volume; prints a metric report when given.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// `auto` (reference range inside the mask) or a positive value.
    #[arg(long, default_value = "auto")]
    peak: String,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct SweepOutput {
    /// Reference volume for the metrics; defaults to the input.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Optional SVG chart of MAE against the swept variable.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct SweepGammaArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// START:STOP:STEP (inclusive) or a comma list.
    #[arg(long, default_value = "0.1:1.9:0.1")]
    gammas: String,
    #[arg(long, value_parser = parse_overlap, default_value = "0.5")]
    overlap: [f64; 3],
    #[command(flatten)]
    output: SweepOutput,
}

#[derive(Args)]
struct SweepOverlapArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// START:STOP:STEP (inclusive) or a comma list.
    #[arg(long, default_value = "0:0.9:0.1")]
    overlaps: String,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[command(flatten)]
    output: SweepOutput,
}

fn parse_dims(s: &str) -> Result<Dims, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    match v.as_slice() {
        [x, y, z] if *x > 0 && *y > 0 && *z > 0 => Ok([*x, *y, *z]),
        _ => Err(format!("expected three positive integers X,Y,Z, got {s:?}")),
    }
}

fn parse_overlap(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    let p = match v.as_slice() {
        [p] => [*p; 3],
        [x, y, z] => [*x, *y, *z],
        _ => return Err(format!("expected one fraction or X,Y,Z, got {s:?}")),
    };
    if let Some(bad) = p.iter().find(|p| !(0.0..1.0).contains(*p)) {
        return Err(format!("overlap fraction out of range [0, 1): {bad}"));
    }
    Ok(p)
}

fn parse_axis_order(s: &str) -> Result<[Axis; 3], String> {
    let axes: Vec<Axis> = s
        .chars()
        .map(|c| Axis::from_char(c).ok_or_else(|| format!("unknown axis {c:?}")))
        .collect::<Result<_, _>>()?;
    match axes.as_slice() {
        [a, b, c] if a != b && b != c && a != c => Ok([*a, *b, *c]),
        _ => Err(format!("axis order must be a permutation of xyz, got {s:?}")),
    }
}

/// Writes to `path`, or stdout when `None`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?);
            f(&mut w)?;
            w.flush().with_context(|| format!("cannot write {}", p.display()))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush().context("cannot write stdout")
        }
    }
}

fn load_mask(path: Option<&Path>, dims: Dims) -> Result<BinaryMask> {
    let mask = match path {
        Some(p) => read_mask(p).with_context(|| format!("cannot read mask {}", p.display()))?,
        None => BinaryMask::full(dims)?,
    };
    mask.check_dims(dims)?;
    Ok(mask)
}

fn load_volume(path: &Path) -> Result<VoxelGrid> {
    read_volume(path).with_context(|| format!("cannot read volume {}", path.display()))
}

fn plan_csv(report: &CountReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "# volmerge plan v{}", volmerge::harness::CSV_SCHEMA_VERSION)?;
    writeln!(
        out,
        "overlap_x,overlap_y,overlap_z,total,retained,skipped,tiles_x,tiles_y,tiles_z"
    )?;
    let [px, py, pz] = report.overlap;
    let [tx, ty, tz] = report.lattice_counts;
    writeln!(
        out,
        "{px},{py},{pz},{},{},{},{tx},{ty},{tz}",
        report.total, report.retained, report.skipped
    )?;
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<()> {
    let dims = match (&args.dims, &args.input) {
        (Some(d), _) => *d,
        (None, Some(p)) => load_volume(p)?.dims(),
        (None, None) => bail!("one of --dims or --input is required"),
    };
    let mut plan = plan_volume(dims, args.tile, args.overlap)?;
    if let Some(m) = &args.mask {
        plan = plan.filter_by_mask(&load_mask(Some(m), dims)?)?;
    }
    let report = plan.count_report();
    with_output(args.out.as_deref(), |w| match args.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)?;
            Ok(())
        }
        Format::Csv => plan_csv(&report, w),
    })
}

fn cmd_phantom(args: PhantomArgs) -> Result<()> {
    let phantom = make_phantom(&PhantomSpec::new(args.dims, args.seed))?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    // MRI is written in raw scanner-like units so `--normalize mri` applies
    let mri_raw = phantom.mri.try_map(|v| v * volmerge::normalize::MRI_SCALE as f32)?;
    write_volume(&mri_raw, &args.out_dir.join("mri.vgrid.json"))?;
    write_volume(&phantom.ct, &args.out_dir.join("ct.vgrid.json"))?;
    write_volume(&phantom.mask.to_grid(), &args.out_dir.join("mask.vgrid.json"))?;
    Ok(())
}

/// Inputs and predictor shared by merge and the sweeps.
struct Session {
    input: VoxelGrid,
    mask: BinaryMask,
    predictor: SessionPredictor,
    base: PipelineConfig,
}

enum SessionPredictor {
    Builtin(Box<dyn Predictor>),
    External(ExternalPredictor),
}

impl Session {
    fn open(args: &PipelineArgs) -> Result<Self> {
        let spec: PredictorSpec = args.predictor.parse()?;
        let input = load_volume(&args.input)?;
        let mask = load_mask(args.mask.as_deref(), input.dims())?;
        let normalization = match args.normalize {
            Normalize::Ct => InputNormalization::Ct,
            Normalize::Mri => InputNormalization::Mri {
                ct_offset: args.ct_offset,
            },
            Normalize::None => InputNormalization::None,
        };
        let base = PipelineConfig {
            tile: args.tile,
            axis_order: args.axis_order,
            fill: args.fill,
            workers: args.workers,
            normalization,
            ..PipelineConfig::default()
        };
        let predictor = match &spec {
            PredictorSpec::External { command } => {
                // one process per worker thread
                let sessions = match args.workers {
                    0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
                    n => n,
                };
                SessionPredictor::External(ExternalPredictor::spawn(command, sessions)?)
            }
            builtin => SessionPredictor::Builtin(builtin.build(1)?),
        };
        Ok(Session {
            input,
            mask,
            predictor,
            base,
        })
    }

    fn predictor(&self) -> &dyn Predictor {
        match &self.predictor {
            SessionPredictor::Builtin(p) => p.as_ref(),
            SessionPredictor::External(e) => e,
        }
    }

    /// Closes external processes and checks their exit status.
    fn close(self) -> Result<()> {
        if let SessionPredictor::External(e) = self.predictor {
            e.finish()?;
        }
        Ok(())
    }
}

fn print_report(report: &MetricReport, format: Format) -> Result<()> {
    with_output(None, |w| match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, report)?;
            writeln!(w)?;
            Ok(())
        }
        Format::Csv => Ok(report.write_csv(w)?),
    })
}

fn cmd_merge(args: MergeArgs) -> Result<()> {
    let session = Session::open(&args.pipeline)?;
    let reference = args.reference.as_deref().map(load_volume).transpose()?;
    let config = PipelineConfig {
        overlap: args.overlap,
        gamma: args.gamma,
        ..session.base.clone()
    };
    let output = run_pipeline(&session.input, &session.mask, session.predictor(), &config)?;
    let report = reference.map(|r| evaluate(&output, &r, &session.mask)).transpose()?;
    session.close()?;
    write_volume(&output.volume, &args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    if let Some(report) = report {
        print_report(&report, Format::Json)?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred = load_volume(&args.pred)?;
    let reference = load_volume(&args.reference)?;
    let mask = load_mask(args.mask.as_deref(), reference.dims())?;
    let peak: Peak = args.peak.parse()?;
    let report = MetricReport::evaluate(&pred, &reference, &mask, peak)?;
    print_report(&report, args.format)
}

fn write_sweep(result: &SweepResult, output: &SweepOutput) -> Result<()> {
    with_output(output.csv.as_deref(), |w| Ok(result.write_csv(w)?))?;
    if let Some(svg) = &output.svg {
        std::fs::write(svg, result.to_svg()).with_context(|| format!("cannot write {}", svg.display()))?;
    }
    Ok(())
}

fn run_sweep(
    pipeline: &PipelineArgs,
    output: &SweepOutput,
    base: impl FnOnce(PipelineConfig) -> PipelineConfig,
    sweep: impl FnOnce(&SweepInputs<'_>) -> volmerge::Result<SweepResult>,
) -> Result<()> {
    let session = Session::open(pipeline)?;
    let reference = match &output.reference {
        Some(p) => load_volume(p)?,
        None => session.input.clone(),
    };
    let inputs = SweepInputs {
        input: &session.input,
        mask: &session.mask,
        reference: &reference,
        predictor: session.predictor(),
        base: base(session.base.clone()),
    };
    let result = sweep(&inputs)?;
    session.close()?;
    write_sweep(&result, output)
}

fn cmd_sweep_gamma(args: SweepGammaArgs) -> Result<()> {
    let gammas = parse_range(&args.gammas)?;
    run_sweep(
        &args.pipeline,
        &args.output,
        |b| PipelineConfig {
            overlap: args.overlap,
            ..b
        },
        |inputs| sweep_gamma(inputs, &gammas),
    )
}

fn cmd_sweep_overlap(args: SweepOverlapArgs) -> Result<()> {
    let overlaps = parse_range(&args.overlaps)?;
    run_sweep(
        &args.pipeline,
        &args.output,
        |b| PipelineConfig { gamma: args.gamma, ..b },
        |inputs| sweep_overlap(inputs, &overlaps),
    )
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let predictor_failure = err
        .chain()
        .filter_map(|e| e.downcast_ref::<volmerge::Error>())
        .any(volmerge::Error::is_predictor_failure);
    if predictor_failure {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Phantom(a) => cmd_phantom(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepGamma(a) => cmd_sweep_gamma(a),
        Command::SweepOverlap(a) => cmd_sweep_overlap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("volmerge: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
