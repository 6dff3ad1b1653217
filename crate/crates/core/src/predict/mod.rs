//! Per-tile prediction: built-in synthetic predictors and the external process bridge.
//!
//! Spec strings, as accepted on the command line:
//!
//! | string                      | predictor                                             |
//! |-----------------------------|-------------------------------------------------------|
//! | `identity`                  | returns the input tile                                |
//! | `constant:C`                | every voxel `C`                                       |
//! | `affine:A,B,C,D`            | `A*x + B*y + C*z + D` at global voxel coordinates     |
//! | `edge-bias:BETA,Q[/INNER]`  | `INNER` (default identity) plus a face-peaked bias    |
//! | `external:CMD ARGS...`      | framed stdin/stdout protocol, see [`protocol`]        |

pub mod external;
pub mod protocol;

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::plan::TileSpec;
use crate::scalar::Real;
use crate::VoxelGrid;

pub use external::{run_external, ExternalPredictor};

/// Produces a tile prediction from the input tile.
pub trait Predictor: Sync {
    fn predict(&self, tile: &TileSpec, input: &VoxelGrid) -> Result<VoxelGrid>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum PredictorSpec {
    Identity,
    Constant(f64),
    Affine {
        a: f64,
        b: f64,
        c: f64,
        d: f64,
    },
    EdgeBias {
        inner: Box<PredictorSpec>,
        amplitude: f64,
        exponent: f64,
    },
    External {
        command: Vec<String>,
    },
}

fn parse_numbers(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidParameter(format!("{what}: cannot parse {s:?}")))?;
    if vals.len() != n || vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{what}: expected {n} finite numbers, got {s:?}"
        )));
    }
    Ok(vals)
}

impl FromStr for PredictorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let spec = match kind.trim() {
            "identity" if args.is_empty() => PredictorSpec::Identity,
            "constant" => PredictorSpec::Constant(parse_numbers(args, 1, "constant")?[0]),
            "affine" => {
                let v = parse_numbers(args, 4, "affine")?;
                PredictorSpec::Affine {
                    a: v[0],
                    b: v[1],
                    c: v[2],
                    d: v[3],
                }
            }
            "edge-bias" => {
                let (params, inner) = match args.split_once('/') {
                    Some((p, inner)) => (p, inner.parse()?),
                    None => (args, PredictorSpec::Identity),
                };
                let v = parse_numbers(params, 2, "edge-bias")?;
                PredictorSpec::EdgeBias {
                    inner: Box::new(inner),
                    amplitude: v[0],
                    exponent: v[1],
                }
            }
            "external" => {
                let command: Vec<String> = args.split_whitespace().map(String::from).collect();
                PredictorSpec::External { command }
            }
            _ => {
                return Err(Error::InvalidParameter(format!("unknown predictor {s:?}")));
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PredictorSpec::EdgeBias {
                inner,
                amplitude,
                exponent,
            } => {
                if !amplitude.is_finite() || *amplitude < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "edge-bias amplitude must be >= 0, got {amplitude}"
                    )));
                }
                if !exponent.is_finite() || *exponent < 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "edge-bias exponent must be >= 1, got {exponent}"
                    )));
                }
                if matches!(**inner, PredictorSpec::External { .. }) {
                    return Err(Error::InvalidParameter(
                        "edge-bias cannot wrap an external predictor".into(),
                    ));
                }
                inner.validate()
            }
            PredictorSpec::External { command } if command.is_empty() => {
                Err(Error::InvalidParameter("external predictor needs a command".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, PredictorSpec::External { .. })
    }

    /// Instantiates the predictor; external commands spawn `sessions` processes.
    pub fn build(&self, sessions: usize) -> Result<Box<dyn Predictor>> {
        self.validate()?;
        Ok(match self {
            PredictorSpec::External { command } => Box::new(ExternalPredictor::spawn(command, sessions.max(1))?),
            builtin => Box::new(Builtin(builtin.clone())),
        })
    }

    /// Applies a built-in predictor to a tile of any precision.
    pub fn apply<T: Real>(&self, tile: &TileSpec, input: &Grid<T>) -> Result<Grid<T>> {
        if input.dims() != tile.size {
            return Err(Error::DimMismatch {
                left: tile.size,
                right: input.dims(),
            });
        }
        match self {
            PredictorSpec::Identity => Ok(input.clone()),
            PredictorSpec::Constant(c) => {
                Ok(Grid::filled(tile.size, T::from_f64_lossy(*c))?.with_spacing(input.spacing())?)
            }
            PredictorSpec::Affine { a, b, c, d } => {
                let [ox, oy, oz] = tile.origin;
                Grid::from_fn(tile.size, |x, y, z| {
                    T::from_f64_lossy(a * (ox + x) as f64 + b * (oy + y) as f64 + c * (oz + z) as f64 + d)
                })?
                .with_spacing(input.spacing())
            }
            PredictorSpec::EdgeBias {
                inner,
                amplitude,
                exponent,
            } => {
                let base = inner.apply(tile, input)?;
                let profiles = [0, 1, 2].map(|a| face_profile(tile.size[a], *exponent));
                let bias = Grid::<f64>::from_fn(tile.size, |x, y, z| {
                    amplitude * profiles[0][x].max(profiles[1][y]).max(profiles[2][z])
                })?;
                let values = base
                    .values()
                    .iter()
                    .zip(bias.values())
                    .map(|(&v, &b)| T::from_f64_lossy(v.as_f64() + b))
                    .collect();
                Grid::new(tile.size, base.spacing(), values)
            }
            PredictorSpec::External { .. } => Err(Error::InvalidParameter(
                "external predictors run through ExternalPredictor".into(),
            )),
        }
    }
}

/// `(2 |u - 0.5|)^q` at `u = i / len`: 1 on the first face, 0 at `i = len / 2`.
fn face_profile(len: usize, exponent: f64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let u = i as f64 / len as f64;
            (2.0 * (u - 0.5).abs()).powf(exponent)
        })
        .collect()
}

/// Built-in predictors are pure functions of the tile.
struct Builtin(PredictorSpec);

impl Predictor for Builtin {
    fn predict(&self, tile: &TileSpec, input: &VoxelGrid) -> Result<VoxelGrid> {
        self.0.apply(tile, input)
    }
}

/// One-shot prediction of a single tile.
pub fn predict_tile(spec: &PredictorSpec, tile: &TileSpec, input: &VoxelGrid) -> Result<VoxelGrid> {
    spec.build(1)?.predict(tile, input)
}
