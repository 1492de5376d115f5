//! Validated description of one invocation: which engines run, where
//! randomness comes from, and which artifacts are requested.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Which computational engine produces a measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Engine {
    /// Exact per-community Markov model.
    Mono,
    /// Folded Markov model (communities merged, counts redistributed).
    Folded,
    /// Deterministic mean-field fluid model.
    Ode,
    /// Discrete-event mobility simulation.
    Sim,
}

impl Engine {
    pub fn is_analytic(self) -> bool {
        !matches!(self, Engine::Sim)
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Engine::Mono => "mono",
            Engine::Folded => "folded",
            Engine::Ode => "ode",
            Engine::Sim => "sim",
        };
        f.write_str(s)
    }
}

/// Where the meeting rates consumed by the analytic engines come from.
#[derive(Clone, Debug, PartialEq)]
pub enum RatesSource {
    /// Read a previously written rates file.
    File(PathBuf),
    /// Estimate from mobility replications as part of this invocation.
    Estimate { runs: u32 },
}

/// Artifacts requested from an engine run. The scalar measures (delay
/// and transmission count) are always produced; the delivery-delay CDF
/// only when a grid is given.
#[derive(Clone, Debug, Default)]
pub struct OutputRequest {
    /// Strictly increasing evaluation times for the delivery-delay CDF.
    pub cdf_grid: Option<Vec<f64>>,
}

/// One parsed-and-validated invocation.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub engines: Vec<Engine>,
    pub outputs: OutputRequest,
    pub seed: u64,
    /// Replications for the simulation engine (and Monte-Carlo checks).
    pub runs: u32,
    pub rates: RatesSource,
}

impl RunManifest {
    /// Enforces the cross-field invariants that clap cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(grid) = &self.outputs.cdf_grid {
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CliError::Usage("CDF grid must be strictly increasing".into()));
            }
        }
        if self.engines.contains(&Engine::Sim) && self.runs == 0 {
            return Err(CliError::Usage("simulation needs at least one replication".into()));
        }
        Ok(())
    }
}

/// Subsystem labels for deriving independent random streams from the
/// single master seed of an invocation.
#[derive(Clone, Copy, Debug)]
pub enum Subsystem {
    RateEstimation = 1,
    Simulation = 2,
}

/// Derives a per-subsystem seed from the master seed (splitmix-style
/// increment keeps nearby master seeds apart).
pub fn split_seed(master: u64, subsystem: Subsystem) -> u64 {
    master ^ (subsystem as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Parses a `start:stop:step` time grid into explicit, strictly
/// increasing evaluation times (`stop` included when it falls on a step).
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Usage(format!("invalid CDF grid `{text}`: {why}"));
    let parts: Vec<&str> = text.split(':').collect();
    let [start, stop, step]: [&str; 3] =
        parts.try_into().map_err(|_| bad("expected start:stop:step"))?;
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
        return Err(bad("values must be finite"));
    }
    if start < 0.0 {
        return Err(bad("start must be non-negative"));
    }
    if step <= 0.0 {
        return Err(bad("step must be positive"));
    }
    if stop <= start {
        return Err(bad("stop must exceed start"));
    }
    let n = ((stop - start) / step + 1.0 + 1e-9).floor() as usize;
    Ok((0..n).map(|k| start + k as f64 * step).collect())
}

#[derive(Error, Debug)]
pub enum CliError {
    /// Bad arguments or malformed input files; exits with code 2.
    #[error("{0}")]
    Usage(String),
    /// An engine failed to produce the requested measure; exits with 3.
    #[error("{0}")]
    Engine(String),
    /// Unexpected I/O failure writing artifacts; exits with 1.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Engine(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}
