//! `epiroute` — performance toolkit for epidemic message routing under
//! community-structured mobility.
//!
//! Exit codes: 0 success, 2 usage error (bad flags, malformed config or
//! rates file), 3 engine failure (state budget exceeded, solver not
//! converged, fluid model not saturated), 1 unexpected I/O failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{
    cmd_analyze, cmd_compare, cmd_estimate_rates, cmd_simulate, cmd_statespace, AnalyzeArgs,
    CompareArgs, EstimateRatesArgs, SimulateArgs, StatespaceArgs,
};
use manifest::{parse_grid, CliError, Engine, OutputRequest, RatesSource, RunManifest};

#[derive(Parser)]
#[command(
    name = "epiroute",
    version,
    about = "Delivery-delay and transmission-count analysis of epidemic routing \
             under community-structured mobility",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario description (TOML, schema version 1)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Master seed; every random stream of the invocation derives from it
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the four pairwise meeting rates from mobility replications
    EstimateRates {
        #[command(flatten)]
        common: Common,
        /// Replications per experiment
        #[arg(long, default_value_t = 10_000)]
        runs: u32,
        /// Destination file for the rates table
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Solve one analytic engine and write summary (and CDF) artifacts
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Analytic engine: mono, folded, or ode
        #[arg(long)]
        engine: Engine,
        /// Rates file to consume; omitted = estimate now (writes rates.csv)
        #[arg(long, value_name = "FILE")]
        rates: Option<PathBuf>,
        /// Replications per experiment when estimating rates implicitly
        #[arg(long, default_value_t = 10_000)]
        runs: u32,
        /// Output directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Delivery-delay CDF evaluation times
        #[arg(long, value_name = "START:STOP:STEP")]
        cdf_grid: Option<String>,
        /// Abort expansion beyond this many tangible states
        #[arg(long, value_name = "N")]
        state_budget: Option<usize>,
    },
    /// Run epidemic-routing replications and write outcome statistics
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of independent replications
        #[arg(long, default_value_t = 8_000)]
        runs: u32,
        /// Per-hop transmission delay in seconds
        #[arg(long, default_value_t = epiroute_core::sim::DEFAULT_TX_DELAY)]
        tx_delay: f64,
        /// Output directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Evaluate the empirical CDF at these times instead of all jumps
        #[arg(long, value_name = "START:STOP:STEP")]
        cdf_grid: Option<String>,
    },
    /// Solve several engines on one scenario and tabulate percent errors
    Compare {
        #[command(flatten)]
        common: Common,
        /// Engine to include (repeat the flag; at least two)
        #[arg(long = "engine", value_name = "ENGINE")]
        engines: Vec<Engine>,
        /// Rates file consumed by every analytic engine
        #[arg(long, value_name = "FILE")]
        rates: PathBuf,
        /// Engine whose results anchor the percent errors
        #[arg(long, default_value = "sim")]
        reference: Engine,
        /// Replications for the simulation engine
        #[arg(long, default_value_t = 8_000)]
        runs: u32,
        /// Per-hop transmission delay in seconds (simulation engine)
        #[arg(long, default_value_t = epiroute_core::sim::DEFAULT_TX_DELAY)]
        tx_delay: f64,
        /// Output directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Abort expansion beyond this many tangible states
        #[arg(long, value_name = "N")]
        state_budget: Option<usize>,
    },
    /// Count tangible states and transitions of a Markov engine
    Statespace {
        #[command(flatten)]
        common: Common,
        /// Markov engine: mono or folded
        #[arg(long)]
        engine: Engine,
        /// Abort expansion beyond this many tangible states
        #[arg(long, value_name = "N")]
        state_budget: Option<usize>,
        /// Also write the counts to this file
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::EstimateRates { common, runs, out } => {
            let manifest = RunManifest {
                config_path: common.config,
                engines: vec![Engine::Sim],
                outputs: OutputRequest::default(),
                seed: common.seed,
                runs,
                rates: RatesSource::Estimate { runs },
            };
            manifest.validate()?;
            cmd_estimate_rates(&EstimateRatesArgs { manifest: &manifest, out: &out })
        }
        Command::Analyze { common, engine, rates, runs, out, cdf_grid, state_budget } => {
            let cdf_grid = cdf_grid.as_deref().map(parse_grid).transpose()?;
            let rates = match rates {
                Some(path) => RatesSource::File(path),
                None => RatesSource::Estimate { runs },
            };
            let manifest = RunManifest {
                config_path: common.config,
                engines: vec![engine],
                outputs: OutputRequest { cdf_grid },
                seed: common.seed,
                runs,
                rates,
            };
            manifest.validate()?;
            cmd_analyze(&AnalyzeArgs { manifest: &manifest, out: &out, state_budget })
        }
        Command::Simulate { common, runs, tx_delay, out, cdf_grid } => {
            let cdf_grid = cdf_grid.as_deref().map(parse_grid).transpose()?;
            let manifest = RunManifest {
                config_path: common.config,
                engines: vec![Engine::Sim],
                outputs: OutputRequest { cdf_grid },
                seed: common.seed,
                runs,
                rates: RatesSource::Estimate { runs: 0 },
            };
            manifest.validate()?;
            cmd_simulate(&SimulateArgs { manifest: &manifest, tx_delay, out: &out })
        }
        Command::Compare {
            common,
            engines,
            rates,
            reference,
            runs,
            tx_delay,
            out,
            state_budget,
        } => {
            let manifest = RunManifest {
                config_path: common.config,
                engines,
                outputs: OutputRequest { cdf_grid: None },
                seed: common.seed,
                runs,
                rates: RatesSource::File(rates),
            };
            manifest.validate()?;
            cmd_compare(&CompareArgs {
                manifest: &manifest,
                reference,
                tx_delay,
                out: &out,
                state_budget,
            })
        }
        Command::Statespace { common, engine, state_budget, out } => {
            cmd_statespace(&StatespaceArgs {
                config: &common.config,
                engine,
                state_budget,
                out: out.as_deref(),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
