//! Subcommand implementations: thin orchestration over the core crate
//! plus artifact writing. Everything here is deterministic for a fixed
//! master seed; stderr carries progress notes only.

use std::fs;
use std::path::Path;

use epiroute_core::config::NetworkConfig;
use epiroute_core::ctmc::Ctmc;
use epiroute_core::io::{
    atomic_write, cdf_csv, chi_square_csv, fmt_f64, outcomes_csv, rates_file_string,
    read_rates_file,
};
use epiroute_core::models::{build_folded, build_monolithic, MeetingRates, ModelError};
use epiroute_core::ode::{self, average_delay_ode, integrate_until_saturated, OdeError, Trajectory};
use epiroute_core::sim::{estimate_rates, run_epidemic_many, SimOutcome};
use epiroute_core::solve::{delivery_cdf, mean_and_half_width, mtta, SolveOptions};
use epiroute_core::srn::{expand_reachability, ExpandError, ExpandOptions};
use epiroute_core::stats::{chi_square_uniform_discrete, percent_error, StatError};

use crate::manifest::{split_seed, CliError, Engine, RatesSource, RunManifest, Subsystem};

/// Mobility integration step shared by every simulation-backed command.
const SIM_DT: f64 = epiroute_core::sim::DEFAULT_DT;

pub fn load_config(path: &Path) -> Result<NetworkConfig, CliError> {
    let (cfg, warnings) =
        NetworkConfig::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

/// The fixed mobility step must keep per-step displacement well below the
/// contact range, otherwise contacts are missed.
fn check_sim_step(cfg: &NetworkConfig) -> Result<(), CliError> {
    if cfg.v_max * SIM_DT >= cfg.r / 4.0 {
        return Err(CliError::Usage(format!(
            "v_max = {} m/s travels {} m per {} s step, too coarse for contact range R = {} \
             (needs v_max * dt < R/4)",
            cfg.v_max,
            cfg.v_max * SIM_DT,
            SIM_DT,
            cfg.r
        )));
    }
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn ensure_parent_dir(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn write_summary(dir: &Path, rows: &[(&str, String)]) -> Result<(), CliError> {
    let mut text = String::from("measure,value\n");
    for (measure, value) in rows {
        text.push_str(measure);
        text.push(',');
        text.push_str(value);
        text.push('\n');
    }
    atomic_write(&dir.join("summary.csv"), &text)?;
    Ok(())
}

/// Resolves the meeting rates: read from a file, or estimate now (in
/// which case the estimates are persisted next to the other artifacts).
fn obtain_rates(
    cfg: &NetworkConfig,
    source: &RatesSource,
    seed: u64,
    out_dir: &Path,
) -> Result<MeetingRates, CliError> {
    match source {
        RatesSource::File(path) => {
            let file = read_rates_file(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Ok(file.rates())
        }
        RatesSource::Estimate { runs } => {
            check_estimation_runs(*runs)?;
            check_sim_step(cfg)?;
            eprintln!("estimating meeting rates ({runs} replications per experiment)...");
            let est = estimate_rates(cfg, *runs, SIM_DT, split_seed(seed, Subsystem::RateEstimation));
            atomic_write(&out_dir.join("rates.csv"), &rates_file_string(&est))?;
            Ok(est.rates())
        }
    }
}

fn check_estimation_runs(runs: u32) -> Result<(), CliError> {
    if runs < 2 {
        return Err(CliError::Usage(format!(
            "rate estimation needs at least 2 replications, got {runs}"
        )));
    }
    Ok(())
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::PopulationTooSmall(_) => CliError::Usage(e.to_string()),
        ModelError::InvalidRates(_) => CliError::Usage(e.to_string()),
        ModelError::RMeetDomain { .. } => CliError::Engine(e.to_string()),
    }
}

/// Builds and expands the requested Markov engine.
fn expand_engine(
    engine: Engine,
    cfg: &NetworkConfig,
    rates: &MeetingRates,
    state_budget: Option<usize>,
) -> Result<Ctmc, CliError> {
    let model = match engine {
        Engine::Mono => build_monolithic(cfg, rates).map_err(model_error)?,
        Engine::Folded => build_folded(cfg, rates).map_err(model_error)?,
        _ => unreachable!("only Markov engines are expanded"),
    };
    let mut opts = ExpandOptions::default();
    if let Some(budget) = state_budget {
        opts.max_states = budget;
    }
    eprintln!("expanding {engine} model...");
    expand_reachability(&model, &opts).map_err(|e| match e {
        ExpandError::StateBudgetExceeded { .. } => {
            let hint = match engine {
                Engine::Mono => "switch engine to folded or ode",
                _ => "switch engine to ode",
            };
            CliError::Engine(format!("{e}; {hint}"))
        }
        other => CliError::Engine(other.to_string()),
    })
}

fn ode_error(e: OdeError) -> CliError {
    match e {
        OdeError::PopulationTooSmall(_) | OdeError::InvalidStep(_) => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Engine(other.to_string()),
    }
}

/// Fluid-model delivery CDF on a time grid: fraction of the non-source
/// population infected, linearly interpolated between stored steps and
/// held constant past the end of the trajectory.
fn ode_cdf_on_grid(traj: &Trajectory, m: u32, grid: &[f64]) -> Vec<(f64, f64)> {
    let frac = |infected: f64| ((infected - 1.0) / (f64::from(m) - 1.0)).clamp(0.0, 1.0);
    let states = &traj.states;
    let mut idx = 0;
    grid.iter()
        .map(|&t| {
            while idx + 1 < states.len() && states[idx + 1].t <= t {
                idx += 1;
            }
            let value = if idx + 1 == states.len() {
                frac(states[idx].total_infected())
            } else {
                let (a, b) = (&states[idx], &states[idx + 1]);
                let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
                frac(a.total_infected() + w * (b.total_infected() - a.total_infected()))
            };
            (t, value)
        })
        .collect()
}

pub struct EstimateRatesArgs<'a> {
    pub manifest: &'a RunManifest,
    pub out: &'a Path,
}

pub fn cmd_estimate_rates(args: &EstimateRatesArgs) -> Result<(), CliError> {
    let m = args.manifest;
    let cfg = load_config(&m.config_path)?;
    let RatesSource::Estimate { runs } = m.rates else {
        unreachable!("estimate-rates always estimates");
    };
    check_estimation_runs(runs)?;
    check_sim_step(&cfg)?;
    eprintln!("estimating meeting rates ({runs} replications per experiment)...");
    let est = estimate_rates(&cfg, runs, SIM_DT, split_seed(m.seed, Subsystem::RateEstimation));
    ensure_parent_dir(args.out)?;
    atomic_write(args.out, &rates_file_string(&est))?;
    eprintln!(
        "wrote {} (lambda {:.4e}, mu {:.4e}, gamma {:.4e}, eta {:.4e} 1/s)",
        args.out.display(),
        est.lambda.rate,
        est.mu.rate,
        est.gamma.rate,
        est.eta.rate
    );
    Ok(())
}

pub struct AnalyzeArgs<'a> {
    pub manifest: &'a RunManifest,
    pub out: &'a Path,
    pub state_budget: Option<usize>,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let m = args.manifest;
    let engine = m.engines[0];
    if !engine.is_analytic() {
        return Err(CliError::Usage(
            "engine `sim` is not analytic; use the `simulate` subcommand".into(),
        ));
    }
    let cfg = load_config(&m.config_path)?;
    ensure_out_dir(args.out)?;
    let rates = obtain_rates(&cfg, &m.rates, m.seed, args.out)?;

    let mut rows: Vec<(&str, String)> = vec![("engine", engine.to_string())];
    match engine {
        Engine::Mono | Engine::Folded => {
            let ctmc = expand_engine(engine, &cfg, &rates, args.state_budget)?;
            eprintln!("solving for time to absorption ({} states)...", ctmc.n_states());
            let sol = mtta(&ctmc, &SolveOptions::default())
                .map_err(|e| CliError::Engine(e.to_string()))?;
            rows.push(("states", ctmc.n_states().to_string()));
            rows.push(("transitions", ctmc.n_transitions().to_string()));
            rows.push(("delay_s", fmt_f64(sol.mtta)));
            rows.push(("transmissions", fmt_f64(sol.terminal_reward)));
            if let Some(grid) = &m.outputs.cdf_grid {
                let points = delivery_cdf(&ctmc, grid, 1e-9)
                    .map_err(|e| CliError::Engine(e.to_string()))?;
                atomic_write(&args.out.join("cdf.csv"), &cdf_csv(&points))?;
            }
        }
        Engine::Ode => {
            let traj = integrate_until_saturated(&cfg, &rates, ode::DEFAULT_DT)
                .map_err(ode_error)?;
            let delay = average_delay_ode(&traj, cfg.m).map_err(ode_error)?;
            rows.push(("delay_s", fmt_f64(delay)));
            rows.push(("saturation_time_s", fmt_f64(traj.final_state().t)));
            rows.push(("clamped_steps", traj.clamped.to_string()));
            if let Some(grid) = &m.outputs.cdf_grid {
                let points = ode_cdf_on_grid(&traj, cfg.m, grid);
                atomic_write(&args.out.join("cdf.csv"), &cdf_csv(&points))?;
            }
        }
        Engine::Sim => unreachable!(),
    }
    write_summary(args.out, &rows)?;
    Ok(())
}

pub struct SimulateArgs<'a> {
    pub manifest: &'a RunManifest,
    pub tx_delay: f64,
    pub out: &'a Path,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let m = args.manifest;
    if m.runs == 0 {
        return Err(CliError::Usage("simulation needs at least one replication".into()));
    }
    if !args.tx_delay.is_finite() || args.tx_delay < 0.0 {
        return Err(CliError::Usage(format!(
            "transmission delay must be finite and non-negative, got {}",
            args.tx_delay
        )));
    }
    let cfg = load_config(&m.config_path)?;
    check_sim_step(&cfg)?;
    ensure_out_dir(args.out)?;

    eprintln!("simulating {} replications...", m.runs);
    let outcomes = run_epidemic_many(
        &cfg,
        args.tx_delay,
        SIM_DT,
        m.runs,
        split_seed(m.seed, Subsystem::Simulation),
    );
    atomic_write(&args.out.join("outcomes.csv"), &outcomes_csv(&outcomes))?;

    let n = outcomes.len();
    let (mean_delay, delay_hw) = mean_and_half_width(outcomes.iter().map(|o| o.delivery_delay), n);
    let (mean_tx, tx_hw) =
        mean_and_half_width(outcomes.iter().map(|o| f64::from(o.transmissions)), n);
    if n == 1 {
        eprintln!("note: confidence half-widths are undefined for a single replication");
    }
    write_summary(
        args.out,
        &[
            ("engine", "sim".into()),
            ("runs", n.to_string()),
            ("mean_delay_s", fmt_f64(mean_delay)),
            ("delay_ci_half_width_s", fmt_f64(delay_hw)),
            ("mean_transmissions", fmt_f64(mean_tx)),
            ("transmissions_ci_half_width", fmt_f64(tx_hw)),
        ],
    )?;

    let points = empirical_cdf_points(&outcomes, m.outputs.cdf_grid.as_deref());
    atomic_write(&args.out.join("cdf.csv"), &cdf_csv(&points))?;

    match transmission_uniformity(&outcomes, cfg.m) {
        Ok(report) => {
            atomic_write(
                &args.out.join("chi_square.csv"),
                &chi_square_csv(&[("transmissions_uniform", &report)]),
            )?;
        }
        Err(why) => eprintln!("note: skipping uniformity test: {why}"),
    }
    Ok(())
}

/// Empirical delivery-delay CDF, either at the requested grid times or as
/// the full step function over the sorted outcomes (one point per
/// distinct delay; ties collapse onto the upper step).
fn empirical_cdf_points(outcomes: &[SimOutcome], grid: Option<&[f64]>) -> Vec<(f64, f64)> {
    let mut delays: Vec<f64> = outcomes.iter().map(|o| o.delivery_delay).collect();
    delays.sort_by(f64::total_cmp);
    let n = delays.len() as f64;
    match grid {
        Some(grid) => grid
            .iter()
            .map(|&t| (t, delays.partition_point(|&d| d <= t) as f64 / n))
            .collect(),
        None => {
            let mut points: Vec<(f64, f64)> = Vec::new();
            for (k, &d) in delays.iter().enumerate() {
                let p = (k + 1) as f64 / n;
                match points.last_mut() {
                    Some(last) if last.0 == d => last.1 = p,
                    _ => points.push((d, p)),
                }
            }
            points
        }
    }
}

/// Chi-square uniformity report for the per-run transmission counts over
/// their full support `{1, ..., M-1}`.
fn transmission_uniformity(
    outcomes: &[SimOutcome],
    m: u32,
) -> Result<epiroute_core::stats::ChiSquareReport, String> {
    let support = (m - 1) as usize;
    let mut counts = vec![0u64; support];
    for o in outcomes {
        let k = o.transmissions as usize;
        if k < 1 || k > support {
            return Err(format!("transmission count {k} outside 1..={support}"));
        }
        counts[k - 1] += 1;
    }
    chi_square_uniform_discrete(&counts, 0.01).map_err(|e| e.to_string())
}

pub struct CompareArgs<'a> {
    pub manifest: &'a RunManifest,
    pub reference: Engine,
    pub tx_delay: f64,
    pub out: &'a Path,
    pub state_budget: Option<usize>,
}

struct EngineResult {
    engine: Engine,
    delay: f64,
    transmissions: Option<f64>,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let m = args.manifest;
    if m.engines.len() < 2 {
        return Err(CliError::Usage("comparison needs at least two engines".into()));
    }
    for (i, e) in m.engines.iter().enumerate() {
        if m.engines[..i].contains(e) {
            return Err(CliError::Usage(format!("engine `{e}` listed twice")));
        }
    }
    if !m.engines.contains(&args.reference) {
        return Err(CliError::Usage(format!(
            "reference engine `{}` is not among the compared engines",
            args.reference
        )));
    }
    let cfg = load_config(&m.config_path)?;
    ensure_out_dir(args.out)?;
    // All analytic engines consume the same pre-estimated rates file; a
    // comparison never re-estimates rates behind the user's back.
    let RatesSource::File(rates_path) = &m.rates else {
        unreachable!("compare always takes a rates file");
    };
    let rates = read_rates_file(rates_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", rates_path.display())))?
        .rates();

    let mut results = Vec::new();
    for &engine in &m.engines {
        let result = match engine {
            Engine::Mono | Engine::Folded => {
                let ctmc = expand_engine(engine, &cfg, &rates, args.state_budget)?;
                eprintln!("solving {engine} ({} states)...", ctmc.n_states());
                let sol = mtta(&ctmc, &SolveOptions::default())
                    .map_err(|e| CliError::Engine(e.to_string()))?;
                EngineResult { engine, delay: sol.mtta, transmissions: Some(sol.terminal_reward) }
            }
            Engine::Ode => {
                let traj = integrate_until_saturated(&cfg, &rates, ode::DEFAULT_DT)
                    .map_err(ode_error)?;
                let delay = average_delay_ode(&traj, cfg.m).map_err(ode_error)?;
                EngineResult { engine, delay, transmissions: None }
            }
            Engine::Sim => {
                check_sim_step(&cfg)?;
                eprintln!("simulating {} replications...", m.runs);
                let outcomes = run_epidemic_many(
                    &cfg,
                    args.tx_delay,
                    SIM_DT,
                    m.runs,
                    split_seed(m.seed, Subsystem::Simulation),
                );
                let n = outcomes.len();
                let (delay, _) = mean_and_half_width(outcomes.iter().map(|o| o.delivery_delay), n);
                let (tx, _) =
                    mean_and_half_width(outcomes.iter().map(|o| f64::from(o.transmissions)), n);
                EngineResult { engine, delay, transmissions: Some(tx) }
            }
        };
        results.push(result);
    }

    let reference = results
        .iter()
        .find(|r| r.engine == args.reference)
        .expect("reference engine was computed");
    let (ref_delay, ref_tx) = (reference.delay, reference.transmissions);

    let pe = |value: f64, reference: f64| -> Result<String, CliError> {
        percent_error(value, reference).map(fmt_f64).map_err(|e: StatError| match e {
            StatError::ZeroReference => {
                CliError::Engine("reference measure is zero; percent error undefined".into())
            }
            other => CliError::Engine(other.to_string()),
        })
    };

    let mut text = String::from("engine,delay_s,delay_pe_pct,transmissions,transmissions_pe_pct\n");
    for r in &results {
        let is_ref = r.engine == args.reference;
        let delay_pe = if is_ref { String::new() } else { pe(r.delay, ref_delay)? };
        let tx = r.transmissions.map(fmt_f64).unwrap_or_default();
        let tx_pe = match (is_ref, r.transmissions, ref_tx) {
            (false, Some(v), Some(rv)) => pe(v, rv)?,
            _ => String::new(),
        };
        text.push_str(&format!("{},{},{},{},{}\n", r.engine, fmt_f64(r.delay), delay_pe, tx, tx_pe));
    }
    atomic_write(&args.out.join("comparison.csv"), &text)?;
    Ok(())
}

pub struct StatespaceArgs<'a> {
    pub config: &'a Path,
    pub engine: Engine,
    pub state_budget: Option<usize>,
    pub out: Option<&'a Path>,
}

pub fn cmd_statespace(args: &StatespaceArgs) -> Result<(), CliError> {
    if !matches!(args.engine, Engine::Mono | Engine::Folded) {
        return Err(CliError::Usage(
            "state-space counting applies to the Markov engines `mono` and `folded` only".into(),
        ));
    }
    let cfg = load_config(args.config)?;
    // The counts do not depend on the rate values; nominal rates suffice.
    let rates = MeetingRates { lambda: 1.0, mu: 1.0, gamma: 1.0, eta: 1.0 };
    let ctmc = expand_engine(args.engine, &cfg, &rates, args.state_budget)?;
    let text = format!(
        "engine,states,transitions\n{},{},{}\n",
        args.engine,
        ctmc.n_states(),
        ctmc.n_transitions()
    );
    print!("{text}");
    if let Some(path) = args.out {
        ensure_parent_dir(path)?;
        atomic_write(path, &text)?;
    }
    Ok(())
}
