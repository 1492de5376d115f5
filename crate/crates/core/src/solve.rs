//! Absorbing-CTMC analysis.
//!
//! * [`mtta`] — mean time to absorption, per-absorbing-state absorption
//!   probabilities and expected terminal reward, via one adjoint linear
//!   solve: with `Q_TT` the transient-to-transient generator block and
//!   `pi0` the initial distribution, the expected total time spent in each
//!   transient state satisfies `(-Q_TT)^T w = pi0`. The system is solved
//!   by forward Gauss-Seidel/SOR sweeps in state-discovery order, which
//!   follows the acyclic level structure of infection-counting chains and
//!   converges quickly.
//! * [`transient`] / [`delivery_cdf`] — uniformization with Poisson
//!   truncation; the CDF variant folds each step vector into one scalar
//!   per step, so a single pass serves an entire time grid.
//! * [`monte_carlo_ctmc`] — exponential-race path sampling with
//!   per-replication counter-mode RNG streams; used as an independent
//!   statistical oracle for the linear-algebra paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::ctmc::Ctmc;

/// Reward name [`delivery_cdf`] expects: an indicator that the marking has
/// reached the delivered condition. Model builders attach it.
pub const DELIVERY_REWARD: &str = "delivered";

/// Two-sided 95% normal quantile used for confidence half-widths.
pub const Z95: f64 = 1.959963984540054;

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Convergence threshold on the max-norm residual of the adjoint
    /// system (the right-hand side is a probability vector of mass 1).
    pub residual_tol: f64,
    /// Hard cap on Gauss-Seidel sweeps.
    pub max_sweeps: usize,
    /// SOR relaxation factor; 1.0 is plain Gauss-Seidel.
    pub relaxation: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { residual_tol: 1e-10, max_sweeps: 500_000, relaxation: 1.0 }
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SolveError {
    #[error("transient state {state} cannot reach any absorbing state")]
    NotAbsorbing { state: usize },
    #[error("chain has no absorbing state")]
    NoAbsorbingStates,
    #[error("iterative solve stalled after {sweeps} sweeps (residual {residual:.3e})")]
    NotConverged { sweeps: usize, residual: f64 },
    #[error("chain has no reward named `{0}`")]
    MissingReward(String),
    #[error("tolerance {0} outside (0, 1e-3]")]
    InvalidTolerance(f64),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid time {0}: must be finite and non-negative")]
    InvalidTime(f64),
    #[error("at least one replication is required")]
    InvalidRuns,
}

/// Output of [`mtta`].
#[derive(Clone, Debug)]
pub struct AbsorptionResult {
    /// Mean time to absorption from the initial state.
    pub mtta: f64,
    /// `(state, probability)` over absorbing states with non-zero mass.
    pub absorption: Vec<(u32, f64)>,
    /// Total absorption probability (1 up to solver tolerance).
    pub absorbed_mass: f64,
    /// Expected primary reward of the absorbing state that is hit.
    pub terminal_reward: f64,
    pub sweeps: usize,
    pub residual: f64,
}

/// Output of [`transient`].
#[derive(Clone, Debug)]
pub struct TransientResult {
    pub t: f64,
    /// State distribution at `t` (renormalized after Poisson truncation).
    pub probs: Vec<f64>,
    /// Expected primary reward rate at `t`.
    pub expected_reward: f64,
}

/// Output of [`monte_carlo_ctmc`].
#[derive(Clone, Debug)]
pub struct McResult {
    pub runs: usize,
    pub mean_time: f64,
    /// Half-width of the 95% CI on the mean absorption time (NaN for a
    /// single replication).
    pub time_half_width: f64,
    pub mean_reward: f64,
    pub reward_half_width: f64,
}

/// Marks every state from which the absorbing set is reachable.
fn can_reach_absorbing(ctmc: &Ctmc) -> Vec<bool> {
    let n = ctmc.n_states();
    let tr = ctmc.transpose();
    let mut seen = vec![false; n];
    let mut stack: Vec<u32> = (0..n as u32).filter(|&i| ctmc.is_absorbing(i as usize)).collect();
    for &s in &stack {
        seen[s as usize] = true;
    }
    while let Some(s) = stack.pop() {
        let (preds, _) = tr.in_edges(s as usize);
        for &p in preds {
            if !seen[p as usize] {
                seen[p as usize] = true;
                stack.push(p);
            }
        }
    }
    seen
}

fn check_absorbing_structure(ctmc: &Ctmc) -> Result<(), SolveError> {
    if ctmc.n_absorbing() == 0 {
        return Err(SolveError::NoAbsorbingStates);
    }
    let seen = can_reach_absorbing(ctmc);
    match seen.iter().position(|&s| !s) {
        Some(state) => Err(SolveError::NotAbsorbing { state }),
        None => Ok(()),
    }
}

/// Mean time to absorption, absorption distribution and expected terminal
/// reward from the chain's initial state.
pub fn mtta(ctmc: &Ctmc, opts: &SolveOptions) -> Result<AbsorptionResult, SolveError> {
    check_absorbing_structure(ctmc)?;
    let n = ctmc.n_states();
    let init = ctmc.initial() as usize;

    if ctmc.is_absorbing(init) {
        let reward = ctmc.primary_reward().map_or(0.0, |r| r[init]);
        return Ok(AbsorptionResult {
            mtta: 0.0,
            absorption: vec![(init as u32, 1.0)],
            absorbed_mass: 1.0,
            terminal_reward: reward,
            sweeps: 0,
            residual: 0.0,
        });
    }

    let tr = ctmc.transpose();
    let exit = ctmc.exit_rates();
    let mut w = vec![0.0f64; n];
    let omega = opts.relaxation;

    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        for _ in 0..8 {
            sweeps += 1;
            for i in 0..n {
                if ctmc.is_absorbing(i) {
                    continue;
                }
                let (srcs, rates) = tr.in_edges(i);
                let mut s = if i == init { 1.0 } else { 0.0 };
                for (&j, &r) in srcs.iter().zip(rates) {
                    s += r * w[j as usize];
                }
                let val = s / exit[i];
                w[i] += omega * (val - w[i]);
            }
        }
        residual = 0.0f64;
        for i in 0..n {
            if ctmc.is_absorbing(i) {
                continue;
            }
            let (srcs, rates) = tr.in_edges(i);
            let mut s = if i == init { 1.0 } else { 0.0 };
            for (&j, &r) in srcs.iter().zip(rates) {
                s += r * w[j as usize];
            }
            residual = residual.max((s - exit[i] * w[i]).abs());
        }
        if residual <= opts.residual_tol {
            break;
        }
    }
    if residual > opts.residual_tol {
        return Err(SolveError::NotConverged { sweeps, residual });
    }

    let mtta: f64 = w.iter().sum();
    let mut absorption = Vec::new();
    let mut absorbed_mass = 0.0;
    let mut terminal_reward = 0.0;
    let reward = ctmc.primary_reward();
    for a in 0..n {
        if !ctmc.is_absorbing(a) {
            continue;
        }
        let (srcs, rates) = tr.in_edges(a);
        let mut beta = 0.0;
        for (&j, &r) in srcs.iter().zip(rates) {
            beta += r * w[j as usize];
        }
        if beta > 0.0 {
            absorption.push((a as u32, beta));
            absorbed_mass += beta;
            if let Some(r) = reward {
                terminal_reward += beta * r[a];
            }
        }
    }

    Ok(AbsorptionResult { mtta, absorption, absorbed_mass, terminal_reward, sweeps, residual })
}

/// Expected terminal value of the primary (transmission-count) reward at
/// absorption.
pub fn expected_transmissions(ctmc: &Ctmc, opts: &SolveOptions) -> Result<f64, SolveError> {
    Ok(mtta(ctmc, opts)?.terminal_reward)
}

/// Poisson probabilities `pmf(0..=K)` for mean `m`, truncated once the
/// cumulative mass reaches `1 - tol`, then renormalized to sum to 1.
fn poisson_weights(m: f64, tol: f64) -> Vec<f64> {
    if m == 0.0 {
        return vec![1.0];
    }
    let cap = (m + 12.0 * m.sqrt() + 60.0).ceil() as usize;
    let ln_m = m.ln();
    let mut weights = Vec::with_capacity(cap.min(1 << 20) + 1);
    let mut cum = 0.0;
    for k in 0..=cap {
        let lnp = k as f64 * ln_m - m - ln_gamma(k as f64 + 1.0);
        let p = lnp.exp();
        weights.push(p);
        cum += p;
        if cum >= 1.0 - tol {
            break;
        }
    }
    for p in &mut weights {
        *p /= cum;
    }
    weights
}

fn validate_tol(tol: f64) -> Result<(), SolveError> {
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(SolveError::InvalidTolerance(tol));
    }
    Ok(())
}

/// One step of the uniformized jump chain: `v' = v (I + Q/lambda)`,
/// evaluated by gathering over in-edges.
fn uniform_step(ctmc: &Ctmc, lambda: f64, v: &[f64], out: &mut [f64]) {
    let tr = ctmc.transpose();
    let exit = ctmc.exit_rates();
    for i in 0..v.len() {
        let (srcs, rates) = tr.in_edges(i);
        let mut s = v[i] * (1.0 - exit[i] / lambda);
        for (&j, &r) in srcs.iter().zip(rates) {
            s += v[j as usize] * (r / lambda);
        }
        out[i] = s;
    }
}

/// State distribution at time `t` by uniformization with Poisson
/// truncation tail below `tol`.
pub fn transient(ctmc: &Ctmc, t: f64, tol: f64) -> Result<TransientResult, SolveError> {
    validate_tol(tol)?;
    if !t.is_finite() || t < 0.0 {
        return Err(SolveError::InvalidTime(t));
    }
    let n = ctmc.n_states();
    let init = ctmc.initial() as usize;
    let reward = ctmc.primary_reward();

    let mut probs = vec![0.0f64; n];
    let lambda = 1.001 * ctmc.max_exit_rate();
    if t == 0.0 || lambda == 0.0 {
        probs[init] = 1.0;
        let expected_reward = reward.map_or(0.0, |r| r[init]);
        return Ok(TransientResult { t, probs, expected_reward });
    }

    let weights = poisson_weights(lambda * t, tol);
    let mut v = vec![0.0f64; n];
    v[init] = 1.0;
    let mut scratch = vec![0.0f64; n];
    for (k, &wk) in weights.iter().enumerate() {
        if k > 0 {
            uniform_step(ctmc, lambda, &v, &mut scratch);
            std::mem::swap(&mut v, &mut scratch);
        }
        if wk > 0.0 {
            for (p, &vi) in probs.iter_mut().zip(v.iter()) {
                *p += wk * vi;
            }
        }
    }
    let expected_reward = reward.map_or(0.0, |r| dot(&probs, r));
    Ok(TransientResult { t, probs, expected_reward })
}

/// Delivery-delay CDF on a strictly increasing, non-negative time grid.
///
/// Uses the reward named [`DELIVERY_REWARD`] (the delivered-indicator the
/// model builder attaches). A single uniformization pass up to the last
/// grid point folds every step vector into one scalar, so the whole grid
/// costs one pass regardless of its length.
pub fn delivery_cdf(ctmc: &Ctmc, grid: &[f64], tol: f64) -> Result<Vec<(f64, f64)>, SolveError> {
    validate_tol(tol)?;
    if grid.is_empty() {
        return Err(SolveError::InvalidGrid("empty grid".into()));
    }
    for pair in grid.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(SolveError::InvalidGrid(format!(
                "grid not strictly increasing at {} -> {}",
                pair[0], pair[1]
            )));
        }
    }
    if !grid[0].is_finite() || grid[0] < 0.0 || !grid[grid.len() - 1].is_finite() {
        return Err(SolveError::InvalidGrid("grid times must be finite and >= 0".into()));
    }
    let delivered = ctmc
        .reward_vec(DELIVERY_REWARD)
        .ok_or_else(|| SolveError::MissingReward(DELIVERY_REWARD.into()))?;

    let n = ctmc.n_states();
    let init = ctmc.initial() as usize;
    let lambda = 1.001 * ctmc.max_exit_rate();
    let t_max = grid[grid.len() - 1];
    if lambda == 0.0 || t_max == 0.0 {
        return Ok(grid.iter().map(|&t| (t, delivered[init].clamp(0.0, 1.0))).collect());
    }

    // rho[k]: expected delivered-indicator after k uniformized steps.
    let horizon = poisson_weights(lambda * t_max, tol).len();
    let mut rho = Vec::with_capacity(horizon);
    let mut v = vec![0.0f64; n];
    v[init] = 1.0;
    let mut scratch = vec![0.0f64; n];
    rho.push(dot(&v, delivered));
    for _ in 1..horizon {
        uniform_step(ctmc, lambda, &v, &mut scratch);
        std::mem::swap(&mut v, &mut scratch);
        rho.push(dot(&v, delivered));
    }

    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        if t == 0.0 {
            out.push((t, delivered[init].clamp(0.0, 1.0)));
            continue;
        }
        let weights = poisson_weights(lambda * t, tol);
        let f: f64 = weights.iter().zip(rho.iter()).map(|(&w, &r)| w * r).sum();
        out.push((t, f.clamp(0.0, 1.0)));
    }
    Ok(out)
}

/// Statistical estimate of absorption time and terminal reward by direct
/// path simulation of the exponential races.
///
/// Each replication gets its own counter-mode RNG stream derived from
/// `seed`, and replication results are reduced in index order, so output
/// is bit-identical for a fixed seed regardless of thread count.
pub fn monte_carlo_ctmc(ctmc: &Ctmc, runs: usize, seed: u64) -> Result<McResult, SolveError> {
    if runs == 0 {
        return Err(SolveError::InvalidRuns);
    }
    check_absorbing_structure(ctmc)?;
    let reward = ctmc.primary_reward();

    let samples: Vec<(f64, f64)> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(run as u64);
            let mut state = ctmc.initial() as usize;
            let mut t = 0.0f64;
            while !ctmc.is_absorbing(state) {
                let exit = ctmc.exit_rate(state);
                let u: f64 = rng.gen();
                t += -(1.0 - u).ln() / exit;
                let (dsts, rates) = ctmc.out_edges(state);
                let mut pick: f64 = rng.gen::<f64>() * exit;
                let mut chosen = dsts[dsts.len() - 1] as usize;
                for (&d, &r) in dsts.iter().zip(rates) {
                    pick -= r;
                    if pick <= 0.0 {
                        chosen = d as usize;
                        break;
                    }
                }
                state = chosen;
            }
            (t, reward.map_or(0.0, |r| r[state]))
        })
        .collect();

    let (mean_time, time_half_width) = mean_and_half_width(samples.iter().map(|&(t, _)| t), runs);
    let (mean_reward, reward_half_width) =
        mean_and_half_width(samples.iter().map(|&(_, r)| r), runs);
    Ok(McResult { runs, mean_time, time_half_width, mean_reward, reward_half_width })
}

/// Sample mean and 95% normal-approximation CI half-width.
pub fn mean_and_half_width(values: impl Iterator<Item = f64>, n: usize) -> (f64, f64) {
    let xs: Vec<f64> = values.collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, Z95 * (var / n as f64).sqrt())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
