//! First-meeting-time experiments that estimate the meeting rates feeding
//! the analytic engines.
//!
//! Each experiment places a small set of nodes, conditions the initial
//! placement on no pair starting within contact range, then advances
//! time-stepped until the first contact. The rate estimate is the
//! reciprocal of the sample-mean first meeting time, with a delta-method
//! confidence half-width.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::NetworkConfig;
use crate::models::MeetingRates;
use crate::sim::mobility::{
    advance, dist2, draw_position, draw_position_in_community, spawn_local, spawn_roaming,
    NodeState,
};
use crate::solve::Z95;

/// Rate estimate with its sampling pedigree.
#[derive(Clone, Debug)]
pub struct RateEstimate {
    /// Estimated rate: `1 / mean(first meeting times)`.
    pub rate: f64,
    pub mean_first_meeting: f64,
    pub runs: u32,
    /// 95% half-width of the rate via the delta method.
    pub rate_ci_half_width: f64,
    /// Raw first-meeting samples (seconds), in run order.
    pub samples: Vec<f64>,
}

impl RateEstimate {
    fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len();
        assert!(n >= 2, "need at least two samples");
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var =
            samples.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let mean_hw = Z95 * (var / n as f64).sqrt();
        RateEstimate {
            rate: 1.0 / mean,
            mean_first_meeting: mean,
            runs: n as u32,
            rate_ci_half_width: mean_hw / (mean * mean),
            samples,
        }
    }

    /// 95% half-width on the mean first-meeting time.
    pub fn mean_ci_half_width(&self) -> f64 {
        self.rate_ci_half_width * self.mean_first_meeting * self.mean_first_meeting
    }
}

/// The four pairwise meeting rates with their sampling pedigree.
#[derive(Clone, Debug)]
pub struct EstimatedRates {
    pub lambda: RateEstimate,
    pub mu: RateEstimate,
    pub gamma: RateEstimate,
    pub eta: RateEstimate,
}

impl EstimatedRates {
    /// Point estimates only, as consumed by the analytic engines.
    pub fn rates(&self) -> MeetingRates {
        MeetingRates {
            lambda: self.lambda.rate,
            mu: self.mu.rate,
            gamma: self.gamma.rate,
            eta: self.eta.rate,
        }
    }
}

/// One first-meeting experiment layout.
#[derive(Clone, Copy, Debug)]
enum Experiment {
    /// Two local nodes confined to community 0.
    TwoLocal,
    /// Two roaming nodes in the common area.
    TwoRoaming,
    /// One roaming node against `n` local nodes in community 0; the
    /// sample is the roamer's first contact with any of them.
    RoamerVsLocals { n: u32 },
}

/// Estimates all four rates. `lambda` and `mu` are two-node experiments;
/// `gamma` uses one local node, `eta` uses `M - 1` local nodes. Each uses
/// `runs` independent replications on sub-streams of `seed`.
pub fn estimate_rates(cfg: &NetworkConfig, runs: u32, dt: f64, seed: u64) -> EstimatedRates {
    EstimatedRates {
        lambda: run_experiment(cfg, Experiment::TwoLocal, runs, dt, sub_seed(seed, 0)),
        mu: run_experiment(cfg, Experiment::TwoRoaming, runs, dt, sub_seed(seed, 1)),
        gamma: run_experiment(cfg, Experiment::RoamerVsLocals { n: 1 }, runs, dt, sub_seed(seed, 2)),
        eta: run_experiment(
            cfg,
            Experiment::RoamerVsLocals { n: cfg.m - 1 },
            runs,
            dt,
            sub_seed(seed, 3),
        ),
    }
}

/// Meeting rate of one roaming node with a set of `n` co-located local
/// nodes, for each requested `n` (all must be at most `M - 1`).
pub fn estimate_r_meet_curve(
    cfg: &NetworkConfig,
    n_values: &[u32],
    runs: u32,
    dt: f64,
    seed: u64,
) -> Vec<(u32, RateEstimate)> {
    n_values
        .iter()
        .map(|&n| {
            assert!(n >= 1 && n <= cfg.m - 1, "set size {n} out of range");
            let est = run_experiment(
                cfg,
                Experiment::RoamerVsLocals { n },
                runs,
                dt,
                sub_seed(seed, 4 + u64::from(n)),
            );
            (n, est)
        })
        .collect()
}

/// Distinct deterministic seed per experiment family.
fn sub_seed(seed: u64, experiment: u64) -> u64 {
    seed.wrapping_add(experiment.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn run_experiment(
    cfg: &NetworkConfig,
    exp: Experiment,
    runs: u32,
    dt: f64,
    seed: u64,
) -> RateEstimate {
    assert!(runs >= 2);
    assert!(dt > 0.0 && cfg.v_max * dt < cfg.r / 4.0, "step too coarse");
    let samples: Vec<f64> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::from(run));
            first_meeting_sample(cfg, exp, dt, &mut rng)
        })
        .collect();
    RateEstimate::from_samples(samples)
}

/// Experiments must not alter the global mobility pattern: confinement is
/// expressed through the mode-change probabilities.
fn confined_cfg(cfg: &NetworkConfig, exp: Experiment) -> NetworkConfig {
    let mut c = cfg.clone();
    match exp {
        // Local nodes never leave their community.
        Experiment::TwoLocal => c.p_r = 0.0,
        // Roaming nodes never enter a community.
        Experiment::TwoRoaming => c.p_l = 0.0,
        // Mixed: the roamer keeps roaming, the locals stay local.
        Experiment::RoamerVsLocals { .. } => {
            c.p_r = 0.0;
            c.p_l = 0.0;
        }
    }
    c
}

fn first_meeting_sample(
    cfg: &NetworkConfig,
    exp: Experiment,
    dt: f64,
    rng: &mut impl Rng,
) -> f64 {
    let cfg = confined_cfg(cfg, exp);
    let r2 = cfg.r * cfg.r;

    // Draw all positions, rejecting layouts where a measured pair starts
    // in range (its first-meeting time would be zero); movement parameters
    // are drawn only after acceptance.  In every experiment the measured
    // pairs are exactly node 0 against the rest: local nodes may start in
    // contact with one another, and forbidding that would condition a
    // crowded community on vanishingly rare spread-out layouts.
    let positions: Vec<(f64, f64)> = loop {
        let pts: Vec<(f64, f64)> = match exp {
            Experiment::TwoLocal => (0..2)
                .map(|_| draw_position_in_community(&cfg, 0, rng))
                .collect(),
            Experiment::TwoRoaming => (0..2).map(|_| draw_position(&cfg, rng)).collect(),
            Experiment::RoamerVsLocals { n } => {
                let mut pts = vec![draw_position(&cfg, rng)];
                pts.extend((0..n).map(|_| draw_position_in_community(&cfg, 0, rng)));
                pts
            }
        };
        let clear = pts[1..]
            .iter()
            .all(|b| (pts[0].0 - b.0).powi(2) + (pts[0].1 - b.1).powi(2) > r2);
        if clear {
            break pts;
        }
    };

    let mut nodes: Vec<NodeState> = match exp {
        Experiment::TwoLocal => positions
            .iter()
            .map(|&p| spawn_local(&cfg, 0, p, 0.0, false, rng))
            .collect(),
        Experiment::TwoRoaming => positions
            .iter()
            .map(|&p| spawn_roaming(&cfg, p, 0.0, false, rng))
            .collect(),
        Experiment::RoamerVsLocals { .. } => {
            let mut v = vec![spawn_roaming(&cfg, positions[0], 0.0, false, rng)];
            v.extend(
                positions[1..]
                    .iter()
                    .map(|&p| spawn_local(&cfg, 0, p, 0.0, false, rng)),
            );
            v
        }
    };

    let mut now = 0.0;
    loop {
        for node in nodes.iter_mut() {
            advance(node, &cfg, now, dt, rng);
        }
        now += dt;
        let met = match exp {
            Experiment::TwoLocal | Experiment::TwoRoaming => {
                dist2(&nodes[0], &nodes[1]) <= r2
            }
            Experiment::RoamerVsLocals { .. } => {
                let roamer = &nodes[0];
                nodes[1..].iter().any(|l| dist2(roamer, l) <= r2)
            }
        };
        if met {
            return now;
        }
        debug_assert!(now < 1e8, "first-meeting experiment failed to terminate");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_config(m: u32) -> NetworkConfig {
        NetworkConfig {
            n: 3,
            m,
            l: 1000.0,
            l_c: 100.0,
            r: 10.0,
            alpha: 1.0 / 80.0,
            beta: 1.0 / 520.0,
            p_r: 0.2,
            p_l: 0.8,
            p_sel: vec![0.2, 0.4, 0.4],
            community_centers: vec![(250.0, 250.0), (250.0, 750.0), (750.0, 250.0)],
            v_min: 5.0,
            v_max: 15.0,
            v_trans: 20.0,
        }
    }

    #[test]
    fn estimates_are_reproducible_and_positive() {
        let cfg = test_config(5);
        let a = estimate_rates(&cfg, 24, 0.1, 7);
        let b = estimate_rates(&cfg, 24, 0.1, 7);
        assert_eq!(a.lambda.samples, b.lambda.samples);
        assert_eq!(a.eta.samples, b.eta.samples);
        for est in [&a.lambda, &a.mu, &a.gamma, &a.eta] {
            assert!(est.rate > 0.0);
            assert!(est.rate_ci_half_width > 0.0);
            assert_eq!(est.runs, 24);
            assert!(est.samples.iter().all(|&t| t > 0.0), "meeting times are positive");
        }
        // Two locals in the same 100 m square meet far faster than two
        // roamers in the 1 km square.
        assert!(a.lambda.rate > a.mu.rate * 5.0);
    }

    #[test]
    fn curve_points_match_experiment_layout() {
        let cfg = test_config(11);
        let curve = estimate_r_meet_curve(&cfg, &[1, 2], 16, 0.1, 3);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].0, 1);
        assert_eq!(curve[1].0, 2);
        assert!(curve[0].1.rate > 0.0 && curve[1].1.rate > 0.0);
    }

    /// A community as large as the whole area makes the two-local
    /// experiment identical in law to the two-roaming experiment once the
    /// travel-duration rates match.
    #[test]
    fn lambda_equals_mu_when_community_fills_area() {
        let mut cfg = test_config(5);
        cfg.l_c = cfg.l;
        cfg.community_centers = vec![(500.0, 500.0); 3];
        cfg.alpha = cfg.beta;
        let l = run_experiment(&cfg, Experiment::TwoLocal, 200, 0.1, sub_seed(12, 0));
        let m = run_experiment(&cfg, Experiment::TwoRoaming, 200, 0.1, sub_seed(12, 1));
        let gap = (l.rate - m.rate).abs();
        let joint = l.rate_ci_half_width + m.rate_ci_half_width;
        assert!(gap <= joint, "lambda {} vs mu {} (joint hw {})", l.rate, m.rate, joint);
    }

    #[test]
    #[should_panic(expected = "set size")]
    fn curve_rejects_oversized_sets() {
        let cfg = test_config(5);
        estimate_r_meet_curve(&cfg, &[5], 8, 0.1, 0);
    }
}
