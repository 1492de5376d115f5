//! Shared fixtures for the benchmark suite: the reference network scenario
//! (1000 m arena, 100 m communities, MIT-trace-like dwell times) at the
//! community layouts used throughout the experiments, plus a set of
//! measured meeting rates so model construction does not depend on running
//! the estimator first.

use epiroute_core::config::NetworkConfig;
use epiroute_core::models::MeetingRates;

/// Community centers and selection probabilities for the reference
/// layouts with 3, 4 or 5 communities.
pub fn community_layout(n: usize) -> (Vec<(f64, f64)>, Vec<f64>) {
    match n {
        3 => (
            vec![(250.0, 250.0), (250.0, 750.0), (750.0, 250.0)],
            vec![0.2, 0.4, 0.4],
        ),
        4 => (
            vec![(250.0, 250.0), (250.0, 750.0), (750.0, 250.0), (750.0, 750.0)],
            vec![0.2, 0.4, 0.1, 0.3],
        ),
        5 => (
            vec![
                (250.0, 250.0),
                (250.0, 750.0),
                (750.0, 250.0),
                (750.0, 750.0),
                (500.0, 500.0),
            ],
            vec![0.2, 0.4, 0.2, 0.1, 0.1],
        ),
        _ => panic!("no reference layout for {n} communities"),
    }
}

/// Reference scenario: a 1000 m square arena with 100 m square
/// communities, transmission range 10 m, mean local travel 80 s, mean
/// roaming travel 520 s, and speeds 5-15 m/s (20 m/s in transit).
pub fn experiment_config(n: usize, m: u32) -> NetworkConfig {
    let (community_centers, p_sel) = community_layout(n);
    NetworkConfig {
        n,
        m,
        l: 1000.0,
        l_c: 100.0,
        r: 10.0,
        alpha: 1.0 / 80.0,
        beta: 1.0 / 520.0,
        p_r: 0.2,
        p_l: 0.8,
        p_sel,
        community_centers,
        v_min: 5.0,
        v_max: 15.0,
        v_trans: 20.0,
    }
}

/// Meeting rates measured in the reference scenario: `lambda` for two
/// locals sharing a community, `mu` for two roamers, `gamma` for a roamer
/// against a single-occupant community, and `eta` for a roamer against a
/// community holding ten locals. Benchmarks only need plausible
/// magnitudes, so `eta` is used as-is for every population size.
pub fn experiment_rates() -> MeetingRates {
    MeetingRates {
        lambda: 2.4e-2,
        mu: 2.54e-4,
        gamma: 2.586e-4,
        eta: 1.086226e-3,
    }
}
