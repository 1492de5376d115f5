//! Time-stepped epidemic-routing simulation on top of the mobility model.
//!
//! All nodes start roaming at uniform positions; node 0 carries the
//! message, node 1 is the destination. Whenever an infected and a
//! susceptible node are within contact range a transfer is triggered,
//! completing a fixed transmission delay later; the simulation ends when
//! the destination's transfer completes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::NetworkConfig;
use crate::sim::mobility::{advance, dist2, draw_position, spawn_roaming, NodeState};

/// Default transmission delay: a 25 KB message at 2.5 MB/s.
pub const DEFAULT_TX_DELAY: f64 = 0.01;

/// Result of one epidemic-routing replication.
#[derive(Clone, Debug, PartialEq)]
pub struct SimOutcome {
    /// Time at which the destination finished receiving the message.
    pub delivery_delay: f64,
    /// Completed message transfers by delivery time (the destination's
    /// own reception included).
    pub transmissions: u32,
    /// `(time, node id)` of every infection, the source at time 0 first;
    /// times are nondecreasing.
    pub infection_times: Vec<(f64, u32)>,
}

const SOURCE: usize = 0;
const DESTINATION: usize = 1;

/// Runs one replication. The step size must keep per-step displacement
/// well under the contact range (`v_max * dt < R / 4`).
pub fn run_epidemic(cfg: &NetworkConfig, tx_delay: f64, dt: f64, seed: u64) -> SimOutcome {
    let rng = ChaCha8Rng::seed_from_u64(seed);
    run_epidemic_rng(cfg, tx_delay, dt, rng)
}

/// Runs independent replications on sub-streams `0..runs` of the master
/// seed; outcome order matches the run index regardless of scheduling.
pub fn run_epidemic_many(
    cfg: &NetworkConfig,
    tx_delay: f64,
    dt: f64,
    runs: u32,
    seed: u64,
) -> Vec<SimOutcome> {
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::from(run));
            run_epidemic_rng(cfg, tx_delay, dt, rng)
        })
        .collect()
}

fn run_epidemic_rng(
    cfg: &NetworkConfig,
    tx_delay: f64,
    dt: f64,
    mut rng: ChaCha8Rng,
) -> SimOutcome {
    assert!(dt > 0.0 && tx_delay >= 0.0);
    assert!(
        cfg.v_max * dt < cfg.r / 4.0,
        "step too coarse for reliable contact detection (v_max*dt = {} >= R/4 = {})",
        cfg.v_max * dt,
        cfg.r / 4.0
    );
    let m = cfg.m as usize;
    assert!(m >= 2, "need at least source and destination");

    let mut nodes: Vec<NodeState> = (0..m)
        .map(|i| {
            let pos = draw_position(cfg, &mut rng);
            spawn_roaming(cfg, pos, 0.0, i == SOURCE, &mut rng)
        })
        .collect();
    // Pending reception completion time per node.
    let mut recv_at: Vec<Option<f64>> = vec![None; m];
    let mut infection_times: Vec<(f64, u32)> = vec![(0.0, SOURCE as u32)];
    let r2 = cfg.r * cfg.r;

    let mut now = 0.0;
    trigger_contacts(&nodes, &mut recv_at, now, tx_delay, r2);
    settle_zero_delay(&mut nodes, &mut recv_at, &mut infection_times, now, tx_delay, r2);

    while !nodes[DESTINATION].infected {
        for node in nodes.iter_mut() {
            advance(node, cfg, now, dt, &mut rng);
        }
        now += dt;

        // Complete transfers that came due during this step. All due
        // completions share the same trigger step, hence the same time.
        for i in 0..m {
            if let Some(at) = recv_at[i] {
                if at <= now && !nodes[i].infected {
                    nodes[i].infected = true;
                    infection_times.push((at, i as u32));
                }
            }
        }
        trigger_contacts(&nodes, &mut recv_at, now, tx_delay, r2);
        settle_zero_delay(&mut nodes, &mut recv_at, &mut infection_times, now, tx_delay, r2);

        debug_assert!(now < 1e8, "epidemic failed to terminate");
    }

    // Sort the completion batch of the final step by (time, id); earlier
    // pushes are already ordered.
    infection_times.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let delivery_delay = infection_times
        .iter()
        .find(|&&(_, id)| id as usize == DESTINATION)
        .expect("destination infected")
        .0;
    SimOutcome {
        delivery_delay,
        transmissions: (infection_times.len() - 1) as u32,
        infection_times,
    }
}

/// Triggers a transfer toward every susceptible node currently in range
/// of an infected one and not already receiving; infected nodes are
/// scanned in id order.
fn trigger_contacts(
    nodes: &[NodeState],
    recv_at: &mut [Option<f64>],
    now: f64,
    tx_delay: f64,
    r2: f64,
) {
    for i in 0..nodes.len() {
        if !nodes[i].infected {
            continue;
        }
        for j in 0..nodes.len() {
            if nodes[j].infected || recv_at[j].is_some() {
                continue;
            }
            if dist2(&nodes[i], &nodes[j]) <= r2 {
                recv_at[j] = Some(now + tx_delay);
            }
        }
    }
}

/// With a zero transmission delay, infections cascade within the step:
/// complete and retrigger until no transfer is due.
fn settle_zero_delay(
    nodes: &mut [NodeState],
    recv_at: &mut [Option<f64>],
    infection_times: &mut Vec<(f64, u32)>,
    now: f64,
    tx_delay: f64,
    r2: f64,
) {
    if tx_delay > 0.0 {
        return;
    }
    loop {
        let mut changed = false;
        for i in 0..nodes.len() {
            if recv_at[i] == Some(now) && !nodes[i].infected {
                nodes[i].infected = true;
                infection_times.push((now, i as u32));
                changed = true;
            }
        }
        if !changed {
            return;
        }
        trigger_contacts(nodes, recv_at, now, tx_delay, r2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_config(n: usize, m: u32) -> NetworkConfig {
        let (centers, p_sel): (Vec<(f64, f64)>, Vec<f64>) = match n {
            3 => (
                vec![(250.0, 250.0), (250.0, 750.0), (750.0, 250.0)],
                vec![0.2, 0.4, 0.4],
            ),
            4 => (
                vec![(250.0, 250.0), (250.0, 750.0), (750.0, 250.0), (750.0, 750.0)],
                vec![0.2, 0.4, 0.1, 0.3],
            ),
            _ => panic!("unsupported test size"),
        };
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
            community_centers: centers,
            v_min: 5.0,
            v_max: 15.0,
            v_trans: 20.0,
        }
    }

    #[test]
    fn two_nodes_always_one_transmission() {
        let cfg = test_config(3, 2);
        for seed in 0..5 {
            let out = run_epidemic(&cfg, DEFAULT_TX_DELAY, 0.1, seed);
            assert_eq!(out.transmissions, 1);
            assert_eq!(out.infection_times.len(), 2);
            assert_eq!(out.infection_times[0], (0.0, 0));
            assert_eq!(out.infection_times[1].1, 1);
            assert!(out.delivery_delay > 0.0);
            assert_eq!(out.delivery_delay, out.infection_times[1].0);
        }
    }

    #[test]
    fn outcome_invariants_hold() {
        let cfg = test_config(4, 8);
        for seed in [1, 2, 3] {
            let out = run_epidemic(&cfg, DEFAULT_TX_DELAY, 0.1, seed);
            assert!(out.transmissions >= 1 && out.transmissions <= cfg.m - 1);
            assert_eq!(out.infection_times.len() as u32, out.transmissions + 1);
            for pair in out.infection_times.windows(2) {
                assert!(pair[0].0 <= pair[1].0, "times must be nondecreasing");
            }
            let mut ids: Vec<u32> = out.infection_times.iter().map(|&(_, id)| id).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), out.infection_times.len(), "no node infected twice");
        }
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let cfg = test_config(3, 6);
        let a = run_epidemic(&cfg, DEFAULT_TX_DELAY, 0.1, 11);
        let b = run_epidemic(&cfg, DEFAULT_TX_DELAY, 0.1, 11);
        assert_eq!(a, b);
        let many_a = run_epidemic_many(&cfg, DEFAULT_TX_DELAY, 0.1, 4, 99);
        let many_b = run_epidemic_many(&cfg, DEFAULT_TX_DELAY, 0.1, 4, 99);
        assert_eq!(many_a, many_b);
        assert_ne!(many_a[0], many_a[1], "distinct streams differ");
    }

    #[test]
    fn zero_tx_delay_cascades_within_step() {
        let cfg = test_config(3, 4);
        let out = run_epidemic(&cfg, 0.0, 0.1, 5);
        assert!(out.transmissions >= 1);
        // With zero delay, every infection time lies on a step boundary.
        for &(t, _) in &out.infection_times {
            let steps = t / 0.1;
            assert!((steps - steps.round()).abs() < 1e-6, "t = {t}");
        }
    }

    #[test]
    #[should_panic(expected = "step too coarse")]
    fn rejects_coarse_steps() {
        let cfg = test_config(3, 2);
        run_epidemic(&cfg, DEFAULT_TX_DELAY, 1.0, 0);
    }
}
