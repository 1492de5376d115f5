//! Reachability expansion with on-the-fly vanishing-marking elimination.

use std::collections::HashMap;

use thiserror::Error;

use super::{enabled_immediates, fire, token_enabled, Marking, SrnModel};
use crate::ctmc::Ctmc;

#[derive(Clone, Debug)]
pub struct ExpandOptions {
    /// Hard cap on the number of tangible states.
    pub max_states: usize,
    /// Hard cap on the number of timed firings explored.
    pub max_transitions: u64,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        ExpandOptions { max_states: 100_000_000, max_transitions: 50_000_000 }
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ExpandError {
    #[error(
        "state budget exceeded: {states} tangible states, {transitions_explored} timed firings \
         explored"
    )]
    StateBudgetExceeded { states: usize, transitions_explored: u64 },
    #[error("cycle of immediate transitions detected while firing `{transition}`")]
    VanishingLoop { transition: String },
    #[error("immediate weights on a vanishing marking sum to {sum}, expected 1")]
    WeightMassMismatch { sum: f64 },
    #[error("transition `{transition}` produced rate {value} (must be finite and non-negative)")]
    InvalidRate { transition: String, value: f64 },
    #[error("immediate `{transition}` produced weight {value} (must be finite and non-negative)")]
    InvalidWeight { transition: String, value: f64 },
    #[error("initial marking is vanishing")]
    InitialMarkingVanishing,
}

/// Breadth-first expansion of all tangible markings reachable from the
/// initial marking, producing an absorbing CTMC.
///
/// Vanishing markings reached through timed firings are eliminated by
/// enumerating every immediate firing sequence (weighted by normalized
/// immediate weights) down to tangible markings; the probability mass
/// leaving each vanishing marking is checked to equal 1. Firing sequences
/// revisiting a vanishing marking raise [`ExpandError::VanishingLoop`].
/// Timed firings that lead back to the source tangible marking contribute
/// nothing to the generator and are dropped.
///
/// State indices follow discovery order, so repeated expansions of the
/// same model yield identical state sets and identical generators.
pub fn expand_reachability(model: &SrnModel, opts: &ExpandOptions) -> Result<Ctmc, ExpandError> {
    let initial = model.initial_marking();
    if enabled_immediates(model, &initial).next().is_some() {
        return Err(ExpandError::InitialMarkingVanishing);
    }

    let mut index: HashMap<Marking, u32> = HashMap::new();
    let mut markings: Vec<Marking> = Vec::new();
    index.insert(initial.clone(), 0);
    markings.push(initial);

    let mut row_ptr: Vec<usize> = vec![0];
    let mut cols: Vec<u32> = Vec::new();
    let mut rates: Vec<f64> = Vec::new();
    let mut absorbing: Vec<bool> = Vec::new();

    let mut transitions_explored: u64 = 0;
    let mut succ: Vec<(u32, f64)> = Vec::new();
    let mut tangible_targets: Vec<(Marking, f64)> = Vec::new();
    let mut path: Vec<Marking> = Vec::new();

    let mut next = 0usize;
    while next < markings.len() {
        let state = next as u32;
        let m = markings[next].clone();
        next += 1;

        if (model.absorbing)(&m) {
            absorbing.push(true);
            row_ptr.push(cols.len());
            continue;
        }
        absorbing.push(false);

        succ.clear();
        for t in &model.timed {
            if !token_enabled(&t.inputs, &m) {
                continue;
            }
            if let Some(g) = &t.guard {
                if !g(&m) {
                    continue;
                }
            }
            let rate = (t.rate)(&m);
            if !rate.is_finite() || rate < 0.0 {
                return Err(ExpandError::InvalidRate { transition: t.name.clone(), value: rate });
            }
            if rate == 0.0 {
                continue;
            }
            transitions_explored += 1;
            if transitions_explored > opts.max_transitions {
                return Err(ExpandError::StateBudgetExceeded {
                    states: markings.len(),
                    transitions_explored,
                });
            }

            let fired = fire(&t.inputs, &t.outputs, &m);
            tangible_targets.clear();
            resolve_vanishing(model, fired, 1.0, &mut path, &mut tangible_targets)?;

            for (target, prob) in tangible_targets.drain(..) {
                let id = match index.get(&target) {
                    Some(&id) => id,
                    None => {
                        let id = markings.len() as u32;
                        index.insert(target.clone(), id);
                        markings.push(target);
                        id
                    }
                };
                if id == state {
                    continue;
                }
                let r = rate * prob;
                match succ.iter_mut().find(|(dst, _)| *dst == id) {
                    Some((_, acc)) => *acc += r,
                    None => succ.push((id, r)),
                }
            }
        }
        if markings.len() > opts.max_states {
            return Err(ExpandError::StateBudgetExceeded {
                states: markings.len(),
                transitions_explored,
            });
        }

        succ.sort_unstable_by_key(|&(dst, _)| dst);
        for &(dst, r) in &succ {
            cols.push(dst);
            rates.push(r);
        }
        row_ptr.push(cols.len());
    }

    drop(index);

    let rewards = model
        .rewards
        .iter()
        .map(|(name, f)| (name.clone(), markings.iter().map(|m| f(m)).collect()))
        .collect();

    Ok(Ctmc::from_expansion(markings, row_ptr, cols, rates, 0, absorbing, rewards))
}

/// Depth-first enumeration of immediate firing sequences from `m`,
/// accumulating tangible targets with their path probabilities.
fn resolve_vanishing(
    model: &SrnModel,
    m: Marking,
    prob: f64,
    path: &mut Vec<Marking>,
    out: &mut Vec<(Marking, f64)>,
) -> Result<(), ExpandError> {
    let enabled: Vec<(usize, f64)> = enabled_immediates(model, &m)
        .map(|(i, t)| {
            let w = (t.weight)(&m);
            if !w.is_finite() || w < 0.0 {
                Err(ExpandError::InvalidWeight { transition: t.name.clone(), value: w })
            } else {
                Ok((i, w))
            }
        })
        .collect::<Result<_, _>>()?;

    if enabled.is_empty() {
        out.push((m, prob));
        return Ok(());
    }

    let mass: f64 = enabled.iter().map(|&(_, w)| w).sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(ExpandError::WeightMassMismatch { sum: mass });
    }
    if path.contains(&m) {
        let name = model.immediate[enabled[0].0].name.clone();
        return Err(ExpandError::VanishingLoop { transition: name });
    }

    path.push(m);
    let current = path.len() - 1;
    for &(i, w) in &enabled {
        if w == 0.0 {
            continue;
        }
        let t = &model.immediate[i];
        let fired = fire(&t.inputs, &t.outputs, &path[current]);
        resolve_vanishing(model, fired, prob * w / mass, path, out)?;
    }
    path.pop();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srn::{ImmediateTransition, Place, TimedTransition};

    fn constant(x: f64) -> crate::srn::MarkingFn {
        Box::new(move |_| x)
    }

    /// Chain of `n` timed stages with constant rates; no immediates.
    fn series_model(rates_per_stage: &[f64]) -> SrnModel {
        let n = rates_per_stage.len();
        let mut places: Vec<Place> = (0..=n).map(|i| Place::new(format!("s{i}"), 0)).collect();
        places[0].initial = 1;
        let timed = rates_per_stage
            .iter()
            .enumerate()
            .map(|(i, &r)| TimedTransition {
                name: format!("t{i}"),
                inputs: vec![(i, 1)],
                outputs: vec![(i + 1, 1)],
                guard: None,
                rate: constant(r),
            })
            .collect();
        let last = n;
        SrnModel {
            name: "series".into(),
            places,
            timed,
            immediate: vec![],
            absorbing: Box::new(move |m| m[last] == 1),
            rewards: vec![("stage".into(), Box::new(move |m| {
                (0..=last).map(|i| i as f64 * f64::from(m[i])).sum()
            }))],
        }
    }

    #[test]
    fn series_chain_expands_in_order() {
        let model = series_model(&[2.0, 5.0]);
        let ctmc = expand_reachability(&model, &ExpandOptions::default()).unwrap();
        assert_eq!(ctmc.n_states(), 3);
        assert_eq!(ctmc.n_transitions(), 2);
        assert!(ctmc.is_absorbing(2));
        assert!(!ctmc.is_absorbing(0));
        assert_eq!(ctmc.out_edges(0), (&[1u32][..], &[2.0][..]));
        assert_eq!(ctmc.out_edges(1), (&[2u32][..], &[5.0][..]));
        assert_eq!(ctmc.out_edges(2), (&[][..], &[][..]));
        assert_eq!(ctmc.reward_vec("stage").unwrap(), &[0.0, 1.0, 2.0]);
    }

    /// Timed firing into a decision place splitting 0.3/0.7 must multiply
    /// the timed rate by the branch probabilities.
    #[test]
    fn immediate_split_scales_rates() {
        let model = SrnModel {
            name: "split".into(),
            places: vec![
                Place::new("start", 1),
                Place::new("dec", 0),
                Place::new("a", 0),
                Place::new("b", 0),
            ],
            timed: vec![TimedTransition {
                name: "go".into(),
                inputs: vec![(0, 1)],
                outputs: vec![(1, 1)],
                guard: None,
                rate: constant(10.0),
            }],
            immediate: vec![
                ImmediateTransition {
                    name: "pick_a".into(),
                    inputs: vec![(1, 1)],
                    outputs: vec![(2, 1)],
                    guard: None,
                    weight: constant(0.3),
                },
                ImmediateTransition {
                    name: "pick_b".into(),
                    inputs: vec![(1, 1)],
                    outputs: vec![(3, 1)],
                    guard: None,
                    weight: constant(0.7),
                },
            ],
            absorbing: Box::new(|m| m[2] + m[3] == 1),
            rewards: vec![("none".into(), constant(0.0))],
        };
        let ctmc = expand_reachability(&model, &ExpandOptions::default()).unwrap();
        assert_eq!(ctmc.n_states(), 3);
        let (dsts, rates) = ctmc.out_edges(0);
        assert_eq!(dsts, &[1, 2]);
        assert!((rates[0] - 3.0).abs() < 1e-12);
        assert!((rates[1] - 7.0).abs() < 1e-12);
    }

    /// An immediate that puts the token straight back produces a firing
    /// sequence returning to the source tangible marking; that self-loop
    /// must be dropped from the generator.
    #[test]
    fn self_loops_are_dropped() {
        let model = SrnModel {
            name: "loopback".into(),
            places: vec![Place::new("idle", 1), Place::new("dec", 0), Place::new("done", 0)],
            timed: vec![TimedTransition {
                name: "tick".into(),
                inputs: vec![(0, 1)],
                outputs: vec![(1, 1)],
                guard: None,
                rate: constant(4.0),
            }],
            immediate: vec![
                ImmediateTransition {
                    name: "stay".into(),
                    inputs: vec![(1, 1)],
                    outputs: vec![(0, 1)],
                    guard: None,
                    weight: constant(0.75),
                },
                ImmediateTransition {
                    name: "leave".into(),
                    inputs: vec![(1, 1)],
                    outputs: vec![(2, 1)],
                    guard: None,
                    weight: constant(0.25),
                },
            ],
            absorbing: Box::new(|m| m[2] == 1),
            rewards: vec![("none".into(), constant(0.0))],
        };
        let ctmc = expand_reachability(&model, &ExpandOptions::default()).unwrap();
        assert_eq!(ctmc.n_states(), 2);
        let (dsts, rates) = ctmc.out_edges(0);
        assert_eq!(dsts, &[1]);
        assert!((rates[0] - 1.0).abs() < 1e-12, "4.0 * 0.25 expected, got {}", rates[0]);
        assert!((ctmc.exit_rate(0) - 1.0).abs() < 1e-12);
    }

    /// Two chained decision places: branch probabilities multiply along
    /// the immediate firing sequence.
    #[test]
    fn two_level_vanishing_chain() {
        let model = SrnModel {
            name: "chained".into(),
            places: vec![
                Place::new("start", 1),
                Place::new("dec1", 0),
                Place::new("dec2", 0),
                Place::new("a", 0),
                Place::new("b", 0),
                Place::new("c", 0),
            ],
            timed: vec![TimedTransition {
                name: "go".into(),
                inputs: vec![(0, 1)],
                outputs: vec![(1, 1)],
                guard: None,
                rate: constant(1.0),
            }],
            immediate: vec![
                ImmediateTransition {
                    name: "deeper".into(),
                    inputs: vec![(1, 1)],
                    outputs: vec![(2, 1)],
                    guard: None,
                    weight: constant(0.5),
                },
                ImmediateTransition {
                    name: "to_a".into(),
                    inputs: vec![(1, 1)],
                    outputs: vec![(3, 1)],
                    guard: None,
                    weight: constant(0.5),
                },
                ImmediateTransition {
                    name: "to_b".into(),
                    inputs: vec![(2, 1)],
                    outputs: vec![(4, 1)],
                    guard: None,
                    weight: constant(0.4),
                },
                ImmediateTransition {
                    name: "to_c".into(),
                    inputs: vec![(2, 1)],
                    outputs: vec![(5, 1)],
                    guard: None,
                    weight: constant(0.6),
                },
            ],
            absorbing: Box::new(|m| m[3] + m[4] + m[5] == 1),
            rewards: vec![("none".into(), constant(0.0))],
        };
        let ctmc = expand_reachability(&model, &ExpandOptions::default()).unwrap();
        assert_eq!(ctmc.n_states(), 4);
        let (dsts, rates) = ctmc.out_edges(0);
        assert_eq!(dsts.len(), 3);
        // Rate into each tangible successor is 1.0 x the product of branch
        // probabilities along the immediate chain, regardless of numbering.
        let rate_into = |place: usize| -> f64 {
            let mut found = None;
            for (&d, &r) in dsts.iter().zip(rates) {
                if ctmc.markings()[d as usize][place] == 1 {
                    assert!(found.is_none(), "duplicate successor");
                    found = Some(r);
                }
            }
            found.expect("missing successor")
        };
        assert!((rate_into(3) - 0.5).abs() < 1e-12); // a
        assert!((rate_into(4) - 0.2).abs() < 1e-12); // b: 0.5 * 0.4
        assert!((rate_into(5) - 0.3).abs() < 1e-12); // c: 0.5 * 0.6
        assert!((ctmc.exit_rate(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vanishing_cycle_is_an_error() {
        let model = SrnModel {
            name: "cycle".into(),
            places: vec![Place::new("start", 1), Place::new("p", 0), Place::new("q", 0)],
            timed: vec![TimedTransition {
                name: "go".into(),
                inputs: vec![(0, 1)],
                outputs: vec![(1, 1)],
                guard: None,
                rate: constant(1.0),
            }],
            immediate: vec![
                ImmediateTransition {
                    name: "pq".into(),
                    inputs: vec![(1, 1)],
                    outputs: vec![(2, 1)],
                    guard: None,
                    weight: constant(1.0),
                },
                ImmediateTransition {
                    name: "qp".into(),
                    inputs: vec![(2, 1)],
                    outputs: vec![(1, 1)],
                    guard: None,
                    weight: constant(1.0),
                },
            ],
            absorbing: Box::new(|_| false),
            rewards: vec![("none".into(), constant(0.0))],
        };
        let err = expand_reachability(&model, &ExpandOptions::default()).unwrap_err();
        assert!(matches!(err, ExpandError::VanishingLoop { .. }));
    }

    #[test]
    fn weight_mass_must_be_one() {
        let model = SrnModel {
            name: "bad-mass".into(),
            places: vec![Place::new("start", 1), Place::new("dec", 0), Place::new("a", 0)],
            timed: vec![TimedTransition {
                name: "go".into(),
                inputs: vec![(0, 1)],
                outputs: vec![(1, 1)],
                guard: None,
                rate: constant(1.0),
            }],
            immediate: vec![ImmediateTransition {
                name: "half".into(),
                inputs: vec![(1, 1)],
                outputs: vec![(2, 1)],
                guard: None,
                weight: constant(0.5),
            }],
            absorbing: Box::new(|m| m[2] == 1),
            rewards: vec![("none".into(), constant(0.0))],
        };
        let err = expand_reachability(&model, &ExpandOptions::default()).unwrap_err();
        assert!(matches!(err, ExpandError::WeightMassMismatch { .. }));
    }

    #[test]
    fn state_budget_is_enforced() {
        let model = series_model(&[1.0; 30]);
        let opts = ExpandOptions { max_states: 5, max_transitions: 1_000 };
        let err = expand_reachability(&model, &opts).unwrap_err();
        assert!(matches!(err, ExpandError::StateBudgetExceeded { .. }));
        let opts = ExpandOptions { max_states: 1_000, max_transitions: 5 };
        let err = expand_reachability(&model, &opts).unwrap_err();
        assert!(matches!(err, ExpandError::StateBudgetExceeded { .. }));
    }

    #[test]
    fn expansion_is_deterministic() {
        let model = series_model(&[0.5, 0.25, 4.0, 1.0]);
        let a = expand_reachability(&model, &ExpandOptions::default()).unwrap();
        let b = expand_reachability(&model, &ExpandOptions::default()).unwrap();
        assert_eq!(a.markings(), b.markings());
        assert_eq!(a.edge_list_string().unwrap(), b.edge_list_string().unwrap());
    }
}
