//! Stochastic-reward-net builders for epidemic message routing under
//! community-based mobility.
//!
//! Two model families share the same parameters and meeting-rate inputs:
//!
//! * [`build_monolithic`] — one submodel per community plus a roaming
//!   submodel for the generic (relay) nodes, and a separate submodel for
//!   the destination. State grows combinatorially with both the number of
//!   communities and the population.
//! * [`build_folded`] — all community submodels folded into a single
//!   local/roaming pair; per-community counts are recovered on the fly by
//!   deterministic token redistribution ([`approx_local_counts`]). State
//!   grows polynomially, reaching populations far beyond the monolithic
//!   net.
//!
//! Both attach two rewards: `transmissions` (index 0, the number of
//! message copies in circulation, counted so that its terminal value at
//! absorption equals the total transmissions performed) and `delivered`
//! (indicator used for delivery-delay CDFs).

use std::sync::Arc;

use thiserror::Error;

use crate::config::NetworkConfig;
use crate::srn::{
    ImmediateTransition, Marking, MarkingFn, Place, PlaceId, SrnModel, TimedTransition,
};

/// Name of the reward counting circulating message copies.
pub const REWARD_TRANSMISSIONS: &str = "transmissions";
/// Name of the delivered-indicator reward (see [`crate::solve::DELIVERY_REWARD`]).
pub const REWARD_DELIVERED: &str = "delivered";

/// Pairwise meeting rates estimated from first-meeting experiments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeetingRates {
    /// Two local nodes moving in the same community.
    pub lambda: f64,
    /// Two roaming nodes.
    pub mu: f64,
    /// A roaming node and a single local node (community population 1).
    pub gamma: f64,
    /// A roaming node and any member of a crowded community holding all
    /// `M - 1` other nodes.
    pub eta: f64,
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    #[error("meeting-rate argument n = {n} exceeds M - 1 = {max}")]
    RMeetDomain { n: u32, max: u32 },
    #[error("population M = {0}, but at least the source and destination are required")]
    PopulationTooSmall(u32),
    #[error("meeting rates must be finite and positive ({0})")]
    InvalidRates(String),
}

fn check_rates(rates: &MeetingRates) -> Result<(), ModelError> {
    for (name, v) in [
        ("lambda", rates.lambda),
        ("mu", rates.mu),
        ("gamma", rates.gamma),
        ("eta", rates.eta),
    ] {
        if !v.is_finite() || v <= 0.0 {
            return Err(ModelError::InvalidRates(format!("{name} = {v}")));
        }
    }
    Ok(())
}

/// Meeting rate between one roaming node and any member of a community
/// currently holding `n` local nodes: 0 for an empty community, `gamma`
/// for one node, then linear interpolation up to `eta` at `n = M - 1`.
pub fn r_meet_hat(n: u32, rates: &MeetingRates, m: u32) -> Result<f64, ModelError> {
    if m < 2 || n > m - 1 {
        return Err(ModelError::RMeetDomain { n, max: m.saturating_sub(1) });
    }
    Ok(match n {
        0 => 0.0,
        1 => rates.gamma,
        _ => rates.gamma + (n - 1) as f64 * (rates.eta - rates.gamma) / (m - 2) as f64,
    })
}

/// Lookup table for [`r_meet_hat`] over the full valid domain `0..=M-1`.
fn r_meet_table(rates: &MeetingRates, m: u32) -> Vec<f64> {
    (0..=m - 1).map(|n| r_meet_hat(n, rates, m).expect("n <= M-1")).collect()
}

/// Per-community node counts reconstructed from a folded total.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalCountEstimate {
    pub counts: Vec<u32>,
}

impl LocalCountEstimate {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Which node class a folded count describes; the source node is appended
/// to the infected counts when it is local.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountVariant {
    Susceptible,
    Infected,
}

/// Deterministic redistribution of `tokens` folded local nodes over
/// communities proportionally to the selection probabilities.
///
/// Counts are the half-away-from-zero roundings of `P_sel[i] * tokens`,
/// then the rounding surplus/deficit is repaid one token at a time, taking
/// communities in decreasing order of rounding error (ties broken by
/// community index): a surplus decrements communities that were rounded
/// up, a deficit increments communities that were rounded down. With the
/// `Infected` variant, a local source adds one to its community count.
/// The total is always preserved.
pub fn approx_local_counts(
    tokens: u32,
    p_sel: &[f64],
    source_community: Option<usize>,
    variant: CountVariant,
) -> LocalCountEstimate {
    let n = p_sel.len();
    assert!(n > 0, "at least one community");
    if let Some(c) = source_community {
        assert!(c < n, "source community {c} out of range");
    }

    let scaled: Vec<f64> = p_sel.iter().map(|&p| p * tokens as f64).collect();
    let mut counts: Vec<u32> = scaled.iter().map(|&x| (x + 0.5).floor() as u32).collect();
    let mut d: i64 = counts.iter().map(|&c| i64::from(c)).sum::<i64>() - i64::from(tokens);

    if d != 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ea = (scaled[a] - counts[a] as f64).abs();
            let eb = (scaled[b] - counts[b] as f64).abs();
            eb.partial_cmp(&ea).unwrap().then(a.cmp(&b))
        });
        if d > 0 {
            // Surplus: take back from communities that were rounded up.
            let rounded_up: Vec<usize> =
                order.iter().copied().filter(|&i| scaled[i] <= counts[i] as f64).collect();
            for i in rounded_up {
                if d == 0 {
                    break;
                }
                if counts[i] > 0 {
                    counts[i] -= 1;
                    d -= 1;
                }
            }
        } else {
            // Deficit: top up communities that were rounded down.
            let rounded_down: Vec<usize> =
                order.iter().copied().filter(|&i| scaled[i] > counts[i] as f64).collect();
            for i in rounded_down {
                if d == 0 {
                    break;
                }
                counts[i] += 1;
                d += 1;
            }
        }
        debug_assert_eq!(d, 0, "redistribution must balance");
    }

    if variant == CountVariant::Infected {
        if let Some(c) = source_community {
            counts[c] += 1;
        }
    }
    LocalCountEstimate { counts }
}

/// Precomputed redistribution tables for every reachable folded count and
/// source position, shared by the folded net's rate and guard closures.
struct FoldTables {
    /// `sus[t]`: susceptible counts for `t` folded local tokens.
    sus: Vec<Vec<u32>>,
    /// `inf[src][t]`: infected counts for `t` folded local tokens with the
    /// source local in community `src`, or roaming for `src = N`.
    inf: Vec<Vec<Vec<u32>>>,
    r_meet: Vec<f64>,
}

impl FoldTables {
    fn new(cfg: &NetworkConfig, rates: &MeetingRates) -> Self {
        let m = cfg.m;
        let sus = (0..=m)
            .map(|t| approx_local_counts(t, &cfg.p_sel, None, CountVariant::Susceptible).counts)
            .collect();
        let inf = (0..=cfg.n)
            .map(|src| {
                let source = if src < cfg.n { Some(src) } else { None };
                (0..=m)
                    .map(|t| {
                        approx_local_counts(t, &cfg.p_sel, source, CountVariant::Infected).counts
                    })
                    .collect()
            })
            .collect();
        FoldTables { sus, inf, r_meet: r_meet_table(rates, m) }
    }
}

// ---------------------------------------------------------------------------
// Monolithic net
// ---------------------------------------------------------------------------

/// Place-index layout of the monolithic net for `n` communities.
#[derive(Clone, Copy, Debug)]
pub struct MonoLayout {
    pub n: usize,
}

impl MonoLayout {
    pub fn sus_l(&self, j: usize) -> PlaceId {
        j
    }
    pub fn inf_l(&self, j: usize) -> PlaceId {
        self.n + j
    }
    pub fn sus_r(&self) -> PlaceId {
        2 * self.n
    }
    pub fn inf_r(&self) -> PlaceId {
        2 * self.n + 1
    }
    pub fn sus_l_dec(&self, j: usize) -> PlaceId {
        2 * self.n + 2 + j
    }
    pub fn inf_l_dec(&self, j: usize) -> PlaceId {
        3 * self.n + 2 + j
    }
    pub fn sus_r_dec(&self) -> PlaceId {
        4 * self.n + 2
    }
    pub fn inf_r_dec(&self) -> PlaceId {
        4 * self.n + 3
    }
    pub fn des_sus_r(&self) -> PlaceId {
        4 * self.n + 4
    }
    pub fn des_sus_l(&self, j: usize) -> PlaceId {
        4 * self.n + 5 + j
    }
    pub fn des_sus_r_dec(&self) -> PlaceId {
        5 * self.n + 5
    }
    pub fn des_sus_l_dec(&self, j: usize) -> PlaceId {
        5 * self.n + 6 + j
    }
    pub fn des_inf(&self) -> PlaceId {
        6 * self.n + 6
    }
    pub fn n_places(&self) -> usize {
        6 * self.n + 7
    }

    /// Token-conservation groups: the generic nodes (source and relays)
    /// and the destination.
    pub fn token_groups(&self) -> Vec<Vec<PlaceId>> {
        let mut generic: Vec<PlaceId> = Vec::new();
        for j in 0..self.n {
            generic.extend([self.sus_l(j), self.inf_l(j), self.sus_l_dec(j), self.inf_l_dec(j)]);
        }
        generic.extend([self.sus_r(), self.inf_r(), self.sus_r_dec(), self.inf_r_dec()]);
        let mut destination: Vec<PlaceId> = vec![self.des_sus_r(), self.des_sus_r_dec(), self.des_inf()];
        for j in 0..self.n {
            destination.extend([self.des_sus_l(j), self.des_sus_l_dec(j)]);
        }
        vec![generic, destination]
    }
}

/// Builds the monolithic epidemic-routing net: per-community local places
/// for susceptible/infected relays, shared roaming places, and a separate
/// susceptible/infected submodel for the destination. The source starts as
/// the only infected node, roaming; the destination starts roaming.
///
/// Infection rates combine local pairwise meetings (`lambda` per pair) and
/// roaming-to-community meetings through the interpolated community rate
/// ([`r_meet_hat`]); all message-forwarding activity is switched off once
/// the destination holds the message (delivery ends the mission), which
/// makes the delivered marking absorbing.
pub fn build_monolithic(cfg: &NetworkConfig, rates: &MeetingRates) -> Result<SrnModel, ModelError> {
    if cfg.m < 2 {
        return Err(ModelError::PopulationTooSmall(cfg.m));
    }
    check_rates(rates)?;
    let n = cfg.n;
    let lay = MonoLayout { n };
    let m = cfg.m;
    let lambda = rates.lambda;
    let mu = rates.mu;
    let gamma = rates.gamma;
    let alpha = cfg.alpha;
    let beta = cfg.beta;
    let p_r = cfg.p_r;
    let p_l = cfg.p_l;
    let r_meet: Arc<Vec<f64>> = Arc::new(r_meet_table(rates, m));

    let mut places = vec![Place::new("", 0); lay.n_places()];
    for j in 0..n {
        places[lay.sus_l(j)] = Place::new(format!("sus_l_{j}"), 0);
        places[lay.inf_l(j)] = Place::new(format!("inf_l_{j}"), 0);
        places[lay.sus_l_dec(j)] = Place::new(format!("sus_l_dec_{j}"), 0);
        places[lay.inf_l_dec(j)] = Place::new(format!("inf_l_dec_{j}"), 0);
        places[lay.des_sus_l(j)] = Place::new(format!("des_sus_l_{j}"), 0);
        places[lay.des_sus_l_dec(j)] = Place::new(format!("des_sus_l_dec_{j}"), 0);
    }
    places[lay.sus_r()] = Place::new("sus_r", (m - 2) as u16);
    places[lay.inf_r()] = Place::new("inf_r", 1);
    places[lay.sus_r_dec()] = Place::new("sus_r_dec", 0);
    places[lay.inf_r_dec()] = Place::new("inf_r_dec", 0);
    places[lay.des_sus_r()] = Place::new("des_sus_r", 1);
    places[lay.des_sus_r_dec()] = Place::new("des_sus_r_dec", 0);
    places[lay.des_inf()] = Place::new("des_inf", 0);

    let des_inf = lay.des_inf();
    // Mission-wide gate: all movement and infection stops at delivery.
    let gate = move |m: &Marking| m[des_inf] == 0;

    let mut timed: Vec<TimedTransition> = Vec::new();
    for j in 0..n {
        let (sus_l, inf_l, inf_r) = (lay.sus_l(j), lay.inf_l(j), lay.inf_r());
        let rm = Arc::clone(&r_meet);
        timed.push(TimedTransition {
            name: format!("t_inf_l_{j}"),
            inputs: vec![(sus_l, 1)],
            outputs: vec![(inf_l, 1)],
            guard: Some(Box::new(move |m: &Marking| {
                m[des_inf] == 0 && m[inf_l] + m[inf_r] > 0
            })),
            rate: Box::new(move |m: &Marking| {
                f64::from(m[sus_l]) * f64::from(m[inf_l]) * lambda
                    + f64::from(m[inf_r]) * rm[m[sus_l] as usize]
            }),
        });
        timed.push(TimedTransition {
            name: format!("t_sus_l_end_{j}"),
            inputs: vec![(sus_l, 1)],
            outputs: vec![(lay.sus_l_dec(j), 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| f64::from(m[sus_l]) * alpha),
        });
        timed.push(TimedTransition {
            name: format!("t_inf_l_end_{j}"),
            inputs: vec![(inf_l, 1)],
            outputs: vec![(lay.inf_l_dec(j), 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| f64::from(m[inf_l]) * alpha),
        });
    }
    {
        let (sus_r, inf_r) = (lay.sus_r(), lay.inf_r());
        let lay_c = lay;
        let rm = Arc::clone(&r_meet);
        timed.push(TimedTransition {
            name: "t_inf_r".into(),
            inputs: vec![(sus_r, 1)],
            outputs: vec![(inf_r, 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| {
                let from_local: f64 =
                    (0..lay_c.n).map(|j| rm[m[lay_c.inf_l(j)] as usize]).sum();
                f64::from(m[sus_r]) * (f64::from(m[inf_r]) * mu + from_local)
            }),
        });
        timed.push(TimedTransition {
            name: "t_sus_r_end".into(),
            inputs: vec![(sus_r, 1)],
            outputs: vec![(lay.sus_r_dec(), 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| f64::from(m[sus_r]) * beta),
        });
        timed.push(TimedTransition {
            name: "t_inf_r_end".into(),
            inputs: vec![(inf_r, 1)],
            outputs: vec![(lay.inf_r_dec(), 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| f64::from(m[inf_r]) * beta),
        });
    }
    for j in 0..n {
        let (inf_l, inf_r) = (lay.inf_l(j), lay.inf_r());
        timed.push(TimedTransition {
            name: format!("t_inf_des_l_{j}"),
            inputs: vec![(lay.des_sus_l(j), 1)],
            outputs: vec![(des_inf, 1)],
            guard: Some(Box::new(move |m: &Marking| {
                m[des_inf] == 0 && m[inf_l] + m[inf_r] > 0
            })),
            rate: Box::new(move |m: &Marking| {
                f64::from(m[inf_l]) * lambda + f64::from(m[inf_r]) * gamma
            }),
        });
        timed.push(TimedTransition {
            name: format!("t_des_l_end_{j}"),
            inputs: vec![(lay.des_sus_l(j), 1)],
            outputs: vec![(lay.des_sus_l_dec(j), 1)],
            guard: None,
            rate: Box::new(move |_| alpha),
        });
    }
    {
        let inf_r = lay.inf_r();
        let lay_c = lay;
        let rm = Arc::clone(&r_meet);
        timed.push(TimedTransition {
            name: "t_inf_des_r".into(),
            inputs: vec![(lay.des_sus_r(), 1)],
            outputs: vec![(des_inf, 1)],
            guard: None,
            rate: Box::new(move |m: &Marking| {
                let from_local: f64 =
                    (0..lay_c.n).map(|j| rm[m[lay_c.inf_l(j)] as usize]).sum();
                f64::from(m[inf_r]) * mu + from_local
            }),
        });
        timed.push(TimedTransition {
            name: "t_des_r_end".into(),
            inputs: vec![(lay.des_sus_r(), 1)],
            outputs: vec![(lay.des_sus_r_dec(), 1)],
            guard: None,
            rate: Box::new(move |_| beta),
        });
    }

    let mut immediate: Vec<ImmediateTransition> = Vec::new();
    let weight = |x: f64| -> MarkingFn { Box::new(move |_| x) };
    for j in 0..n {
        immediate.push(ImmediateTransition {
            name: format!("i_sus_stay_l_{j}"),
            inputs: vec![(lay.sus_l_dec(j), 1)],
            outputs: vec![(lay.sus_l(j), 1)],
            guard: None,
            weight: weight(1.0 - p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_sus_to_r_{j}"),
            inputs: vec![(lay.sus_l_dec(j), 1)],
            outputs: vec![(lay.sus_r(), 1)],
            guard: None,
            weight: weight(p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_inf_stay_l_{j}"),
            inputs: vec![(lay.inf_l_dec(j), 1)],
            outputs: vec![(lay.inf_l(j), 1)],
            guard: None,
            weight: weight(1.0 - p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_inf_to_r_{j}"),
            inputs: vec![(lay.inf_l_dec(j), 1)],
            outputs: vec![(lay.inf_r(), 1)],
            guard: None,
            weight: weight(p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_sus_to_l_{j}"),
            inputs: vec![(lay.sus_r_dec(), 1)],
            outputs: vec![(lay.sus_l(j), 1)],
            guard: None,
            weight: weight(p_l * cfg.p_sel[j]),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_inf_to_l_{j}"),
            inputs: vec![(lay.inf_r_dec(), 1)],
            outputs: vec![(lay.inf_l(j), 1)],
            guard: None,
            weight: weight(p_l * cfg.p_sel[j]),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_des_stay_l_{j}"),
            inputs: vec![(lay.des_sus_l_dec(j), 1)],
            outputs: vec![(lay.des_sus_l(j), 1)],
            guard: None,
            weight: weight(1.0 - p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_des_to_r_{j}"),
            inputs: vec![(lay.des_sus_l_dec(j), 1)],
            outputs: vec![(lay.des_sus_r(), 1)],
            guard: None,
            weight: weight(p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_des_to_l_{j}"),
            inputs: vec![(lay.des_sus_r_dec(), 1)],
            outputs: vec![(lay.des_sus_l(j), 1)],
            guard: None,
            weight: weight(p_l * cfg.p_sel[j]),
        });
    }
    immediate.push(ImmediateTransition {
        name: "i_sus_stay_r".into(),
        inputs: vec![(lay.sus_r_dec(), 1)],
        outputs: vec![(lay.sus_r(), 1)],
        guard: None,
        weight: weight(1.0 - p_l),
    });
    immediate.push(ImmediateTransition {
        name: "i_inf_stay_r".into(),
        inputs: vec![(lay.inf_r_dec(), 1)],
        outputs: vec![(lay.inf_r(), 1)],
        guard: None,
        weight: weight(1.0 - p_l),
    });
    immediate.push(ImmediateTransition {
        name: "i_des_stay_r".into(),
        inputs: vec![(lay.des_sus_r_dec(), 1)],
        outputs: vec![(lay.des_sus_r(), 1)],
        guard: None,
        weight: weight(1.0 - p_l),
    });

    let lay_c = lay;
    let transmissions: MarkingFn = Box::new(move |m: &Marking| {
        let local: u32 = (0..lay_c.n).map(|j| u32::from(m[lay_c.inf_l(j)])).sum();
        f64::from(local + u32::from(m[lay_c.inf_r()]))
    });
    let delivered: MarkingFn = Box::new(move |m: &Marking| f64::from(m[des_inf]));

    Ok(SrnModel {
        name: format!("monolithic-n{}-m{}", n, m),
        places,
        timed,
        immediate,
        absorbing: Box::new(move |m: &Marking| m[des_inf] == 1),
        rewards: vec![
            (REWARD_TRANSMISSIONS.into(), transmissions),
            (REWARD_DELIVERED.into(), delivered),
        ],
    })
}

// ---------------------------------------------------------------------------
// Folded net
// ---------------------------------------------------------------------------

/// Place-index layout of the folded net for `n` communities.
#[derive(Clone, Copy, Debug)]
pub struct FoldedLayout {
    pub n: usize,
}

impl FoldedLayout {
    pub fn sus_l(&self) -> PlaceId {
        0
    }
    pub fn inf_l(&self) -> PlaceId {
        1
    }
    pub fn sus_r(&self) -> PlaceId {
        2
    }
    pub fn inf_r(&self) -> PlaceId {
        3
    }
    pub fn sus_l_dec(&self) -> PlaceId {
        4
    }
    pub fn inf_l_dec(&self) -> PlaceId {
        5
    }
    pub fn sus_r_dec(&self) -> PlaceId {
        6
    }
    pub fn inf_r_dec(&self) -> PlaceId {
        7
    }
    pub fn src_r(&self) -> PlaceId {
        8
    }
    pub fn src_l(&self, j: usize) -> PlaceId {
        9 + j
    }
    pub fn src_r_dec(&self) -> PlaceId {
        9 + self.n
    }
    pub fn src_l_dec(&self, j: usize) -> PlaceId {
        10 + self.n + j
    }
    pub fn des_r(&self) -> PlaceId {
        10 + 2 * self.n
    }
    pub fn des_l(&self, j: usize) -> PlaceId {
        11 + 2 * self.n + j
    }
    pub fn des_r_dec(&self) -> PlaceId {
        11 + 3 * self.n
    }
    pub fn des_l_dec(&self, j: usize) -> PlaceId {
        12 + 3 * self.n + j
    }
    pub fn des_inf(&self) -> PlaceId {
        12 + 4 * self.n
    }
    pub fn n_places(&self) -> usize {
        13 + 4 * self.n
    }

    /// Token-conservation groups: folded relays, source, destination.
    pub fn token_groups(&self) -> Vec<Vec<PlaceId>> {
        let fold = vec![
            self.sus_l(),
            self.inf_l(),
            self.sus_r(),
            self.inf_r(),
            self.sus_l_dec(),
            self.inf_l_dec(),
            self.sus_r_dec(),
            self.inf_r_dec(),
        ];
        let mut source = vec![self.src_r(), self.src_r_dec()];
        let mut destination = vec![self.des_r(), self.des_r_dec(), self.des_inf()];
        for j in 0..self.n {
            source.extend([self.src_l(j), self.src_l_dec(j)]);
            destination.extend([self.des_l(j), self.des_l_dec(j)]);
        }
        vec![fold, source, destination]
    }

    /// Source community in a tangible marking: `Some(j)` when local.
    fn source_community(&self, m: &Marking) -> usize {
        for j in 0..self.n {
            if m[self.src_l(j)] > 0 {
                return j;
            }
        }
        // Index n encodes "roaming" in the redistribution tables.
        self.n
    }
}

/// Builds the folded epidemic-routing net: the per-community relay
/// submodels collapse into one local/roaming place pair, while the source
/// and destination keep explicit positions. Rates recover per-community
/// counts with [`approx_local_counts`]; the redistribution covers relay
/// tokens only, with the local source appended to its community's infected
/// count (the destination is modeled separately and never enters the
/// estimates). The source starts roaming as the only message holder, so
/// the folded roaming-infected place starts empty.
pub fn build_folded(cfg: &NetworkConfig, rates: &MeetingRates) -> Result<SrnModel, ModelError> {
    if cfg.m < 2 {
        return Err(ModelError::PopulationTooSmall(cfg.m));
    }
    check_rates(rates)?;
    let n = cfg.n;
    let lay = FoldedLayout { n };
    let m = cfg.m;
    let lambda = rates.lambda;
    let mu = rates.mu;
    let gamma = rates.gamma;
    let alpha = cfg.alpha;
    let beta = cfg.beta;
    let p_r = cfg.p_r;
    let p_l = cfg.p_l;
    let tables = Arc::new(FoldTables::new(cfg, rates));

    let mut places = vec![Place::new("", 0); lay.n_places()];
    places[lay.sus_l()] = Place::new("f_sus_l", 0);
    places[lay.inf_l()] = Place::new("f_inf_l", 0);
    places[lay.sus_r()] = Place::new("f_sus_r", (m - 2) as u16);
    places[lay.inf_r()] = Place::new("f_inf_r", 0);
    places[lay.sus_l_dec()] = Place::new("f_sus_l_dec", 0);
    places[lay.inf_l_dec()] = Place::new("f_inf_l_dec", 0);
    places[lay.sus_r_dec()] = Place::new("f_sus_r_dec", 0);
    places[lay.inf_r_dec()] = Place::new("f_inf_r_dec", 0);
    places[lay.src_r()] = Place::new("src_r", 1);
    places[lay.src_r_dec()] = Place::new("src_r_dec", 0);
    places[lay.des_r()] = Place::new("des_r", 1);
    places[lay.des_r_dec()] = Place::new("des_r_dec", 0);
    places[lay.des_inf()] = Place::new("des_inf", 0);
    for j in 0..n {
        places[lay.src_l(j)] = Place::new(format!("src_l_{j}"), 0);
        places[lay.src_l_dec(j)] = Place::new(format!("src_l_dec_{j}"), 0);
        places[lay.des_l(j)] = Place::new(format!("des_l_{j}"), 0);
        places[lay.des_l_dec(j)] = Place::new(format!("des_l_dec_{j}"), 0);
    }

    let des_inf = lay.des_inf();
    let gate = move |m: &Marking| m[des_inf] == 0;
    // Number of infected roaming nodes including the source when roaming.
    let inf_roaming = {
        let lay = lay;
        move |m: &Marking| u32::from(m[lay.inf_r()]) + u32::from(m[lay.src_r()])
    };

    let mut timed: Vec<TimedTransition> = Vec::new();
    {
        let lay_c = lay;
        let tb = Arc::clone(&tables);
        timed.push(TimedTransition {
            name: "t_inf_l_fold".into(),
            inputs: vec![(lay.sus_l(), 1)],
            outputs: vec![(lay.inf_l(), 1)],
            guard: Some(Box::new(move |m: &Marking| {
                if m[des_inf] != 0 {
                    return false;
                }
                if inf_roaming(m) > 0 {
                    return true;
                }
                let sus = &tb.sus[m[lay_c.sus_l()] as usize];
                let inf = &tb.inf[lay_c.source_community(m)][m[lay_c.inf_l()] as usize];
                sus.iter().zip(inf).any(|(&s, &i)| s * i > 0)
            })),
            rate: {
                let tb = Arc::clone(&tables);
                Box::new(move |m: &Marking| {
                    let sus = &tb.sus[m[lay_c.sus_l()] as usize];
                    let inf = &tb.inf[lay_c.source_community(m)][m[lay_c.inf_l()] as usize];
                    let roam = f64::from(inf_roaming(m));
                    sus.iter()
                        .zip(inf)
                        .map(|(&s, &i)| {
                            f64::from(s) * f64::from(i) * lambda + roam * tb.r_meet[s as usize]
                        })
                        .sum()
                })
            },
        });
        let (sus_l, inf_l, sus_r, inf_r) = (lay.sus_l(), lay.inf_l(), lay.sus_r(), lay.inf_r());
        timed.push(TimedTransition {
            name: "t_sus_l_end_fold".into(),
            inputs: vec![(sus_l, 1)],
            outputs: vec![(lay.sus_l_dec(), 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| f64::from(m[sus_l]) * alpha),
        });
        timed.push(TimedTransition {
            name: "t_inf_l_end_fold".into(),
            inputs: vec![(inf_l, 1)],
            outputs: vec![(lay.inf_l_dec(), 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| f64::from(m[inf_l]) * alpha),
        });
        let tb = Arc::clone(&tables);
        timed.push(TimedTransition {
            name: "t_inf_r_fold".into(),
            inputs: vec![(sus_r, 1)],
            outputs: vec![(inf_r, 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| {
                let inf = &tb.inf[lay_c.source_community(m)][m[lay_c.inf_l()] as usize];
                let from_local: f64 = inf.iter().map(|&i| tb.r_meet[i as usize]).sum();
                f64::from(m[sus_r]) * (f64::from(inf_roaming(m)) * mu + from_local)
            }),
        });
        timed.push(TimedTransition {
            name: "t_sus_r_end_fold".into(),
            inputs: vec![(sus_r, 1)],
            outputs: vec![(lay.sus_r_dec(), 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| f64::from(m[sus_r]) * beta),
        });
        timed.push(TimedTransition {
            name: "t_inf_r_end_fold".into(),
            inputs: vec![(inf_r, 1)],
            outputs: vec![(lay.inf_r_dec(), 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |m: &Marking| f64::from(m[inf_r]) * beta),
        });
    }
    // Source movement.
    for j in 0..n {
        timed.push(TimedTransition {
            name: format!("t_src_l_end_{j}"),
            inputs: vec![(lay.src_l(j), 1)],
            outputs: vec![(lay.src_l_dec(j), 1)],
            guard: Some(Box::new(gate)),
            rate: Box::new(move |_| alpha),
        });
    }
    timed.push(TimedTransition {
        name: "t_src_r_end".into(),
        inputs: vec![(lay.src_r(), 1)],
        outputs: vec![(lay.src_r_dec(), 1)],
        guard: Some(Box::new(gate)),
        rate: Box::new(move |_| beta),
    });
    // Destination infection and movement.
    for j in 0..n {
        let lay_c = lay;
        let tb = Arc::clone(&tables);
        timed.push(TimedTransition {
            name: format!("t_inf_des_l_{j}"),
            inputs: vec![(lay.des_l(j), 1)],
            outputs: vec![(des_inf, 1)],
            guard: Some(Box::new({
                let tb = Arc::clone(&tables);
                move |m: &Marking| {
                    let inf = &tb.inf[lay_c.source_community(m)][m[lay_c.inf_l()] as usize];
                    inf[j] > 0 || inf_roaming(m) > 0
                }
            })),
            rate: Box::new(move |m: &Marking| {
                let inf = &tb.inf[lay_c.source_community(m)][m[lay_c.inf_l()] as usize];
                f64::from(inf_roaming(m)) * gamma + f64::from(inf[j]) * lambda
            }),
        });
        timed.push(TimedTransition {
            name: format!("t_des_l_end_{j}"),
            inputs: vec![(lay.des_l(j), 1)],
            outputs: vec![(lay.des_l_dec(j), 1)],
            guard: None,
            rate: Box::new(move |_| alpha),
        });
    }
    {
        let lay_c = lay;
        let tb = Arc::clone(&tables);
        timed.push(TimedTransition {
            name: "t_inf_des_r".into(),
            inputs: vec![(lay.des_r(), 1)],
            outputs: vec![(des_inf, 1)],
            guard: None,
            rate: Box::new(move |m: &Marking| {
                let inf = &tb.inf[lay_c.source_community(m)][m[lay_c.inf_l()] as usize];
                let from_local: f64 = inf.iter().map(|&i| tb.r_meet[i as usize]).sum();
                f64::from(inf_roaming(m)) * mu + from_local
            }),
        });
        timed.push(TimedTransition {
            name: "t_des_r_end".into(),
            inputs: vec![(lay.des_r(), 1)],
            outputs: vec![(lay.des_r_dec(), 1)],
            guard: None,
            rate: Box::new(move |_| beta),
        });
    }

    let mut immediate: Vec<ImmediateTransition> = Vec::new();
    let weight = |x: f64| -> MarkingFn { Box::new(move |_| x) };
    // Folded relay decisions: local stay/leave and roaming stay/join. The
    // roaming-to-local branch carries the full P_l because the folded
    // local place aggregates every community.
    for (name, from, to, w) in [
        ("i_f_sus_stay_l", lay.sus_l_dec(), lay.sus_l(), 1.0 - p_r),
        ("i_f_sus_to_r", lay.sus_l_dec(), lay.sus_r(), p_r),
        ("i_f_inf_stay_l", lay.inf_l_dec(), lay.inf_l(), 1.0 - p_r),
        ("i_f_inf_to_r", lay.inf_l_dec(), lay.inf_r(), p_r),
        ("i_f_sus_to_l", lay.sus_r_dec(), lay.sus_l(), p_l),
        ("i_f_sus_stay_r", lay.sus_r_dec(), lay.sus_r(), 1.0 - p_l),
        ("i_f_inf_to_l", lay.inf_r_dec(), lay.inf_l(), p_l),
        ("i_f_inf_stay_r", lay.inf_r_dec(), lay.inf_r(), 1.0 - p_l),
    ] {
        immediate.push(ImmediateTransition {
            name: name.into(),
            inputs: vec![(from, 1)],
            outputs: vec![(to, 1)],
            guard: None,
            weight: weight(w),
        });
    }
    for j in 0..n {
        immediate.push(ImmediateTransition {
            name: format!("i_src_stay_l_{j}"),
            inputs: vec![(lay.src_l_dec(j), 1)],
            outputs: vec![(lay.src_l(j), 1)],
            guard: None,
            weight: weight(1.0 - p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_src_to_r_{j}"),
            inputs: vec![(lay.src_l_dec(j), 1)],
            outputs: vec![(lay.src_r(), 1)],
            guard: None,
            weight: weight(p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_src_to_l_{j}"),
            inputs: vec![(lay.src_r_dec(), 1)],
            outputs: vec![(lay.src_l(j), 1)],
            guard: None,
            weight: weight(p_l * cfg.p_sel[j]),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_des_stay_l_{j}"),
            inputs: vec![(lay.des_l_dec(j), 1)],
            outputs: vec![(lay.des_l(j), 1)],
            guard: None,
            weight: weight(1.0 - p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_des_to_r_{j}"),
            inputs: vec![(lay.des_l_dec(j), 1)],
            outputs: vec![(lay.des_r(), 1)],
            guard: None,
            weight: weight(p_r),
        });
        immediate.push(ImmediateTransition {
            name: format!("i_des_to_l_{j}"),
            inputs: vec![(lay.des_r_dec(), 1)],
            outputs: vec![(lay.des_l(j), 1)],
            guard: None,
            weight: weight(p_l * cfg.p_sel[j]),
        });
    }
    immediate.push(ImmediateTransition {
        name: "i_src_stay_r".into(),
        inputs: vec![(lay.src_r_dec(), 1)],
        outputs: vec![(lay.src_r(), 1)],
        guard: None,
        weight: weight(1.0 - p_l),
    });
    immediate.push(ImmediateTransition {
        name: "i_des_stay_r".into(),
        inputs: vec![(lay.des_r_dec(), 1)],
        outputs: vec![(lay.des_r(), 1)],
        guard: None,
        weight: weight(1.0 - p_l),
    });

    let lay_c = lay;
    // The source is tracked outside the folded places, so its message
    // copy is added back explicitly.
    let transmissions: MarkingFn = Box::new(move |m: &Marking| {
        f64::from(m[lay_c.inf_l()]) + f64::from(m[lay_c.inf_r()]) + 1.0
    });
    let delivered: MarkingFn = Box::new(move |m: &Marking| f64::from(m[des_inf]));

    Ok(SrnModel {
        name: format!("folded-n{}-m{}", n, m),
        places,
        timed,
        immediate,
        absorbing: Box::new(move |m: &Marking| m[des_inf] == 1),
        rewards: vec![
            (REWARD_TRANSMISSIONS.into(), transmissions),
            (REWARD_DELIVERED.into(), delivered),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::{mtta, SolveOptions};
    use crate::srn::{conserve_tokens_check, expand_reachability, validate_model, ExpandOptions};

    fn test_config(n: usize, m: u32) -> NetworkConfig {
        let (centers, p_sel): (Vec<(f64, f64)>, Vec<f64>) = match n {
            2 => (vec![(250.0, 250.0), (750.0, 750.0)], vec![0.5, 0.5]),
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

    fn test_rates() -> MeetingRates {
        MeetingRates { lambda: 2.4e-2, mu: 2.54e-4, gamma: 2.586e-4, eta: 1.086e-3 }
    }

    #[test]
    fn r_meet_hat_interpolates() {
        let r = test_rates();
        assert_eq!(r_meet_hat(0, &r, 11).unwrap(), 0.0);
        assert_eq!(r_meet_hat(1, &r, 11).unwrap(), r.gamma);
        assert_eq!(r_meet_hat(10, &r, 11).unwrap(), r.eta);
        let mid = r_meet_hat(5, &r, 11).unwrap();
        let expect = r.gamma + 4.0 * (r.eta - r.gamma) / 9.0;
        assert!((mid - expect).abs() < 1e-18);
        assert!(matches!(
            r_meet_hat(11, &r, 11),
            Err(ModelError::RMeetDomain { n: 11, max: 10 })
        ));
    }

    #[test]
    fn redistribution_matches_hand_traces() {
        let sus = CountVariant::Susceptible;
        assert_eq!(approx_local_counts(5, &[0.2, 0.4, 0.4], None, sus).counts, vec![1, 2, 2]);
        assert_eq!(
            approx_local_counts(5, &[0.25, 0.25, 0.25, 0.25], None, sus).counts,
            vec![2, 1, 1, 1]
        );
        assert_eq!(approx_local_counts(7, &[0.5, 0.3, 0.2], None, sus).counts, vec![4, 2, 1]);
        assert_eq!(approx_local_counts(10, &[0.15, 0.35, 0.5], None, sus).counts, vec![1, 4, 5]);
        assert_eq!(approx_local_counts(1, &[0.5, 0.5], None, sus).counts, vec![0, 1]);
        assert_eq!(
            approx_local_counts(2, &[0.25, 0.25, 0.25, 0.25], None, sus).counts,
            vec![0, 0, 1, 1]
        );
        assert_eq!(approx_local_counts(0, &[0.2, 0.4, 0.4], None, sus).counts, vec![0, 0, 0]);
    }

    #[test]
    fn redistribution_appends_local_source() {
        let inf = CountVariant::Infected;
        assert_eq!(approx_local_counts(0, &[0.2, 0.4, 0.4], Some(1), inf).counts, vec![0, 1, 0]);
        assert_eq!(approx_local_counts(5, &[0.2, 0.4, 0.4], Some(0), inf).counts, vec![2, 2, 2]);
        assert_eq!(approx_local_counts(5, &[0.2, 0.4, 0.4], None, inf).counts, vec![1, 2, 2]);
    }

    #[test]
    fn monolithic_passes_validation_and_conserves_tokens() {
        let cfg = test_config(3, 5);
        let model = build_monolithic(&cfg, &test_rates()).unwrap();
        assert!(validate_model(&model).is_empty());
        let ctmc = expand_reachability(&model, &ExpandOptions::default()).unwrap();
        let lay = MonoLayout { n: 3 };
        conserve_tokens_check(&ctmc, &lay.token_groups()).unwrap();
        let groups = lay.token_groups();
        assert_eq!(ctmc.markings()[0].total_in(&groups[0]), 4);
        assert_eq!(ctmc.markings()[0].total_in(&groups[1]), 1);
    }

    #[test]
    fn monolithic_state_count_small() {
        let cfg = test_config(3, 5);
        let model = build_monolithic(&cfg, &test_rates()).unwrap();
        let ctmc = expand_reachability(&model, &ExpandOptions::default()).unwrap();
        assert_eq!(ctmc.n_states(), 1_475);
    }

    #[test]
    fn folded_passes_validation_and_conserves_tokens() {
        let cfg = test_config(3, 5);
        let model = build_folded(&cfg, &test_rates()).unwrap();
        assert!(validate_model(&model).is_empty());
        let ctmc = expand_reachability(&model, &ExpandOptions::default()).unwrap();
        let lay = FoldedLayout { n: 3 };
        conserve_tokens_check(&ctmc, &lay.token_groups()).unwrap();
        let groups = lay.token_groups();
        assert_eq!(ctmc.markings()[0].total_in(&groups[0]), 3);
        assert_eq!(ctmc.markings()[0].total_in(&groups[1]), 1);
        assert_eq!(ctmc.markings()[0].total_in(&groups[2]), 1);
    }

    #[test]
    fn folded_state_counts_small() {
        for (n, m, expect) in [(3usize, 5u32, 400usize), (4, 5, 600)] {
            let cfg = test_config(n, m);
            let model = build_folded(&cfg, &test_rates()).unwrap();
            let ctmc = expand_reachability(&model, &ExpandOptions::default()).unwrap();
            assert_eq!(ctmc.n_states(), expect, "folded N={n} M={m}");
        }
    }

    /// With only the source and destination present the folded model is an
    /// exact relabeling of the monolithic one.
    #[test]
    fn mono_and_folded_agree_for_two_nodes() {
        let cfg = test_config(3, 2);
        let rates = test_rates();
        let mono = build_monolithic(&cfg, &rates).unwrap();
        let fold = build_folded(&cfg, &rates).unwrap();
        let opts = ExpandOptions::default();
        let cm = expand_reachability(&mono, &opts).unwrap();
        let cf = expand_reachability(&fold, &opts).unwrap();
        assert_eq!(cm.n_states(), cf.n_states());
        let sm = mtta(&cm, &SolveOptions::default()).unwrap();
        let sf = mtta(&cf, &SolveOptions::default()).unwrap();
        assert!(
            (sm.mtta - sf.mtta).abs() / sm.mtta < 1e-9,
            "mono {} vs folded {}",
            sm.mtta,
            sf.mtta
        );
        assert!((sm.terminal_reward - 1.0).abs() < 1e-9);
        assert!((sf.terminal_reward - 1.0).abs() < 1e-9);
    }

    #[test]
    fn builders_reject_bad_inputs() {
        let cfg = test_config(3, 1);
        assert!(matches!(
            build_monolithic(&cfg, &test_rates()),
            Err(ModelError::PopulationTooSmall(1))
        ));
        let cfg = test_config(3, 5);
        let bad = MeetingRates { lambda: 0.0, ..test_rates() };
        assert!(matches!(build_folded(&cfg, &bad), Err(ModelError::InvalidRates(_))));
    }
}
