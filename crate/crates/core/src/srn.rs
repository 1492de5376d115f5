//! Stochastic reward net representation.
//!
//! A net is a set of places holding non-negative integer token counts, plus
//! two transition kinds: *timed* transitions firing after an exponential
//! delay whose rate may depend on the current marking, and *immediate*
//! transitions firing in zero time according to marking-dependent weights.
//! Markings enabling at least one immediate transition are *vanishing*;
//! all others are *tangible*. Reachability expansion
//! ([`crate::srn::expand_reachability`]) eliminates vanishing markings on
//! the fly and produces an absorbing CTMC over tangible markings only.

use std::fmt;
use std::ops::Index;

use crate::ctmc::Ctmc;

mod expand;
pub use expand::{expand_reachability, ExpandError, ExpandOptions};

/// Index of a place inside [`SrnModel::places`].
pub type PlaceId = usize;

/// Token counts are bounded well below `u16::MAX` in every model this
/// crate builds; the narrow type keeps multi-million-state marking tables
/// compact.
pub type TokenCount = u16;

#[derive(Clone, Debug)]
pub struct Place {
    pub name: String,
    pub initial: TokenCount,
}

impl Place {
    pub fn new(name: impl Into<String>, initial: TokenCount) -> Self {
        Place { name: name.into(), initial }
    }
}

/// A fixed-length vector of token counts, one per place.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Marking(Box<[TokenCount]>);

impl Marking {
    pub fn new(counts: Vec<TokenCount>) -> Self {
        Marking(counts.into_boxed_slice())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn counts(&self) -> &[TokenCount] {
        &self.0
    }

    /// Total number of tokens over the given places.
    pub fn total_in(&self, places: &[PlaceId]) -> u64 {
        places.iter().map(|&p| u64::from(self.0[p])).sum()
    }
}

impl Index<PlaceId> for Marking {
    type Output = TokenCount;

    fn index(&self, p: PlaceId) -> &TokenCount {
        &self.0[p]
    }
}

impl fmt::Display for Marking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

/// Marking-dependent boolean predicate (transition guard, absorbing test).
pub type GuardFn = Box<dyn Fn(&Marking) -> bool + Send + Sync>;
/// Marking-dependent real value (firing rate, immediate weight, reward).
pub type MarkingFn = Box<dyn Fn(&Marking) -> f64 + Send + Sync>;

pub struct TimedTransition {
    pub name: String,
    /// `(place, multiplicity)` pairs consumed on firing.
    pub inputs: Vec<(PlaceId, TokenCount)>,
    /// `(place, multiplicity)` pairs produced on firing.
    pub outputs: Vec<(PlaceId, TokenCount)>,
    /// `None` means always enabled (subject to input tokens).
    pub guard: Option<GuardFn>,
    pub rate: MarkingFn,
}

pub struct ImmediateTransition {
    pub name: String,
    pub inputs: Vec<(PlaceId, TokenCount)>,
    pub outputs: Vec<(PlaceId, TokenCount)>,
    pub guard: Option<GuardFn>,
    pub weight: MarkingFn,
}

/// A complete stochastic reward net.
///
/// `rewards` holds named marking-dependent reward functions; by convention
/// index 0 is the primary reward rate of the model. Reachability expansion
/// evaluates every reward on every tangible marking.
pub struct SrnModel {
    pub name: String,
    pub places: Vec<Place>,
    pub timed: Vec<TimedTransition>,
    pub immediate: Vec<ImmediateTransition>,
    /// Markings satisfying this predicate get no outgoing transitions.
    pub absorbing: GuardFn,
    pub rewards: Vec<(String, MarkingFn)>,
}

impl SrnModel {
    pub fn initial_marking(&self) -> Marking {
        Marking::new(self.places.iter().map(|p| p.initial).collect())
    }

    pub fn place_index(&self, name: &str) -> Option<PlaceId> {
        self.places.iter().position(|p| p.name == name)
    }

    /// Primary reward function (index 0 of `rewards`).
    pub fn reward_rate(&self) -> Option<&MarkingFn> {
        self.rewards.first().map(|(_, f)| f)
    }
}

pub(crate) fn token_enabled(inputs: &[(PlaceId, TokenCount)], m: &Marking) -> bool {
    inputs.iter().all(|&(p, k)| m[p] >= k)
}

pub(crate) fn fire(
    inputs: &[(PlaceId, TokenCount)],
    outputs: &[(PlaceId, TokenCount)],
    m: &Marking,
) -> Marking {
    let mut counts = m.counts().to_vec();
    for &(p, k) in inputs {
        counts[p] -= k;
    }
    for &(p, k) in outputs {
        counts[p] += k;
    }
    Marking::new(counts)
}

fn immediate_enabled(t: &ImmediateTransition, m: &Marking) -> bool {
    token_enabled(&t.inputs, m) && t.guard.as_ref().map_or(true, |g| g(m))
}

pub(crate) fn enabled_immediates<'a>(
    model: &'a SrnModel,
    m: &'a Marking,
) -> impl Iterator<Item = (usize, &'a ImmediateTransition)> {
    model
        .immediate
        .iter()
        .enumerate()
        .filter(move |(_, t)| immediate_enabled(t, m))
}

/// Structural problem reported by [`validate_model`].
#[derive(Clone, Debug, PartialEq)]
pub enum Diagnostic {
    /// A transition arc references a place index outside the model.
    DanglingArc { transition: String, place: PlaceId },
    /// The weights of the immediates competing for one decision place do
    /// not sum to 1 (evaluated on a probe marking with tokens on that
    /// place).
    NonNormalizedWeights { place: String, sum: f64 },
    /// An immediate transition is enabled in the initial marking.
    VanishingInitialMarking { transition: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DanglingArc { transition, place } => {
                write!(f, "transition `{transition}` references unknown place index {place}")
            }
            Diagnostic::NonNormalizedWeights { place, sum } => {
                write!(f, "immediate weights competing on place `{place}` sum to {sum}, expected 1")
            }
            Diagnostic::VanishingInitialMarking { transition } => {
                write!(f, "initial marking is vanishing: immediate `{transition}` is enabled")
            }
        }
    }
}

/// Checks a model for structural defects without expanding it.
///
/// Returns an empty list iff all arcs reference valid places, the
/// immediate weights on every decision place normalize to 1, and the
/// initial marking is tangible.
pub fn validate_model(model: &SrnModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = model.places.len();

    let mut check_arcs = |name: &str, arcs: &[(PlaceId, TokenCount)]| {
        for &(p, _) in arcs {
            if p >= n {
                out.push(Diagnostic::DanglingArc { transition: name.to_string(), place: p });
            }
        }
    };
    for t in &model.timed {
        check_arcs(&t.name, &t.inputs);
        check_arcs(&t.name, &t.outputs);
    }
    for t in &model.immediate {
        check_arcs(&t.name, &t.inputs);
        check_arcs(&t.name, &t.outputs);
    }
    if !out.is_empty() {
        // Arc indices are unusable below; report the dangling arcs alone.
        return out;
    }

    let initial = model.initial_marking();
    for (_, t) in enabled_immediates(model, &initial) {
        out.push(Diagnostic::VanishingInitialMarking { transition: t.name.clone() });
    }

    // Weight normalization per decision place: probe with enough tokens on
    // the place for every immediate drawing from it to be token-enabled.
    let mut decision_places: Vec<PlaceId> = model
        .immediate
        .iter()
        .flat_map(|t| t.inputs.iter().map(|&(p, _)| p))
        .collect();
    decision_places.sort_unstable();
    decision_places.dedup();
    for p in decision_places {
        let need = model
            .immediate
            .iter()
            .flat_map(|t| t.inputs.iter())
            .filter(|&&(q, _)| q == p)
            .map(|&(_, k)| k)
            .max()
            .unwrap_or(1);
        let mut counts = initial.counts().to_vec();
        counts[p] = counts[p].max(need);
        let probe = Marking::new(counts);
        let sum: f64 = enabled_immediates(model, &probe)
            .filter(|(_, t)| t.inputs.iter().any(|&(q, _)| q == p))
            .map(|(_, t)| (t.weight)(&probe))
            .sum();
        if (sum - 1.0).abs() > 1e-9 {
            out.push(Diagnostic::NonNormalizedWeights {
                place: model.places[p].name.clone(),
                sum,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConservationViolation {
    pub group: usize,
    pub state: usize,
    pub expected: u64,
    pub found: u64,
}

impl fmt::Display for ConservationViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "token group {} holds {} tokens in state {} but {} in the initial state",
            self.group, self.found, self.state, self.expected
        )
    }
}

/// Verifies that the total token count inside each place group is the same
/// in every reachable tangible marking of an expanded chain.
pub fn conserve_tokens_check(
    ctmc: &Ctmc,
    groups: &[Vec<PlaceId>],
) -> Result<(), ConservationViolation> {
    let markings = ctmc.markings();
    if markings.is_empty() {
        return Ok(());
    }
    for (gi, group) in groups.iter().enumerate() {
        let expected = markings[0].total_in(group);
        for (si, m) in markings.iter().enumerate() {
            let found = m.total_in(group);
            if found != expected {
                return Err(ConservationViolation { group: gi, state: si, expected, found });
            }
        }
    }
    Ok(())
}
