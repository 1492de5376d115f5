//! Discrete time-stepped network simulator: node mobility, epidemic
//! forwarding, and first-meeting-rate estimation.

pub mod epidemic;
pub mod estimate;
pub mod mobility;

pub use epidemic::{run_epidemic, run_epidemic_many, SimOutcome, DEFAULT_TX_DELAY};
pub use estimate::{estimate_r_meet_curve, estimate_rates, EstimatedRates, RateEstimate};
pub use mobility::{advance, Mode, NodeState, DEFAULT_DT};
