//! Analytical and simulation models of epidemic message routing in
//! community-structured mobile networks.
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`sim`] — a random-direction mobility simulator used both as the
//!    ground-truth delivery-delay reference and to estimate pairwise
//!    meeting rates from first-meeting experiments.
//! 2. [`models`] — builders that turn a [`config::NetworkConfig`] plus the
//!    estimated [`models::MeetingRates`] into stochastic reward nets: a
//!    monolithic per-community net and a folded (lumped) net that scales to
//!    much larger populations.
//! 3. [`srn`] — the stochastic-reward-net representation itself and the
//!    reachability expansion that eliminates vanishing markings and yields
//!    an absorbing continuous-time Markov chain ([`ctmc::Ctmc`]).
//! 4. [`solve`] — CTMC analysis: mean time to absorption, transient
//!    distributions by uniformization, delivery-delay CDFs, expected
//!    transmission counts, and a Monte-Carlo path sampler used as an
//!    independent cross-check.
//! 5. [`ode`] — a deterministic fluid (ODE) approximation of the same
//!    epidemic dynamics for populations beyond CTMC reach.
//! 6. [`stats`] — empirical CDFs, chi-square goodness-of-fit tests and
//!    small report helpers shared by the command-line tools.

pub mod config;
pub mod ctmc;
pub mod io;
pub mod models;
pub mod ode;
pub mod sim;
pub mod solve;
pub mod srn;
pub mod stats;

pub use config::NetworkConfig;
pub use ctmc::Ctmc;
pub use models::{LocalCountEstimate, MeetingRates};
pub use solve::{AbsorptionResult, McResult, TransientResult};
pub use srn::{ImmediateTransition, Marking, Place, SrnModel, TimedTransition};
