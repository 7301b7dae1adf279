//! Markov order estimation for finite-alphabet stationary processes.
//!
//! The crate provides
//!
//! * sliding-window counts, empirical entropies and maximum likelihood
//!   ([`counting`]);
//! * the PML (BIC/AIC/power penalties), NML and KT information criteria and
//!   their arg-min order estimators ([`criteria`]);
//! * generative process models with seeded sampling and known memory-decay
//!   quantities ([`processes`]);
//! * oracle order estimation and evaluators for the explicit probability
//!   bounds on estimated orders, entropy deviations and d̄ error ([`analysis`]);
//! * exact and coupling-based d̄-distance and the empirical Markov estimator
//!   ([`dbar`]);
//! * a config-driven, seed-reproducible experiment harness ([`experiments`]).
//!
//! All logarithms are base 2.

pub mod analysis;
pub mod counting;
pub mod criteria;
pub mod dbar;
pub mod error;
pub mod experiments;
pub mod io;
pub mod processes;
mod transport;
pub mod types;

pub use criteria::{estimate_order, Criterion, OrderEstimate};
pub use error::{Error, Result};
pub use processes::{GeometricBinaryGModel, IidModel, MarkovChainModel, Model, ProcessModel};
pub use types::{xlog2x, Alphabet, LogProb, PenaltySpec, Sample, SeedSpec};
