//! Subcritical spore/host branching process.
//!
//! Hosts carry spores. Each spore is released at rate `beta` and founds a new
//! host carrying a random number `J ~ (p_j)` of spores; each host is removed
//! at rate `rho` together with its spores. This crate provides
//!
//! - [`model`]: parameters, offspring laws and the decay rate
//!   `lambda = rho + beta (1 - E J)`;
//! - [`simulator`]: an exact event-driven simulator and a per-clock reference engine;
//! - [`analytic`]: the truncated backward equations for the survival
//!   probabilities `q_k(t)`, closed forms, and the tail constant `C`;
//! - [`stats`]: Monte Carlo estimates with Wilson intervals, the Gumbel
//!   comparison for extinction times, and decay-rate fits.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod model;
pub mod ode;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use analytic::{ConstantEstimate, CurvePoint, CurveSource, SurvivalCurve, TruncatedSystem};
pub use error::{AnalyticError, ModelError, SimError, SolverError, StatsError};
pub use model::{DecayWindow, ModelParams, OffspringDistribution, ValidationReport};
pub use rng::RandomStream;
pub use simulator::{BatchOptions, ExtinctionTime, PopulationState, SimOutcome};
pub use stats::{EstimateWithCI, GumbelReport};
