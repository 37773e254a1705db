//! Functional estimation toolkit for discrete-time systems.
//!
//! Estimates a *function* of the state, `z = phi(x)`, rather than the full
//! state — useful whenever the state itself is not detectable from the
//! available measurements but the quantity of interest still is.
//!
//! The crate provides:
//!
//! - [`model`]: nonlinear time-varying system models with process and
//!   measurement noise, box constraint sets, rollouts and simulation.
//! - [`fie`]: full information estimation — at each time step a nonlinear
//!   program fits an initial state and a noise sequence to all measurements
//!   collected so far, with a geometrically discounted objective.
//! - [`lyapunov`]: verification and construction of discounted Lyapunov
//!   certificates for linear functional observers, plus a full-order
//!   observer designer (Riccati or deadbeat gain).
//! - [`estimators`]: lightweight non-optimization estimators — the linear
//!   functional observer runtime, a scalar state-norm estimator, and the
//!   two-step deadbeat total-load estimator for the power-system benchmark.
//! - [`powersys`]: a four-bus swing-equation benchmark where the total power
//!   load is estimated from frequency and mechanical-power measurements.

pub mod error;
pub mod estimators;
pub mod fie;
pub mod kfunction;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod powersys;

pub use error::{Error, Result};
pub use estimators::{DeadbeatMatrices, StateNormEstimatorConfig};
pub use fie::{EstimateRecord, FieConfig, FieObjective, PriorData, SolverSettings};
pub use kfunction::KFunction;
pub use lyapunov::{LinearFunctionalObserver, LinearSystem, LyapunovCertificate};
pub use model::{BoxSet, NoiseSampler, SystemModel, Trajectory};
pub use powersys::PowerSystemParams;
