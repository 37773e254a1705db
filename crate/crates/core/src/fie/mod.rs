//! Full information estimation of a function of the state.
//!
//! At each time `t` the estimator solves
//!
//! ```text
//! min  V(x0_hat, w_hat, y_hat, t)
//! s.t. x_hat[j+1] = f(x_hat[j], w_hat[j], j)     (eliminated by shooting)
//!      y_hat[j]   = h(x_hat[j], w_hat[j], j)
//!      w_hat[j] in W,   x_hat[j] in X
//! ```
//!
//! over the initial state `x0_hat` and the whole noise sequence, then reads
//! off the functional estimate `z_hat = phi(x_hat[t])` at the end of the
//! fitted trajectory. Old data is discounted geometrically by `eta`:
//!
//! quadratic form (weights `P, Q, R` positive definite):
//!
//! ```text
//! V = 2 eta^(t - t0) ||x0_hat - x_bar||_P^2
//!   + 2 sum_{j=1..t-t0} eta^(j-1) ( ||w_hat[t-j] - w_bar[t-j]||_Q^2
//!                                 + ||y_hat[t-j] - y_bar[t-j]||_R^2 )
//! ```
//!
//! general form (class-K shapes `alpha2, sigma_w, sigma_y`, note the
//! doubled arguments, which come from splitting estimation errors against a
//! common reference):
//!
//! ```text
//! V = eta^(t - t0) alpha2(2 ||x0_hat - x_bar||)
//!   + sum_{j=1..t-t0} eta^(j-1) ( sigma_w(2 ||w_hat[t-j] - w_bar[t-j]||)
//!                               + sigma_y(2 ||y_hat[t-j] - y_bar[t-j]||) )
//! ```
//!
//! The discount on the prior term uses the exponent `t - t0` so estimates
//! are invariant under shifting the initial time.
//!
//! States are eliminated exactly by single shooting, so the dynamics and
//! output constraints hold by construction; the decision-variable boxes are
//! enforced by projection and the boxes on derived states by a growing
//! quadratic exterior penalty. The quadratic objective is minimized by a
//! Levenberg-Marquardt iteration whose linearized subproblems are solved in
//! one backward/forward sweep per iteration (cost linear in the horizon);
//! the general objective falls back to projected gradient descent.

mod solver;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kfunction::KFunction;
use crate::linalg::check_spd;
use crate::model::SystemModel;

pub use solver::{objective_gradient, solve_fie_with_warm_start};

/// Objective selection for the estimation problem.
#[derive(Debug, Clone)]
pub enum FieObjective {
    /// Weighted least squares with positive definite `P` (prior), `Q`
    /// (noise) and `R` (output) weights.
    Quadratic {
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    },
    /// Discounted class-K objective.
    General {
        alpha2: KFunction,
        sigma_w: KFunction,
        sigma_y: KFunction,
    },
}

/// Iteration limits and tolerances of the shooting solver.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// Inner iteration budget per penalty round.
    pub max_iter: usize,
    /// Convergence threshold on the infinity norm of the projected gradient.
    pub grad_tol: f64,
    /// Convergence threshold on the relative step size.
    pub step_tol: f64,
    /// Initial weight of the exterior penalty on derived-state boxes.
    pub penalty_weight_init: f64,
    /// Multiplicative growth of the penalty weight between rounds.
    pub penalty_growth: f64,
    /// Maximum number of penalty growth rounds.
    pub max_penalty_rounds: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iter: 50,
            grad_tol: 1e-9,
            step_tol: 1e-12,
            penalty_weight_init: 10.0,
            penalty_growth: 10.0,
            max_penalty_rounds: 8,
        }
    }
}

/// Violation threshold under which derived-state box constraints count as
/// satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Discount factor, objective and solver settings of an estimation run.
#[derive(Debug, Clone)]
pub struct FieConfig {
    pub eta: f64,
    pub objective: FieObjective,
    pub solver: SolverSettings,
}

impl FieConfig {
    pub fn new(eta: f64, objective: FieObjective) -> Result<Self> {
        let config = FieConfig {
            eta,
            objective,
            solver: SolverSettings::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_solver(mut self, solver: SolverSettings) -> Result<Self> {
        self.solver = solver;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::InvalidInput(format!(
                "discount factor must satisfy 0 <= eta < 1, got {}",
                self.eta
            )));
        }
        match &self.objective {
            FieObjective::Quadratic { p, q, r } => {
                check_spd(p, "prior weight P")?;
                check_spd(q, "noise weight Q")?;
                check_spd(r, "output weight R")?;
            }
            FieObjective::General {
                alpha2,
                sigma_w,
                sigma_y,
            } => {
                alpha2.validate()?;
                sigma_w.validate()?;
                sigma_y.validate()?;
            }
        }
        let s = &self.solver;
        if s.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be positive".into()));
        }
        if s.grad_tol <= 0.0 || s.step_tol <= 0.0 {
            return Err(Error::InvalidInput(
                "solver tolerances must be positive".into(),
            ));
        }
        if s.penalty_weight_init <= 0.0 || s.penalty_growth <= 1.0 {
            return Err(Error::InvalidInput(
                "penalty weight must be positive and growth factor above 1".into(),
            ));
        }
        Ok(())
    }

    /// Identity-weight quadratic configuration, a convenient starting point.
    pub fn quadratic_identity(eta: f64, n_x: usize, n_w: usize, n_y: usize) -> Result<Self> {
        FieConfig::new(
            eta,
            FieObjective::Quadratic {
                p: DMatrix::identity(n_x, n_x),
                q: DMatrix::identity(n_w, n_w),
                r: DMatrix::identity(n_y, n_y),
            },
        )
    }
}

/// Prior information available to the estimator at solve time: the initial
/// state estimate and the per-step noise/output estimates collected since
/// `t0` (typically zero noise and the raw measurements).
#[derive(Debug, Clone)]
pub struct PriorData {
    pub t0: u64,
    pub x_bar: DVector<f64>,
    pub w_bar: Vec<DVector<f64>>,
    pub y_bar: Vec<DVector<f64>>,
}

impl PriorData {
    /// The usual construction: zero noise estimates, measurements as output
    /// estimates.
    pub fn from_measurements(t0: u64, x_bar: DVector<f64>, measurements: &[DVector<f64>], n_w: usize) -> Self {
        PriorData {
            t0,
            x_bar,
            w_bar: vec![DVector::zeros(n_w); measurements.len()],
            y_bar: measurements.to_vec(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.y_bar.len()
    }
}

/// Solver diagnostics attached to every estimate.
#[derive(Debug, Clone)]
pub struct SolverStats {
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub penalty_rounds: usize,
    /// True when the iteration met a gradient, step-size or cost-plateau
    /// tolerance and the returned solution satisfies the derived-state boxes
    /// within [`FEASIBILITY_TOL`]. False means the iteration budget or the
    /// penalty rounds ran out first.
    pub converged: bool,
    /// Worst derived-state box violation of the returned solution.
    pub max_constraint_violation: f64,
    pub wall_time: Duration,
}

/// The estimate at one time step together with the fitted trajectory.
///
/// Minimizers are not unique in general; different warm starts may reach
/// different `x_hat_seq` with identical fit quality, so only `z_hat` and
/// feasibility are contractual.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub t: u64,
    pub z_hat: DVector<f64>,
    pub x_hat_seq: Vec<DVector<f64>>,
    pub w_hat_seq: Vec<DVector<f64>>,
    pub objective_value: f64,
    pub solver_stats: SolverStats,
}

/// Evaluates the discounted objective for a candidate decision
/// `(x_hat_t0, w_hat_seq)` with derived outputs `y_hat_seq`.
pub fn eval_objective(
    config: &FieConfig,
    x_hat_t0: &DVector<f64>,
    w_hat_seq: &[DVector<f64>],
    y_hat_seq: &[DVector<f64>],
    prior: &PriorData,
    t: u64,
) -> Result<f64> {
    config.validate()?;
    if t < prior.t0 {
        return Err(Error::InvalidInput(format!(
            "solve time {t} precedes initial time {}",
            prior.t0
        )));
    }
    let horizon = (t - prior.t0) as usize;
    if prior.w_bar.len() != horizon {
        return Err(Error::dim("prior noise estimates", horizon, prior.w_bar.len()));
    }
    if prior.y_bar.len() != horizon {
        return Err(Error::dim("prior output estimates", horizon, prior.y_bar.len()));
    }
    if w_hat_seq.len() != horizon {
        return Err(Error::dim("decision noise sequence", horizon, w_hat_seq.len()));
    }
    if y_hat_seq.len() != horizon {
        return Err(Error::dim("derived output sequence", horizon, y_hat_seq.len()));
    }
    if x_hat_t0.len() != prior.x_bar.len() {
        return Err(Error::dim("initial state", prior.x_bar.len(), x_hat_t0.len()));
    }
    Ok(eval_objective_unchecked(
        config, x_hat_t0, w_hat_seq, y_hat_seq, prior, horizon,
    ))
}

/// Objective evaluation without input validation; shared with the solver.
pub(crate) fn eval_objective_unchecked(
    config: &FieConfig,
    x_hat_t0: &DVector<f64>,
    w_hat_seq: &[DVector<f64>],
    y_hat_seq: &[DVector<f64>],
    prior: &PriorData,
    horizon: usize,
) -> f64 {
    let eta = config.eta;
    let prior_discount = eta.powi(horizon as i32);
    let dx = x_hat_t0 - &prior.x_bar;
    match &config.objective {
        FieObjective::Quadratic { p, q, r } => {
            let mut value = 2.0 * prior_discount * quad_form(p, &dx);
            // stage k has discount eta^(horizon - 1 - k)
            for k in 0..horizon {
                let d = eta.powi((horizon - 1 - k) as i32);
                let dw = &w_hat_seq[k] - &prior.w_bar[k];
                let dy = &y_hat_seq[k] - &prior.y_bar[k];
                value += 2.0 * d * (quad_form(q, &dw) + quad_form(r, &dy));
            }
            value
        }
        FieObjective::General {
            alpha2,
            sigma_w,
            sigma_y,
        } => {
            let mut value = prior_discount * alpha2.eval(2.0 * dx.norm());
            for k in 0..horizon {
                let d = eta.powi((horizon - 1 - k) as i32);
                let dw = &w_hat_seq[k] - &prior.w_bar[k];
                let dy = &y_hat_seq[k] - &prior.y_bar[k];
                value += d * (sigma_w.eval(2.0 * dw.norm()) + sigma_y.eval(2.0 * dy.norm()));
            }
            value
        }
    }
}

fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

/// Solves the estimation problem at time `t` from a cold start.
pub fn solve_fie(
    model: &SystemModel,
    config: &FieConfig,
    prior: &PriorData,
    t: u64,
) -> Result<EstimateRecord> {
    solve_fie_with_warm_start(model, config, prior, t, None)
}

/// Runs the estimator over a whole measurement sequence: one solve per time
/// step `t in [t0+1, t0+len]`, each warm-started from the previous optimum
/// extended by one zero-noise step. Noise estimates are zero and output
/// estimates equal the measurements.
///
/// Steps that exhaust the iteration budget are still recorded (with
/// `converged = false`). Their iterate also feeds the next warm start: the
/// inner solvers only ever descend from the warm start they were given, so
/// the latest iterate is never worse than re-extending an older one.
pub fn run_fie_sequence(
    model: &SystemModel,
    config: &FieConfig,
    x_bar_t0: &DVector<f64>,
    measurements: &[DVector<f64>],
    t0: u64,
) -> Result<Vec<EstimateRecord>> {
    if measurements.is_empty() {
        return Err(Error::InvalidInput(
            "run_fie_sequence needs at least one measurement".into(),
        ));
    }
    let n_w = model.dims().n_w;
    let mut records = Vec::with_capacity(measurements.len());
    let mut warm_x0 = model.state_set().project(x_bar_t0);
    let mut warm_w: Vec<DVector<f64>> = Vec::new();
    for step in 1..=measurements.len() {
        let t = t0 + step as u64;
        let prior = PriorData::from_measurements(t0, x_bar_t0.clone(), &measurements[..step], n_w);
        // extend the warm start with zero-noise steps up to the new horizon
        while warm_w.len() < step {
            warm_w.push(model.noise_set().project(&DVector::zeros(n_w)));
        }
        let record =
            solve_fie_with_warm_start(model, config, &prior, t, Some((&warm_x0, &warm_w)))?;
        warm_x0 = record.x_hat_seq[0].clone();
        warm_w = record.w_hat_seq.clone();
        records.push(record);
    }
    Ok(records)
}
