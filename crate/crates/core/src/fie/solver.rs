//! Shooting solver for the discounted estimation objective.
//!
//! Decision variables are the initial state and the noise sequence; states
//! and outputs are recovered by exact rollout. Decision-variable boxes are
//! handled by projection inside the step acceptance, derived-state boxes by
//! a growing quadratic exterior penalty.
//!
//! The quadratic objective is a weighted sum of squares, so each iteration
//! linearizes the rollout and solves the damped normal equations. That
//! linear-quadratic subproblem has the usual stagewise structure, and one
//! backward value-function sweep plus one forward substitution solve it in
//! time linear in the horizon; forming the dense normal equations would cost
//! cubic time and dominate long-horizon runs. The general class-K objective
//! is not a sum of squares and runs projected gradient descent with
//! backtracking instead, reusing the same adjoint gradient.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::symmetric_sqrt;
use crate::model::{BoxSet, SystemModel};

use super::{
    eval_objective_unchecked, EstimateRecord, FieConfig, FieObjective, PriorData, SolverStats,
    FEASIBILITY_TOL,
};

/// Analytic gradient of the pure objective (no constraint penalty) with
/// respect to the decision `(x0, w_seq)`, propagated through the rollout by
/// one adjoint sweep. Useful for validating hand-written model Jacobians
/// against finite differences.
pub fn objective_gradient(
    model: &SystemModel,
    config: &FieConfig,
    prior: &PriorData,
    x0: &DVector<f64>,
    w_seq: &[DVector<f64>],
    t: u64,
) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    config.validate()?;
    if t < prior.t0 {
        return Err(Error::InvalidInput(format!(
            "solve time {t} precedes initial time {}",
            prior.t0
        )));
    }
    let horizon = (t - prior.t0) as usize;
    if w_seq.len() != horizon || prior.w_bar.len() != horizon || prior.y_bar.len() != horizon {
        return Err(Error::dim("noise sequence", horizon, w_seq.len()));
    }
    if x0.len() != model.dims().n_x {
        return Err(Error::dim("initial state", model.dims().n_x, x0.len()));
    }
    let mut ws = Workspace::new(model, config, prior, horizon)?;
    ws.mu = 0.0;
    let iterate = ws.evaluate(x0.clone(), w_seq.to_vec());
    let jac = ws.jacobians(&iterate);
    Ok(ws.gradient(&iterate, &jac))
}

/// Solves the estimation problem at time `t`, optionally starting from a
/// caller-supplied decision `(x0, noise sequence)` — typically the previous
/// optimum extended by one step.
pub fn solve_fie_with_warm_start(
    model: &SystemModel,
    config: &FieConfig,
    prior: &PriorData,
    t: u64,
    warm: Option<(&DVector<f64>, &[DVector<f64>])>,
) -> Result<EstimateRecord> {
    let clock = Instant::now();
    config.validate()?;
    let dims = model.dims();
    if t < prior.t0 {
        return Err(Error::InvalidInput(format!(
            "solve time {t} precedes initial time {}",
            prior.t0
        )));
    }
    let horizon = (t - prior.t0) as usize;
    if prior.x_bar.len() != dims.n_x {
        return Err(Error::dim("prior state", dims.n_x, prior.x_bar.len()));
    }
    if prior.w_bar.len() != horizon {
        return Err(Error::dim("prior noise estimates", horizon, prior.w_bar.len()));
    }
    if prior.y_bar.len() != horizon {
        return Err(Error::dim("prior output estimates", horizon, prior.y_bar.len()));
    }
    for w in &prior.w_bar {
        if w.len() != dims.n_w {
            return Err(Error::dim("prior noise estimate", dims.n_w, w.len()));
        }
    }
    for y in &prior.y_bar {
        if y.len() != dims.n_y {
            return Err(Error::dim("prior output estimate", dims.n_y, y.len()));
        }
    }
    if let FieObjective::Quadratic { p, q, r } = &config.objective {
        if p.nrows() != dims.n_x {
            return Err(Error::dim("prior weight P", dims.n_x, p.nrows()));
        }
        if q.nrows() != dims.n_w {
            return Err(Error::dim("noise weight Q", dims.n_w, q.nrows()));
        }
        if r.nrows() != dims.n_y {
            return Err(Error::dim("output weight R", dims.n_y, r.nrows()));
        }
    }

    // initial decision: warm start or prior, projected onto the boxes
    let (x0_init, w_init) = match warm {
        Some((x0, w)) => {
            if x0.len() != dims.n_x {
                return Err(Error::dim("warm-start state", dims.n_x, x0.len()));
            }
            if w.len() != horizon {
                return Err(Error::dim("warm-start noise sequence", horizon, w.len()));
            }
            for wk in w {
                if wk.len() != dims.n_w {
                    return Err(Error::dim("warm-start noise", dims.n_w, wk.len()));
                }
            }
            (x0.clone(), w.to_vec())
        }
        None => (prior.x_bar.clone(), prior.w_bar.clone()),
    };
    let x0_init = model.state_set().project(&x0_init);
    let w_init: Vec<DVector<f64>> = w_init
        .iter()
        .map(|w| model.noise_set().project(w))
        .collect();

    let mut ws = Workspace::new(model, config, prior, horizon)?;
    let mut iterate = ws.evaluate(x0_init, w_init);

    let settings = &config.solver;
    let state_unconstrained = model.state_set().is_unbounded();
    let mut total_iters = 0;
    let mut penalty_rounds = 0;
    let mut inner_converged;
    let mut final_grad;
    loop {
        let outcome = match &config.objective {
            FieObjective::Quadratic { .. } => ws.minimize_lm(&mut iterate),
            FieObjective::General { .. } => ws.minimize_gd(&mut iterate),
        };
        total_iters += outcome.iterations;
        inner_converged = outcome.converged;
        final_grad = outcome.grad_norm;
        let violation = ws.derived_state_violation(&iterate);
        if state_unconstrained
            || violation <= FEASIBILITY_TOL
            || penalty_rounds >= settings.max_penalty_rounds
        {
            break;
        }
        ws.mu *= settings.penalty_growth;
        penalty_rounds += 1;
        // re-evaluate under the new penalty weight before resuming
        iterate = ws.evaluate(iterate.x0.clone(), iterate.w.clone());
    }

    let violation = ws.derived_state_violation(&iterate);
    let converged =
        inner_converged && (state_unconstrained || violation <= FEASIBILITY_TOL);
    let z_hat = model.phi(iterate.states.last().expect("rollout has a final state"));
    Ok(EstimateRecord {
        t,
        z_hat,
        x_hat_seq: iterate.states,
        w_hat_seq: iterate.w,
        objective_value: iterate.objective,
        solver_stats: SolverStats {
            iterations: total_iters,
            final_grad_norm: final_grad,
            penalty_rounds,
            converged,
            max_constraint_violation: violation,
            wall_time: clock.elapsed(),
        },
    })
}

/// A decision point with its rollout and cost split.
struct Iterate {
    x0: DVector<f64>,
    w: Vec<DVector<f64>>,
    /// Rolled-out states, `horizon + 1` entries.
    states: Vec<DVector<f64>>,
    /// Derived outputs, `horizon` entries.
    outputs: Vec<DVector<f64>>,
    /// Pure objective value (no penalty).
    objective: f64,
    /// Exterior penalty on derived-state box violations.
    penalty: f64,
}

impl Iterate {
    fn total(&self) -> f64 {
        self.objective + self.penalty
    }
}

struct InnerOutcome {
    iterations: usize,
    converged: bool,
    grad_norm: f64,
}

/// Per-stage linearization of the residual structure.
struct StageLin {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// Scaled output-residual Jacobians and residual.
    cy: DMatrix<f64>,
    dy: DMatrix<f64>,
    ry: DVector<f64>,
    /// Normal-equation contribution of the noise residual: `2 d_k Q` and
    /// `2 d_k Q (w_k - w_bar_k)`. Precomputed here so the backward sweep,
    /// which may run several times per iteration while the damping adapts,
    /// avoids the cubic-in-`n_w` product.
    qtq: DMatrix<f64>,
    qtr: DVector<f64>,
}

struct Workspace<'a> {
    model: &'a SystemModel,
    config: &'a FieConfig,
    prior: &'a PriorData,
    horizon: usize,
    /// Symmetric square roots of the prior and output weights (quadratic
    /// path); the noise weight enters the sweep through its normal-equation
    /// form and needs no root.
    p_sqrt: Option<DMatrix<f64>>,
    r_sqrt: Option<DMatrix<f64>>,
    /// Current exterior penalty weight (0 while the state set is unbounded).
    mu: f64,
}

impl<'a> Workspace<'a> {
    fn new(
        model: &'a SystemModel,
        config: &'a FieConfig,
        prior: &'a PriorData,
        horizon: usize,
    ) -> Result<Self> {
        let (p_sqrt, r_sqrt) = match &config.objective {
            FieObjective::Quadratic { p, q, r } => {
                symmetric_sqrt(q)?; // weight validation only
                (Some(symmetric_sqrt(p)?), Some(symmetric_sqrt(r)?))
            }
            FieObjective::General { .. } => (None, None),
        };
        let mu = if model.state_set().is_unbounded() {
            0.0
        } else {
            config.solver.penalty_weight_init
        };
        Ok(Workspace {
            model,
            config,
            prior,
            horizon,
            p_sqrt,
            r_sqrt,
            mu,
        })
    }

    fn t0(&self) -> u64 {
        self.prior.t0
    }

    fn stage_discount(&self, k: usize) -> f64 {
        self.config.eta.powi((self.horizon - 1 - k) as i32)
    }

    fn prior_discount(&self) -> f64 {
        self.config.eta.powi(self.horizon as i32)
    }

    fn evaluate(&self, x0: DVector<f64>, w: Vec<DVector<f64>>) -> Iterate {
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut outputs = Vec::with_capacity(self.horizon);
        states.push(x0.clone());
        for k in 0..self.horizon {
            let t = self.t0() + k as u64;
            let xk = &states[k];
            outputs.push(self.model.h(xk, &w[k], t));
            let next = self.model.f(xk, &w[k], t);
            states.push(next);
        }
        let objective =
            eval_objective_unchecked(self.config, &x0, &w, &outputs, self.prior, self.horizon);
        let penalty = self.penalty_value(&states);
        Iterate {
            x0,
            w,
            states,
            outputs,
            objective,
            penalty,
        }
    }

    fn penalty_value(&self, states: &[DVector<f64>]) -> f64 {
        if self.mu == 0.0 {
            return 0.0;
        }
        let set = self.model.state_set();
        let mut acc = 0.0;
        for x in states.iter().skip(1) {
            let clamped = set.project(x);
            acc += (x - clamped).norm_squared();
        }
        self.mu * acc
    }

    fn derived_state_violation(&self, iterate: &Iterate) -> f64 {
        let set = self.model.state_set();
        iterate
            .states
            .iter()
            .skip(1)
            .map(|x| set.violation(x))
            .fold(0.0, f64::max)
    }

    /// Gradient of the penalized objective with respect to the decision
    /// `(x0, w)`, by one adjoint sweep through the rollout.
    fn gradient(
        &self,
        iterate: &Iterate,
        jac: &[(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)],
    ) -> (DVector<f64>, Vec<DVector<f64>>) {
        let horizon = self.horizon;
        let set = self.model.state_set();
        let pen_grad = |x: &DVector<f64>| -> DVector<f64> {
            if self.mu == 0.0 {
                DVector::zeros(x.len())
            } else {
                (x - set.project(x)) * (2.0 * self.mu)
            }
        };
        let mut grad_w = vec![DVector::zeros(0); horizon];
        let mut costate = if horizon > 0 {
            pen_grad(&iterate.states[horizon])
        } else {
            DVector::zeros(iterate.x0.len())
        };
        for k in (0..horizon).rev() {
            let (a, b, c, d) = &jac[k];
            let gy = self.output_cost_grad(k, &iterate.outputs[k]);
            let gw = self.noise_cost_grad(k, &iterate.w[k]);
            grad_w[k] = gw + d.transpose() * &gy + b.transpose() * &costate;
            let mut next = c.transpose() * &gy + a.transpose() * &costate;
            if k >= 1 {
                next += pen_grad(&iterate.states[k]);
            }
            costate = next;
        }
        let grad_x0 = self.prior_cost_grad(&iterate.x0) + costate;
        (grad_x0, grad_w)
    }

    fn output_cost_grad(&self, k: usize, y: &DVector<f64>) -> DVector<f64> {
        let d = self.stage_discount(k);
        let dy = y - &self.prior.y_bar[k];
        match &self.config.objective {
            FieObjective::Quadratic { r, .. } => r * dy * (4.0 * d),
            FieObjective::General { sigma_y, .. } => class_k_grad(sigma_y, &dy, d),
        }
    }

    fn noise_cost_grad(&self, k: usize, w: &DVector<f64>) -> DVector<f64> {
        let d = self.stage_discount(k);
        let dw = w - &self.prior.w_bar[k];
        match &self.config.objective {
            FieObjective::Quadratic { q, .. } => q * dw * (4.0 * d),
            FieObjective::General { sigma_w, .. } => class_k_grad(sigma_w, &dw, d),
        }
    }

    fn prior_cost_grad(&self, x0: &DVector<f64>) -> DVector<f64> {
        let d = self.prior_discount();
        let dx = x0 - &self.prior.x_bar;
        match &self.config.objective {
            FieObjective::Quadratic { p, .. } => p * dx * (4.0 * d),
            FieObjective::General { alpha2, .. } => class_k_grad(alpha2, &dx, d),
        }
    }

    fn jacobians(
        &self,
        iterate: &Iterate,
    ) -> Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        (0..self.horizon)
            .map(|k| {
                let t = self.t0() + k as u64;
                let (a, b) = self.model.f_jacobian(&iterate.states[k], &iterate.w[k], t);
                let (c, d) = self.model.h_jacobian(&iterate.states[k], &iterate.w[k], t);
                (a, b, c, d)
            })
            .collect()
    }

    /// Infinity norm of the gradient with bound-blocked components zeroed:
    /// at an active lower (upper) bound only a descent direction pointing
    /// into the box counts.
    fn projected_grad_norm(
        &self,
        iterate: &Iterate,
        grad_x0: &DVector<f64>,
        grad_w: &[DVector<f64>],
    ) -> f64 {
        let mut worst = projected_component_norm(&iterate.x0, grad_x0, self.model.state_set());
        for (wk, gk) in iterate.w.iter().zip(grad_w) {
            worst = worst.max(projected_component_norm(wk, gk, self.model.noise_set()));
        }
        worst
    }

    /// Levenberg-Marquardt outer loop for the quadratic objective.
    ///
    /// Termination mirrors the usual least-squares conventions: a projected
    /// gradient below `grad_tol` (scaled by the cost magnitude), a relative
    /// step below `step_tol`, a cost plateau at floating-point resolution,
    /// or a line search that cannot find any decrease — all of these count
    /// as converged. Only exhausting `max_iter` reports `converged = false`.
    fn minimize_lm(&self, iterate: &mut Iterate) -> InnerOutcome {
        let settings = &self.config.solver;
        let mut lambda = 1e-6;
        let mut converged = false;
        let mut grad_norm = f64::INFINITY;
        let mut iterations = 0;
        while iterations < settings.max_iter {
            iterations += 1;
            let jac = self.jacobians(iterate);
            let (gx0, gw) = self.gradient(iterate, &jac);
            grad_norm = self.projected_grad_norm(iterate, &gx0, &gw);
            if grad_norm <= settings.grad_tol * (1.0 + iterate.total()) {
                converged = true;
                break;
            }
            let stages = self.linearize(iterate, &jac);
            let penalties = self.penalty_linearization(iterate);
            let (prior_jtj, prior_jtr) = self.prior_normal_terms(iterate);

            let mut accepted = false;
            let mut step_rel = f64::INFINITY;
            let mut decrease = 0.0;
            for _attempt in 0..30 {
                let step = match lq_sweep(&stages, &penalties, &prior_jtj, &prior_jtr, lambda) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                };
                let cand_x0 = self
                    .model
                    .state_set()
                    .project(&(&iterate.x0 + &step.dx0));
                let cand_w: Vec<DVector<f64>> = iterate
                    .w
                    .iter()
                    .zip(&step.dw)
                    .map(|(w, dw)| self.model.noise_set().project(&(w + dw)))
                    .collect();
                let candidate = self.evaluate(cand_x0, cand_w);
                if candidate.total() < iterate.total() {
                    step_rel = decision_distance(iterate, &candidate)
                        / (1.0 + decision_norm(iterate));
                    decrease = iterate.total() - candidate.total();
                    *iterate = candidate;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                lambda *= 4.0;
            }
            if !accepted {
                // no damped step decreases the cost: the iterate is at the
                // resolution limit of the arithmetic
                converged = true;
                break;
            }
            if step_rel <= settings.step_tol || decrease <= 1e-13 * (1.0 + iterate.total()) {
                converged = true;
                break;
            }
        }
        if converged {
            // refresh the reported gradient at the final iterate
            let jac = self.jacobians(iterate);
            let (gx0, gw) = self.gradient(iterate, &jac);
            grad_norm = self.projected_grad_norm(iterate, &gx0, &gw);
        }
        InnerOutcome {
            iterations,
            converged,
            grad_norm,
        }
    }

    /// Projected gradient descent with backtracking, for the general
    /// objective. Shares the termination semantics of [`Self::minimize_lm`].
    fn minimize_gd(&self, iterate: &mut Iterate) -> InnerOutcome {
        let settings = &self.config.solver;
        let mut alpha = 1.0;
        let mut converged = false;
        let mut grad_norm = f64::INFINITY;
        let mut iterations = 0;
        while iterations < settings.max_iter {
            iterations += 1;
            let jac = self.jacobians(iterate);
            let (gx0, gw) = self.gradient(iterate, &jac);
            grad_norm = self.projected_grad_norm(iterate, &gx0, &gw);
            if grad_norm <= settings.grad_tol * (1.0 + iterate.total()) {
                converged = true;
                break;
            }
            let mut accepted = false;
            let mut step_rel = f64::INFINITY;
            let mut decrease = 0.0;
            for _ in 0..60 {
                let cand_x0 = self
                    .model
                    .state_set()
                    .project(&(&iterate.x0 - &gx0 * alpha));
                let cand_w: Vec<DVector<f64>> = iterate
                    .w
                    .iter()
                    .zip(&gw)
                    .map(|(w, g)| self.model.noise_set().project(&(w - g * alpha)))
                    .collect();
                let candidate = self.evaluate(cand_x0, cand_w);
                let moved = decision_distance_sq(iterate, &candidate);
                if moved == 0.0 {
                    alpha *= 0.5;
                    continue;
                }
                // sufficient decrease along the projected arc
                if candidate.total() <= iterate.total() - 1e-4 / alpha * moved {
                    step_rel =
                        decision_distance(iterate, &candidate) / (1.0 + decision_norm(iterate));
                    decrease = iterate.total() - candidate.total();
                    *iterate = candidate;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                converged = true;
                break;
            }
            if step_rel <= settings.step_tol || decrease <= 1e-13 * (1.0 + iterate.total()) {
                converged = true;
                break;
            }
            alpha = (alpha * 1.5).min(1e6);
        }
        InnerOutcome {
            iterations,
            converged,
            grad_norm,
        }
    }

    /// Scaled residual linearization of every stage (quadratic path only).
    fn linearize(
        &self,
        iterate: &Iterate,
        jac: &[(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)],
    ) -> Vec<StageLin> {
        let r_sqrt = self.r_sqrt.as_ref().expect("quadratic path");
        let q_full = match &self.config.objective {
            FieObjective::Quadratic { q, .. } => q,
            _ => unreachable!("quadratic path"),
        };
        (0..self.horizon)
            .map(|k| {
                let scale2 = 2.0 * self.stage_discount(k);
                let scale = scale2.sqrt();
                let (a, b, c, d) = &jac[k];
                let ry = r_sqrt * (&iterate.outputs[k] - &self.prior.y_bar[k]) * scale;
                let cy = r_sqrt * c * scale;
                let dy = r_sqrt * d * scale;
                let qtq = q_full * scale2;
                let qtr = q_full * (&iterate.w[k] - &self.prior.w_bar[k]) * scale2;
                StageLin {
                    a: a.clone(),
                    b: b.clone(),
                    cy,
                    dy,
                    ry,
                    qtq,
                    qtr,
                }
            })
            .collect()
    }

    /// Gauss-Newton contribution of the penalty at each derived state, as
    /// the diagonal of `G'G` and the vector `G'r` (indices `1..=horizon`;
    /// index 0 is unused).
    fn penalty_linearization(&self, iterate: &Iterate) -> Vec<(DVector<f64>, DVector<f64>)> {
        let n_x = iterate.x0.len();
        let set = self.model.state_set();
        (0..=self.horizon)
            .map(|k| {
                if k == 0 || self.mu == 0.0 {
                    (DVector::zeros(n_x), DVector::zeros(n_x))
                } else {
                    let x = &iterate.states[k];
                    let clamped = set.project(x);
                    let mut gtg = DVector::zeros(n_x);
                    let mut gtr = DVector::zeros(n_x);
                    for i in 0..n_x {
                        if x[i] != clamped[i] {
                            gtg[i] = self.mu;
                            gtr[i] = self.mu * (x[i] - clamped[i]);
                        }
                    }
                    (gtg, gtr)
                }
            })
            .collect()
    }

    /// `J'J` and `J'r` of the prior residual block, i.e. `2 eta^T P` and
    /// `2 eta^T P (x0 - x_bar)`.
    fn prior_normal_terms(&self, iterate: &Iterate) -> (DMatrix<f64>, DVector<f64>) {
        let p_sqrt = self.p_sqrt.as_ref().expect("quadratic path");
        let scale2 = 2.0 * self.prior_discount();
        let dx = &iterate.x0 - &self.prior.x_bar;
        let jtj = (p_sqrt * p_sqrt) * scale2;
        let jtr = p_sqrt * (p_sqrt * dx) * scale2;
        (jtj, jtr)
    }
}

fn class_k_grad(f: &crate::kfunction::KFunction, v: &DVector<f64>, discount: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm == 0.0 {
        return DVector::zeros(v.len());
    }
    v * (discount * f.derivative(2.0 * norm) * 2.0 / norm)
}

fn projected_component_norm(value: &DVector<f64>, grad: &DVector<f64>, set: &BoxSet) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..value.len() {
        let mut g = grad[i];
        if value[i] <= set.lower()[i] {
            g = g.min(0.0);
        }
        if value[i] >= set.upper()[i] {
            g = g.max(0.0);
        }
        worst = worst.max(g.abs());
    }
    worst
}

fn decision_norm(it: &Iterate) -> f64 {
    let mut worst = it.x0.amax();
    for w in &it.w {
        worst = worst.max(w.amax());
    }
    worst
}

fn decision_distance(a: &Iterate, b: &Iterate) -> f64 {
    let mut worst = (&a.x0 - &b.x0).amax();
    for (wa, wb) in a.w.iter().zip(&b.w) {
        worst = worst.max((wa - wb).amax());
    }
    worst
}

fn decision_distance_sq(a: &Iterate, b: &Iterate) -> f64 {
    let mut acc = (&a.x0 - &b.x0).norm_squared();
    for (wa, wb) in a.w.iter().zip(&b.w) {
        acc += (wa - wb).norm_squared();
    }
    acc
}

struct LqStep {
    dx0: DVector<f64>,
    dw: Vec<DVector<f64>>,
}

/// Solves the damped Gauss-Newton subproblem
///
/// ```text
/// min  ||r_prior + P~ dx0||^2 + damping(dx0)
///    + sum_k ( ||ry_k + Cy_k dx_k + Dy_k dw_k||^2
///            + (w residual quadratic via qtq_k, qtr_k) + damping(dw_k)
///            + dx_k' diag(gtg_k) dx_k + 2 gtr_k' dx_k )
///    + dx_T' diag(gtg_T) dx_T + 2 gtr_T' dx_T
/// s.t. dx_{k+1} = A_k dx_k + B_k dw_k
/// ```
///
/// by a backward Riccati-style sweep over the stages and a forward
/// substitution. Returns `None` when the damped noise Hessian loses positive
/// definiteness (the caller then raises `lambda`).
fn lq_sweep(
    stages: &[StageLin],
    penalties: &[(DVector<f64>, DVector<f64>)],
    prior_jtj: &DMatrix<f64>,
    prior_jtr: &DVector<f64>,
    lambda: f64,
) -> Option<LqStep> {
    let horizon = stages.len();
    let n_x = prior_jtr.len();
    let mut phi = DMatrix::<f64>::zeros(n_x, n_x);
    let mut psi = DVector::<f64>::zeros(n_x);
    if horizon > 0 {
        let (gtg, gtr) = &penalties[horizon];
        phi += DMatrix::from_diagonal(gtg);
        psi += gtr;
    }
    let mut gains: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(horizon);
    for k in (0..horizon).rev() {
        let stage = &stages[k];
        let n_w = stage.qtq.ncols();
        let phi_b = &phi * &stage.b;
        let mut h_ww =
            stage.dy.transpose() * &stage.dy + &stage.qtq + stage.b.transpose() * &phi_b;
        // Marquardt scaling: damp relative to the local curvature so that
        // heavily discounted (nearly flat) directions are not frozen out
        for i in 0..n_w {
            h_ww[(i, i)] += lambda * h_ww[(i, i)].max(1e-12);
        }
        let h_wx = stage.dy.transpose() * &stage.cy + phi_b.transpose() * &stage.a;
        let g_w =
            stage.dy.transpose() * &stage.ry + &stage.qtr + stage.b.transpose() * &psi;
        let chol = nalgebra::Cholesky::new(h_ww)?;
        let k_gain = -chol.solve(&h_wx);
        let k_offset = -chol.solve(&g_w);
        let mut phi_next = stage.cy.transpose() * &stage.cy
            + stage.a.transpose() * &phi * &stage.a
            + h_wx.transpose() * &k_gain;
        let mut psi_next = stage.cy.transpose() * &stage.ry
            + stage.a.transpose() * &psi
            + h_wx.transpose() * &k_offset;
        if k >= 1 {
            let (gtg, gtr) = &penalties[k];
            phi_next += DMatrix::from_diagonal(gtg);
            psi_next += gtr;
        }
        phi = (&phi_next + phi_next.transpose()) * 0.5;
        psi = psi_next;
        gains.push((k_gain, k_offset));
    }
    gains.reverse();

    let mut h0 = prior_jtj + &phi;
    for i in 0..n_x {
        h0[(i, i)] += lambda * h0[(i, i)].max(1e-12);
    }
    let rhs = -(prior_jtr + &psi);
    let chol = nalgebra::Cholesky::new(h0)?;
    let dx0 = chol.solve(&rhs);

    let mut dw = Vec::with_capacity(horizon);
    let mut dx = dx0.clone();
    for (k, stage) in stages.iter().enumerate() {
        let (k_gain, k_offset) = &gains[k];
        let dwk = k_gain * &dx + k_offset;
        dx = &stage.a * &dx + &stage.b * &dwk;
        dw.push(dwk);
    }
    Some(LqStep { dx0, dw })
}
