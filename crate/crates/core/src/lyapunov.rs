//! Lyapunov certificates for linear functional observers.
//!
//! For the linear time-invariant system
//!
//! ```text
//! x+ = A x + B w,    y = C x + D w,    z = L x
//! ```
//!
//! a reduced-order functional observer `xi+ = N xi + J y`, `z_hat = P_xi xi`
//! exists whenever matrices `(N, J, P_xi, T)` with `N` Schur satisfy the
//! Sylvester-type conditions
//!
//! ```text
//! N T - T A + J C = 0,      P_xi T = L.
//! ```
//!
//! From a verified observer this module constructs the quadratic function
//! `W(x, x~) = || T (x - x~) ||_P^2` with `N' P N <= rho P`, `rho < 1`, and
//! gain constants making `W` a certified incremental Lyapunov function for
//! the virtual output: evaluated along any pair of trajectories it contracts
//! by `eta` per step up to noise and output increments. `W` is only positive
//! *semi*-definite in general — it vanishes on `ker T` — which is exactly
//! what separates functional estimation from full state estimation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{
    is_detectable, max_eig_symmetric, min_eig_symmetric, rank, spectral_radius,
};
use crate::model::{Dims, SystemModel};

/// Linear time-invariant system `x+ = Ax + Bw, y = Cx + Dw, z = Lx`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        l: DMatrix<f64>,
    ) -> Result<Self> {
        let n_x = a.nrows();
        if a.ncols() != n_x {
            return Err(Error::dim("A columns", n_x, a.ncols()));
        }
        if b.nrows() != n_x {
            return Err(Error::dim("B rows", n_x, b.nrows()));
        }
        if c.ncols() != n_x {
            return Err(Error::dim("C columns", n_x, c.ncols()));
        }
        if d.nrows() != c.nrows() {
            return Err(Error::dim("D rows", c.nrows(), d.nrows()));
        }
        if d.ncols() != b.ncols() {
            return Err(Error::dim("D columns", b.ncols(), d.ncols()));
        }
        if l.ncols() != n_x {
            return Err(Error::dim("L columns", n_x, l.ncols()));
        }
        Ok(LinearSystem { a, b, c, d, l })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_z(&self) -> usize {
        self.l.nrows()
    }

    /// Wraps the system as a [`SystemModel`] with analytic Jacobians, so the
    /// estimation machinery can operate on it directly.
    pub fn to_model(&self) -> SystemModel {
        let dims = Dims::new(self.n_x(), self.n_w(), self.n_y(), self.n_z())
            .expect("linear system dimensions are positive");
        let (a, b, c, d, l) = (
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
            self.l.clone(),
        );
        let (fa, fb) = (a.clone(), b.clone());
        let (hc, hd) = (c.clone(), d.clone());
        SystemModel::new(
            dims,
            Arc::new(move |x: &DVector<f64>, w: &DVector<f64>, _| &a * x + &b * w),
            Arc::new(move |x: &DVector<f64>, w: &DVector<f64>, _| &c * x + &d * w),
            Arc::new(move |x: &DVector<f64>| &l * x),
        )
        .with_f_jacobian(Arc::new(move |_, _, _| (fa.clone(), fb.clone())))
        .with_h_jacobian(Arc::new(move |_, _, _| (hc.clone(), hd.clone())))
    }
}

/// Reduced-order linear functional observer `xi+ = N xi + J y`,
/// `z_hat = P_xi xi`, with internal order `n_z <= n_xi <= n_x`.
#[derive(Debug, Clone)]
pub struct LinearFunctionalObserver {
    pub n: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub p_xi: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub xi0: DVector<f64>,
}

impl LinearFunctionalObserver {
    pub fn new(
        n: DMatrix<f64>,
        j: DMatrix<f64>,
        p_xi: DMatrix<f64>,
        t: DMatrix<f64>,
        xi0: DVector<f64>,
    ) -> Result<Self> {
        let n_xi = n.nrows();
        if n.ncols() != n_xi {
            return Err(Error::dim("N columns", n_xi, n.ncols()));
        }
        if j.nrows() != n_xi {
            return Err(Error::dim("J rows", n_xi, j.nrows()));
        }
        if p_xi.ncols() != n_xi {
            return Err(Error::dim("P_xi columns", n_xi, p_xi.ncols()));
        }
        if t.nrows() != n_xi {
            return Err(Error::dim("T rows", n_xi, t.nrows()));
        }
        if xi0.len() != n_xi {
            return Err(Error::dim("xi0", n_xi, xi0.len()));
        }
        let n_z = p_xi.nrows();
        let n_x = t.ncols();
        if n_xi < n_z || n_xi > n_x {
            return Err(Error::InvalidInput(format!(
                "observer order n_xi = {n_xi} must lie in [n_z = {n_z}, n_x = {n_x}]"
            )));
        }
        Ok(LinearFunctionalObserver { n, j, p_xi, t, xi0 })
    }

    pub fn order(&self) -> usize {
        self.n.nrows()
    }

    /// Replaces the initial internal state.
    pub fn with_initial_state(mut self, xi0: DVector<f64>) -> Result<Self> {
        if xi0.len() != self.order() {
            return Err(Error::dim("xi0", self.order(), xi0.len()));
        }
        self.xi0 = xi0;
        Ok(self)
    }

    /// The natural initialization from a prior state estimate: `xi0 = T x_bar`.
    pub fn initial_state_from_prior(&self, x_bar: &DVector<f64>) -> Result<DVector<f64>> {
        if x_bar.len() != self.t.ncols() {
            return Err(Error::dim("prior state", self.t.ncols(), x_bar.len()));
        }
        Ok(&self.t * x_bar)
    }
}

/// Result of [`verify_observer_conditions`].
#[derive(Debug, Clone)]
pub struct ObserverConditionsReport {
    /// `|| N T - T A + J C ||_F`
    pub sylvester_residual: f64,
    /// `|| P_xi T - L ||_F`
    pub functional_residual: f64,
    /// `rho(N)`
    pub spectral_radius: f64,
    pub passes: bool,
}

/// Checks the observer existence conditions: both residuals within `tol` and
/// `N` Schur stable.
pub fn verify_observer_conditions(
    sys: &LinearSystem,
    obs: &LinearFunctionalObserver,
    tol: f64,
) -> Result<ObserverConditionsReport> {
    if obs.t.ncols() != sys.n_x() {
        return Err(Error::dim("T columns", sys.n_x(), obs.t.ncols()));
    }
    if obs.j.ncols() != sys.n_y() {
        return Err(Error::dim("J columns", sys.n_y(), obs.j.ncols()));
    }
    if obs.p_xi.nrows() != sys.n_z() {
        return Err(Error::dim("P_xi rows", sys.n_z(), obs.p_xi.nrows()));
    }
    let sylvester = (&obs.n * &obs.t - &obs.t * &sys.a + &obs.j * &sys.c).norm();
    let functional = (&obs.p_xi * &obs.t - &sys.l).norm();
    let radius = spectral_radius(&obs.n);
    Ok(ObserverConditionsReport {
        sylvester_residual: sylvester,
        functional_residual: functional,
        spectral_radius: radius,
        passes: sylvester <= tol && functional <= tol && radius < 1.0,
    })
}

/// Solves the discounted Lyapunov inequality `N' P N <= rho P` with margin,
/// by summing the series for `M' P M - P = -I` where `M = N / sqrt(rho)`.
///
/// Requires `rho(N)^2 < rho < 1` so the series converges; the returned `P`
/// is symmetric positive definite and satisfies the inequality strictly
/// (`N' P N = rho (P - I)`).
pub fn solve_discounted_lyapunov(n: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    if !n.is_square() {
        return Err(Error::dim("N columns", n.nrows(), n.ncols()));
    }
    if !(rho < 1.0) {
        return Err(Error::InvalidInput(format!(
            "discount rho must satisfy rho < 1, got {rho}"
        )));
    }
    let radius2 = spectral_radius(n).powi(2);
    if rho <= radius2 {
        return Err(Error::Infeasible(format!(
            "discounted Lyapunov equation needs rho > rho(N)^2 = {radius2}, got {rho}"
        )));
    }
    let dim = n.nrows();
    let m = n / rho.sqrt();
    let mut p = DMatrix::<f64>::identity(dim, dim);
    // term_k = (M')^k M^k, accumulated until it falls below 1e-14
    let mut power = DMatrix::<f64>::identity(dim, dim); // M^k
    for _ in 0..200_000 {
        power = &power * &m;
        let term = power.transpose() * &power;
        let norm = term.norm();
        p += term;
        if norm < 1e-14 {
            // symmetrize away accumulation noise
            p = (&p + p.transpose()) * 0.5;
            return Ok(p);
        }
    }
    Err(Error::Infeasible(
        "discounted Lyapunov series did not converge; rho too close to rho(N)^2".into(),
    ))
}

/// A certified discounted Lyapunov function
/// `W(x, x~) = || T (x - x~) ||_P^2` with its decrease and sandwich gains.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub t: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Contraction factor of the Lyapunov matrix inequality.
    pub rho: f64,
    /// Per-step decrease factor `eta = (1 + eps) rho < 1`.
    pub eta: f64,
    /// Gain on `||w - w~||^2` in the decrease inequality.
    pub sigma_w_gain: f64,
    /// Gain on `||y - y~||^2` in the decrease inequality.
    pub sigma_y_gain: f64,
    /// `lambda_max(P_xi' P_xi) / lambda_min(P)`; bounds `||z - z~||^2 <= alpha1_gain * W`.
    pub alpha1_gain: f64,
    /// `lambda_max(T' P T)`; bounds `W <= alpha2_gain * ||x - x~||^2`.
    pub alpha2_gain: f64,
    /// When set, `W` carries the extra `||C (x - x~)||^2` term used by the
    /// current-measurement observer variant (`z_hat = P_xi xi + J1 y`). The
    /// strictly causal form (no term) is the default.
    pub output_term: Option<DMatrix<f64>>,
}

impl LyapunovCertificate {
    /// Evaluates `W(x, x~)`.
    pub fn w_delta(&self, x: &DVector<f64>, x_tilde: &DVector<f64>) -> f64 {
        let d = x - x_tilde;
        let td = &self.t * &d;
        let mut value = (td.transpose() * &self.p * &td)[(0, 0)];
        if let Some(c) = &self.output_term {
            value += (c * &d).norm_squared();
        }
        value
    }

    /// Switches on the current-measurement variant term `||C (x - x~)||^2`.
    pub fn with_output_term(mut self, c: DMatrix<f64>) -> Result<Self> {
        if c.ncols() != self.t.ncols() {
            return Err(Error::dim("C columns", self.t.ncols(), c.ncols()));
        }
        self.output_term = Some(c);
        Ok(self)
    }
}

/// Builds a Lyapunov certificate for a verified observer.
///
/// `rho` is picked as `rho(N)^2` plus a conditioning margin, `P` solves the
/// discounted Lyapunov equation, and the gains follow the quadratic decrease
/// chain through `T(x+ - x~+) = NT(x-x~) + (TB - JD)(w-w~) + J(y-y~)`:
///
/// ```text
/// eta          = (1 + eps) rho
/// sigma_y_gain = (2 (1 + eps) / eps) lambda_max(J' P J)
/// sigma_w_gain = (2 (1 + eps) / eps) lambda_max((TB - JD)' P (TB - JD))
/// ```
///
/// `epsilon = None` selects `eps = (1/rho - 1) / 2`, i.e. `eta = (1 + rho)/2`,
/// splitting the available headroom below 1.
pub fn build_certificate(
    sys: &LinearSystem,
    obs: &LinearFunctionalObserver,
    epsilon: Option<f64>,
) -> Result<LyapunovCertificate> {
    let report = verify_observer_conditions(sys, obs, 1e-8)?;
    if !report.passes {
        return Err(Error::Infeasible(format!(
            "observer conditions not satisfied: sylvester residual {:.3e}, functional residual {:.3e}, spectral radius {}",
            report.sylvester_residual, report.functional_residual, report.spectral_radius
        )));
    }
    let radius2 = report.spectral_radius.powi(2);
    let rho = radius2 + f64::max(1e-6, 0.01 * (1.0 - radius2));
    if rho >= 1.0 {
        return Err(Error::Infeasible(format!(
            "no decay factor below 1 exists for rho(N) = {}",
            report.spectral_radius
        )));
    }
    let p = solve_discounted_lyapunov(&obs.n, rho)?;
    let eps = match epsilon {
        Some(e) => {
            if e <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "epsilon must be positive, got {e}"
                )));
            }
            e
        }
        None => (1.0 / rho - 1.0) / 2.0,
    };
    let eta = (1.0 + eps) * rho;
    if eta >= 1.0 {
        return Err(Error::Infeasible(format!(
            "eta = (1 + epsilon) rho = {eta} is not below 1; decrease epsilon"
        )));
    }
    let gain_factor = 2.0 * (1.0 + eps) / eps;
    let jpj = obs.j.transpose() * &p * &obs.j;
    let tb_jd = &obs.t * &sys.b - &obs.j * &sys.d;
    let wpw = tb_jd.transpose() * &p * &tb_jd;
    let sigma_y_gain = gain_factor * max_eig_symmetric(&((&jpj + jpj.transpose()) * 0.5));
    let sigma_w_gain = gain_factor * max_eig_symmetric(&((&wpw + wpw.transpose()) * 0.5));
    let pxi_gram = obs.p_xi.transpose() * &obs.p_xi;
    let alpha1_gain = max_eig_symmetric(&pxi_gram) / min_eig_symmetric(&p);
    let tpt = obs.t.transpose() * &p * &obs.t;
    let alpha2_gain = max_eig_symmetric(&((&tpt + tpt.transpose()) * 0.5));
    Ok(LyapunovCertificate {
        t: obs.t.clone(),
        p,
        rho,
        eta,
        sigma_w_gain: sigma_w_gain.max(0.0),
        sigma_y_gain: sigma_y_gain.max(0.0),
        alpha1_gain,
        alpha2_gain,
        output_term: None,
    })
}

/// Result of [`verify_decrease_sampled`].
#[derive(Debug, Clone)]
pub struct DecreaseReport {
    /// Samples violating the decrease inequality or the sandwich lower bound.
    pub violations: usize,
    /// Smallest slack `rhs + tol - lhs` over all checks; negative means a
    /// violation occurred.
    pub worst_margin: f64,
}

/// Monte-Carlo check of the certificate inequalities on `n_samples` random
/// `(x, x~, w, w~)` tuples with standard normal entries:
///
/// ```text
/// W(x+, x~+) <= eta W(x, x~) + sigma_w ||w - w~||^2 + sigma_y ||y - y~||^2 + tol
/// ||z - z~||^2 <= alpha1_gain W(x, x~) + tol
/// ```
pub fn verify_decrease_sampled(
    cert: &LyapunovCertificate,
    sys: &LinearSystem,
    obs: &LinearFunctionalObserver,
    n_samples: usize,
    seed: u64,
    tol: f64,
) -> Result<DecreaseReport> {
    if cert.t.ncols() != sys.n_x() {
        return Err(Error::dim("certificate T columns", sys.n_x(), cert.t.ncols()));
    }
    if cert.p.nrows() != obs.order() {
        return Err(Error::dim("certificate order", obs.order(), cert.p.nrows()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut draw = |dim: usize| -> DVector<f64> {
        DVector::from_fn(dim, |_, _| normal.sample(&mut rng))
    };
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..n_samples {
        let x = draw(sys.n_x());
        let xt = draw(sys.n_x());
        let w = draw(sys.n_w());
        let wt = draw(sys.n_w());
        let x_next = &sys.a * &x + &sys.b * &w;
        let xt_next = &sys.a * &xt + &sys.b * &wt;
        let dy = &sys.c * (&x - &xt) + &sys.d * (&w - &wt);
        let lhs = cert.w_delta(&x_next, &xt_next);
        let rhs = cert.eta * cert.w_delta(&x, &xt)
            + cert.sigma_w_gain * (&w - &wt).norm_squared()
            + cert.sigma_y_gain * dy.norm_squared();
        let margin = rhs + tol - lhs;
        worst = worst.min(margin);
        if margin < 0.0 {
            violations += 1;
        }
        let dz = &sys.l * (&x - &xt);
        let sandwich_margin = cert.alpha1_gain * cert.w_delta(&x, &xt) + tol - dz.norm_squared();
        worst = worst.min(sandwich_margin);
        if sandwich_margin < 0.0 {
            violations += 1;
        }
    }
    Ok(DecreaseReport {
        violations,
        worst_margin: worst,
    })
}

/// Gain selection for [`design_full_order_observer`].
#[derive(Debug, Clone)]
pub enum ObserverDesign {
    /// Place all observer eigenvalues at the origin (single output only).
    Deadbeat,
    /// Steady-state Kalman-style gain from the Riccati recursion with
    /// process weight `qn` and measurement weight `rn` (both SPD).
    Riccati { qn: DMatrix<f64>, rn: DMatrix<f64> },
}

/// Designs a full-order observer realizing the functional-observer structure
/// with `T = I`, `N = A - J C`, `P_xi = L`.
///
/// Reduced-order synthesis (`n_xi < n_x`) is out of scope here: externally
/// designed matrices are consumed through the verification path instead.
pub fn design_full_order_observer(
    sys: &LinearSystem,
    mode: ObserverDesign,
) -> Result<LinearFunctionalObserver> {
    let n_x = sys.n_x();
    let j = match mode {
        ObserverDesign::Riccati { qn, rn } => {
            crate::linalg::check_spd(&qn, "Qn")?;
            crate::linalg::check_spd(&rn, "Rn")?;
            if qn.nrows() != n_x {
                return Err(Error::dim("Qn", n_x, qn.nrows()));
            }
            if rn.nrows() != sys.n_y() {
                return Err(Error::dim("Rn", sys.n_y(), rn.nrows()));
            }
            if !is_detectable(&sys.a, &sys.c) {
                return Err(Error::Design(
                    "the pair (A, C) is not detectable; no stable observer gain exists".into(),
                ));
            }
            riccati_gain(&sys.a, &sys.c, &qn, &rn)?
        }
        ObserverDesign::Deadbeat => {
            if sys.n_y() != 1 {
                return Err(Error::Unsupported(
                    "deadbeat design handles single-output systems only".into(),
                ));
            }
            deadbeat_gain(&sys.a, &sys.c)?
        }
    };
    let obs = LinearFunctionalObserver::new(
        &sys.a - &j * &sys.c,
        j,
        sys.l.clone(),
        DMatrix::identity(n_x, n_x),
        DVector::zeros(n_x),
    )?;
    Ok(obs)
}

/// Iterates the filter Riccati recursion to its fixed point and returns the
/// steady-state observer gain `J = A P C' (C P C' + Rn)^-1`.
fn riccati_gain(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    qn: &DMatrix<f64>,
    rn: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut p = DMatrix::<f64>::identity(n, n);
    for _ in 0..100_000 {
        let cpct = c * &p * c.transpose() + rn;
        let inv = cpct.clone().try_inverse().ok_or_else(|| {
            Error::Design("innovation matrix in the Riccati recursion is singular".into())
        })?;
        let apct = a * &p * c.transpose();
        let next = a * &p * a.transpose() - &apct * &inv * apct.transpose() + qn;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).norm();
        p = next;
        if delta <= 1e-12 * (1.0 + p.norm()) {
            let cpct = c * &p * c.transpose() + rn;
            let inv = cpct.try_inverse().ok_or_else(|| {
                Error::Design("innovation matrix in the Riccati recursion is singular".into())
            })?;
            let j = a * &p * c.transpose() * inv;
            let radius = spectral_radius(&(a - &j * c));
            if radius >= 1.0 {
                return Err(Error::Design(format!(
                    "Riccati gain failed to stabilize the observer (rho = {radius})"
                )));
            }
            return Ok(j);
        }
        if p.norm() > 1e12 {
            return Err(Error::Design(
                "Riccati recursion diverged; the pair (A, C) is not detectable".into(),
            ));
        }
    }
    Err(Error::Design("Riccati recursion did not converge".into()))
}

/// Ackermann placement of the observer spectrum at the origin for a
/// single-output pair: `J = A^n O^-1 e_n`.
fn deadbeat_gain(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut obs_matrix = DMatrix::<f64>::zeros(n, n);
    let mut row = c.clone();
    for i in 0..n {
        obs_matrix.set_row(i, &row.row(0));
        row = &row * a;
    }
    if rank(&obs_matrix, 1e-10) < n {
        return Err(Error::Design(
            "the pair (A, C) is not observable; deadbeat placement impossible".into(),
        ));
    }
    let inv = obs_matrix.try_inverse().ok_or_else(|| {
        Error::Design("observability matrix is numerically singular".into())
    })?;
    let mut a_pow = DMatrix::<f64>::identity(n, n);
    for _ in 0..n {
        a_pow = &a_pow * a;
    }
    let mut e_last = DVector::<f64>::zeros(n);
    e_last[n - 1] = 1.0;
    let j = a_pow * inv * e_last;
    Ok(DMatrix::from_column_slice(n, 1, j.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_symmetric;
    use approx::assert_relative_eq;

    fn scalar_system(a: f64, c: f64, l: f64) -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, l),
        )
        .unwrap()
    }

    fn full_order(sys: &LinearSystem, j: DMatrix<f64>) -> LinearFunctionalObserver {
        let n_x = sys.n_x();
        LinearFunctionalObserver::new(
            &sys.a - &j * &sys.c,
            j,
            sys.l.clone(),
            DMatrix::identity(n_x, n_x),
            DVector::zeros(n_x),
        )
        .unwrap()
    }

    #[test]
    fn full_order_sylvester_cancels_exactly() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        let obs = full_order(&sys, DMatrix::from_row_slice(2, 1, &[0.4, 0.1]));
        let report = verify_observer_conditions(&sys, &obs, 1e-12).unwrap();
        assert_eq!(report.sylvester_residual, 0.0);
        assert_eq!(report.functional_residual, 0.0);
    }

    #[test]
    fn perturbed_t_fails_verification() {
        let sys = scalar_system(0.5, 1.0, 1.0);
        let mut obs = full_order(&sys, DMatrix::from_element(1, 1, 0.2));
        obs.t[(0, 0)] += 1e-3;
        let report = verify_observer_conditions(&sys, &obs, 1e-8).unwrap();
        assert!(!report.passes);
    }

    #[test]
    fn zero_gain_passes_iff_a_schur() {
        for (a, expect) in [(0.8, true), (1.3, false)] {
            let sys = scalar_system(a, 1.0, 1.0);
            let obs = full_order(&sys, DMatrix::zeros(1, 1));
            let report = verify_observer_conditions(&sys, &obs, 1e-10).unwrap();
            assert_eq!(report.passes, expect, "a = {a}");
            assert_relative_eq!(report.spectral_radius, a, max_relative = 1e-12);
        }
    }

    #[test]
    fn lyapunov_series_scalar_closed_form() {
        // N = 0.5, rho = 0.3: P = 1 / (1 - 0.25/0.3) = 6
        let p = solve_discounted_lyapunov(&DMatrix::from_element(1, 1, 0.5), 0.3).unwrap();
        assert_relative_eq!(p[(0, 0)], 6.0, max_relative = 1e-10);
        // strict inequality: 0.25 * 6 = 1.5 <= 0.3 * 6 = 1.8
        assert!(0.25 * p[(0, 0)] < 0.3 * p[(0, 0)]);
    }

    #[test]
    fn lyapunov_series_zero_matrix() {
        let p = solve_discounted_lyapunov(&DMatrix::zeros(2, 2), 0.5).unwrap();
        assert_relative_eq!((p - DMatrix::identity(2, 2)).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_series_nilpotent_two_terms() {
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let p = solve_discounted_lyapunov(&n, 0.5).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        assert_relative_eq!((p - expected).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_series_rejects_bad_rho() {
        let n = DMatrix::from_element(1, 1, 0.9);
        assert!(matches!(
            solve_discounted_lyapunov(&n, 0.5),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            solve_discounted_lyapunov(&n, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn lyapunov_solution_is_spd_and_satisfies_inequality() {
        let n = DMatrix::from_row_slice(3, 3, &[0.4, 0.3, 0.0, -0.2, 0.5, 0.1, 0.0, 0.2, 0.3]);
        let rho = spectral_radius(&n).powi(2) + 0.05;
        let p = solve_discounted_lyapunov(&n, rho).unwrap();
        assert!(is_symmetric(&p, 1e-12));
        assert!(min_eig_symmetric(&p) > 0.0);
        let slack = rho * &p - n.transpose() * &p * &n;
        assert!(min_eig_symmetric(&((&slack + slack.transpose()) * 0.5)) >= -1e-10);
    }

    #[test]
    fn certificate_zero_gains_for_zero_j_and_b() {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, 0.8),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let obs = full_order(&sys, DMatrix::zeros(1, 1));
        let cert = build_certificate(&sys, &obs, None).unwrap();
        assert_eq!(cert.sigma_y_gain, 0.0);
        assert_eq!(cert.sigma_w_gain, 0.0);
        assert!(cert.eta < 1.0);
    }

    #[test]
    fn certificate_scalar_deadbeat() {
        // A = 0.9, C = 1, L = 1, J = 0.9 makes N = 0: P = I, and eta can be
        // driven arbitrarily close to rho by a small epsilon
        let sys = scalar_system(0.9, 1.0, 1.0);
        let obs = full_order(&sys, DMatrix::from_element(1, 1, 0.9));
        assert_eq!(obs.n[(0, 0)], 0.0);
        let cert = build_certificate(&sys, &obs, None).unwrap();
        assert_relative_eq!(cert.p[(0, 0)], 1.0, max_relative = 1e-12);
        assert!(cert.eta < 0.51); // rho = 0.01 margin, eta = (1 + rho)/2
        let tight = build_certificate(&sys, &obs, Some(0.01)).unwrap();
        assert!(tight.eta < 0.011);
        let report = verify_decrease_sampled(&cert, &sys, &obs, 2000, 7, 1e-8).unwrap();
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn falsified_certificate_is_caught() {
        let sys = scalar_system(0.9, 1.0, 1.0);
        let obs = full_order(&sys, DMatrix::from_element(1, 1, 0.2));
        let mut cert = build_certificate(&sys, &obs, None).unwrap();
        cert.eta *= 0.5;
        cert.sigma_w_gain = 0.0;
        cert.sigma_y_gain = 0.0;
        let report = verify_decrease_sampled(&cert, &sys, &obs, 2000, 3, 1e-8).unwrap();
        assert!(report.violations > 0);
        assert!(report.worst_margin < 0.0);
    }

    #[test]
    fn identical_pairs_have_zero_margin_terms() {
        let sys = scalar_system(0.7, 1.0, 1.0);
        let obs = full_order(&sys, DMatrix::from_element(1, 1, 0.3));
        let cert = build_certificate(&sys, &obs, None).unwrap();
        let x = DVector::from_element(1, 1.23);
        assert_eq!(cert.w_delta(&x, &x), 0.0);
    }

    #[test]
    fn semidefinite_w_accepts_kernel_directions() {
        // T = [1 0] has a nontrivial kernel; W must vanish there for x != x~
        let cert = LyapunovCertificate {
            t: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            p: DMatrix::identity(1, 1),
            rho: 0.5,
            eta: 0.75,
            sigma_w_gain: 0.0,
            sigma_y_gain: 0.0,
            alpha1_gain: 1.0,
            alpha2_gain: 1.0,
            output_term: None,
        };
        let x = DVector::from_vec(vec![1.0, 5.0]);
        let xt = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(cert.w_delta(&x, &xt), 0.0);
    }

    #[test]
    fn output_term_variant_adds_c_component() {
        let cert = LyapunovCertificate {
            t: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            p: DMatrix::identity(1, 1),
            rho: 0.5,
            eta: 0.75,
            sigma_w_gain: 0.0,
            sigma_y_gain: 0.0,
            alpha1_gain: 1.0,
            alpha2_gain: 1.0,
            output_term: None,
        };
        let with_c = cert
            .clone()
            .with_output_term(DMatrix::from_row_slice(1, 2, &[0.0, 2.0]))
            .unwrap();
        let x = DVector::from_vec(vec![1.0, 3.0]);
        let xt = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(cert.w_delta(&x, &xt), 0.0);
        assert_eq!(with_c.w_delta(&x, &xt), 16.0);
    }

    #[test]
    fn riccati_design_scalar_matches_closed_form() {
        // p solves p^2 - (a^2 - 1 + qn... for a = 0.5, qn = rn = 1:
        // fixed point of p+ = a^2 p - a^2 p^2/(p+1) + 1  =>  p^2 = 0.25 p + 1
        let sys = scalar_system(0.5, 1.0, 1.0);
        let obs = design_full_order_observer(
            &sys,
            ObserverDesign::Riccati {
                qn: DMatrix::identity(1, 1),
                rn: DMatrix::identity(1, 1),
            },
        )
        .unwrap();
        let p = (0.25 + (0.0625_f64 + 4.0).sqrt()) / 2.0;
        let j_expected = 0.5 * p / (p + 1.0);
        assert_relative_eq!(obs.j[(0, 0)], j_expected, max_relative = 1e-9);
        assert!(obs.n[(0, 0)].abs() < 1.0);
        let report = verify_observer_conditions(&sys, &obs, 1e-8).unwrap();
        assert!(report.passes);
    }

    #[test]
    fn deadbeat_design_two_state_chain_is_nilpotent() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let obs = design_full_order_observer(&sys, ObserverDesign::Deadbeat).unwrap();
        assert!(spectral_radius(&obs.n) < 1e-8);
        let report = verify_observer_conditions(&sys, &obs, 1e-8).unwrap();
        assert!(report.passes);
    }

    #[test]
    fn undetectable_system_is_rejected() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let err = design_full_order_observer(
            &sys,
            ObserverDesign::Riccati {
                qn: DMatrix::identity(2, 2),
                rn: DMatrix::identity(1, 1),
            },
        );
        assert!(matches!(err, Err(Error::Design(_))));
    }

    #[test]
    fn deadbeat_multi_output_unsupported() {
        let sys = LinearSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(matches!(
            design_full_order_observer(&sys, ObserverDesign::Deadbeat),
            Err(Error::Unsupported(_))
        ));
    }
}
