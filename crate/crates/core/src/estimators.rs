//! Non-optimization estimators: the linear functional observer runtime, a
//! scalar state-norm estimator, and the two-step deadbeat total-load
//! estimator for the power-system benchmark.

use nalgebra::{DVector, RowDVector};

use crate::error::{Error, Result};
use crate::kfunction::KFunction;
use crate::lyapunov::LinearFunctionalObserver;
use crate::model::Trajectory;
use crate::powersys::PowerSystemParams;

/// Iterates `xi+ = N xi + J y`, `z_hat = P_xi xi` from `obs.xi0` over the
/// measurement sequence; returns one estimate per step including `t = 0`,
/// i.e. `y_seq.len() + 1` vectors.
pub fn run_linear_observer(
    obs: &LinearFunctionalObserver,
    y_seq: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let n_y = obs.j.ncols();
    for y in y_seq {
        if y.len() != n_y {
            return Err(Error::dim("measurement", n_y, y.len()));
        }
    }
    let mut xi = obs.xi0.clone();
    let mut estimates = Vec::with_capacity(y_seq.len() + 1);
    estimates.push(&obs.p_xi * &xi);
    for y in y_seq {
        xi = &obs.n * &xi + &obs.j * y;
        estimates.push(&obs.p_xi * &xi);
    }
    Ok(estimates)
}

/// Configuration of the scalar state-norm estimator
/// `z+ = epsilon z + rho1(||y||) + rho2(||w||)`.
///
/// The recursion is usually written with a single gain symbol applied to
/// both norms; this implementation keeps two independent class-K gains
/// (`rho1` on the output norm, `rho2` on the noise norm) so the single-gain
/// form is the special case `rho1 == rho2`.
#[derive(Debug, Clone)]
pub struct StateNormEstimatorConfig {
    pub epsilon: f64,
    pub rho1: KFunction,
    pub rho2: KFunction,
}

impl StateNormEstimatorConfig {
    pub fn new(epsilon: f64, rho1: KFunction, rho2: KFunction) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::InvalidInput(format!(
                "state-norm decay must satisfy 0 <= epsilon < 1, got {epsilon}"
            )));
        }
        rho1.validate()?;
        rho2.validate()?;
        Ok(StateNormEstimatorConfig { epsilon, rho1, rho2 })
    }
}

/// One step of the state-norm recursion.
pub fn state_norm_step(
    config: &StateNormEstimatorConfig,
    z_hat: f64,
    y_bar: &DVector<f64>,
    w_bar: &DVector<f64>,
) -> Result<f64> {
    if z_hat < 0.0 {
        return Err(Error::InvalidInput(format!(
            "state-norm estimate must be nonnegative, got {z_hat}"
        )));
    }
    Ok(config.epsilon * z_hat + config.rho1.eval(y_bar.norm()) + config.rho2.eval(w_bar.norm()))
}

/// Runs the state-norm recursion over whole sequences; returns
/// `y_seq.len() + 1` values starting with `z0`. Noise estimates may be
/// omitted (treated as zero).
pub fn run_state_norm(
    config: &StateNormEstimatorConfig,
    z0: f64,
    y_seq: &[DVector<f64>],
    w_seq: Option<&[DVector<f64>]>,
) -> Result<Vec<f64>> {
    if let Some(w) = w_seq {
        if w.len() != y_seq.len() {
            return Err(Error::dim("noise estimate sequence", y_seq.len(), w.len()));
        }
    }
    let mut z = z0;
    let mut out = Vec::with_capacity(y_seq.len() + 1);
    out.push(z);
    let zero = DVector::zeros(1);
    for (k, y) in y_seq.iter().enumerate() {
        let w = w_seq.map_or(&zero, |seq| &seq[k]);
        z = state_norm_step(config, z, y, w)?;
        out.push(z);
    }
    Ok(out)
}

/// Coefficients of the two-step total-load reconstruction
/// `z_t = C_y [y_{t-1}; y_{t-2}] + C_w [w_{t-1}; w_{t-2}]`.
#[derive(Debug, Clone)]
pub struct DeadbeatMatrices {
    /// 1 x 2 n_y, acting on the stacked last two measurements.
    pub c_y: RowDVector<f64>,
    /// 1 x 2 (n_x + n_y), acting on the stacked last two noise vectors.
    pub c_w: RowDVector<f64>,
}

/// Assembles the deadbeat coefficients from the benchmark parameters.
///
/// Summing the discretized frequency dynamics over all buses cancels the
/// branch-flow outflows (each flow appears twice with opposite signs),
/// which expresses the total load at `t - 2` through the measurements at
/// `t - 1` and `t - 2` plus noise; shifting two steps along the load
/// random-walk dynamics then lands on the value at `t`.
pub fn build_deadbeat_matrices(params: &PowerSystemParams) -> Result<DeadbeatMatrices> {
    params.validate()?;
    let n = params.n_buses;
    let n_y = params.n_y();
    let n_w = params.n_w();
    let mut c_y = RowDVector::zeros(2 * n_y);
    let mut c_w = RowDVector::zeros(2 * n_w);
    for i in 0..n {
        let m_dt = params.m[i] / params.dt;
        let d = params.d[i];
        // y_{t-1}: frequency-difference term
        c_y[i] = -m_dt;
        // y_{t-2}: damping and frequency terms, and the mechanical power
        c_y[n_y + i] = m_dt - d;
        c_y[n_y + n + i] = 1.0;
        // w_{t-1}: load process noise and frequency measurement noise
        c_w[2 * n + i] = 1.0;
        c_w[4 * n + i] = m_dt;
        // w_{t-2}: frequency process noise, load process noise, and both
        // measurement-noise corrections
        c_w[n_w + n + i] = m_dt;
        c_w[n_w + 2 * n + i] = 1.0;
        c_w[n_w + 4 * n + i] = d - m_dt;
        c_w[n_w + 5 * n + i] = -1.0;
    }
    Ok(DeadbeatMatrices { c_y, c_w })
}

/// Noise-free deadbeat estimate `z_hat = C_y [y_prev; y_prev2]` from the two
/// most recent measurements (`y_prev` is the later one).
pub fn deadbeat_estimate(
    mats: &DeadbeatMatrices,
    y_prev: &DVector<f64>,
    y_prev2: &DVector<f64>,
) -> Result<f64> {
    let n_y = mats.c_y.len() / 2;
    if y_prev.len() != n_y {
        return Err(Error::dim("y_prev", n_y, y_prev.len()));
    }
    if y_prev2.len() != n_y {
        return Err(Error::dim("y_prev2", n_y, y_prev2.len()));
    }
    let mut acc = 0.0;
    for i in 0..n_y {
        acc += mats.c_y[i] * y_prev[i] + mats.c_y[n_y + i] * y_prev2[i];
    }
    Ok(acc)
}

/// Applies the deadbeat estimator along a measurement sequence. Steps with
/// fewer than two past measurements yield `None` rather than extrapolating;
/// the result has `y_seq.len() + 1` entries aligned with trajectory time.
pub fn run_deadbeat(
    mats: &DeadbeatMatrices,
    y_seq: &[DVector<f64>],
) -> Result<Vec<Option<f64>>> {
    let mut out = vec![None; (y_seq.len() + 1).min(2)];
    for t in 2..=y_seq.len() {
        out.push(Some(deadbeat_estimate(mats, &y_seq[t - 1], &y_seq[t - 2])?));
    }
    Ok(out)
}

/// Residuals of the full reconstruction identity, including the noise terms,
/// along a simulated trajectory: `z_t - C_y [y...] - C_w [w...]` for each
/// `t >= 2`. All residuals vanish (to rounding) on any model trajectory.
pub fn deadbeat_residuals(mats: &DeadbeatMatrices, traj: &Trajectory) -> Result<Vec<f64>> {
    let n_w = mats.c_w.len() / 2;
    let mut residuals = Vec::new();
    for t in 2..=traj.horizon() {
        let mut value = traj.z[t][0];
        value -= deadbeat_estimate(mats, &traj.y[t - 1], &traj.y[t - 2])?;
        let (w1, w2) = (&traj.w[t - 1], &traj.w[t - 2]);
        if w1.len() != n_w {
            return Err(Error::dim("trajectory noise", n_w, w1.len()));
        }
        for i in 0..n_w {
            value -= mats.c_w[i] * w1[i] + mats.c_w[n_w + i] * w2[i];
        }
        residuals.push(value);
    }
    Ok(residuals)
}
