//! Four-bus power-system benchmark.
//!
//! Swing-equation dynamics per bus `i`:
//!
//! ```text
//! theta_dot_i = omega_i
//! omega_dot_i = -(1/M_i) (D_i omega_i - PM_i + PL_i + DeltaP_i)
//! PL_dot_i = 0,  PM_dot_i = 0
//! DeltaP_i = sum_{(i,k) in E} P_ik - sum_{(j,i) in E} P_ji
//! P_ij = 3 (|V_i||V_j| / x_ij) sin(theta_i - theta_j)
//! ```
//!
//! discretized by forward Euler with sampling time `dt` and driven by
//! additive process noise on every state. Measurements are the frequency
//! deviations and mechanical powers with additive noise; the virtual output
//! is the total load `z = sum_i PL_i`.
//!
//! Every branch flow enters the outflows twice with opposite signs, so
//! `sum_i DeltaP_i = 0` identically. Two consequences drive the benchmark:
//! at any steady state the per-bus loads are interchangeable with angle
//! changes without touching the measurements (the state is not detectable),
//! yet the *total* load is pinned down by two consecutive measurements.
//!
//! State layout: `x = [theta; omega; PL; PM]`, noise `w = [w_x; w_y]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::estimators::{build_deadbeat_matrices, run_deadbeat};
use crate::model::{rollout, BoxSet, Dims, SystemModel};

/// Physical and noise parameters of the benchmark network.
///
/// Bus indices in `edges` are 1-based. The default parameter values
/// (unit inertia, damping, voltage and reactance) are placeholders; override
/// them via the JSON config when calibrated values are available.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSystemParams {
    pub n_buses: usize,
    /// Directed transmission lines (i, j), 1-based bus indices.
    pub edges: Vec<(usize, usize)>,
    /// Per-bus generator inertia, > 0.
    #[serde(rename = "M")]
    pub m: Vec<f64>,
    /// Per-bus damping constant, >= 0.
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    /// Per-bus voltage magnitude, > 0.
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    /// Per-edge line reactance, > 0.
    pub x_line: Vec<f64>,
    /// Euler sampling time, > 0.
    pub dt: f64,
    /// Infinity-norm bound of the process noise.
    pub wx_bound: f64,
    /// Infinity-norm bound of the measurement noise.
    pub wy_bound: f64,
}

impl Default for PowerSystemParams {
    fn default() -> Self {
        PowerSystemParams {
            n_buses: 4,
            edges: vec![(1, 2), (2, 3), (3, 4), (4, 1)],
            m: vec![1.0; 4],
            d: vec![1.0; 4],
            v: vec![1.0; 4],
            x_line: vec![1.0; 4],
            dt: 0.01,
            wx_bound: 5e-3,
            wy_bound: 5e-2,
        }
    }
}

impl PowerSystemParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_buses == 0 {
            return Err(Error::InvalidInput("n_buses must be positive".into()));
        }
        for vec in [&self.m, &self.d, &self.v] {
            if vec.len() != self.n_buses {
                return Err(Error::dim("per-bus parameter", self.n_buses, vec.len()));
            }
        }
        if self.x_line.len() != self.edges.len() {
            return Err(Error::dim("x_line", self.edges.len(), self.x_line.len()));
        }
        for (idx, (i, j)) in self.edges.iter().enumerate() {
            if *i == 0 || *j == 0 || *i > self.n_buses || *j > self.n_buses {
                return Err(Error::InvalidInput(format!(
                    "edges[{idx}] = ({i}, {j}) is out of range for {} buses (1-based)",
                    self.n_buses
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!(
                    "edges[{idx}] connects bus {i} to itself"
                )));
            }
        }
        if self.m.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidInput("M entries must be positive".into()));
        }
        if self.d.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidInput("D entries must be nonnegative".into()));
        }
        if self.v.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidInput("V entries must be positive".into()));
        }
        if self.x_line.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidInput("x_line entries must be positive".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        if self.wx_bound < 0.0 || self.wy_bound < 0.0 {
            return Err(Error::InvalidInput("noise bounds must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        4 * self.n_buses
    }

    pub fn n_y(&self) -> usize {
        2 * self.n_buses
    }

    pub fn n_w(&self) -> usize {
        self.n_x() + self.n_y()
    }
}

/// Branch flows `P_ij = 3 (|V_i||V_j| / x_ij) sin(theta_i - theta_j)`, in
/// declared edge order.
pub fn branch_flow(params: &PowerSystemParams, theta: &DVector<f64>) -> DVector<f64> {
    assert_eq!(theta.len(), params.n_buses, "theta length mismatch");
    DVector::from_fn(params.edges.len(), |e, _| {
        let (i, j) = params.edges[e];
        let (i, j) = (i - 1, j - 1);
        3.0 * params.v[i] * params.v[j] / params.x_line[e] * (theta[i] - theta[j]).sin()
    })
}

/// Per-bus net power outflow; every flow appears once positively and once
/// negatively, so the entries always sum to zero.
pub fn power_outflow(params: &PowerSystemParams, theta: &DVector<f64>) -> DVector<f64> {
    let flows = branch_flow(params, theta);
    let mut delta = DVector::zeros(params.n_buses);
    for (e, (i, j)) in params.edges.iter().enumerate() {
        delta[i - 1] += flows[e];
        delta[j - 1] -= flows[e];
    }
    delta
}

/// Continuous-time right-hand side; load and mechanical-power rows are
/// identically zero.
pub fn continuous_rhs(params: &PowerSystemParams, x: &DVector<f64>) -> DVector<f64> {
    let n = params.n_buses;
    assert_eq!(x.len(), 4 * n, "state length mismatch");
    let theta = x.rows(0, n).into_owned();
    let delta = power_outflow(params, &theta);
    let mut dx = DVector::zeros(4 * n);
    for i in 0..n {
        let omega = x[n + i];
        let p_load = x[2 * n + i];
        let p_mech = x[3 * n + i];
        dx[i] = omega;
        dx[n + i] = -(params.d[i] * omega - p_mech + p_load + delta[i]) / params.m[i];
    }
    dx
}

/// Jacobian of [`continuous_rhs`] with respect to the state.
pub fn continuous_rhs_jacobian(params: &PowerSystemParams, x: &DVector<f64>) -> DMatrix<f64> {
    let n = params.n_buses;
    let theta = x.rows(0, n).into_owned();
    // d(DeltaP)/d(theta): Laplacian-like assembly over edges
    let mut ddelta = DMatrix::<f64>::zeros(n, n);
    for (e, (bi, bj)) in params.edges.iter().enumerate() {
        let (i, j) = (bi - 1, bj - 1);
        let slope = 3.0 * params.v[i] * params.v[j] / params.x_line[e] * (theta[i] - theta[j]).cos();
        ddelta[(i, i)] += slope;
        ddelta[(i, j)] -= slope;
        ddelta[(j, i)] -= slope;
        ddelta[(j, j)] += slope;
    }
    let mut jac = DMatrix::<f64>::zeros(4 * n, 4 * n);
    for i in 0..n {
        jac[(i, n + i)] = 1.0;
        for j in 0..n {
            jac[(n + i, j)] = -ddelta[(i, j)] / params.m[i];
        }
        jac[(n + i, n + i)] = -params.d[i] / params.m[i];
        jac[(n + i, 2 * n + i)] = -1.0 / params.m[i];
        jac[(n + i, 3 * n + i)] = 1.0 / params.m[i];
    }
    jac
}

/// Euler-discretized benchmark model:
///
/// ```text
/// f(x, w, t) = x + dt * rhs(x) + w_x
/// h(x, w, t) = [omega; PM] + w_y
/// phi(x)     = sum_i PL_i
/// ```
///
/// with `W` the product of the two infinity-norm noise boxes and `X`
/// unconstrained.
pub fn build_discrete_model(params: &PowerSystemParams) -> Result<SystemModel> {
    params.validate()?;
    let n = params.n_buses;
    let (n_x, n_y) = (params.n_x(), params.n_y());
    let dims = Dims::new(n_x, params.n_w(), n_y, 1)?;

    let p_f = params.clone();
    let f = Arc::new(move |x: &DVector<f64>, w: &DVector<f64>, _t: u64| {
        let mut next = x + continuous_rhs(&p_f, x) * p_f.dt;
        for i in 0..x.len() {
            next[i] += w[i];
        }
        next
    });
    let p_h = params.clone();
    let h = Arc::new(move |x: &DVector<f64>, w: &DVector<f64>, _t: u64| {
        let n = p_h.n_buses;
        DVector::from_fn(2 * n, |i, _| {
            let state = if i < n { x[n + i] } else { x[2 * n + i] };
            state + w[4 * n + i]
        })
    });
    let phi = Arc::new(move |x: &DVector<f64>| {
        DVector::from_element(1, x.rows(2 * n, n).sum())
    });

    let p_jf = params.clone();
    let f_jac = Arc::new(move |x: &DVector<f64>, _w: &DVector<f64>, _t: u64| {
        let n_x = p_jf.n_x();
        let fx = DMatrix::identity(n_x, n_x) + continuous_rhs_jacobian(&p_jf, x) * p_jf.dt;
        let mut fw = DMatrix::zeros(n_x, p_jf.n_w());
        for i in 0..n_x {
            fw[(i, i)] = 1.0;
        }
        (fx, fw)
    });
    let p_jh = params.clone();
    let h_jac = Arc::new(move |_x: &DVector<f64>, _w: &DVector<f64>, _t: u64| {
        let n = p_jh.n_buses;
        let (n_x, n_y) = (p_jh.n_x(), p_jh.n_y());
        let mut hx = DMatrix::zeros(n_y, n_x);
        let mut hw = DMatrix::zeros(n_y, p_jh.n_w());
        for i in 0..n {
            hx[(i, n + i)] = 1.0;
            hx[(n + i, 3 * n + i)] = 1.0;
        }
        for i in 0..n_y {
            hw[(i, n_x + i)] = 1.0;
        }
        (hx, hw)
    });

    let mut lower = DVector::zeros(params.n_w());
    let mut upper = DVector::zeros(params.n_w());
    for i in 0..n_x {
        lower[i] = -params.wx_bound;
        upper[i] = params.wx_bound;
    }
    for i in 0..n_y {
        lower[n_x + i] = -params.wy_bound;
        upper[n_x + i] = params.wy_bound;
    }

    SystemModel::new(dims, f, h, phi)
        .with_f_jacobian(f_jac)
        .with_h_jacobian(h_jac)
        .with_noise_set(BoxSet::new(lower, upper)?)
}

/// Default estimation setup for the benchmark: decay factor 0.9 and noise
/// and output weights from the inverse covariances of the uniform noise
/// (`3 / bound^2` per component). The prior weight is a small multiple of
/// the identity: the demo prior is deliberately wrong along the
/// non-detectable load directions, and any weight on it only slows down how
/// fast the discount forgets that error (stability holds for every positive
/// definite choice).
pub fn default_fie_config(params: &PowerSystemParams) -> Result<crate::fie::FieConfig> {
    params.validate()?;
    let (n_x, n_y, n_w) = (params.n_x(), params.n_y(), params.n_w());
    let wx_weight = 3.0 / (params.wx_bound * params.wx_bound);
    let wy_weight = 3.0 / (params.wy_bound * params.wy_bound);
    let mut q = DMatrix::zeros(n_w, n_w);
    for i in 0..n_x {
        q[(i, i)] = wx_weight;
    }
    for i in 0..n_y {
        q[(n_x + i, n_x + i)] = wy_weight;
    }
    let r = DMatrix::identity(n_y, n_y) * wy_weight;
    let p = DMatrix::identity(n_x, n_x) * 0.01;
    let config = crate::fie::FieConfig::new(0.9, crate::fie::FieObjective::Quadratic { p, q, r })?;
    // warm-started sequence estimation refines an already-good iterate at
    // each step; a tight budget keeps long runs responsive
    let mut solver = crate::fie::SolverSettings::default();
    solver.max_iter = 10;
    config.with_solver(solver)
}

/// Assembles the steady state with the given angles and loads: `omega = 0`
/// and `PM = PL + DeltaP(theta)`, an exact fixed point of the noise-free
/// discrete map.
pub fn steady_state(
    params: &PowerSystemParams,
    theta: &DVector<f64>,
    p_load: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = params.n_buses;
    if theta.len() != n {
        return Err(Error::dim("theta", n, theta.len()));
    }
    if p_load.len() != n {
        return Err(Error::dim("p_load", n, p_load.len()));
    }
    let delta = power_outflow(params, theta);
    let mut x = DVector::zeros(4 * n);
    for i in 0..n {
        x[i] = theta[i];
        x[2 * n + i] = p_load[i];
        x[3 * n + i] = p_load[i] + delta[i];
    }
    Ok(x)
}

/// Seeded demo initial condition: small random angles, loads uniform in
/// `[0.5, 1.5]`, zero frequency deviation, balanced mechanical power. The
/// prior adds a uniform perturbation of magnitude 0.5 to the load entries,
/// so the initial estimate is wrong precisely along the non-detectable
/// directions.
pub fn default_initial_state(
    params: &PowerSystemParams,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = params.n_buses;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = DVector::from_fn(n, |_, _| rng.random::<f64>() * 0.2 - 0.1);
    let p_load = DVector::from_fn(n, |_, _| 0.5 + rng.random::<f64>());
    let x0 = steady_state(params, &theta, &p_load)?;
    let mut x_bar = x0.clone();
    for i in 0..n {
        x_bar[2 * n + i] += rng.random::<f64>() - 0.5;
    }
    Ok((x0, x_bar))
}

/// Result of [`detectability_probe`].
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    /// Largest output deviation between the two trajectories (expected ~ 0).
    pub output_gap: f64,
    /// Largest per-bus load gap, i.e. the gap in the state functionals that
    /// are *not* recoverable from the measurements (expected large).
    pub functional_gap: f64,
    /// Largest full-state gap.
    pub state_gap: f64,
    /// Gap in the total load. Zero by flow conservation: at matching
    /// mechanical power the bus loads can be reshuffled but their sum cannot.
    pub total_load_gap: f64,
    /// Worst deadbeat reconstruction error of the total load across both
    /// trajectories, for steps with two past measurements available.
    pub deadbeat_max_error: f64,
}

/// Constructs two steady states with different angles and per-bus loads but
/// identical measured outputs, simulates both noise-free for 50 steps, and
/// reports the gaps.
///
/// The probe demonstrates both halves of the benchmark story: the outputs
/// agree to machine precision while per-bus loads differ by a finite amount
/// (no state estimator can work), yet the two-step deadbeat reconstruction
/// recovers the total load of either trajectory exactly.
pub fn detectability_probe(params: &PowerSystemParams, seed: u64) -> Result<ProbeReport> {
    params.validate()?;
    let n = params.n_buses;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_theta =
        |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);

    let theta_a = draw_theta(&mut rng);
    let loads_a = DVector::from_fn(n, |_, _| 0.5 + rng.random::<f64>());
    let x_a = steady_state(params, &theta_a, &loads_a)?;
    let p_mech = x_a.rows(3 * n, n).into_owned();

    // second steady state: different angles, loads chosen to reproduce the
    // same mechanical power; retry until the load gap is substantial
    let mut attempt = 0;
    let (x_b, loads_b) = loop {
        attempt += 1;
        if attempt > 64 {
            return Err(Error::Infeasible(
                "could not construct a distinct steady state matching the mechanical power"
                    .into(),
            ));
        }
        let theta_b = draw_theta(&mut rng);
        let loads_b = &p_mech - power_outflow(params, &theta_b);
        if (&loads_b - &loads_a).amax() < 0.1 {
            continue;
        }
        let x_b = steady_state(params, &theta_b, &loads_b)?;
        // matching mechanical power is exact only if PL + DeltaP reproduces
        // p_mech bit-for-bit; enforce it directly
        let mut x_b = x_b;
        for i in 0..n {
            x_b[3 * n + i] = p_mech[i];
        }
        break (x_b, loads_b);
    };

    let model = build_discrete_model(params)?;
    let zero_noise = vec![DVector::zeros(params.n_w()); 50];
    let traj_a = rollout(&model, &x_a, &zero_noise, 0)?;
    let traj_b = rollout(&model, &x_b, &zero_noise, 0)?;

    let mut output_gap = 0.0_f64;
    for (ya, yb) in traj_a.y.iter().zip(&traj_b.y) {
        output_gap = output_gap.max((ya - yb).amax());
    }
    let mut state_gap = 0.0_f64;
    let mut functional_gap = 0.0_f64;
    let mut total_load_gap = 0.0_f64;
    for (xa, xb) in traj_a.x.iter().zip(&traj_b.x) {
        state_gap = state_gap.max((xa - xb).amax());
        let la = xa.rows(2 * n, n);
        let lb = xb.rows(2 * n, n);
        functional_gap = functional_gap.max((la - lb).amax());
        total_load_gap = total_load_gap.max((la.sum() - lb.sum()).abs());
    }
    debug_assert!((&loads_b - x_b.rows(2 * n, n)).amax() == 0.0);

    let mats = build_deadbeat_matrices(params)?;
    let mut deadbeat_max_error = 0.0_f64;
    for traj in [&traj_a, &traj_b] {
        let estimates = run_deadbeat(&mats, &traj.y)?;
        for (t, est) in estimates.iter().enumerate() {
            if let Some(z_hat) = est {
                deadbeat_max_error = deadbeat_max_error.max((z_hat - traj.z[t][0]).abs());
            }
        }
    }

    Ok(ProbeReport {
        output_gap,
        functional_gap,
        state_gap,
        total_load_gap,
        deadbeat_max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_solution, simulate, NoiseSampler};
    use approx::assert_relative_eq;

    #[test]
    fn flows_vanish_for_uniform_angles() {
        let params = PowerSystemParams::default();
        let theta = DVector::from_element(4, 0.37);
        assert_eq!(branch_flow(&params, &theta).amax(), 0.0);
        assert_eq!(power_outflow(&params, &theta).amax(), 0.0);
    }

    #[test]
    fn flow_formula_direct_value() {
        let params = PowerSystemParams::default();
        let theta = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]);
        let flows = branch_flow(&params, &theta);
        assert_relative_eq!(flows[0], 3.0, max_relative = 1e-12); // edge (1,2)
    }

    #[test]
    fn flow_antisymmetry_under_edge_reversal() {
        let mut params = PowerSystemParams::default();
        let theta = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1]);
        let forward = branch_flow(&params, &theta);
        params.edges = params.edges.iter().map(|(i, j)| (*j, *i)).collect();
        let reversed = branch_flow(&params, &theta);
        for e in 0..4 {
            assert_relative_eq!(forward[e], -reversed[e], max_relative = 1e-12);
        }
    }

    #[test]
    fn two_bus_outflow_by_hand() {
        let params = PowerSystemParams {
            n_buses: 2,
            edges: vec![(1, 2)],
            m: vec![1.0; 2],
            d: vec![1.0; 2],
            v: vec![1.0; 2],
            x_line: vec![1.0],
            ..PowerSystemParams::default()
        };
        let theta = DVector::from_vec(vec![0.4, -0.1]);
        let p12 = 3.0 * (0.5_f64).sin();
        let delta = power_outflow(&params, &theta);
        assert_relative_eq!(delta[0], p12, max_relative = 1e-12);
        assert_relative_eq!(delta[1], -p12, max_relative = 1e-12);
    }

    #[test]
    fn outflow_sums_to_zero_for_random_angles() {
        let params = PowerSystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        for _ in 0..1000 {
            let theta = DVector::from_fn(4, |_, _| {
                (rng.random::<f64>() - 0.5) * 2.0 * std::f64::consts::PI
            });
            assert!(power_outflow(&params, &theta).sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn rhs_zero_at_origin_and_scalar_instance() {
        let params = PowerSystemParams::default();
        assert_eq!(continuous_rhs(&params, &DVector::zeros(16)).amax(), 0.0);

        // single bus, M = 2, D = 1, omega = 1, everything else zero
        let one = PowerSystemParams {
            n_buses: 1,
            edges: vec![],
            m: vec![2.0],
            d: vec![1.0],
            v: vec![1.0],
            x_line: vec![],
            ..PowerSystemParams::default()
        };
        let x = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
        let dx = continuous_rhs(&one, &x);
        assert_relative_eq!(dx[1], -0.5, max_relative = 1e-12);
    }

    #[test]
    fn steady_state_rhs_vanishes() {
        let params = PowerSystemParams::default();
        let theta = DVector::from_vec(vec![0.2, -0.3, 0.1, 0.0]);
        let loads = DVector::from_vec(vec![1.0, 0.8, 1.2, 0.9]);
        let x = steady_state(&params, &theta, &loads).unwrap();
        assert!(continuous_rhs(&params, &x).amax() <= 1e-15);
    }

    #[test]
    fn model_dimensions_match_four_bus_setup() {
        let model = build_discrete_model(&PowerSystemParams::default()).unwrap();
        let dims = model.dims();
        assert_eq!(dims.n_x, 16);
        assert_eq!(dims.n_y, 8);
        assert_eq!(dims.n_z, 1);
        assert_eq!(dims.n_w, 24);
    }

    #[test]
    fn euler_step_definition_bit_exact() {
        let params = PowerSystemParams::default();
        let model = build_discrete_model(&params).unwrap();
        let (x0, _) = default_initial_state(&params, 5).unwrap();
        let w = DVector::zeros(24);
        let expected = &x0 + continuous_rhs(&params, &x0) * params.dt;
        assert_eq!(model.f(&x0, &w, 0), expected);
    }

    #[test]
    fn steady_state_is_fixed_point_of_discrete_map() {
        let params = PowerSystemParams::default();
        let model = build_discrete_model(&params).unwrap();
        let theta = DVector::from_vec(vec![0.4, 0.0, -0.2, 0.3]);
        let loads = DVector::from_vec(vec![1.1, 0.7, 1.4, 0.6]);
        let x = steady_state(&params, &theta, &loads).unwrap();
        let zero_noise = vec![DVector::zeros(24); 30];
        let traj = rollout(&model, &x, &zero_noise, 0).unwrap();
        for xk in &traj.x {
            assert!((xk - &x).amax() <= 1e-13);
        }
        // virtual output constant along the trajectory
        for zk in &traj.z {
            assert_relative_eq!(zk[0], loads.sum(), max_relative = 1e-12);
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let params = PowerSystemParams::default();
        let model = build_discrete_model(&params).unwrap();
        let (x, _) = default_initial_state(&params, 9).unwrap();
        let w = DVector::from_fn(24, |i, _| 1e-3 * ((i as f64).sin()));
        let (fx, fw) = model.f_jacobian(&x, &w, 0);
        let bare = SystemModel::new(
            model.dims(),
            Arc::new({
                let p = params.clone();
                move |x: &DVector<f64>, w: &DVector<f64>, _| {
                    let mut next = x + continuous_rhs(&p, x) * p.dt;
                    for i in 0..x.len() {
                        next[i] += w[i];
                    }
                    next
                }
            }),
            Arc::new(|_, _, _| DVector::zeros(8)),
            Arc::new(|_| DVector::zeros(1)),
        );
        let (fx_fd, fw_fd) = bare.f_jacobian(&x, &w, 0);
        assert!((fx - fx_fd).amax() <= 1e-6);
        assert!((fw - fw_fd).amax() <= 1e-6);
    }

    #[test]
    fn sampled_noise_respects_paper_bounds() {
        let params = PowerSystemParams::default();
        let model = build_discrete_model(&params).unwrap();
        let sx = NoiseSampler::uniform(BoxSet::symmetric(16, params.wx_bound).unwrap(), 10)
            .unwrap();
        let sy = NoiseSampler::uniform(BoxSet::symmetric(8, params.wy_bound).unwrap(), 11)
            .unwrap();
        let (x0, _) = default_initial_state(&params, 3).unwrap();
        let traj = simulate(&model, &x0, &sx, &sy, 100, 0).unwrap();
        for w in &traj.w {
            assert!(w.rows(0, 16).amax() <= 5e-3);
            assert!(w.rows(16, 8).amax() <= 5e-2);
        }
        let report = check_solution(&model, &traj, 0.0).unwrap();
        assert!(report.is_solution);
    }

    #[test]
    fn probe_separates_loads_but_not_outputs() {
        let report = detectability_probe(&PowerSystemParams::default(), 17).unwrap();
        assert!(report.output_gap <= 1e-10, "output gap {}", report.output_gap);
        assert!(report.functional_gap > 0.1);
        assert!(report.state_gap > 0.1);
        assert!(report.total_load_gap <= 1e-12);
        assert!(report.deadbeat_max_error <= 1e-9);
    }

    #[test]
    fn probe_identical_states_zero_gaps() {
        // feeding the same steady state through both branches of the gap
        // computation must give zeros; emulate by comparing a trajectory
        // against itself
        let params = PowerSystemParams::default();
        let model = build_discrete_model(&params).unwrap();
        let theta = DVector::from_vec(vec![0.1, 0.2, -0.1, 0.0]);
        let loads = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let x = steady_state(&params, &theta, &loads).unwrap();
        let traj = rollout(&model, &x, &vec![DVector::zeros(24); 10], 0).unwrap();
        let mut gap = 0.0_f64;
        for (a, b) in traj.y.iter().zip(&traj.y) {
            gap = gap.max((a - b).amax());
        }
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn params_validation_catches_bad_edges() {
        let mut params = PowerSystemParams::default();
        params.edges[2] = (3, 9);
        assert!(matches!(params.validate(), Err(Error::InvalidInput(_))));
        let mut params = PowerSystemParams::default();
        params.m[0] = 0.0;
        assert!(params.validate().is_err());
    }

    #[test]
    fn params_json_roundtrip() {
        let params = PowerSystemParams::default();
        let json = serde_json::to_string(&params).unwrap();
        assert!(json.contains("\"M\""));
        let back: PowerSystemParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n_buses, 4);
        assert_eq!(back.edges, params.edges);
    }
}
