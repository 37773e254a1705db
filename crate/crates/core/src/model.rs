//! Discrete-time nonlinear time-varying system models.
//!
//! A model is the tuple `(f, h, phi, X, W)`:
//!
//! ```text
//! x[t+1] = f(x[t], w[t], t)        state transition
//! y[t]   = h(x[t], w[t], t)        measured output
//! z[t]   = phi(x[t])               virtual output (not measurable)
//! x[t] in X,  w[t] in W            box constraint sets
//! ```
//!
//! One noise vector `w` drives both the dynamics and the measurement, so
//! separate process/measurement noise is the special case where `f` and `h`
//! read disjoint components. All callbacks must be deterministic and free of
//! shared mutable state; the estimation solver relies on re-evaluation
//! yielding bit-identical results.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// State/noise/output/virtual-output dimensions of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_x: usize,
    pub n_w: usize,
    pub n_y: usize,
    pub n_z: usize,
}

impl Dims {
    pub fn new(n_x: usize, n_w: usize, n_y: usize, n_z: usize) -> Result<Self> {
        if n_x == 0 || n_w == 0 || n_y == 0 || n_z == 0 {
            return Err(Error::InvalidInput(
                "all model dimensions must be positive".into(),
            ));
        }
        Ok(Dims { n_x, n_w, n_y, n_z })
    }
}

type MapFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, u64) -> DVector<f64> + Send + Sync>;
type StateFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Returns the pair of Jacobians (d/dx, d/dw) at the evaluation point.
type JacFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>, u64) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync>;

/// An axis-aligned box, possibly unbounded in any direction.
///
/// Membership is componentwise `lower <= v <= upper`; the fully unbounded box
/// encodes "no constraint".
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("box bounds", lower.len(), upper.len()));
        }
        for i in 0..lower.len() {
            if lower[i].is_nan() || upper[i].is_nan() {
                return Err(Error::InvalidInput("box bounds must not be NaN".into()));
            }
            if lower[i] > upper[i] {
                return Err(Error::InvalidInput(format!(
                    "box lower bound exceeds upper bound at component {i}: {} > {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(BoxSet { lower, upper })
    }

    /// The whole space: every bound infinite.
    pub fn unbounded(dim: usize) -> Self {
        BoxSet {
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    /// The infinity-norm ball `{ v : |v_i| <= bound }`.
    pub fn symmetric(dim: usize, bound: f64) -> Result<Self> {
        if !(bound >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "symmetric box bound must be nonnegative, got {bound}"
            )));
        }
        BoxSet::new(
            DVector::from_element(dim, -bound),
            DVector::from_element(dim, bound),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        self.violation(v) == 0.0
    }

    /// Largest componentwise distance outside the box, 0 for members.
    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        assert_eq!(v.len(), self.dim(), "box membership dimension mismatch");
        let mut worst = 0.0_f64;
        for i in 0..v.len() {
            worst = worst.max(self.lower[i] - v[i]).max(v[i] - self.upper[i]);
        }
        worst.max(0.0)
    }

    /// Componentwise clamp onto the box.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.dim(), "box projection dimension mismatch");
        DVector::from_fn(v.len(), |i, _| v[i].clamp(self.lower[i], self.upper[i]))
    }

    /// True when every bound is finite.
    pub fn is_bounded(&self) -> bool {
        self.lower.iter().all(|v| v.is_finite()) && self.upper.iter().all(|v| v.is_finite())
    }

    /// True when no bound is finite, i.e. the set imposes nothing.
    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|v| *v == f64::NEG_INFINITY)
            && self.upper.iter().all(|v| *v == f64::INFINITY)
    }
}

/// A discrete-time system `(f, h, phi)` with constraint boxes.
///
/// Constructed via [`SystemModel::new`] plus builder-style extras for
/// analytic Jacobians and constraint sets. Immutable after construction and
/// safe to share across threads.
#[derive(Clone)]
pub struct SystemModel {
    dims: Dims,
    f: MapFn,
    h: MapFn,
    phi: StateFn,
    f_jac: Option<JacFn>,
    h_jac: Option<JacFn>,
    x_set: BoxSet,
    w_set: BoxSet,
}

impl SystemModel {
    pub fn new(dims: Dims, f: MapFn, h: MapFn, phi: StateFn) -> Self {
        SystemModel {
            dims,
            f,
            h,
            phi,
            f_jac: None,
            h_jac: None,
            x_set: BoxSet::unbounded(dims.n_x),
            w_set: BoxSet::unbounded(dims.n_w),
        }
    }

    pub fn with_f_jacobian(mut self, jac: JacFn) -> Self {
        self.f_jac = Some(jac);
        self
    }

    pub fn with_h_jacobian(mut self, jac: JacFn) -> Self {
        self.h_jac = Some(jac);
        self
    }

    pub fn with_state_set(mut self, set: BoxSet) -> Result<Self> {
        if set.dim() != self.dims.n_x {
            return Err(Error::dim("state set", self.dims.n_x, set.dim()));
        }
        self.x_set = set;
        Ok(self)
    }

    pub fn with_noise_set(mut self, set: BoxSet) -> Result<Self> {
        if set.dim() != self.dims.n_w {
            return Err(Error::dim("noise set", self.dims.n_w, set.dim()));
        }
        self.w_set = set;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn state_set(&self) -> &BoxSet {
        &self.x_set
    }

    pub fn noise_set(&self) -> &BoxSet {
        &self.w_set
    }

    pub fn f(&self, x: &DVector<f64>, w: &DVector<f64>, t: u64) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dims.n_x);
        debug_assert_eq!(w.len(), self.dims.n_w);
        (self.f)(x, w, t)
    }

    pub fn h(&self, x: &DVector<f64>, w: &DVector<f64>, t: u64) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dims.n_x);
        debug_assert_eq!(w.len(), self.dims.n_w);
        (self.h)(x, w, t)
    }

    pub fn phi(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dims.n_x);
        (self.phi)(x)
    }

    /// Jacobians (df/dx, df/dw); analytic if supplied, otherwise forward
    /// finite differences with step `sqrt(eps) * (1 + |component|)`.
    pub fn f_jacobian(&self, x: &DVector<f64>, w: &DVector<f64>, t: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.f_jac {
            Some(j) => j(x, w, t),
            None => fd_jacobian_pair(|x, w| (self.f)(x, w, t), x, w, self.dims.n_x),
        }
    }

    /// Jacobians (dh/dx, dh/dw), analytic or finite-difference.
    pub fn h_jacobian(&self, x: &DVector<f64>, w: &DVector<f64>, t: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.h_jac {
            Some(j) => j(x, w, t),
            None => fd_jacobian_pair(|x, w| (self.h)(x, w, t), x, w, self.dims.n_y),
        }
    }

    /// Jacobian dphi/dx by forward differences (phi carries no analytic form;
    /// nothing in the solver needs it, this exists for diagnostics).
    pub fn phi_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let f0 = (self.phi)(x);
        let mut jac = DMatrix::zeros(self.dims.n_z, self.dims.n_x);
        let mut xp = x.clone();
        for j in 0..x.len() {
            let step = f64::EPSILON.sqrt() * (1.0 + x[j].abs());
            xp[j] = x[j] + step;
            let fj = (self.phi)(&xp);
            xp[j] = x[j];
            for i in 0..self.dims.n_z {
                jac[(i, j)] = (fj[i] - f0[i]) / step;
            }
        }
        jac
    }
}

fn fd_jacobian_pair<F>(
    eval: F,
    x: &DVector<f64>,
    w: &DVector<f64>,
    n_out: usize,
) -> (DMatrix<f64>, DMatrix<f64>)
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let f0 = eval(x, w);
    let mut jx = DMatrix::zeros(n_out, x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let step = f64::EPSILON.sqrt() * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let fj = eval(&xp, w);
        xp[j] = x[j];
        for i in 0..n_out {
            jx[(i, j)] = (fj[i] - f0[i]) / step;
        }
    }
    let mut jw = DMatrix::zeros(n_out, w.len());
    let mut wp = w.clone();
    for j in 0..w.len() {
        let step = f64::EPSILON.sqrt() * (1.0 + w[j].abs());
        wp[j] = w[j] + step;
        let fj = eval(x, &wp);
        wp[j] = w[j];
        for i in 0..n_out {
            jw[(i, j)] = (fj[i] - f0[i]) / step;
        }
    }
    (jx, jw)
}

/// A consistent solution segment of a system over `[t0, t0 + T]`.
///
/// Sequence lengths follow the `(T+1, T, T, T+1)` pattern: states and virtual
/// outputs exist at every step, noise and measured outputs only up to the
/// second-to-last one. `T = 0` degenerates to a single state plus its virtual
/// output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t0: u64,
    pub x: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(
        t0: u64,
        x: Vec<DVector<f64>>,
        w: Vec<DVector<f64>>,
        y: Vec<DVector<f64>>,
        z: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidInput(
                "trajectory needs at least one state".into(),
            ));
        }
        let horizon = x.len() - 1;
        if w.len() != horizon {
            return Err(Error::dim("trajectory noise length", horizon, w.len()));
        }
        if y.len() != horizon {
            return Err(Error::dim("trajectory output length", horizon, y.len()));
        }
        if z.len() != horizon + 1 {
            return Err(Error::dim(
                "trajectory virtual output length",
                horizon + 1,
                z.len(),
            ));
        }
        Ok(Trajectory { t0, x, w, y, z })
    }

    /// Number of transitions `T`; the trajectory holds `T + 1` states.
    pub fn horizon(&self) -> usize {
        self.x.len() - 1
    }

    /// Writes the `t, x_*, w_*, y_*, z_*` CSV rows; at the final step the
    /// noise and output fields are left empty.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let (n_x, n_z) = (self.x[0].len(), self.z[0].len());
        let n_w = self.w.first().map_or(0, |v| v.len());
        let n_y = self.y.first().map_or(0, |v| v.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n_x).map(|i| format!("x_{i}")));
        header.extend((0..n_w).map(|i| format!("w_{i}")));
        header.extend((0..n_y).map(|i| format!("y_{i}")));
        header.extend((0..n_z).map(|i| format!("z_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.x.len() {
            let mut fields = vec![format!("{}", self.t0 + k as u64)];
            fields.extend(self.x[k].iter().map(|v| format!("{v}")));
            if k < self.w.len() {
                fields.extend(self.w[k].iter().map(|v| format!("{v}")));
                fields.extend(self.y[k].iter().map(|v| format!("{v}")));
            } else {
                fields.extend(std::iter::repeat(String::new()).take(n_w + n_y));
            }
            fields.extend(self.z[k].iter().map(|v| format!("{v}")));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Where and how a trajectory violates the constraint sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    /// Absolute time index of the offending element.
    pub t: u64,
    pub kind: ViolationKind,
    /// Largest componentwise distance outside the box.
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    State,
    Noise,
}

/// Result of [`check_solution`].
#[derive(Debug, Clone)]
pub struct SolutionReport {
    pub is_solution: bool,
    /// Largest dynamics/output/functional defect (infinity norm).
    pub max_defect: f64,
    pub constraint_violations: Vec<ConstraintViolation>,
}

/// Rolls the model forward from `x0` under the given noise sequence.
///
/// The returned trajectory is dynamically consistent by construction; set
/// membership is deliberately not enforced here (see [`check_solution`]).
pub fn rollout(
    model: &SystemModel,
    x0: &DVector<f64>,
    w_seq: &[DVector<f64>],
    t0: u64,
) -> Result<Trajectory> {
    let dims = model.dims();
    if x0.len() != dims.n_x {
        return Err(Error::dim("initial state", dims.n_x, x0.len()));
    }
    for w in w_seq {
        if w.len() != dims.n_w {
            return Err(Error::dim("noise vector", dims.n_w, w.len()));
        }
    }
    let horizon = w_seq.len();
    let mut x = Vec::with_capacity(horizon + 1);
    let mut y = Vec::with_capacity(horizon);
    let mut z = Vec::with_capacity(horizon + 1);
    x.push(x0.clone());
    z.push(model.phi(x0));
    for (k, w) in w_seq.iter().enumerate() {
        let t = t0 + k as u64;
        let xk = &x[k];
        y.push(model.h(xk, w, t));
        let next = model.f(xk, w, t);
        z.push(model.phi(&next));
        x.push(next);
    }
    Trajectory::new(t0, x, w_seq.to_vec(), y, z)
}

/// Checks dynamic consistency and set membership of a trajectory.
///
/// `is_solution` holds iff every dynamics, output and functional defect is
/// within `tol` and every state/noise element lies in its box.
pub fn check_solution(model: &SystemModel, traj: &Trajectory, tol: f64) -> Result<SolutionReport> {
    let dims = model.dims();
    for x in &traj.x {
        if x.len() != dims.n_x {
            return Err(Error::dim("trajectory state", dims.n_x, x.len()));
        }
    }
    for w in &traj.w {
        if w.len() != dims.n_w {
            return Err(Error::dim("trajectory noise", dims.n_w, w.len()));
        }
    }
    let mut max_defect = 0.0_f64;
    for k in 0..traj.horizon() {
        let t = traj.t0 + k as u64;
        let pred = model.f(&traj.x[k], &traj.w[k], t);
        max_defect = max_defect.max((&traj.x[k + 1] - pred).amax());
        let out = model.h(&traj.x[k], &traj.w[k], t);
        max_defect = max_defect.max((&traj.y[k] - out).amax());
    }
    for k in 0..traj.x.len() {
        max_defect = max_defect.max((&traj.z[k] - model.phi(&traj.x[k])).amax());
    }

    let mut violations = Vec::new();
    for (k, x) in traj.x.iter().enumerate() {
        let amount = model.state_set().violation(x);
        if amount > 0.0 {
            violations.push(ConstraintViolation {
                t: traj.t0 + k as u64,
                kind: ViolationKind::State,
                amount,
            });
        }
    }
    for (k, w) in traj.w.iter().enumerate() {
        let amount = model.noise_set().violation(w);
        if amount > 0.0 {
            violations.push(ConstraintViolation {
                t: traj.t0 + k as u64,
                kind: ViolationKind::Noise,
                amount,
            });
        }
    }
    Ok(SolutionReport {
        is_solution: max_defect <= tol && violations.is_empty(),
        max_defect,
        constraint_violations: violations,
    })
}

/// Uniform noise source over a bounded box, reproducible from a 64-bit seed.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    set: BoxSet,
    seed: u64,
}

impl NoiseSampler {
    /// Uniform distribution on `set`; every bound must be finite (a
    /// zero-width box yields a constant).
    pub fn uniform(set: BoxSet, seed: u64) -> Result<Self> {
        if !set.is_bounded() {
            return Err(Error::InvalidInput(
                "uniform noise sampler requires finite box bounds".into(),
            ));
        }
        Ok(NoiseSampler { set, seed })
    }

    pub fn set(&self) -> &BoxSet {
        &self.set
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    /// Draws `count` vectors; the stream is a pure function of the seed.
    pub fn sample_sequence(&self, count: usize) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let dim = self.set.dim();
        (0..count)
            .map(|_| {
                DVector::from_fn(dim, |i, _| {
                    let lo = self.set.lower()[i];
                    let hi = self.set.upper()[i];
                    lo + (hi - lo) * rng.random::<f64>()
                })
            })
            .collect()
    }
}

/// Derives a stream-specific seed from a base seed (SplitMix64 step).
///
/// Keeps independent noise channels decorrelated while staying reproducible
/// from one user-facing seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut s = base
        .wrapping_add(0x9E3779B97F4A7C15_u64.wrapping_mul(stream.wrapping_add(1)));
    s = (s ^ (s >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    s = (s ^ (s >> 27)).wrapping_mul(0x94D049BB133111EB);
    s ^ (s >> 31)
}

/// Simulates `T` steps with sampled noise, split as `w = (w_x, w_y)` between
/// the two samplers (their dimensions must add up to `n_w`).
pub fn simulate(
    model: &SystemModel,
    x0: &DVector<f64>,
    sampler_x: &NoiseSampler,
    sampler_y: &NoiseSampler,
    horizon: usize,
    t0: u64,
) -> Result<Trajectory> {
    let dims = model.dims();
    if sampler_x.dim() + sampler_y.dim() != dims.n_w {
        return Err(Error::dim(
            "noise sampler split",
            dims.n_w,
            sampler_x.dim() + sampler_y.dim(),
        ));
    }
    let wx = sampler_x.sample_sequence(horizon);
    let wy = sampler_y.sample_sequence(horizon);
    let w_seq: Vec<DVector<f64>> = wx
        .into_iter()
        .zip(wy)
        .map(|(a, b)| {
            let mut w = DVector::zeros(dims.n_w);
            w.rows_mut(0, a.len()).copy_from(&a);
            w.rows_mut(a.len(), b.len()).copy_from(&b);
            w
        })
        .collect();
    rollout(model, x0, &w_seq, t0)
}
