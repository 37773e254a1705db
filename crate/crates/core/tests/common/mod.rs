//! Shared helpers for the integration and acceptance suites: random system
//! generators and a dense weighted least-squares reference solution that is
//! independent of the production solver path.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fiekit_core::fie::{eval_objective, FieConfig, FieObjective, PriorData};
use fiekit_core::linalg::spectral_radius;
use fiekit_core::lyapunov::{
    design_full_order_observer, LinearFunctionalObserver, LinearSystem, ObserverDesign,
};
use fiekit_core::model::{rollout, Dims, SystemModel};

pub struct RandomLinearInstance {
    pub sys: LinearSystem,
    pub config: FieConfig,
    pub prior: PriorData,
    pub horizon: usize,
    pub x0_true: DVector<f64>,
    pub w_true: Vec<DVector<f64>>,
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| uniform(rng, -1.0, 1.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| uniform(rng, -1.0, 1.0))
}

/// Random square matrix rescaled to a target spectral radius.
pub fn random_dynamics(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DMatrix<f64> {
    let mut a = random_matrix(rng, n, n);
    let current = spectral_radius(&a).max(1e-9);
    a *= radius / current;
    a
}

/// Random symmetric positive definite matrix, well-conditioned.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n) * 0.5;
    g.transpose() * g + DMatrix::identity(n, n) * uniform(rng, 0.3, 1.5)
}

/// Builds a random unconstrained linear estimation instance with noisy
/// simulated measurements and a perturbed prior.
pub fn random_linear_instance(seed: u64, eta: f64) -> RandomLinearInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = rng.random_range(1..=6usize);
    let n_w = rng.random_range(1..=3usize);
    let n_y = rng.random_range(1..=3usize);
    let n_z = rng.random_range(1..=2usize);
    let horizon = rng.random_range(1..=20usize);
    let radius = uniform(&mut rng, 0.3, 1.2);
    let a = random_dynamics(&mut rng, n_x, radius);
    let sys = LinearSystem::new(
        a,
        random_matrix(&mut rng, n_x, n_w),
        random_matrix(&mut rng, n_y, n_x),
        random_matrix(&mut rng, n_y, n_w) * 0.3,
        random_matrix(&mut rng, n_z, n_x),
    )
    .unwrap();
    let config = FieConfig::new(
        eta,
        FieObjective::Quadratic {
            p: random_spd(&mut rng, n_x),
            q: random_spd(&mut rng, n_w),
            r: random_spd(&mut rng, n_y),
        },
    )
    .unwrap();

    let x0_true = random_vector(&mut rng, n_x);
    let w_true: Vec<DVector<f64>> = (0..horizon)
        .map(|_| random_vector(&mut rng, n_w) * 0.2)
        .collect();
    let model = sys.to_model();
    let traj = fiekit_core::model::rollout(&model, &x0_true, &w_true, 0).unwrap();
    let x_bar = &x0_true + random_vector(&mut rng, n_x) * 0.5;
    let prior = PriorData {
        t0: 0,
        x_bar,
        w_bar: vec![DVector::zeros(n_w); horizon],
        y_bar: traj.y.clone(),
    };
    RandomLinearInstance {
        sys,
        config,
        prior,
        horizon,
        x0_true,
        w_true,
    }
}

/// Dense weighted least-squares solution of the unconstrained linear
/// estimation problem, assembled by explicitly stacking the rollout as a
/// linear map of the decision `(x0, w_0.., w_{T-1})`. Returns the optimal
/// decision, the end state, the functional estimate and the objective value.
///
/// Deliberately structured nothing like the production solver: matrix powers
/// plus one SVD solve of the full stacked system.
pub fn dense_ls_oracle(
    sys: &LinearSystem,
    config: &FieConfig,
    prior: &PriorData,
) -> (DVector<f64>, DVector<f64>, DVector<f64>, f64) {
    let (p, q, r) = match &config.objective {
        FieObjective::Quadratic { p, q, r } => (p, q, r),
        _ => panic!("oracle only covers the quadratic objective"),
    };
    let horizon = prior.horizon();
    let (n_x, n_w, n_y) = (sys.n_x(), sys.n_w(), sys.n_y());
    let n_dec = n_x + horizon * n_w;
    let n_res = n_x + horizon * (n_w + n_y);
    let eta = config.eta;

    // Cholesky-based square roots; the production path uses eigen sqrt
    let p_half = p.clone().cholesky().unwrap().l().transpose();
    let q_half = q.clone().cholesky().unwrap().l().transpose();
    let r_half = r.clone().cholesky().unwrap().l().transpose();

    // powers of A for the explicit state expansion
    let mut a_pow = vec![DMatrix::<f64>::identity(n_x, n_x)];
    for k in 0..horizon {
        a_pow.push(&sys.a * &a_pow[k]);
    }

    let mut m = DMatrix::<f64>::zeros(n_res, n_dec);
    let mut v = DVector::<f64>::zeros(n_res);
    let mut row = 0;

    let s_prior = (2.0 * eta.powi(horizon as i32)).sqrt();
    m.view_mut((row, 0), (n_x, n_x))
        .copy_from(&(&p_half * s_prior));
    v.rows_mut(row, n_x)
        .copy_from(&(&p_half * &prior.x_bar * s_prior));
    row += n_x;

    for k in 0..horizon {
        let s = (2.0 * eta.powi((horizon - 1 - k) as i32)).sqrt();
        // noise residual block
        m.view_mut((row, n_x + k * n_w), (n_w, n_w))
            .copy_from(&(&q_half * s));
        v.rows_mut(row, n_w)
            .copy_from(&(&q_half * &prior.w_bar[k] * s));
        row += n_w;
        // output residual block: y_k = C A^k x0 + sum_j C A^(k-1-j) B w_j + D w_k
        let rc = &r_half * &sys.c * s;
        m.view_mut((row, 0), (n_y, n_x)).copy_from(&(&rc * &a_pow[k]));
        for j in 0..k {
            let block = &rc * &a_pow[k - 1 - j] * &sys.b;
            m.view_mut((row, n_x + j * n_w), (n_y, n_w)).copy_from(&block);
        }
        let dblock = &r_half * &sys.d * s;
        let mut existing = m.view((row, n_x + k * n_w), (n_y, n_w)).into_owned();
        existing += dblock;
        m.view_mut((row, n_x + k * n_w), (n_y, n_w)).copy_from(&existing);
        v.rows_mut(row, n_y)
            .copy_from(&(&r_half * &prior.y_bar[k] * s));
        row += n_y;
    }
    assert_eq!(row, n_res);

    let svd = m.clone().svd(true, true);
    let theta = svd.solve(&v, 1e-12).unwrap();
    let objective = (&m * &theta - &v).norm_squared();

    let x0 = theta.rows(0, n_x).into_owned();
    let w: Vec<DVector<f64>> = (0..horizon)
        .map(|k| theta.rows(n_x + k * n_w, n_w).into_owned())
        .collect();
    let mut x_end = x0.clone();
    for wk in &w {
        x_end = &sys.a * &x_end + &sys.b * wk;
    }
    let z = &sys.l * &x_end;
    (x0, x_end, z, objective)
}

/// Random smooth nonlinear model with analytic Jacobians:
/// `f = A x + 0.3 sin(G x) + B w`, `h = C x + 0.4 tanh(H x) + D w`,
/// `phi = sum of state entries`.
pub fn random_nonlinear_model(seed: u64) -> (SystemModel, Dims) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = rng.random_range(2..=4usize);
    let n_w = rng.random_range(1..=3usize);
    let n_y = rng.random_range(1..=2usize);
    let dims = Dims::new(n_x, n_w, n_y, 1).unwrap();
    let radius = uniform(&mut rng, 0.5, 0.95);
    let a = random_dynamics(&mut rng, n_x, radius);
    let b = random_matrix(&mut rng, n_x, n_w);
    let g = random_matrix(&mut rng, n_x, n_x);
    let c = random_matrix(&mut rng, n_y, n_x);
    let d = random_matrix(&mut rng, n_y, n_w) * 0.5;
    let hmat = random_matrix(&mut rng, n_y, n_x);
    let alpha = 0.3;
    let beta = 0.4;

    let (fa, fb, fg) = (a.clone(), b.clone(), g.clone());
    let f = Arc::new(move |x: &DVector<f64>, w: &DVector<f64>, _t: u64| {
        let gx = &fg * x;
        &fa * x + gx.map(f64::sin) * alpha + &fb * w
    });
    let (ja, jb, jg) = (a.clone(), b.clone(), g.clone());
    let f_jac = Arc::new(move |x: &DVector<f64>, _w: &DVector<f64>, _t: u64| {
        let gx = &jg * x;
        let mut fx = ja.clone();
        for i in 0..fx.nrows() {
            for j in 0..fx.ncols() {
                fx[(i, j)] += alpha * gx[i].cos() * jg[(i, j)];
            }
        }
        (fx, jb.clone())
    });
    let (hc, hd, hh) = (c.clone(), d.clone(), hmat.clone());
    let h = Arc::new(move |x: &DVector<f64>, w: &DVector<f64>, _t: u64| {
        let hx = &hh * x;
        &hc * x + hx.map(f64::tanh) * beta + &hd * w
    });
    let (kc, kd, kh) = (c, d, hmat);
    let h_jac = Arc::new(move |x: &DVector<f64>, _w: &DVector<f64>, _t: u64| {
        let hx = &kh * x;
        let mut cx = kc.clone();
        for i in 0..cx.nrows() {
            let sech2 = 1.0 - hx[i].tanh().powi(2);
            for j in 0..cx.ncols() {
                cx[(i, j)] += beta * sech2 * kh[(i, j)];
            }
        }
        (cx, kd.clone())
    });
    let phi = Arc::new(move |x: &DVector<f64>| DVector::from_element(1, x.sum()));
    let model = SystemModel::new(dims, f, h, phi)
        .with_f_jacobian(f_jac)
        .with_h_jacobian(h_jac);
    (model, dims)
}

/// Central finite-difference gradient of the objective through the rollout,
/// stacked as `(x0, w_0, .., w_{T-1})`.
pub fn fd_objective_gradient(
    model: &SystemModel,
    config: &FieConfig,
    prior: &PriorData,
    x0: &DVector<f64>,
    w: &[DVector<f64>],
    t: u64,
) -> DVector<f64> {
    let n_x = x0.len();
    let n_w = model.dims().n_w;
    let horizon = w.len();
    let eval = |x0: &DVector<f64>, w: &[DVector<f64>]| -> f64 {
        let traj = rollout(model, x0, w, prior.t0).unwrap();
        eval_objective(config, x0, w, &traj.y, prior, t).unwrap()
    };
    let mut grad = DVector::zeros(n_x + horizon * n_w);
    let step = |v: f64| 6e-6 * (1.0 + v.abs());
    for i in 0..n_x {
        let h = step(x0[i]);
        let mut xp = x0.clone();
        xp[i] += h;
        let mut xm = x0.clone();
        xm[i] -= h;
        grad[i] = (eval(&xp, w) - eval(&xm, w)) / (2.0 * h);
    }
    for k in 0..horizon {
        for i in 0..n_w {
            let h = step(w[k][i]);
            let mut wp = w.to_vec();
            wp[k][i] += h;
            let mut wm = w.to_vec();
            wm[k][i] -= h;
            grad[n_x + k * n_w + i] = (eval(x0, &wp) - eval(x0, &wm)) / (2.0 * h);
        }
    }
    grad
}

/// A random detectable system with a Riccati-designed full-order observer.
/// The dynamics are symmetric with spectrum in `[0.75, 0.95]`, which keeps
/// estimation-error decay clean (no rotating modes), and the small process
/// weight keeps the observer spectrum close to the plant's.
///
/// Also returns the true initial state and a wrong internal start for decay
/// experiments.
pub fn certified_observer_instance(
    seed: u64,
) -> (
    LinearSystem,
    LinearFunctionalObserver,
    DVector<f64>,
    DVector<f64>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = rng.random_range(3..=6usize);
    let n_y = rng.random_range(1..=2usize);
    let n_z = rng.random_range(2..=3usize).min(n_x);
    let g = DMatrix::from_fn(n_x, n_x, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let qr = g.qr();
    let qmat = qr.q();
    let eigs = DVector::from_fn(n_x, |_, _| 0.75 + 0.2 * rng.random::<f64>());
    let a = &qmat * DMatrix::from_diagonal(&eigs) * qmat.transpose();
    let sys = LinearSystem::new(
        a,
        DMatrix::from_fn(n_x, 1, |_, _| rng.random::<f64>() - 0.5),
        DMatrix::from_fn(n_y, n_x, |_, _| rng.random::<f64>() * 2.0 - 1.0),
        DMatrix::zeros(n_y, 1),
        DMatrix::from_fn(n_z, n_x, |_, _| rng.random::<f64>() * 2.0 - 1.0),
    )
    .unwrap();
    let obs = design_full_order_observer(
        &sys,
        ObserverDesign::Riccati {
            qn: DMatrix::identity(n_x, n_x) * 1e-3,
            rn: DMatrix::identity(n_y, n_y),
        },
    )
    .expect("symmetric stable dynamics are always detectable");
    let x0 = DVector::from_fn(n_x, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let wrong_offset = DVector::from_fn(n_x, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    (sys, obs, x0, wrong_offset)
}
