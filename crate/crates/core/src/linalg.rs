//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here targets the modest matrix sizes of observer design and
//! certificate verification (tens of states), not large-scale problems.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Spectral radius, max |lambda_i|, via an eigenvalue solve.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral_radius requires a square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Relative symmetry check: ||M - M^T|| <= tol * max(1, ||M||).
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let asym = (m - m.transpose()).norm();
    asym <= tol * m.norm().max(1.0)
}

/// Eigenvalue extremes of a symmetric matrix.
pub fn symmetric_eig_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in eig.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

pub fn min_eig_symmetric(m: &DMatrix<f64>) -> f64 {
    symmetric_eig_bounds(m).0
}

pub fn max_eig_symmetric(m: &DMatrix<f64>) -> f64 {
    symmetric_eig_bounds(m).1
}

/// Symmetric positive semi-definite square root via eigendecomposition.
///
/// Fails if the matrix is not symmetric (relative tol 1e-10) or has an
/// eigenvalue below `-1e-10 * max(1, lambda_max)`.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_symmetric(m, 1e-10) {
        return Err(Error::InvalidInput(
            "matrix square root requires a symmetric matrix".into(),
        ));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().cloned().fold(1.0_f64, f64::max);
    let mut d = DVector::zeros(eig.eigenvalues.len());
    for (i, l) in eig.eigenvalues.iter().enumerate() {
        if *l < -1e-10 * scale {
            return Err(Error::InvalidInput(format!(
                "matrix square root requires positive semi-definiteness (eigenvalue {l})"
            )));
        }
        d[i] = l.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&d) * v.transpose())
}

/// Checks that `m` is symmetric positive definite with lambda_min > 0.
pub fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!("{what} must be square")));
    }
    if !is_symmetric(m, 1e-10) {
        return Err(Error::InvalidInput(format!("{what} must be symmetric")));
    }
    let lo = min_eig_symmetric(&((m + m.transpose()) * 0.5));
    if lo <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "{what} must be positive definite (min eigenvalue {lo})"
        )));
    }
    Ok(())
}

/// Rank of a real matrix via SVD with relative tolerance.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|s| **s > rel_tol * smax)
        .count()
}

/// PBH detectability test for the pair (A, C): every eigenvalue of A on or
/// outside the unit circle must be observable, i.e. [A - lambda I; C] has
/// full column rank.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    assert!(a.is_square() && c.ncols() == n);
    let eigs = a.complex_eigenvalues();
    for lambda in eigs.iter() {
        if lambda.norm() < 1.0 - 1e-9 {
            continue;
        }
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                pencil[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            pencil[(i, i)] -= lambda;
        }
        for i in 0..c.nrows() {
            for j in 0..n {
                pencil[(n + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        let svd = pencil.svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-10 * smax.max(1.0))
            .count();
        if rank < n {
            return false;
        }
    }
    true
}

/// Ordinary least-squares line fit `y ~ slope * x + intercept`.
///
/// Returns `(slope, intercept, r_squared)`. Used to quantify geometric decay
/// of estimation errors on a log scale.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    assert!(n >= 2.0, "line_fit needs at least two points");
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}
