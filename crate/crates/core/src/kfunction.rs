//! Scalar comparison functions of class K.
//!
//! A class-K function is continuous, strictly increasing and zero at zero.
//! These shape the discounted estimation objective and the gain terms of
//! Lyapunov certificates.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A scalar class-K function on `[0, inf)`.
#[derive(Clone)]
pub enum KFunction {
    /// `a * s^2`, class K-infinity for `a > 0`.
    Quadratic { a: f64 },
    /// `a * s^p` with `p >= 1`, class K-infinity for `a > 0`.
    Power { a: f64, p: f64 },
    /// User-supplied monotone map with zero at zero. Checked by sampling.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for KFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KFunction::Quadratic { a } => write!(f, "Quadratic {{ a: {a} }}"),
            KFunction::Power { a, p } => write!(f, "Power {{ a: {a}, p: {p} }}"),
            KFunction::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl KFunction {
    /// The identity map `s -> s`.
    pub fn identity() -> Self {
        KFunction::Power { a: 1.0, p: 1.0 }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            KFunction::Quadratic { a } => a * s * s,
            KFunction::Power { a, p } => a * s.powf(*p),
            KFunction::Custom(f) => f(s),
        }
    }

    /// Derivative with respect to `s`; used by the gradient-descent path of
    /// the general estimation objective. For `p = 1` the subgradient at
    /// `s = 0` is taken as 0.
    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            KFunction::Quadratic { a } => 2.0 * a * s,
            KFunction::Power { a, p } => {
                if s == 0.0 {
                    0.0
                } else {
                    a * p * s.powf(p - 1.0)
                }
            }
            KFunction::Custom(f) => {
                // central difference; custom maps carry no analytic form
                let h = f64::EPSILON.sqrt() * (1.0 + s.abs());
                let lo = (s - h).max(0.0);
                (f(s + h) - f(lo)) / (s + h - lo)
            }
        }
    }

    /// Checks the class-K contract: zero at zero and strictly increasing,
    /// sampled at 100 log-spaced points spanning `[1e-6, 1e3]`.
    pub fn validate(&self) -> Result<()> {
        match self {
            KFunction::Quadratic { a } | KFunction::Power { a, .. } if *a <= 0.0 => {
                return Err(Error::InvalidInput(
                    "class-K gain must be positive".into(),
                ));
            }
            KFunction::Power { p, .. } if *p < 1.0 => {
                return Err(Error::InvalidInput(
                    "class-K power exponent must satisfy p >= 1".into(),
                ));
            }
            _ => {}
        }
        let zero = self.eval(0.0);
        if zero != 0.0 {
            return Err(Error::InvalidInput(format!(
                "class-K function must vanish at 0, got {zero}"
            )));
        }
        let mut prev_s = 0.0;
        let mut prev_v = 0.0;
        for i in 0..100 {
            let s = 10f64.powf(-6.0 + 9.0 * i as f64 / 99.0);
            let v = self.eval(s);
            if !(v > prev_v) {
                return Err(Error::InvalidInput(format!(
                    "class-K function must be strictly increasing: f({prev_s}) = {prev_v}, f({s}) = {v}"
                )));
            }
            prev_s = s;
            prev_v = v;
        }
        Ok(())
    }
}
