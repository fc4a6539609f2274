//! Two-sided bounds on the node-conditional moment integral
//!
//! ```text
//! M(a) = log ∫ x^a exp(Σ_j η_j x^{1/j} + B(x)) dμ(x)
//! ```
//!
//! The integrand is split as `f(x) = η_1 x + B(x)` (the base family) and
//! `g(x) = Σ_{j≥2} η_j x^{1/j} + a log x`. On each piece of constant
//! concavity, `g` is sandwiched between two lines; adding a line to `f` only
//! shifts the base natural parameter, so each piece integrates in closed form
//! through the base family's partition function and CDF.

mod inflection;
mod linear;
mod moments;
mod segment;

pub use inflection::inflection_points;
pub use linear::{concavity, linear_bounds, Concavity, Line, LinearBounds};
pub use moments::{grad_hess_a, log_partition, moment, GradHess, MomentEstimate, PartitionOptions, PrecisionPolicy};
pub use segment::{approx_m, BoundPiece, MBounds, PieceKind, Segmenter};

use num_rational::Ratio;

use crate::error::{GrmError, Result};
use crate::numeric::root;

/// Moment exponent `a`, kept exact so that `1/j + 1/j'` never drifts.
pub type Exponent = Ratio<i32>;

pub fn exponent(num: i32, den: i32) -> Exponent {
    Ratio::new(num, den)
}

pub(crate) fn exponent_f64(a: Exponent) -> f64 {
    *a.numer() as f64 / *a.denom() as f64
}

/// Node-conditional natural parameters `(η_1, …, η_k)` and a moment exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct NatParams {
    pub eta: Vec<f64>,
    pub a: Exponent,
}

impl NatParams {
    pub fn new(eta: Vec<f64>, a: Exponent) -> Self {
        assert!(!eta.is_empty(), "need at least η_1");
        NatParams { eta, a }
    }

    pub fn k(&self) -> usize {
        self.eta.len()
    }

    pub fn with_exponent(&self, a: Exponent) -> Self {
        NatParams { eta: self.eta.clone(), a }
    }

    pub(crate) fn a_f64(&self) -> f64 {
        exponent_f64(self.a)
    }

    /// True when `g ≡ 0`, i.e. no root terms and no moment weight.
    pub fn g_is_zero(&self) -> bool {
        *self.a.numer() == 0 && self.eta[1..].iter().all(|&e| e == 0.0)
    }

    fn g0(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for (idx, &e) in self.eta.iter().enumerate().skip(1) {
            if e != 0.0 {
                s += e * root(x, idx + 1);
            }
        }
        let a = self.a_f64();
        if a != 0.0 {
            s += a * x.ln();
        }
        s
    }

    fn g1(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for (idx, &e) in self.eta.iter().enumerate().skip(1) {
            if e != 0.0 {
                s += e * root(x, idx + 1) / ((idx + 1) as f64 * x);
            }
        }
        s + self.a_f64() / x
    }

    /// `x² g''(x) = Σ_j η_j (1-j)/j² x^{1/j} - a`, together with the sum of
    /// absolute term sizes used as a rounding scale.
    pub(crate) fn curvature(&self, x: f64) -> (f64, f64) {
        let a = self.a_f64();
        let mut s = -a;
        let mut scale = a.abs();
        for (idx, &e) in self.eta.iter().enumerate().skip(1) {
            if e != 0.0 {
                let j = (idx + 1) as f64;
                let t = e * (1.0 - j) / (j * j) * root(x, idx + 1);
                s += t;
                scale += t.abs();
            }
        }
        (s, scale)
    }

    fn g2(&self, x: f64) -> f64 {
        self.curvature(x).0 / (x * x)
    }
}

/// `g`, `g'` or `g''` at `x > 0`.
pub fn g_eval(np: &NatParams, x: f64, deriv: u8) -> Result<f64> {
    if !(x > 0.0) {
        return Err(GrmError::Domain(format!("g is defined for x > 0, got {x}")));
    }
    match deriv {
        0 => Ok(np.g0(x)),
        1 => Ok(np.g1(x)),
        2 => Ok(np.g2(x)),
        d => Err(GrmError::InvalidArgument(format!("derivative order {d} not supported"))),
    }
}
