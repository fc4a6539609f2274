//! Base univariate exponential families with sufficient statistic `T(x) = x`.

use std::fmt;
use std::str::FromStr;

use statrs::function::gamma::ln_gamma;

use crate::error::{GrmError, Result};
use crate::numeric::{log_sub, poisson_log_range};

/// Left edge of the piecewise machinery for the Lebesgue measure; `(0, ε)` is
/// bounded analytically.
pub const LEBESGUE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Poisson,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Counting,
    Lebesgue,
}

impl Family {
    pub fn measure(self) -> Measure {
        match self {
            Family::Poisson => Measure::Counting,
            Family::Exponential => Measure::Lebesgue,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Exponential => "exponential",
        }
    }

    /// Support membership: nonnegative integers or nonnegative reals.
    pub fn in_domain(self, x: f64) -> bool {
        match self {
            Family::Poisson => x >= 0.0 && x.is_finite() && x.fract() == 0.0,
            Family::Exponential => x >= 0.0 && x.is_finite(),
        }
    }

    pub fn check_domain(self, x: f64) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(GrmError::Domain(format!("{x} is not in the {} support", self.name())))
        }
    }

    fn check_eta(self, eta: f64) -> Result<()> {
        if eta.is_nan() {
            return Err(GrmError::InfeasibleNaturalParam("NaN".into()));
        }
        if self == Family::Exponential && eta >= 0.0 {
            return Err(GrmError::InfeasibleNaturalParam(format!(
                "exponential family needs eta < 0, got {eta}"
            )));
        }
        Ok(())
    }

    /// Base-family log partition `A(η)`.
    pub fn log_partition(self, eta: f64) -> Result<f64> {
        self.check_eta(eta)?;
        Ok(match self {
            Family::Poisson => eta.exp(),
            Family::Exponential => -(-eta).ln(),
        })
    }

    /// `log P(X <= x)` under the base family with natural parameter `η`.
    pub fn log_cdf(self, x: f64, eta: f64) -> Result<f64> {
        self.check_eta(eta)?;
        if x.is_nan() {
            return Err(GrmError::Domain("NaN".into()));
        }
        if x == f64::INFINITY {
            return Ok(0.0);
        }
        if x < 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(match self {
            Family::Poisson => {
                let m = x.floor();
                poisson_log_range(0, Some(m as u64), eta)
            }
            Family::Exponential => {
                // log(1 - e^{ηx})
                let t = eta * x;
                if t > -std::f64::consts::LN_2 {
                    (-t.exp_m1()).ln()
                } else {
                    (-t.exp()).ln_1p()
                }
            }
        })
    }

    /// Log base measure `B(x)`.
    pub fn log_base_measure(self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match self {
            Family::Poisson if x <= 1.0 => 0.0,
            Family::Poisson => -ln_gamma(x + 1.0),
            Family::Exponential => 0.0,
        })
    }

    /// `log ∫_{[lo, hi)} exp(η x + B(x)) dμ(x)`.
    ///
    /// For the counting measure the half-open interval covers the integers
    /// `ceil(lo) ..= ceil(hi) - 1`. The Lebesgue integral is evaluated in closed
    /// form for any `η` on bounded intervals; unbounded intervals need `η < 0`.
    pub fn log_integral(self, eta: f64, lo: f64, hi: f64) -> Result<f64> {
        if eta.is_nan() {
            return Err(GrmError::InfeasibleNaturalParam("NaN".into()));
        }
        if !(hi > lo) {
            return Ok(f64::NEG_INFINITY);
        }
        match self {
            Family::Poisson => {
                let first = lo.max(0.0).ceil();
                let last = if hi.is_infinite() {
                    None
                } else {
                    let l = hi.ceil() - 1.0;
                    if l < first {
                        return Ok(f64::NEG_INFINITY);
                    }
                    Some(l as u64)
                };
                if first >= MAX_EXACT_COUNT {
                    return far_poisson_tail(first, eta);
                }
                // A(η) + log(CDF(hi) - CDF(lo)) collapsed into one range sum.
                Ok(eta.exp() + poisson_log_range(first as u64, last, eta))
            }
            Family::Exponential => {
                let lo = lo.max(0.0);
                if hi.is_infinite() {
                    if eta >= 0.0 {
                        return Err(GrmError::InfeasibleNaturalParam(format!(
                            "unbounded exponential tail with eta = {eta}"
                        )));
                    }
                    return Ok(eta * lo - (-eta).ln());
                }
                let w = hi - lo;
                if eta == 0.0 {
                    return Ok(w.ln());
                }
                if eta < 0.0 {
                    // e^{η lo} (1 - e^{η w}) / (-η)
                    Ok(eta * lo + log_sub(0.0, eta * w) - (-eta).ln())
                } else {
                    // e^{η hi} (1 - e^{-η w}) / η
                    Ok(eta * hi + log_sub(0.0, -eta * w) - eta.ln())
                }
            }
        }
    }
}

/// Counts from here on are no longer exactly representable.
const MAX_EXACT_COUNT: f64 = 9_007_199_254_740_992.0;

/// `log Σ_{x >= first} exp(η x - ln x!)` for astronomically large `first`,
/// where the first term dominates: the term ratios are at most
/// `r = e^η / (first + 1)`, so the sum lies within a factor `1 / (1 - r)`
/// of the first term.
fn far_poisson_tail(first: f64, eta: f64) -> Result<f64> {
    let r = eta.exp() / (first + 1.0);
    if !(r < 1e-6) {
        return Err(GrmError::Normalization(format!(
            "Poisson mass beyond {first} with eta = {eta} cannot be resolved"
        )));
    }
    Ok(first * eta - ln_gamma(first + 1.0) - (-r).ln_1p())
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = GrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "exponential" => Ok(Family::Exponential),
            other => Err(GrmError::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }
}
