//! Log-space arithmetic and an accurate Poisson probability kernel.

use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use std::sync::OnceLock;

const LN_FACTORIAL_TABLE: usize = 256;

/// `ln x!`, tabulated for small `x`.
pub fn ln_factorial(x: u64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let t = TABLE.get_or_init(|| (0..LN_FACTORIAL_TABLE).map(|i| ln_gamma(i as f64 + 1.0)).collect());
    match t.get(x as usize) {
        Some(v) => *v,
        None => ln_gamma(x as f64 + 1.0),
    }
}

/// `x^{1/j}`.
#[inline]
pub fn root(x: f64, j: usize) -> f64 {
    match j {
        1 => x,
        2 => x.sqrt(),
        3 => x.cbrt(),
        _ => x.powf(1.0 / j as f64),
    }
}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(exp(a) - exp(b))`, requires `a >= b`. Returns `-inf` when equal.
pub fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    let d = b - a;
    // log1p(-e^d) loses accuracy for d close to 0; ln(-expm1(d)) does not.
    if d > -std::f64::consts::LN_2 {
        a + (-d.exp_m1()).ln()
    } else {
        a + (-d.exp()).ln_1p()
    }
}

pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = LogAcc::new();
    for v in values {
        if v == f64::INFINITY {
            return v;
        }
        acc.push(v);
    }
    acc.value()
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Stirling series remainder `ln Γ(n+1) - (n+½)ln n + n - ln√(2π)`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return ln_factorial(n as u64) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/np) + np - x`, evaluated without cancellation near `x = np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// Log of the Poisson pmf at integer `x` for rate `exp(log_rate)`.
pub fn poisson_log_pmf(x: u64, log_rate: f64) -> f64 {
    log_pmf(x, log_rate, log_rate.exp())
}

fn log_pmf(x: u64, log_rate: f64, rate: f64) -> f64 {
    if rate == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == 0 {
        return -rate;
    }
    let xf = x as f64;
    if rate == 0.0 {
        return f64::NEG_INFINITY;
    }
    if rate < 1e-10 * xf || xf < 64.0 {
        // Small counts and the far left of the mode have no cancellation problem.
        return xf * log_rate - rate - ln_factorial(x);
    }
    -stirlerr(xf) - bd0(xf, rate) - 0.5 * (2.0 * PI * xf).ln()
}

/// Relative size below which a summand no longer changes the running sum (e^-40).
const NEGLIGIBLE: f64 = 4.248_354_255_291_589e-18;
/// Walks recompute a term from the pmf this often to stop rounding drift.
const RESYNC: u64 = 64;

/// Running `log Σ exp(t)` kept as a maximum and a scaled linear sum.
struct LogAcc {
    max: f64,
    sum: f64,
}

impl LogAcc {
    fn new() -> Self {
        LogAcc {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    /// Adds `exp(t)`; returns whether it was negligible against the total.
    fn push(&mut self, t: f64) -> bool {
        if t == f64::NEG_INFINITY {
            return true;
        }
        if t > self.max {
            self.sum = self.sum * (self.max - t).exp() + 1.0;
            self.max = t;
            false
        } else {
            let e = (t - self.max).exp();
            self.sum += e;
            e < NEGLIGIBLE * self.sum
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            return self.max;
        }
        self.max + self.sum.ln()
    }
}

/// `log Σ_{x=lo}^{hi} pmf(x)` for a range containing `from`, with the terms
/// nonincreasing away from `from` in both directions (so `from` is the mode
/// clamped into the range). Terms are advanced by their ratio `rate / x` in
/// linear space relative to `pmf(from)` and resynchronized periodically.
fn walk(from: u64, lo: u64, hi: Option<u64>, log_rate: f64, rate: f64) -> f64 {
    let t0 = log_pmf(from, log_rate, rate);
    if t0 == f64::NEG_INFINITY {
        return t0;
    }
    let mut sum = 1.0;
    let mut r = 1.0;
    let mut x = from;
    while Some(x) != hi && x < u64::MAX {
        x += 1;
        r *= rate / x as f64;
        if (x - from) % RESYNC == 0 {
            r = (log_pmf(x, log_rate, rate) - t0).exp();
        }
        sum += r;
        if r < NEGLIGIBLE * sum {
            break;
        }
    }
    r = 1.0;
    x = from;
    while x > lo {
        r *= x as f64 / rate;
        x -= 1;
        if (from - x) % RESYNC == 0 {
            r = (log_pmf(x, log_rate, rate) - t0).exp();
        }
        sum += r;
        if r < NEGLIGIBLE * sum {
            break;
        }
    }
    t0 + sum.ln()
}

/// `log P(lo <= X <= hi)` for `X ~ Poisson(exp(log_rate))`; `hi = None` means +∞.
pub fn poisson_log_range(lo: u64, hi: Option<u64>, log_rate: f64) -> f64 {
    if let Some(h) = hi {
        if h < lo {
            return f64::NEG_INFINITY;
        }
    }
    let rate = log_rate.exp();
    if rate == f64::INFINITY {
        return if hi.is_none() { 0.0 } else { f64::NEG_INFINITY };
    }
    if lo == 0 && hi.is_none() {
        return 0.0;
    }
    let mode = rate.floor().min(u64::MAX as f64 / 2.0) as u64;
    if let Some(h) = hi {
        if h - lo < 32 {
            return walk(mode.clamp(lo, h), lo, hi, log_rate, rate);
        }
    }
    match hi {
        Some(h) if h <= mode => walk(h, lo, Some(h), log_rate, rate),
        _ if lo >= mode => walk(lo, lo, hi, log_rate, rate),
        _ => {
            // The range straddles the mode: subtract the two (small) tails.
            let left = if lo == 0 {
                f64::NEG_INFINITY
            } else {
                walk(lo - 1, 0, Some(lo - 1), log_rate, rate)
            };
            let right = match hi {
                Some(h) => walk(h + 1, h + 1, None, log_rate, rate),
                None => f64::NEG_INFINITY,
            };
            let tails = log_add(left, right);
            log_sub(0.0, tails)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_sub_basic() {
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sub(2f64.ln(), 0.0)).abs() < 1e-15);
        assert_eq!(log_sub(1.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(log_add(f64::NEG_INFINITY, 3.0), 3.0);
    }

    #[test]
    fn pmf_matches_direct_form_for_small_values() {
        for x in 0..40u64 {
            for &lr in &[-3.0, 0.0, 1.5, 3.0] {
                let direct = x as f64 * lr - f64::exp(lr) - ln_gamma(x as f64 + 1.0);
                assert!((poisson_log_pmf(x, lr) - direct).abs() < 1e-11, "x={x} lr={lr}");
            }
        }
    }

    #[test]
    fn range_sums_to_one() {
        for &lr in &[-5.0, 0.0, 2.0, 7.0, 13.8] {
            let total = poisson_log_range(0, None, lr);
            assert_eq!(total, 0.0);
            let rate = f64::exp(lr);
            let m = rate.floor() as u64;
            let a = poisson_log_range(0, Some(m), lr);
            let b = poisson_log_range(m + 1, None, lr);
            assert!((log_add(a, b)).abs() < 1e-12, "lr={lr}: {}", log_add(a, b));
        }
    }

    #[test]
    fn range_matches_brute_force_summation() {
        let lr = 4.0;
        for (lo, hi) in [(0u64, 10u64), (5, 200), (60, 300), (1, 54)] {
            let brute = log_sum_exp((lo..=hi).map(|x| poisson_log_pmf(x, lr)));
            let got = poisson_log_range(lo, Some(hi), lr);
            assert!((got - brute).abs() < 1e-12, "[{lo},{hi}] {got} vs {brute}");
        }
    }
}
