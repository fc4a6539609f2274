//! Cyclic Gibbs sampling from a GRM through its node conditionals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GrmError, Result};
use crate::family::Family;
use crate::logpartition::{NatParams, PieceKind, Segmenter};
use crate::model::GrmModel;
use crate::numeric::{ln_factorial, log_sum_exp, root};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsConfig {
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            burnin: 1000,
            thin: 10,
            seed: 0,
        }
    }
}

const POISSON_CAP: usize = 1_000_000;
const TAIL_TOL: f64 = -27.631_021_115_928_547; // ln 1e-12
const ENVELOPE_PIECES: usize = 16;
const MAX_REJECTIONS: usize = 100_000;

fn root_terms(eta: &[f64], x: f64) -> f64 {
    let mut s = eta[0] * x;
    for (i, &e) in eta.iter().enumerate().skip(1) {
        if e != 0.0 {
            s += e * root(x, i + 1);
        }
    }
    s
}

/// Exact draw by enumerating the support until the remaining mass is
/// negligible; `buf` is scratch space.
fn draw_poisson(eta: &[f64], buf: &mut Vec<f64>, rng: &mut ChaCha8Rng) -> Result<f64> {
    buf.clear();
    let mut best = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    for x in 0..=POISSON_CAP {
        let w = root_terms(eta, x as f64) - ln_factorial(x as u64);
        buf.push(w);
        best = best.max(w);
        let d = w - prev;
        prev = w;
        // Once the log weights fall by at least 1/2 per step, the rest of the
        // tail is bounded by a geometric series.
        if x > 0 && d < -0.5 {
            let r = d.exp();
            let tail = w + (r / (1.0 - r)).ln();
            if tail - best < TAIL_TOL {
                let total = log_sum_exp(buf.iter().copied());
                let mut u = rng.random::<f64>();
                for (i, &wi) in buf.iter().enumerate() {
                    u -= (wi - total).exp();
                    if u < 0.0 {
                        return Ok(i as f64);
                    }
                }
                return Ok((buf.len() - 1) as f64);
            }
        }
    }
    Err(GrmError::Normalization(format!(
        "node conditional with eta {eta:?} did not concentrate below {POISSON_CAP}"
    )))
}

/// `x ~ exp(t x)` restricted to `[lo, hi)`.
fn truncated_exponential(t: f64, lo: f64, hi: f64, u: f64) -> f64 {
    if t == 0.0 {
        return lo + u * (hi - lo);
    }
    if t < 0.0 {
        let w = hi - lo;
        lo + (u * (t * w).exp_m1()).ln_1p() / t
    } else {
        hi + (u + (1.0 - u) * (-t * (hi - lo)).exp()).ln() / t
    }
}

/// Exact draw by rejection from the piecewise upper bound of the density.
fn draw_exponential(eta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
    let np = NatParams::new(eta.to_vec(), crate::logpartition::exponent(0, 1));
    let mut seg = Segmenter::new(Family::Exponential, &np)?;
    seg.refine(ENVELOPE_PIECES)?;
    let bounds = seg.bounds();
    let pieces = bounds.pieces;
    let total = bounds.upper;
    for _ in 0..MAX_REJECTIONS {
        let mut u = rng.random::<f64>();
        let mut chosen = pieces.len() - 1;
        for (i, p) in pieces.iter().enumerate() {
            u -= (p.log_int_upper - total).exp();
            if u < 0.0 {
                chosen = i;
                break;
            }
        }
        let p = &pieces[chosen];
        let v = rng.random::<f64>();
        let (x, log_env) = match p.kind {
            PieceKind::Origin => {
                let x = p.lo + v * (p.hi - p.lo);
                (x, p.upper.intercept)
            }
            _ => {
                let t = eta[0] + p.upper.slope;
                let x = truncated_exponential(t, p.lo, p.hi, v);
                (x, eta[0] * x + p.upper.eval(x))
            }
        };
        if !(x > 0.0) || !x.is_finite() {
            continue;
        }
        let log_target = root_terms(eta, x);
        if rng.random::<f64>().ln() <= log_target - log_env {
            return Ok(x);
        }
    }
    Err(GrmError::Normalization(format!(
        "rejection sampler for eta {eta:?} did not accept"
    )))
}

/// `n` samples from the model, one sweep over all nodes per step, keeping every
/// `thin`-th sweep after `burnin` sweeps.
pub fn gibbs_sample(model: &GrmModel, n: usize, cfg: &GibbsConfig) -> Result<Vec<Vec<f64>>> {
    if cfg.thin == 0 {
        return Err(GrmError::InvalidArgument("thin must be at least 1".into()));
    }
    let p = model.p();
    let family = model.family();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = vec![
        match family {
            Family::Poisson => 0.0,
            Family::Exponential => 1.0,
        };
        p
    ];
    let mut buf = Vec::new();
    let mut out = Vec::with_capacity(n);
    let sweeps = cfg.burnin + n * cfg.thin;
    for sweep in 1..=sweeps {
        for v in 0..p {
            let np = model.node_natural_params(&x, v)?;
            x[v] = match family {
                Family::Poisson => draw_poisson(&np.eta, &mut buf, &mut rng)?,
                Family::Exponential => draw_exponential(&np.eta, &mut rng)?,
            };
        }
        if sweep > cfg.burnin && (sweep - cfg.burnin) % cfg.thin == 0 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(col: impl Iterator<Item = f64>) -> (f64, usize) {
        let v: Vec<f64> = col.collect();
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    }

    #[test]
    fn independent_poisson_mean() {
        let m = GrmModel::new(Family::Poisson, 3, 2, true).unwrap();
        let cfg = GibbsConfig {
            burnin: 10,
            thin: 1,
            seed: 7,
        };
        let xs = gibbs_sample(&m, 10_000, &cfg).unwrap();
        for v in 0..3 {
            let (mu, n) = mean(xs.iter().map(|r| r[v]));
            assert!((mu - 1.0).abs() < 4.0 / (n as f64).sqrt(), "node {v}: {mu}");
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let mut m = GrmModel::new(Family::Poisson, 3, 2, true).unwrap();
        m.set(2, 2, &[0, 2], 0.2).unwrap();
        let cfg = GibbsConfig {
            burnin: 20,
            thin: 2,
            seed: 99,
        };
        assert_eq!(gibbs_sample(&m, 200, &cfg).unwrap(), gibbs_sample(&m, 200, &cfg).unwrap());
    }

    #[test]
    fn planted_pair_correlates() {
        let mut m = GrmModel::new(Family::Poisson, 2, 2, true).unwrap();
        m.set(2, 2, &[0, 1], 0.15).unwrap();
        let cfg = GibbsConfig {
            burnin: 100,
            thin: 1,
            seed: 3,
        };
        let xs = gibbs_sample(&m, 10_000, &cfg).unwrap();
        let (m0, _) = mean(xs.iter().map(|r| r[0]));
        let (m1, _) = mean(xs.iter().map(|r| r[1]));
        let cov: f64 = xs.iter().map(|r| (r[0] - m0) * (r[1] - m1)).sum::<f64>() / xs.len() as f64;
        assert!(cov > 0.0, "cov {cov}");
    }

    #[test]
    fn independent_exponential_mean() {
        let mut m = GrmModel::new(Family::Exponential, 2, 1, true).unwrap();
        m.set(1, 1, &[0], -2.0).unwrap();
        m.set(1, 1, &[1], -0.5).unwrap();
        let cfg = GibbsConfig {
            burnin: 0,
            thin: 1,
            seed: 11,
        };
        let xs = gibbs_sample(&m, 10_000, &cfg).unwrap();
        for (v, expect) in [(0, 0.5), (1, 2.0)] {
            let (mu, n) = mean(xs.iter().map(|r| r[v]));
            assert!((mu - expect).abs() < 4.0 * expect / (n as f64).sqrt(), "node {v}: {mu}");
        }
    }

    #[test]
    fn exponential_root_terms_shift_the_mean() {
        // Density ∝ exp(-x + √x); mean by quadrature on a fine grid.
        let eta = [-1.0, 1.0];
        let h: f64 = 1e-4;
        let (mut z, mut s) = (0.0, 0.0);
        let mut x: f64 = h / 2.0;
        while x < 60.0 {
            let w = (-x + x.sqrt()).exp();
            z += w;
            s += w * x;
            x += h;
        }
        let truth = s / z;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_exponential(&eta, &mut rng).unwrap()).collect();
        let mu = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mu - truth).abs() < 4.0 * sd / (n as f64).sqrt(), "{mu} vs {truth}");
    }

    #[test]
    fn poisson_draw_matches_pmf() {
        // η = (ln 3): Poisson(3). Compare frequencies of 0..6.
        let eta = [3f64.ln()];
            let mut buf = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 50_000;
        let mut counts = [0usize; 7];
        for _ in 0..n {
            let x = draw_poisson(&eta, &mut buf, &mut rng).unwrap() as usize;
            if x < 7 {
                counts[x] += 1;
            }
        }
        for (x, &c) in counts.iter().enumerate() {
            let p = (x as f64 * 3f64.ln() - 3.0 - ln_factorial(x as u64)).exp();
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 5.0 * sd, "x={x}");
        }
    }
}
