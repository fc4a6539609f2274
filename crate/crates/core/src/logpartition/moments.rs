use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{GrmError, Result};
use crate::family::Family;

use super::segment::{MBounds, Segmenter};
use super::{exponent, Exponent, NatParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionPolicy {
    /// Fail with [`GrmError::Precision`] when the tolerance is not met.
    Strict,
    /// Return the best available estimate along with its uncertainty.
    BestEffort,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionOptions {
    /// Pieces used before checking the tolerance.
    pub nq: usize,
    /// Upper limit on pieces when escalating.
    pub nq_max: usize,
    /// Target width of each `M` bound interval.
    pub tol: f64,
    pub policy: PrecisionPolicy,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        PartitionOptions {
            nq: 9,
            nq_max: 64,
            tol: 1e-8,
            policy: PrecisionPolicy::Strict,
        }
    }
}

impl PartitionOptions {
    pub fn with_nq(nq: usize) -> Self {
        PartitionOptions {
            nq,
            nq_max: nq.max(64),
            ..Default::default()
        }
    }
}

/// A moment with the sum of the half-widths of the two `M` intervals it was
/// computed from; this is a bound on the error of `log value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub value: f64,
    pub uncertainty: f64,
}

/// Log partition value, gradient and Hessian of a node conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    pub log_partition: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
    /// Half-width of the bounds on `log_partition`.
    pub log_partition_uncertainty: f64,
    /// Largest propagated uncertainty over every moment used.
    pub uncertainty: f64,
}

fn refined_bounds(family: Family, np: &NatParams, opts: &PartitionOptions) -> Result<MBounds> {
    if opts.nq == 0 {
        return Err(GrmError::InvalidArgument("nq must be at least 1".into()));
    }
    let mut seg = Segmenter::new(family, np)?;
    seg.refine(opts.nq)?;
    if seg.bounds().gap() > opts.tol {
        seg.refine_until(opts.tol, opts.nq_max.max(opts.nq))?;
    }
    Ok(seg.bounds())
}

fn check(opts: &PartitionOptions, uncertainty: f64, pieces: usize) -> Result<()> {
    if opts.policy == PrecisionPolicy::Strict && !(uncertainty <= opts.tol) {
        return Err(GrmError::Precision {
            uncertainty,
            tolerance: opts.tol,
            pieces,
        });
    }
    Ok(())
}

/// Bounds on `A(η) = M(0)`.
pub fn log_partition(family: Family, eta: &[f64], opts: &PartitionOptions) -> Result<MBounds> {
    let b = refined_bounds(family, &NatParams::new(eta.to_vec(), exponent(0, 1)), opts)?;
    check(opts, b.gap(), b.linear_pieces())?;
    Ok(b)
}

/// `E(x^a) = exp(M(a) - M(0))` under the node conditional with parameters `eta`.
pub fn moment(family: Family, eta: &[f64], a: Exponent, opts: &PartitionOptions) -> Result<MomentEstimate> {
    let np = NatParams::new(eta.to_vec(), exponent(0, 1));
    let m0 = refined_bounds(family, &np, opts)?;
    let ma = refined_bounds(family, &np.with_exponent(a), opts)?;
    let uncertainty = 0.5 * (m0.gap() + ma.gap());
    check(opts, uncertainty, m0.linear_pieces().max(ma.linear_pieces()))?;
    Ok(MomentEstimate {
        value: (ma.midpoint() - m0.midpoint()).exp(),
        uncertainty,
    })
}

/// `A`, `∇A = (E x^{1/j})_j` and `∇²A = (E x^{1/j+1/j'} - E x^{1/j} E x^{1/j'})_{j,j'}`.
pub fn grad_hess_a(family: Family, eta: &[f64], opts: &PartitionOptions) -> Result<GradHess> {
    let k = eta.len();
    let base = NatParams::new(eta.to_vec(), exponent(0, 1));
    let mut wanted: Vec<Exponent> = Vec::new();
    for j in 1..=k {
        wanted.push(exponent(1, j as i32));
        for jj in j..=k {
            wanted.push(exponent(1, j as i32) + exponent(1, jj as i32));
        }
    }
    let m0 = refined_bounds(family, &base, opts)?;
    let h0 = 0.5 * m0.gap();
    let mut pieces = m0.linear_pieces();
    let mut logm: BTreeMap<Exponent, (f64, f64)> = BTreeMap::new();
    for a in wanted {
        if logm.contains_key(&a) {
            continue;
        }
        let b = refined_bounds(family, &base.with_exponent(a), opts)?;
        pieces = pieces.max(b.linear_pieces());
        logm.insert(a, (b.midpoint() - m0.midpoint(), h0 + 0.5 * b.gap()));
    }
    let mut uncertainty = h0;
    let mut e = |a: Exponent| {
        let (l, u) = logm[&a];
        uncertainty = uncertainty.max(u);
        l.exp()
    };
    let grad: Vec<f64> = (1..=k).map(|j| e(exponent(1, j as i32))).collect();
    let mut hess = DMatrix::zeros(k, k);
    for j in 1..=k {
        for jj in j..=k {
            let v = e(exponent(1, j as i32) + exponent(1, jj as i32)) - grad[j - 1] * grad[jj - 1];
            hess[(j - 1, jj - 1)] = v;
            hess[(jj - 1, j - 1)] = v;
        }
    }
    check(opts, uncertainty, pieces)?;
    Ok(GradHess {
        log_partition: m0.midpoint(),
        grad,
        hess,
        log_partition_uncertainty: h0,
        uncertainty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::ln_gamma;

    /// Σ x^a e^{-1}/x! over x = 0..60.
    fn poisson_one_moment(a: f64) -> f64 {
        (0..60)
            .map(|x| {
                let xf = x as f64;
                let pow = if x == 0 { if a == 0.0 { 1.0 } else { 0.0 } } else { xf.powf(a) };
                pow * (-1.0 - ln_gamma(xf + 1.0)).exp()
            })
            .sum()
    }

    #[test]
    fn poisson_one_moments() {
        let opts = PartitionOptions::default();
        let eta = [0.0, 0.0];
        assert_relative_eq!(moment(Family::Poisson, &eta, exponent(1, 1), &opts).unwrap().value, 1.0, max_relative = 1e-8);
        assert_relative_eq!(moment(Family::Poisson, &eta, exponent(0, 1), &opts).unwrap().value, 1.0, epsilon = 1e-15);
        let half = moment(Family::Poisson, &eta, exponent(1, 2), &opts).unwrap().value;
        assert_relative_eq!(half, poisson_one_moment(0.5), max_relative = 1e-8);
        assert!((half - 0.773).abs() < 1e-3);
    }

    #[test]
    fn k1_grad_hess_is_mean_and_variance() {
        let gh = grad_hess_a(Family::Poisson, &[0.0], &PartitionOptions::default()).unwrap();
        assert_relative_eq!(gh.log_partition, 1.0, epsilon = 1e-14);
        assert_relative_eq!(gh.grad[0], 1.0, max_relative = 1e-8);
        assert_relative_eq!(gh.hess[(0, 0)], 1.0, max_relative = 1e-7);
    }

    #[test]
    fn k2_gradient_at_zero() {
        let gh = grad_hess_a(Family::Poisson, &[0.0, 0.0], &PartitionOptions::default()).unwrap();
        assert_relative_eq!(gh.grad[0], 1.0, max_relative = 1e-8);
        assert_relative_eq!(gh.grad[1], poisson_one_moment(0.5), max_relative = 1e-8);
        let var_sqrt = poisson_one_moment(1.0) - poisson_one_moment(0.5).powi(2);
        assert_relative_eq!(gh.hess[(1, 1)], var_sqrt, max_relative = 1e-6);
    }

    #[test]
    fn hessian_is_symmetric_psd() {
        let gh = grad_hess_a(Family::Poisson, &[0.4, -1.0, 0.8], &PartitionOptions::default()).unwrap();
        assert_eq!(gh.hess.clone(), gh.hess.transpose());
        let eig = gh.hess.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-8), "{:?}", eig.eigenvalues);
    }

    #[test]
    fn exponential_mean() {
        // Independent exponential with rate 2.
        // Linear bounds on a continuum converge like 1/nq², so the strict
        // default tolerance is out of reach; the reported uncertainty must
        // still cover the truth.
        let opts = PartitionOptions {
            policy: PrecisionPolicy::BestEffort,
            ..Default::default()
        };
        let m = moment(Family::Exponential, &[-2.0], exponent(1, 1), &opts).unwrap();
        assert!((m.value.ln() - 0.5f64.ln()).abs() <= m.uncertainty, "{m:?}");
        assert!(m.uncertainty < 1e-2);
    }

    #[test]
    fn strict_policy_reports_precision() {
        let opts = PartitionOptions {
            nq: 2,
            nq_max: 2,
            tol: 1e-12,
            policy: PrecisionPolicy::Strict,
        };
        let r = moment(Family::Poisson, &[1.0, -2.0], exponent(1, 2), &opts);
        assert!(matches!(r, Err(GrmError::Precision { .. })));
        let lax = PartitionOptions {
            policy: PrecisionPolicy::BestEffort,
            ..opts
        };
        let m = moment(Family::Poisson, &[1.0, -2.0], exponent(1, 2), &lax).unwrap();
        assert!(m.uncertainty > 1e-12 && m.value.is_finite());
    }
}
