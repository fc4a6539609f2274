use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{GrmError, Result};
use crate::family::Family;
use crate::logpartition::{grad_hess_a, log_partition, GradHess, PartitionOptions};

use super::features::NodeProblem;
use super::FitConfig;

const ARMIJO_SIGMA: f64 = 0.25;
const STEP_SHRINK: f64 = 0.5;
const MAX_HALVINGS: usize = 50;
const INNER_SWEEPS: usize = 10;

/// One proximal Newton iteration of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub node: usize,
    pub iter: usize,
    pub objective: f64,
    pub free_size: usize,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFit {
    pub beta: Vec<f64>,
    pub initial_objective: f64,
    pub objective: f64,
    pub trace: Vec<NodeTrace>,
}

/// `S(z, γ) = sign(z) max(|z| - γ, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn eta_key(eta: &[f64]) -> Vec<u64> {
    eta.iter().map(|e| e.to_bits()).collect()
}

/// Smooth loss and the largest half-gap of the log partition bounds used.
fn smooth_value(prob: &NodeProblem, beta: &[f64], opts: &PartitionOptions) -> Result<(f64, f64)> {
    let mut cache: HashMap<Vec<u64>, (f64, f64)> = HashMap::new();
    let mut total = 0.0;
    let mut noise: f64 = 0.0;
    for (g, group) in prob.groups.iter().enumerate() {
        let eta = prob.eta(g, beta);
        let key = eta_key(&eta);
        let (a, half) = match cache.get(&key) {
            Some(v) => *v,
            None => {
                let b = log_partition(prob.family, &eta, opts)?;
                let v = (b.midpoint(), 0.5 * b.gap());
                cache.insert(key, v);
                v
            }
        };
        total += group.weight * a;
        noise = noise.max(half);
    }
    let lin: f64 = beta.iter().zip(&prob.stat).map(|(b, s)| b * s).sum();
    Ok((total - lin - prob.base_mean, noise))
}

struct Derivs {
    value: f64,
    grad: Vec<f64>,
    /// Index into `unique` per group.
    of_group: Vec<usize>,
    unique: Vec<GradHess>,
    noise: f64,
}

fn derivs(prob: &NodeProblem, beta: &[f64], opts: &PartitionOptions) -> Result<Derivs> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique: Vec<GradHess> = Vec::new();
    let mut of_group = Vec::with_capacity(prob.groups.len());
    let mut value = 0.0;
    let mut grad: Vec<f64> = prob.stat.iter().map(|s| -s).collect();
    for (g, group) in prob.groups.iter().enumerate() {
        let eta = prob.eta(g, beta);
        let key = eta_key(&eta);
        let u = match index.get(&key) {
            Some(&u) => u,
            None => {
                unique.push(grad_hess_a(prob.family, &eta, opts)?);
                index.insert(key, unique.len() - 1);
                unique.len() - 1
            }
        };
        of_group.push(u);
        let gh = &unique[u];
        value += group.weight * gh.log_partition;
        for &(c, z) in &group.features {
            grad[c] += group.weight * gh.grad[prob.coefs[c].j - 1] * z;
        }
    }
    let lin: f64 = beta.iter().zip(&prob.stat).map(|(b, s)| b * s).sum();
    let noise = unique.iter().map(|u| u.log_partition_uncertainty).fold(0.0, f64::max);
    Ok(Derivs {
        value: value - lin - prob.base_mean,
        grad,
        of_group,
        unique,
        noise,
    })
}

fn hessian_on(prob: &NodeProblem, d: &Derivs, free: &[usize]) -> DMatrix<f64> {
    let mut pos = vec![usize::MAX; prob.coefs.len()];
    for (i, &c) in free.iter().enumerate() {
        pos[c] = i;
    }
    let mut h = DMatrix::zeros(free.len(), free.len());
    let mut local: Vec<(usize, usize, f64)> = Vec::new();
    for (g, group) in prob.groups.iter().enumerate() {
        local.clear();
        local.extend(
            group
                .features
                .iter()
                .filter(|(c, _)| pos[*c] != usize::MAX)
                .map(|&(c, z)| (pos[c], prob.coefs[c].j - 1, z)),
        );
        let hg = &d.unique[d.of_group[g]].hess;
        for &(a, ja, za) in &local {
            for &(b, jb, zb) in &local {
                if b >= a {
                    h[(a, b)] += group.weight * hg[(ja, jb)] * za * zb;
                }
            }
        }
    }
    for a in 0..free.len() {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    h
}

/// Smooth node loss `(1/n) Σ_i [A(η_i) - Σ_j η_ij x_vi^{1/j} - B(x_vi)]`, its
/// gradient over all coefficients and its Hessian over `free`.
pub fn node_loss_grad_hess(
    prob: &NodeProblem,
    beta: &[f64],
    free: &[usize],
    opts: &PartitionOptions,
) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    if beta.len() != prob.coefs.len() {
        return Err(GrmError::DimensionMismatch {
            expected: prob.coefs.len(),
            got: beta.len(),
        });
    }
    let d = derivs(prob, beta, opts)?;
    let h = hessian_on(prob, &d, free);
    Ok((d.value, d.grad, h))
}

/// Smooth node loss alone.
pub fn node_loss(prob: &NodeProblem, beta: &[f64], opts: &PartitionOptions) -> Result<f64> {
    smooth_value(prob, beta, opts).map(|(v, _)| v)
}

fn penalty(prob: &NodeProblem, beta: &[f64], lambda: f64) -> f64 {
    lambda
        * prob
            .coefs
            .iter()
            .zip(beta)
            .filter(|(c, _)| c.penalized())
            .map(|(_, b)| b.abs())
            .sum::<f64>()
}

/// Starting point: the independent-model fit of the node, everything else zero.
pub fn initial_beta(prob: &NodeProblem) -> Vec<f64> {
    let mut beta = vec![0.0; prob.coefs.len()];
    if let Some(c) = prob.coefs.iter().position(|c| !c.penalized()) {
        beta[c] = match prob.family {
            Family::Poisson => prob.mean.max(1e-8).ln(),
            Family::Exponential => {
                if prob.mean > 0.0 {
                    -1.0 / prob.mean
                } else {
                    -1.0
                }
            }
        };
    }
    beta
}

/// Proximal Newton with free-set selection for
/// `min_β f(β) + λ Σ_{penalized c} |β_c|`.
pub fn prox_newton_solve(prob: &NodeProblem, cfg: &FitConfig, warm: Option<&[f64]>) -> Result<NodeFit> {
    let opts = cfg.partition_options();
    let lambda = cfg.lambda;
    let mut beta = match warm {
        Some(w) if w.len() == prob.coefs.len() => w.to_vec(),
        Some(w) => {
            return Err(GrmError::DimensionMismatch {
                expected: prob.coefs.len(),
                got: w.len(),
            })
        }
        None => initial_beta(prob),
    };
    let penalized: Vec<bool> = prob.coefs.iter().map(|c| c.penalized()).collect();
    let mut d = derivs(prob, &beta, &opts)?;
    let mut obj = d.value + penalty(prob, &beta, lambda);
    let initial_objective = obj;
    let mut trace = Vec::new();

    for iter in 1..=cfg.newton_max {
        let threshold = lambda * (1.0 + cfg.free_set_rule);
        let free: Vec<usize> = (0..beta.len())
            .filter(|&c| !penalized[c] || beta[c] != 0.0 || d.grad[c].abs() > threshold)
            .collect();
        if free.is_empty() {
            break;
        }
        let h = hessian_on(prob, &d, &free);
        let g = DVector::from_iterator(free.len(), free.iter().map(|&c| d.grad[c]));

        // Coordinate descent on the quadratic model with the ℓ1 term.
        let mut step: DVector<f64> = DVector::zeros(free.len());
        let mut hd: DVector<f64> = DVector::zeros(free.len());
        for _ in 0..INNER_SWEEPS {
            let mut moved: f64 = 0.0;
            for (i, &c) in free.iter().enumerate() {
                let a = h[(i, i)];
                if !(a > 1e-14) {
                    continue;
                }
                let b = g[i] + hd[i];
                let cur = beta[c] + step[i];
                let target = if penalized[c] {
                    soft_threshold(cur - b / a, lambda / a)
                } else {
                    cur - b / a
                };
                let delta = target - cur;
                if delta != 0.0 {
                    step[i] += delta;
                    hd += h.column(i) * delta;
                    moved = moved.max(delta.abs());
                }
            }
            if moved < 1e-14 {
                break;
            }
        }

        let mut l1_change = 0.0;
        for (i, &c) in free.iter().enumerate() {
            if penalized[c] {
                l1_change += (beta[c] + step[i]).abs() - beta[c].abs();
            }
        }
        let predicted = g.dot(&step) + lambda * l1_change;
        // Decreases below the resolution of the log partition bounds (or of
        // rounding) cannot be verified by the line search.
        let floor = (2.0 * d.noise).max(64.0 * f64::EPSILON * (1.0 + obj.abs()));
        if !(predicted < -floor) {
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial = beta.clone();
            for (i, &c) in free.iter().enumerate() {
                trial[c] += alpha * step[i];
            }
            let value = match smooth_value(prob, &trial, &opts) {
                Ok((v, _)) => v + penalty(prob, &trial, lambda),
                // Trial points outside what can be evaluated are rejected like
                // infeasible ones; the search then shortens the step.
                Err(GrmError::InfeasibleNaturalParam(_) | GrmError::Normalization(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if value <= obj + ARMIJO_SIGMA * alpha * predicted {
                accepted = Some((trial, value));
                break;
            }
            alpha *= STEP_SHRINK;
        }
        let Some((trial, value)) = accepted else {
            return Err(GrmError::LineSearchFailure {
                node: prob.v,
                iter,
                detail: format!(
                    "no sufficient decrease after {MAX_HALVINGS} halvings (objective {obj}, predicted decrease {predicted})"
                ),
            });
        };
        let decrease = obj - value;
        beta = trial;
        obj = value;
        log::info!(
            target: "grm::progress",
            "{}\t{}\t{:.12e}\t{}\t{}",
            prob.v,
            iter,
            obj,
            free.len(),
            alpha
        );
        trace.push(NodeTrace {
            node: prob.v,
            iter,
            objective: obj,
            free_size: free.len(),
            step: alpha,
        });
        if decrease < cfg.tol || iter == cfg.newton_max {
            break;
        }
        d = match derivs(prob, &beta, &opts) {
            Ok(d) => d,
            // Only happens when the coefficients run off (e.g. an unpenalized
            // problem without a finite optimum); keep the last accepted point.
            Err(GrmError::Normalization(msg)) => {
                log::warn!("node {}: stopping at iteration {iter}: {msg}", prob.v);
                break;
            }
            Err(e) => return Err(e),
        };
    }
    Ok(NodeFit {
        beta,
        initial_objective,
        objective: obj,
        trace,
    })
}
