//! Node-wise ℓ1-penalized regressions and their symmetrization into a model.

mod features;
mod newton;

pub use features::{build_node_features, Candidates, Coef, Group, NodeProblem};
pub use newton::{
    initial_beta, node_loss, node_loss_grad_hess, prox_newton_solve, soft_threshold, NodeFit, NodeTrace,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{GrmError, Result};
use crate::family::Family;
use crate::logpartition::{PartitionOptions, PrecisionPolicy};
use crate::model::GrmModel;
use crate::tensor::Key;

/// How the per-node estimates of one tensor entry are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetrize {
    Mean,
    /// The estimate closest to zero.
    MinMagnitude,
}

impl fmt::Display for Symmetrize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Symmetrize::Mean => "mean",
            Symmetrize::MinMagnitude => "min_magnitude",
        })
    }
}

impl FromStr for Symmetrize {
    type Err = GrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Symmetrize::Mean),
            "min_magnitude" | "min-magnitude" => Ok(Symmetrize::MinMagnitude),
            other => Err(GrmError::InvalidArgument(format!("unknown symmetrization '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub lambda: f64,
    /// Pieces for the log partition bounds.
    pub nq: usize,
    /// Piece limit when the bounds are not yet within `partition_tol`.
    pub nq_max: usize,
    pub partition_tol: f64,
    pub newton_max: usize,
    /// Stop once an accepted step lowers the objective by less than this.
    pub tol: f64,
    /// Free-set gradient threshold is `λ (1 + free_set_rule)`.
    pub free_set_rule: f64,
    pub symmetrize: Symmetrize,
    pub stagewise: bool,
    pub simplified: bool,
    /// Fitting is deterministic; the seed is kept with the configuration so
    /// that pipelines which also sample can be reproduced from one record.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 0.01,
            nq: 9,
            nq_max: 64,
            partition_tol: 1e-8,
            newton_max: 30,
            tol: 1e-9,
            free_set_rule: 0.0,
            symmetrize: Symmetrize::Mean,
            stagewise: false,
            simplified: true,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn partition_options(&self) -> PartitionOptions {
        PartitionOptions {
            nq: self.nq,
            nq_max: self.nq_max.max(self.nq),
            tol: self.partition_tol,
            policy: PrecisionPolicy::BestEffort,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(GrmError::InvalidArgument(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        if self.nq == 0 {
            return Err(GrmError::InvalidArgument("nq must be at least 1".into()));
        }
        if self.newton_max == 0 {
            return Err(GrmError::InvalidArgument("newton_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: GrmModel,
    /// Per-node solver results of the final stage, indexed by node.
    pub nodes: Vec<NodeFit>,
}

fn warm_beta(prob: &NodeProblem, model: &GrmModel) -> Vec<f64> {
    prob.coefs
        .iter()
        .map(|c| model.get(c.l, c.j, &c.key).unwrap_or(0.0))
        .collect()
}

fn solve_node(
    x: &[Vec<f64>],
    family: Family,
    v: usize,
    k: usize,
    cfg: &FitConfig,
    candidates: &Candidates,
    warm: Option<&GrmModel>,
) -> Result<(NodeProblem, NodeFit)> {
    let prob = build_node_features(x, family, v, k, cfg.simplified, candidates)?;
    if let Some(m) = warm {
        let start = warm_beta(&prob, m);
        match prox_newton_solve(&prob, cfg, Some(&start)) {
            Ok(fit) => return Ok((prob, fit)),
            // A symmetrized start can leave the exponential domain for some rows.
            Err(GrmError::InfeasibleNaturalParam(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let fit = prox_newton_solve(&prob, cfg, None)?;
    Ok((prob, fit))
}

fn combine(values: &[f64], rule: Symmetrize) -> f64 {
    match rule {
        Symmetrize::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Symmetrize::MinMagnitude => values
            .iter()
            .copied()
            .min_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap_or(0.0),
    }
}

fn fit_with(
    x: &[Vec<f64>],
    family: Family,
    k: usize,
    cfg: &FitConfig,
    candidates: &Candidates,
    warm: Option<&GrmModel>,
) -> Result<FitResult> {
    let p = features::check_data(x, family)?;
    if x.is_empty() || p == 0 {
        return Err(GrmError::InvalidArgument("empty data matrix".into()));
    }
    let solved: Vec<(NodeProblem, NodeFit)> = (0..p)
        .into_par_iter()
        .map(|v| solve_node(x, family, v, k, cfg, candidates, warm))
        .collect::<Result<_>>()?;

    let mut estimates: BTreeMap<(usize, usize, Key), Vec<f64>> = BTreeMap::new();
    for (prob, fit) in &solved {
        for (c, &b) in prob.coefs.iter().zip(&fit.beta) {
            estimates.entry((c.l, c.j, c.key.clone())).or_default().push(b);
        }
    }
    let mut model = GrmModel::new(family, p, k, cfg.simplified)?;
    for ((l, j, key), vals) in estimates {
        let v = combine(&vals, cfg.symmetrize);
        if v != 0.0 || (l == 1 && j == 1) {
            model.set(l, j, &key, v)?;
        }
    }
    Ok(FitResult {
        model,
        nodes: solved.into_iter().map(|(_, f)| f).collect(),
    })
}

/// Fits a `k`-th order model by `p` independent node regressions.
pub fn fit(x: &[Vec<f64>], family: Family, k: usize, cfg: &FitConfig) -> Result<GrmModel> {
    fit_detailed(x, family, k, cfg).map(|r| r.model)
}

pub fn fit_detailed(x: &[Vec<f64>], family: Family, k: usize, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if k == 0 {
        return Err(GrmError::InvalidArgument("k must be at least 1".into()));
    }
    if cfg.stagewise && k >= 3 {
        return stagewise_fit(x, family, k, cfg);
    }
    fit_with(x, family, k, cfg, &Candidates::all(), None)
}

/// Size-`m + 1` sets all of whose size-`m` subsets are in `support`.
pub fn cliques(support: &BTreeSet<Key>, m: usize) -> BTreeSet<Key> {
    let nodes: BTreeSet<usize> = support.iter().flatten().copied().collect();
    let mut out = BTreeSet::new();
    for s in support {
        for &w in &nodes {
            if w <= *s.last().unwrap() {
                continue;
            }
            let mut t = s.clone();
            t.push(w);
            let closed = (0..=m).all(|drop| {
                let sub: Key = t.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, &v)| v).collect();
                support.contains(&sub)
            });
            if closed {
                out.insert(t);
            }
        }
    }
    out
}

/// Pairwise model first; each higher order only considers the cliques of the
/// previous order's support. Stops early, returning the current model, when a
/// stage has no candidates.
pub fn stagewise_fit(x: &[Vec<f64>], family: Family, k: usize, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if k < 3 {
        return Err(GrmError::InvalidArgument(format!("stagewise fitting needs k >= 3, got {k}")));
    }
    let mut stage = fit_with(x, family, 2, cfg, &Candidates::all(), None)?;
    for m in 2..k {
        let support: BTreeSet<Key> = stage
            .model
            .blocks()
            .filter(|((l, _), _)| *l == m)
            .flat_map(|(_, t)| t.iter().filter(|(_, v)| *v != 0.0).map(|(key, _)| key.clone()).collect::<Vec<_>>())
            .collect();
        let next = cliques(&support, m);
        log::debug!("stage {}: {} candidate keys of size {}", m + 1, next.len(), m + 1);
        if next.is_empty() {
            return Ok(stage);
        }
        let mut cand = Candidates::all();
        cand.restrict(m + 1, next);
        stage = fit_with(x, family, m + 1, cfg, &cand, Some(&stage.model))?;
    }
    Ok(stage)
}
