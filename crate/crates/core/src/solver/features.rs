use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{GrmError, Result};
use crate::family::Family;
use crate::model::roots;
use crate::tensor::{combinations, factorial, Key};

/// One regression coefficient of a node problem: the entry `key` (which
/// contains the node) of block `(ℓ, j)`, with `ℓ = key.len()`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coef {
    pub l: usize,
    pub j: usize,
    pub key: Key,
}

impl Coef {
    /// The node-level linear term `(1, 1)` carries no penalty.
    pub fn penalized(&self) -> bool {
        !(self.l == 1 && self.j == 1)
    }
}

/// Allowed interaction keys per key size; sizes without an entry allow every key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Candidates {
    restricted: BTreeMap<usize, BTreeSet<Key>>,
}

impl Candidates {
    pub fn all() -> Self {
        Candidates::default()
    }

    /// Limits keys of length `size` to `keys` (each sorted ascending).
    pub fn restrict(&mut self, size: usize, keys: impl IntoIterator<Item = Key>) {
        self.restricted.insert(size, keys.into_iter().collect());
    }

    pub fn allowed(&self, key: &[usize]) -> bool {
        match self.restricted.get(&key.len()) {
            Some(set) => set.contains(key),
            None => true,
        }
    }

    /// Keys of length `size` that contain `v`, in lexicographic order.
    fn keys_for(&self, p: usize, v: usize, size: usize) -> Vec<Key> {
        match self.restricted.get(&size) {
            Some(set) => set.iter().filter(|k| k.contains(&v)).cloned().collect(),
            None => combinations(p - 1, size - 1)
                .into_iter()
                .map(|rest| {
                    let mut key: Key = rest.into_iter().map(|i| if i >= v { i + 1 } else { i }).collect();
                    key.push(v);
                    key.sort_unstable();
                    key
                })
                .collect(),
        }
    }
}

/// Distinct feature rows with their total weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub weight: f64,
    /// Nonzero features as `(coefficient index, value)`.
    pub features: Vec<(usize, f64)>,
}

/// The ℓ1-penalized regression of one node on the others.
///
/// Instances with identical feature rows are merged: the log partition part
/// of the loss only depends on the features, and the part linear in the
/// parameters is kept as the averaged statistic `Σ_i z_i x_{vi}^{1/j} / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProblem {
    pub v: usize,
    pub family: Family,
    pub k: usize,
    pub coefs: Vec<Coef>,
    pub groups: Vec<Group>,
    /// `(1/n) Σ_i z_{ic} x_{vi}^{1/j(c)}` per coefficient.
    pub stat: Vec<f64>,
    /// `(1/n) Σ_i B(x_{vi})`.
    pub base_mean: f64,
    pub n: usize,
    /// Mean of `x_v`, used for the starting point.
    pub mean: f64,
}

pub(crate) fn check_data(x: &[Vec<f64>], family: Family) -> Result<usize> {
    let p = x.first().map(|r| r.len()).unwrap_or(0);
    for (i, row) in x.iter().enumerate() {
        if row.len() != p {
            return Err(GrmError::DimensionMismatch {
                expected: p,
                got: row.len(),
            });
        }
        for &v in row {
            family.check_domain(v).map_err(|e| GrmError::Domain(format!("row {}: {e}", i + 1)))?;
        }
    }
    Ok(p)
}

/// Feature matrix of node `v` over all `(ℓ, j)` blocks of a `k`-th order
/// model, with `z = ℓ! Π_{i ∈ key∖v} x_i^{1/j}`.
pub fn build_node_features(
    x: &[Vec<f64>],
    family: Family,
    v: usize,
    k: usize,
    simplified: bool,
    candidates: &Candidates,
) -> Result<NodeProblem> {
    let p = check_data(x, family)?;
    if x.is_empty() {
        return Err(GrmError::InvalidArgument("no instances".into()));
    }
    if v >= p {
        return Err(GrmError::IndexOutOfRange { index: v, dim: p });
    }
    let mut coefs = Vec::new();
    for j in 1..=k {
        for l in 1..=j {
            if simplified && l != j {
                continue;
            }
            if l > p {
                continue;
            }
            for key in candidates.keys_for(p, v, l) {
                coefs.push(Coef { l, j, key });
            }
        }
    }
    let n = x.len();
    let inv_n = 1.0 / n as f64;
    let mut stat = vec![0.0; coefs.len()];
    let mut base_mean = 0.0;
    let mut mean = 0.0;
    let mut index: HashMap<Vec<(usize, u64)>, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut row_roots: Vec<Vec<f64>> = vec![Vec::new(); k + 1];
    for row in x {
        for (j, r) in row_roots.iter_mut().enumerate().skip(1) {
            *r = roots(row, j);
        }
        let mut feats = Vec::new();
        for (c, coef) in coefs.iter().enumerate() {
            let r = &row_roots[coef.j];
            let z = factorial(coef.l) * coef.key.iter().filter(|&&i| i != v).map(|&i| r[i]).product::<f64>();
            if z != 0.0 {
                feats.push((c, z));
                stat[c] += z * r[v] * inv_n;
            }
        }
        base_mean += family.log_base_measure(row[v])? * inv_n;
        mean += row[v] * inv_n;
        let key: Vec<(usize, u64)> = feats.iter().map(|&(c, z)| (c, z.to_bits())).collect();
        match index.get(&key) {
            Some(&g) => groups[g].weight += inv_n,
            None => {
                index.insert(key, groups.len());
                groups.push(Group {
                    weight: inv_n,
                    features: feats,
                });
            }
        }
    }
    Ok(NodeProblem {
        v,
        family,
        k,
        coefs,
        groups,
        stat,
        base_mean,
        n,
        mean,
    })
}

impl NodeProblem {
    /// `η_j` of group `g` under `beta`.
    pub fn eta(&self, g: usize, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.k];
        for &(c, z) in &self.groups[g].features {
            eta[self.coefs[c].j - 1] += beta[c] * z;
        }
        eta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats_of(prob: &NodeProblem, g: usize) -> Vec<(Coef, f64)> {
        prob.groups[g]
            .features
            .iter()
            .map(|&(c, z)| (prob.coefs[c].clone(), z))
            .collect()
    }

    #[test]
    fn pair_features_example() {
        let x = vec![vec![4.0, 9.0, 16.0]];
        let prob = build_node_features(&x, Family::Poisson, 0, 2, true, &Candidates::all()).unwrap();
        let f = feats_of(&prob, 0);
        assert_eq!(f[0], (Coef { l: 1, j: 1, key: vec![0] }, 1.0));
        assert_eq!(f[1], (Coef { l: 2, j: 2, key: vec![0, 1] }, 6.0));
        assert_eq!(f[2], (Coef { l: 2, j: 2, key: vec![0, 2] }, 8.0));
    }

    #[test]
    fn triple_feature_example() {
        let x = vec![vec![8.0, 27.0, 64.0]];
        let prob = build_node_features(&x, Family::Poisson, 0, 3, true, &Candidates::all()).unwrap();
        let f = feats_of(&prob, 0);
        let (c, z) = f.last().unwrap();
        assert_eq!(c.key, vec![0, 1, 2]);
        assert!((z - 72.0).abs() < 1e-12);
    }

    #[test]
    fn zero_row_keeps_only_the_constant() {
        let x = vec![vec![0.0; 4]];
        let prob = build_node_features(&x, Family::Poisson, 2, 3, false, &Candidates::all()).unwrap();
        let f = feats_of(&prob, 0);
        assert!(f.iter().all(|(c, _)| c.l == 1));
        assert_eq!(f.len(), 3);
    }

    #[test]
    fn duplicates_merge() {
        let x = vec![vec![1.0, 2.0], vec![5.0, 2.0], vec![1.0, 3.0]];
        let prob = build_node_features(&x, Family::Poisson, 0, 2, true, &Candidates::all()).unwrap();
        assert_eq!(prob.groups.len(), 2);
        assert!((prob.groups[0].weight - 2.0 / 3.0).abs() < 1e-15);
        assert!((prob.stat[0] - 7.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn restricted_candidates() {
        let mut cand = Candidates::all();
        cand.restrict(3, vec![vec![0, 1, 2]]);
        let x = vec![vec![1.0; 5]];
        let p0 = build_node_features(&x, Family::Poisson, 0, 3, true, &cand).unwrap();
        assert_eq!(p0.coefs.iter().filter(|c| c.l == 3).count(), 1);
        assert_eq!(p0.coefs.iter().filter(|c| c.l == 2).count(), 4);
        let p4 = build_node_features(&x, Family::Poisson, 4, 3, true, &cand).unwrap();
        assert_eq!(p4.coefs.iter().filter(|c| c.l == 3).count(), 0);
    }

    #[test]
    fn rejects_values_outside_the_support() {
        let x = vec![vec![1.5, 2.0]];
        assert!(build_node_features(&x, Family::Poisson, 0, 2, true, &Candidates::all()).is_err());
    }
}
