//! Sparse super-symmetric tensors that vanish on any repeated index.
//!
//! One value is stored per combination of distinct indices (the canonical,
//! strictly increasing key). The full tensor holds that value at every
//! permutation of the key, so contractions apply the permutation
//! multiplicities at evaluation time. Indices are 0-based.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{GrmError, Result};

pub type Key = Vec<usize>;

#[derive(Debug, Clone)]
pub struct SymTensor {
    order: usize,
    dim: usize,
    entries: BTreeMap<Key, f64>,
    by_node: Vec<BTreeSet<Key>>,
}

impl PartialEq for SymTensor {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.dim == other.dim && self.entries == other.entries
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

impl SymTensor {
    pub fn new(order: usize, dim: usize) -> Self {
        assert!(order >= 1, "tensor order must be at least 1");
        SymTensor {
            order,
            dim,
            entries: BTreeMap::new(),
            by_node: vec![BTreeSet::new(); dim],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical entries in lexicographic key order.
    pub fn iter(&self) -> impl Iterator<Item = (&Key, f64)> + '_ {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    /// Stored keys containing `v`.
    pub fn keys_with(&self, v: usize) -> impl Iterator<Item = &Key> + '_ {
        self.by_node[v].iter()
    }

    fn check_indices(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.order {
            return Err(GrmError::DimensionMismatch {
                expected: self.order,
                got: idx.len(),
            });
        }
        for &i in idx {
            if i >= self.dim {
                return Err(GrmError::IndexOutOfRange { index: i, dim: self.dim });
            }
        }
        Ok(())
    }

    /// Sorted copy of `idx`, or `None` if an index repeats.
    fn canonical(idx: &[usize]) -> Option<Key> {
        let mut key = idx.to_vec();
        key.sort_unstable();
        if key.windows(2).any(|w| w[0] == w[1]) {
            None
        } else {
            Some(key)
        }
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        self.check_indices(idx)?;
        Ok(match Self::canonical(idx) {
            Some(key) => self.entries.get(&key).copied().unwrap_or(0.0),
            None => 0.0,
        })
    }

    /// Stores `value` for the combination `idx` (any permutation).
    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        self.check_indices(idx)?;
        let key = Self::canonical(idx).ok_or_else(|| {
            GrmError::InvalidArgument(format!("repeated index in {idx:?}; diagonal entries are fixed at zero"))
        })?;
        for &i in &key {
            self.by_node[i].insert(key.clone());
        }
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn remove(&mut self, idx: &[usize]) -> Result<Option<f64>> {
        self.check_indices(idx)?;
        let Some(key) = Self::canonical(idx) else {
            return Ok(None);
        };
        let old = self.entries.remove(&key);
        if old.is_some() {
            for &i in &key {
                self.by_node[i].remove(&key);
            }
        }
        Ok(old)
    }

    /// Drops entries that are exactly zero.
    pub fn prune_zeros(&mut self) {
        let zeros: Vec<Key> = self
            .entries
            .iter()
            .filter(|(_, v)| **v == 0.0)
            .map(|(k, _)| k.clone())
            .collect();
        for k in zeros {
            self.entries.remove(&k);
            for &i in &k {
                self.by_node[i].remove(&k);
            }
        }
    }

    /// `⟨t, w∘ℓ⟩ = ℓ! Σ_S t_S Π_{i∈S} w_i`.
    pub fn energy(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.dim {
            return Err(GrmError::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            });
        }
        let sum: f64 = self
            .entries
            .iter()
            .map(|(k, v)| v * k.iter().map(|&i| w[i]).product::<f64>())
            .sum();
        Ok(factorial(self.order) * sum)
    }

    /// `ℓ ⟨[t]_v, w∘(ℓ-1)⟩ = ℓ! Σ_{S∋v} t_S Π_{i∈S, i≠v} w_i`; `w[v]` is never read.
    pub fn node_contraction(&self, v: usize, w: &[f64]) -> Result<f64> {
        if v >= self.dim {
            return Err(GrmError::IndexOutOfRange { index: v, dim: self.dim });
        }
        if w.len() != self.dim {
            return Err(GrmError::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            });
        }
        let sum: f64 = self.by_node[v]
            .iter()
            .map(|k| {
                let val = self.entries[k];
                val * k.iter().filter(|&&i| i != v).map(|&i| w[i]).product::<f64>()
            })
            .sum();
        Ok(factorial(self.order) * sum)
    }
}

/// All strictly increasing `size`-subsets of `0..n`, lexicographic.
pub fn combinations(n: usize, size: usize) -> Vec<Key> {
    let mut out = Vec::new();
    if size > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..size).collect();
    loop {
        out.push(cur.clone());
        let mut i = size;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - size + i {
                cur[i] += 1;
                for j in i + 1..size {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn get_examples() {
        let theta = 0.7;
        let mut t = SymTensor::new(2, 3);
        t.set(&[0, 1], theta).unwrap();
        assert_eq!(t.get(&[1, 0]).unwrap(), theta);
        assert_eq!(t.get(&[0, 0]).unwrap(), 0.0);
        let t3 = SymTensor::new(3, 3);
        assert_eq!(t3.get(&[0, 1, 2]).unwrap(), 0.0);
        assert!(matches!(t.get(&[0, 3]), Err(GrmError::IndexOutOfRange { .. })));
        assert!(t.set(&[1, 1], 2.0).is_err());
    }

    #[test]
    fn energy_examples() {
        let theta = 1.3;
        let mut t = SymTensor::new(2, 4);
        t.set(&[0, 1], theta).unwrap();
        assert!((t.energy(&[2.0, 3.0, 5.0, 7.0]).unwrap() - 12.0 * theta).abs() < 1e-14);
        let mut t3 = SymTensor::new(3, 3);
        t3.set(&[0, 1, 2], 0.4).unwrap();
        assert!((t3.energy(&[1.0, 1.0, 1.0]).unwrap() - 2.4).abs() < 1e-14);
        assert_eq!(t3.energy(&[0.0; 3]).unwrap(), 0.0);
        assert!(t3.energy(&[1.0; 2]).is_err());
    }

    #[test]
    fn node_contraction_examples() {
        let theta = -0.9;
        let mut t = SymTensor::new(2, 3);
        t.set(&[0, 1], theta).unwrap();
        assert!((t.node_contraction(0, &[99.0, 3.0, 1.0]).unwrap() - 6.0 * theta).abs() < 1e-14);
        let mut t3 = SymTensor::new(3, 4);
        t3.set(&[1, 2, 3], 5.0).unwrap();
        assert_eq!(t3.node_contraction(0, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
        let mut t3b = SymTensor::new(3, 4);
        let c = 0.25;
        t3b.set(&[0, 1, 2], c).unwrap();
        assert!((t3b.node_contraction(0, &[0.0, 3.0, 4.0, 0.0]).unwrap() - 72.0 * c).abs() < 1e-13);
        assert!(t3b.node_contraction(4, &[0.0; 4]).is_err());
    }

    #[test]
    fn remove_and_prune_keep_index_consistent() {
        let mut t = SymTensor::new(2, 3);
        t.set(&[0, 2], 1.0).unwrap();
        t.set(&[1, 2], 0.0).unwrap();
        t.prune_zeros();
        assert_eq!(t.keys_with(2).count(), 1);
        assert_eq!(t.remove(&[2, 0]).unwrap(), Some(1.0));
        assert_eq!(t.keys_with(0).count(), 0);
        assert!(t.is_empty());
    }

    #[test]
    fn combinations_enumerates_binomial_count() {
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(6, 3).len(), 20);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert!(combinations(2, 3).is_empty());
    }

    /// Brute force over all p^ℓ ordered tuples.
    fn brute_energy(t: &SymTensor, w: &[f64]) -> f64 {
        let p = t.dim();
        let l = t.order();
        let mut total = 0.0;
        let mut idx = vec![0usize; l];
        loop {
            total += t.get(&idx).unwrap() * idx.iter().map(|&i| w[i]).product::<f64>();
            let mut pos = l;
            loop {
                if pos == 0 {
                    return total;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < p {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }

    fn tensor_strategy() -> impl Strategy<Value = (SymTensor, Vec<f64>)> {
        (1usize..=3, 3usize..=6).prop_flat_map(|(order, dim)| {
            let keys = combinations(dim, order);
            let nkeys = keys.len();
            (
                proptest::collection::vec(proptest::option::of(-2.0f64..2.0), nkeys),
                proptest::collection::vec(0.01f64..3.0, dim),
            )
                .prop_map(move |(vals, w)| {
                    let mut t = SymTensor::new(order, dim);
                    for (k, v) in keys.iter().zip(vals) {
                        if let Some(v) = v {
                            t.set(k, v).unwrap();
                        }
                    }
                    (t, w)
                })
        })
    }

    proptest! {
        #[test]
        fn energy_matches_brute_force((t, w) in tensor_strategy()) {
            let fast = t.energy(&w).unwrap();
            let slow = brute_energy(&t, &w);
            prop_assert!((fast - slow).abs() <= 1e-10 * (1.0 + slow.abs()));
        }

        #[test]
        fn node_contractions_reconstruct_energy((t, w) in tensor_strategy()) {
            let total: f64 = (0..t.dim())
                .map(|v| t.node_contraction(v, &w).unwrap() * w[v])
                .sum::<f64>() / t.order() as f64;
            let e = t.energy(&w).unwrap();
            prop_assert!((total - e).abs() <= 1e-10 * (1.0 + e.abs()));
        }

        #[test]
        fn permutations_agree((t, _w) in tensor_strategy()) {
            for (k, v) in t.iter() {
                let mut rev = k.clone();
                rev.reverse();
                prop_assert_eq!(t.get(&rev).unwrap(), v);
            }
        }
    }
}
