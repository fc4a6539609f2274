//! The joint GRM: tensors `Φ^{(ℓ)}_{(j)}` for `1 ≤ ℓ ≤ j ≤ k`.
//!
//! The order-`ℓ` tensor in block `j` acts on the entry-wise `j`-th root of
//! `x`, so the joint log density is
//! `Σ_j Σ_{ℓ≤j} ⟨Φ^{(ℓ)}_{(j)}, (x^{1/j})∘ℓ⟩ + Σ_v B(x_v) - A(Φ)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GrmError, Result};
use crate::family::Family;
use crate::logpartition::{exponent, Exponent, NatParams};
use crate::tensor::SymTensor;

/// Outcome of [`GrmModel::check_normalizable`].
#[derive(Debug, Clone, PartialEq)]
pub enum Normalizability {
    Ok,
    /// A simplex direction where the linear radial coefficient is nonnegative.
    ViolatedAt(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrmModel {
    family: Family,
    p: usize,
    k: usize,
    simplified: bool,
    tensors: BTreeMap<(usize, usize), SymTensor>,
}

/// Entry-wise `j`-th root.
pub(crate) fn roots(x: &[f64], j: usize) -> Vec<f64> {
    x.iter().map(|&v| crate::numeric::root(v, j)).collect()
}

impl GrmModel {
    /// An all-zero model. The simplified model keeps only the `ℓ = j` blocks.
    pub fn new(family: Family, p: usize, k: usize, simplified: bool) -> Result<Self> {
        if p == 0 {
            return Err(GrmError::InvalidArgument("dimension p must be at least 1".into()));
        }
        if k == 0 {
            return Err(GrmError::InvalidArgument("order k must be at least 1".into()));
        }
        let mut tensors = BTreeMap::new();
        for j in 1..=k {
            for l in 1..=j {
                if !simplified || l == j {
                    tensors.insert((l, j), SymTensor::new(l, p));
                }
            }
        }
        Ok(GrmModel {
            family,
            p,
            k,
            simplified,
            tensors,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn simplified(&self) -> bool {
        self.simplified
    }

    /// Present `(ℓ, j)` blocks in lexicographic order.
    pub fn blocks(&self) -> impl Iterator<Item = ((usize, usize), &SymTensor)> + '_ {
        self.tensors.iter().map(|(k, t)| (*k, t))
    }

    pub fn tensor(&self, l: usize, j: usize) -> Option<&SymTensor> {
        self.tensors.get(&(l, j))
    }

    pub fn tensor_mut(&mut self, l: usize, j: usize) -> Result<&mut SymTensor> {
        let simplified = self.simplified;
        self.tensors.get_mut(&(l, j)).ok_or_else(|| {
            GrmError::InvalidArgument(if simplified {
                format!("block (ell = {l}, j = {j}) is not part of the simplified model")
            } else {
                format!("block (ell = {l}, j = {j}) is out of range")
            })
        })
    }

    pub fn set(&mut self, l: usize, j: usize, idx: &[usize], value: f64) -> Result<()> {
        self.tensor_mut(l, j)?.set(idx, value)
    }

    pub fn get(&self, l: usize, j: usize, idx: &[usize]) -> Result<f64> {
        match self.tensors.get(&(l, j)) {
            Some(t) => t.get(idx),
            None => Ok(0.0),
        }
    }

    /// Node-level linear parameters `φ_v = Φ^{(1)}_{(1)}`.
    pub fn linear(&self) -> &SymTensor {
        &self.tensors[&(1, 1)]
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(GrmError::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        x.iter().try_for_each(|&v| self.family.check_domain(v))
    }

    /// Joint log density without the joint log partition.
    pub fn unnormalized_log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut total = 0.0;
        for j in 1..=self.k {
            let w = roots(x, j);
            for l in 1..=j {
                if let Some(t) = self.tensors.get(&(l, j)) {
                    total += t.energy(&w)?;
                }
            }
        }
        for &v in x {
            total += self.family.log_base_measure(v)?;
        }
        Ok(total)
    }

    /// `η_{jv} = Σ_{ℓ≤j} ℓ ⟨[Φ^{(ℓ)}_{(j)}]_v, (x^{1/j})∘(ℓ-1)⟩`; `x_v` itself is never used.
    pub fn node_natural_params(&self, x: &[f64], v: usize) -> Result<NatParams> {
        if v >= self.p {
            return Err(GrmError::IndexOutOfRange { index: v, dim: self.p });
        }
        if x.len() != self.p {
            return Err(GrmError::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        let mut eta = vec![0.0; self.k];
        for (j, e) in eta.iter_mut().enumerate() {
            let j = j + 1;
            let w = roots(x, j);
            for l in 1..=j {
                if let Some(t) = self.tensors.get(&(l, j)) {
                    *e += t.node_contraction(v, &w)?;
                }
            }
        }
        Ok(NatParams::new(eta, exponent(0, 1)))
    }

    fn check_simplex(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.p {
            return Err(GrmError::DimensionMismatch {
                expected: self.p,
                got: u.len(),
            });
        }
        if let Some(bad) = u.iter().find(|&&v| !(v >= 0.0)) {
            return Err(GrmError::Simplex(format!("negative coordinate {bad}")));
        }
        let s: f64 = u.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(GrmError::Simplex(format!("coordinates sum to {s}")));
        }
        Ok(())
    }

    /// Coefficients of `s^r` in the log density along the ray `x = s·u`,
    /// for every ratio `r = ℓ/j` the model can produce.
    pub fn radial_params(&self, u: &[f64]) -> Result<BTreeMap<Exponent, f64>> {
        self.check_simplex(u)?;
        let mut out = BTreeMap::new();
        for j in 1..=self.k {
            for l in 1..=j {
                out.entry(exponent(l as i32, j as i32)).or_insert(0.0);
            }
        }
        for j in 1..=self.k {
            let w = roots(u, j);
            for l in 1..=j {
                if let Some(t) = self.tensors.get(&(l, j)) {
                    *out.get_mut(&exponent(l as i32, j as i32)).unwrap() += t.energy(&w)?;
                }
            }
        }
        Ok(out)
    }

    fn radial_linear(&self, u: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 1..=self.k {
            if let Some(t) = self.tensors.get(&(j, j)) {
                s += t.energy(&roots(u, j)).expect("dimension checked");
            }
        }
        s
    }

    /// Poisson models always normalize. Exponential models need the linear
    /// radial coefficient to be negative in every direction; this checks the
    /// vertices, all pairwise midpoints and `n_dirs` uniform random directions.
    /// Passing is evidence, not proof.
    pub fn check_normalizable(&self, n_dirs: usize, seed: u64) -> Normalizability {
        if self.family == Family::Poisson {
            return Normalizability::Ok;
        }
        let p = self.p;
        let test = |u: Vec<f64>| -> Option<Vec<f64>> { (self.radial_linear(&u) >= 0.0).then_some(u) };
        for i in 0..p {
            let mut u = vec![0.0; p];
            u[i] = 1.0;
            if let Some(bad) = test(u) {
                return Normalizability::ViolatedAt(bad);
            }
        }
        for i in 0..p {
            for j in i + 1..p {
                let mut u = vec![0.0; p];
                u[i] = 0.5;
                u[j] = 0.5;
                if let Some(bad) = test(u) {
                    return Normalizability::ViolatedAt(bad);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_dirs {
            // Normalized unit exponentials are uniform on the simplex.
            let e: Vec<f64> = (0..p).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            if let Some(bad) = test(e.iter().map(|v| v / s).collect()) {
                return Normalizability::ViolatedAt(bad);
            }
        }
        Normalizability::Ok
    }

    /// Drops exactly-zero entries from every block.
    pub fn prune_zeros(&mut self) {
        for t in self.tensors.values_mut() {
            t.prune_zeros();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::combinations;
    use proptest::prelude::*;
    use statrs::function::gamma::ln_gamma;

    fn pair_model(theta: f64) -> GrmModel {
        let mut m = GrmModel::new(Family::Poisson, 2, 2, true).unwrap();
        m.set(2, 2, &[0, 1], theta).unwrap();
        m
    }

    #[test]
    fn zero_model_at_origin() {
        let m = GrmModel::new(Family::Poisson, 4, 3, false).unwrap();
        assert_eq!(m.unnormalized_log_density(&[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn independent_model_density() {
        let mut m = GrmModel::new(Family::Poisson, 3, 1, true).unwrap();
        let phi = [0.3, -1.0, 2.0];
        for (i, &f) in phi.iter().enumerate() {
            m.set(1, 1, &[i], f).unwrap();
        }
        let x = [2.0, 0.0, 5.0];
        let expect = 0.3 * 2.0 + 2.0 * 5.0 - ln_gamma(3.0) - ln_gamma(6.0);
        assert!((m.unnormalized_log_density(&x).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn pair_density_example() {
        let theta = 0.37;
        let m = pair_model(theta);
        let got = m.unnormalized_log_density(&[4.0, 9.0]).unwrap();
        let expect = 12.0 * theta - ln_gamma(5.0) - ln_gamma(10.0);
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn node_params_examples() {
        let mut m = GrmModel::new(Family::Poisson, 3, 2, true).unwrap();
        m.set(1, 1, &[0], 0.25).unwrap();
        assert_eq!(m.node_natural_params(&[5.0, 1.0, 2.0], 0).unwrap().eta, vec![0.25, 0.0]);
        let theta = -0.4;
        let pm = pair_model(theta);
        let np = pm.node_natural_params(&[123.0, 9.0], 0).unwrap();
        assert!((np.eta[1] - 6.0 * theta).abs() < 1e-14);

        let c = 0.11;
        let mut t = GrmModel::new(Family::Poisson, 3, 3, true).unwrap();
        t.set(3, 3, &[0, 1, 2], c).unwrap();
        let np = t.node_natural_params(&[1.0, 8.0, 27.0], 0).unwrap();
        assert!((np.eta[2] - 36.0 * c).abs() < 1e-12);
        assert!(matches!(t.node_natural_params(&[0.0; 3], 3), Err(GrmError::IndexOutOfRange { .. })));
    }

    #[test]
    fn radial_examples() {
        let theta = 0.8;
        let r = pair_model(theta).radial_params(&[0.5, 0.5]).unwrap();
        assert!((r[&exponent(1, 1)] - theta).abs() < 1e-14);
        assert_eq!(r[&exponent(1, 2)], 0.0);
        let full = GrmModel::new(Family::Poisson, 3, 3, false).unwrap();
        let r = full.radial_params(&[0.2, 0.3, 0.5]).unwrap();
        let keys: Vec<Exponent> = r.keys().copied().collect();
        assert_eq!(keys, vec![exponent(1, 3), exponent(1, 2), exponent(2, 3), exponent(1, 1)]);
        assert!(r.values().all(|&v| v == 0.0));
        assert!(matches!(full.radial_params(&[0.5, 0.5, 0.1]), Err(GrmError::Simplex(_))));
        assert!(matches!(full.radial_params(&[1.5, -0.5, 0.0]), Err(GrmError::Simplex(_))));
    }

    #[test]
    fn normalizability_examples() {
        assert_eq!(pair_model(50.0).check_normalizable(10, 1), Normalizability::Ok);

        let mut e = GrmModel::new(Family::Exponential, 4, 1, true).unwrap();
        for i in 0..4 {
            e.set(1, 1, &[i], -1.0).unwrap();
        }
        assert_eq!(e.check_normalizable(100, 1), Normalizability::Ok);

        let mut e2 = GrmModel::new(Family::Exponential, 3, 2, true).unwrap();
        for i in 0..3 {
            e2.set(1, 1, &[i], -1.0).unwrap();
        }
        // At the midpoint: -1 + 2θ·½ ≥ 0 once θ ≥ 1.
        e2.set(2, 2, &[0, 1], 1.5).unwrap();
        assert_eq!(e2.check_normalizable(100, 1), Normalizability::ViolatedAt(vec![0.5, 0.5, 0.0]));
    }

    #[test]
    fn simplified_model_rejects_mixed_blocks() {
        let mut m = GrmModel::new(Family::Poisson, 3, 2, true).unwrap();
        assert!(m.set(1, 2, &[0], 1.0).is_err());
        let mut f = GrmModel::new(Family::Poisson, 3, 2, false).unwrap();
        f.set(1, 2, &[0], 1.0).unwrap();
        assert!(GrmModel::new(Family::Poisson, 2, 0, true).is_err());
    }

    fn random_model(p: usize, k: usize, simplified: bool, vals: &[f64]) -> GrmModel {
        let mut m = GrmModel::new(Family::Poisson, p, k, simplified).unwrap();
        let mut it = vals.iter().cycle();
        let blocks: Vec<(usize, usize)> = m.blocks().map(|(b, _)| b).collect();
        for (l, j) in blocks {
            for key in combinations(p, l) {
                m.set(l, j, &key, *it.next().unwrap()).unwrap();
            }
        }
        m
    }

    proptest! {
        #[test]
        fn radial_identity(
            vals in proptest::collection::vec(-1.0f64..1.0, 30),
            x in proptest::collection::vec(0u32..20, 4),
            simplified in any::<bool>(),
        ) {
            let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let s: f64 = x.iter().sum();
            prop_assume!(s > 0.0);
            let m = random_model(4, 3, simplified, &vals);
            let u: Vec<f64> = x.iter().map(|v| v / s).collect();
            let su: f64 = u.iter().sum();
            let u: Vec<f64> = u.iter().map(|v| v / su).collect();
            let r = m.radial_params(&u).unwrap();
            let mut total: f64 = r.iter().map(|(ratio, c)| c * s.powf(*ratio.numer() as f64 / *ratio.denom() as f64)).sum();
            total += x.iter().map(|&v| -ln_gamma(v + 1.0)).sum::<f64>();
            let direct = m.unnormalized_log_density(&x).unwrap();
            prop_assert!((total - direct).abs() <= 1e-10 * (1.0 + direct.abs()), "{} vs {}", total, direct);
        }

        #[test]
        fn sqr_reduction(vals in proptest::collection::vec(-1.0f64..1.0, 20), x in proptest::collection::vec(0u32..30, 4)) {
            // k = 2: ⟨φ, x⟩ + ⟨φ₂, √x⟩ + √xᵀ Θ √x + Σ B(x_v) with Θ zero-diagonal.
            let m = random_model(4, 2, false, &vals);
            let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let sq: Vec<f64> = x.iter().map(|v| v.sqrt()).collect();
            let mut expect = 0.0;
            for v in 0..4 {
                expect += m.get(1, 1, &[v]).unwrap() * x[v] + m.get(1, 2, &[v]).unwrap() * sq[v] - ln_gamma(x[v] + 1.0);
                for w in 0..4 {
                    if v != w {
                        expect += m.get(2, 2, &[v, w]).unwrap() * sq[v] * sq[w];
                    }
                }
            }
            let got = m.unnormalized_log_density(&x).unwrap();
            prop_assert!((got - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
        }
    }
}
