use nalgebra::DMatrix;

use super::NatParams;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Real roots of `Σ c_i y^i` from the companion-matrix eigenvalues;
/// `coeffs[i]` is the coefficient of `y^i`.
fn real_positive_roots(coeffs: &[f64]) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    while c.last() == Some(&0.0) {
        c.pop();
    }
    // y = 0 roots are never positive.
    let shift = c.iter().take_while(|&&v| v == 0.0).count();
    let c = &c[shift..];
    if c.len() < 2 {
        return Vec::new();
    }
    let n = c.len() - 1;
    let lead = c[n];
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        comp[(i, n - 1)] = -c[i] / lead;
    }
    let eig = comp.complex_eigenvalues();
    let horner = |y: f64| c.iter().rev().fold(0.0, |acc, &ci| acc * y + ci);
    let horner_d = |y: f64| {
        c.iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, &ci)| acc * y + i as f64 * ci)
    };
    let mut roots: Vec<f64> = eig
        .iter()
        .filter(|z| z.im.abs() < 1e-9 * (1.0 + z.re.abs()) && z.re > 0.0)
        .map(|z| {
            // A few Newton steps on h recover full precision lost in the QR iteration.
            let mut y = z.re;
            for _ in 0..4 {
                let d = horner_d(y);
                if d == 0.0 {
                    break;
                }
                let step = horner(y) / d;
                let next = y - step;
                if !(next > 0.0) || step.abs() > 0.1 * y {
                    break;
                }
                y = next;
            }
            y
        })
        .collect();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

/// All `x > 0` where `g''(x) = 0`, sorted and deduplicated.
///
/// With `L` the least common multiple of the active root orders, `x² g''(x)`
/// becomes a polynomial in `y = x^{1/L}`; its positive real roots map back
/// through `x = y^L`.
pub fn inflection_points(np: &NatParams) -> Vec<f64> {
    let active: Vec<usize> = np
        .eta
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &e)| e != 0.0)
        .map(|(i, _)| i + 1)
        .collect();
    if active.is_empty() {
        // g'' = -a / x² has no zeros.
        return Vec::new();
    }
    let l = active.iter().fold(1, |acc, &j| lcm(acc, j));
    let mut coeffs = vec![0.0; l / 2 + 1];
    coeffs[0] = -np.a_f64();
    for &j in &active {
        let jf = j as f64;
        coeffs[l / j] += np.eta[j - 1] * (1.0 - jf) / (jf * jf);
    }
    let mut xs: Vec<f64> = real_positive_roots(&coeffs)
        .into_iter()
        .map(|y| y.powi(l as i32))
        .filter(|x| x.is_finite() && *x > 0.0)
        .collect();
    xs.dedup_by(|b, a| (*b - *a).abs() <= 1e-9 * a.abs().max(b.abs()));
    xs
}

#[cfg(test)]
mod tests {
    use super::super::exponent;
    use super::*;

    #[test]
    fn no_positive_inflection_when_a_is_zero() {
        let np = NatParams::new(vec![0.0, 1.0, 1.0], exponent(0, 1));
        assert!(inflection_points(&np).is_empty());
        let np2 = NatParams::new(vec![0.0, -3.0], exponent(0, 1));
        assert!(inflection_points(&np2).is_empty());
    }

    /// Bisection oracle on ¼y³ + (2/9)y² - 1 = 0.
    fn bisect_root() -> f64 {
        let h = |y: f64| 0.25 * y.powi(3) + 2.0 / 9.0 * y * y - 1.0;
        let (mut lo, mut hi) = (0.0, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn companion_root_matches_bisection_oracle() {
        let y = bisect_root();
        assert!((y - 1.3397).abs() < 1e-4);
        let np = NatParams::new(vec![0.0, 1.0, 1.0], exponent(-1, 1));
        let roots = inflection_points(&np);
        assert_eq!(roots.len(), 1);
        let expect = y.powi(6);
        assert!((roots[0] - expect).abs() < 1e-9 * expect, "{} vs {}", roots[0], expect);
        assert!((roots[0] - 5.78).abs() < 0.01);
    }

    #[test]
    fn roots_are_true_zeros_of_curvature() {
        let np = NatParams::new(vec![0.2, 3.0, -4.0, 1.5], exponent(1, 2));
        for x in inflection_points(&np) {
            let (h, scale) = np.curvature(x);
            assert!(h.abs() <= 1e-10 * scale, "x={x} h={h}");
        }
    }
}
