use crate::error::{GrmError, Result};

use super::NatParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concavity {
    Concave,
    Flat,
    Convex,
}

impl Concavity {
    pub fn sign(self) -> i8 {
        match self {
            Concavity::Concave => -1,
            Concavity::Flat => 0,
            Concavity::Convex => 1,
        }
    }
}

/// `slope · x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

impl Line {
    pub const ZERO: Line = Line {
        slope: 0.0,
        intercept: 0.0,
    };

    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    fn tangent(np: &NatParams, q: f64) -> Line {
        let slope = np.g1(q);
        Line {
            slope,
            intercept: np.g0(q) - q * slope,
        }
    }

    fn secant(np: &NatParams, q1: f64, q2: f64) -> Line {
        let (g1, g2) = (np.g0(q1), np.g0(q2));
        let slope = (g2 - g1) / (q2 - q1);
        Line {
            slope,
            intercept: g1 - slope * q1,
        }
    }

    fn constant(value: f64) -> Line {
        Line {
            slope: 0.0,
            intercept: value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBounds {
    pub lower: Line,
    pub upper: Line,
}

const GRID: usize = 33;
const CURVATURE_RTOL: f64 = 1e-10;

fn grid_point(lo: f64, hi: f64, i: usize) -> f64 {
    let t = i as f64 / (GRID - 1) as f64;
    if hi.is_finite() {
        lo + (hi - lo) * t
    } else {
        // Geometric reach of ~12 decades past lo.
        lo + (2f64.powf(40.0 * t) - 1.0) * lo.max(1.0)
    }
}

fn sign_of(np: &NatParams, x: f64) -> i8 {
    let (h, scale) = np.curvature(x);
    if h.abs() <= CURVATURE_RTOL * scale {
        0
    } else if h > 0.0 {
        1
    } else {
        -1
    }
}

fn locate_sign_change(np: &NatParams, mut a: f64, mut b: f64) -> f64 {
    let sa = np.curvature(a).0.signum();
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if np.curvature(mid).0.signum() == sa {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Sign of `g''` on `[lo, hi]` (`hi` may be `+∞`), validated on a 33-point grid.
pub fn concavity(np: &NatParams, lo: f64, hi: f64) -> Result<Concavity> {
    if np.g_is_zero() {
        return Ok(Concavity::Flat);
    }
    let pts: Vec<f64> = (0..GRID).map(|i| grid_point(lo, hi, i)).collect();
    let signs: Vec<i8> = pts.iter().map(|&x| sign_of(np, x)).collect();
    let mut seen: Option<(i8, usize)> = None;
    for (i, &s) in signs.iter().enumerate() {
        if s == 0 {
            continue;
        }
        match seen {
            None => seen = Some((s, i)),
            Some((s0, last)) if s0 != s => {
                let at = locate_sign_change(np, pts[last], pts[i]);
                return Err(GrmError::NonConstantConcavity { lo, hi, at });
            }
            Some((s0, _)) => seen = Some((s0, i)),
        }
    }
    Ok(match seen {
        Some((-1, _)) => Concavity::Concave,
        Some((_, _)) => Concavity::Convex,
        // Curvature below rounding everywhere on the grid: fall back on the
        // sign at the right end, where the dominant root term has taken over.
        None => {
            if np.curvature(pts[GRID - 1]).0 < 0.0 {
                Concavity::Concave
            } else {
                Concavity::Convex
            }
        }
    })
}

/// Lines bounding `g` on `[lo, hi]` for a known curvature sign, without validation.
pub(crate) fn bounds_for(np: &NatParams, lo: f64, hi: f64, conc: Concavity) -> LinearBounds {
    if conc == Concavity::Flat {
        let t = if np.g_is_zero() { Line::ZERO } else { Line::tangent(np, lo) };
        return LinearBounds { lower: t, upper: t };
    }
    if hi.is_infinite() {
        // Past the last inflection point g is monotone: increasing when concave
        // (g → +∞), decreasing when convex (g → -∞).
        let flat = Line::constant(np.g0(lo));
        let tangent = Line::tangent(np, lo);
        return match conc {
            Concavity::Concave => LinearBounds {
                lower: flat,
                upper: tangent,
            },
            _ => LinearBounds {
                lower: tangent,
                upper: flat,
            },
        };
    }
    if hi == lo {
        let c = Line::constant(np.g0(lo));
        return LinearBounds { lower: c, upper: c };
    }
    let q = if np.g0(hi) > np.g0(lo) { hi } else { lo };
    let tangent = Line::tangent(np, q);
    let secant = Line::secant(np, lo, hi);
    match conc {
        Concavity::Concave => LinearBounds {
            lower: secant,
            upper: tangent,
        },
        _ => LinearBounds {
            lower: tangent,
            upper: secant,
        },
    }
}

/// Tangent/secant bounds on a bounded piece, constant/tangent bounds on the
/// unbounded tail.
pub fn linear_bounds(np: &NatParams, lo: f64, hi: f64, conc: Concavity) -> Result<LinearBounds> {
    if !(lo > 0.0) || !(hi >= lo) {
        return Err(GrmError::Domain(format!("invalid piece [{lo}, {hi})")));
    }
    let actual = concavity(np, lo, hi)?;
    if actual != conc && !(np.g_is_zero() && conc == Concavity::Flat) {
        return Err(GrmError::NonConstantConcavity { lo, hi, at: lo });
    }
    Ok(bounds_for(np, lo, hi, conc))
}

#[cfg(test)]
mod tests {
    use super::super::exponent;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_on_one_to_four() {
        let np = NatParams::new(vec![0.0, 1.0], exponent(0, 1));
        let b = linear_bounds(&np, 1.0, 4.0, Concavity::Concave).unwrap();
        assert_relative_eq!(b.lower.slope, 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(b.lower.intercept, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(b.upper.slope, 0.25, epsilon = 1e-15);
        assert_relative_eq!(b.upper.intercept, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_function_gives_zero_lines() {
        let np = NatParams::new(vec![2.0, 0.0, 0.0], exponent(0, 1));
        let b = linear_bounds(&np, 2.0, 9.0, Concavity::Flat).unwrap();
        assert_eq!(b.lower, Line::ZERO);
        assert_eq!(b.upper, Line::ZERO);
    }

    #[test]
    fn negative_tail_uses_constant_upper_and_tangent_lower() {
        let np = NatParams::new(vec![0.5, -2.0], exponent(0, 1));
        let x0 = 3.0;
        let b = linear_bounds(&np, x0, f64::INFINITY, Concavity::Convex).unwrap();
        assert_eq!(b.upper.slope, 0.0);
        assert_relative_eq!(b.upper.intercept, -2.0 * x0.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(b.lower.slope, -1.0 / x0.sqrt(), epsilon = 1e-15);
        for i in 0..200 {
            let x = x0 + i as f64 * 7.5;
            let g = np.g0(x);
            assert!(b.lower.eval(x) <= g + 1e-12 && g <= b.upper.eval(x) + 1e-12);
        }
    }

    #[test]
    fn wrong_concavity_is_rejected() {
        let np = NatParams::new(vec![0.0, 1.0], exponent(0, 1));
        assert!(matches!(
            linear_bounds(&np, 1.0, 4.0, Concavity::Convex),
            Err(GrmError::NonConstantConcavity { .. })
        ));
    }

    #[test]
    fn sign_change_is_located() {
        // Inflection near 5.78.
        let np = NatParams::new(vec![0.0, 1.0, 1.0], exponent(-1, 1));
        match concavity(&np, 1.0, 20.0) {
            Err(GrmError::NonConstantConcavity { at, .. }) => assert!((at - 5.78).abs() < 0.01),
            other => panic!("expected a sign change, got {other:?}"),
        }
    }

    #[test]
    fn bounds_hold_on_a_grid() {
        let cases = [
            (vec![0.0, 2.0, -1.0], 1, 2, 1.0, 6.0),
            (vec![0.0, -3.0, 0.5, 1.0], 0, 1, 2.0, 30.0),
            (vec![0.0, 0.4], 5, 6, 1.0, f64::INFINITY),
        ];
        for (eta, an, ad, lo, hi) in cases {
            let np = NatParams::new(eta, exponent(an, ad));
            let conc = concavity(&np, lo, hi).unwrap();
            let b = linear_bounds(&np, lo, hi, conc).unwrap();
            let top = if hi.is_finite() { hi } else { lo + 1e4 };
            for i in 0..=500 {
                let x = lo + (top - lo) * i as f64 / 500.0;
                let g = np.g0(x);
                assert!(b.lower.eval(x) <= g + 1e-10, "lower fails at {x}");
                assert!(g <= b.upper.eval(x) + 1e-10, "upper fails at {x}");
            }
        }
    }
}
