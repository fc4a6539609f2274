use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{GrmError, Result};
use crate::family::{Family, Measure, LEBESGUE_EPS};
use crate::numeric::{log_sub, log_sum_exp};

use super::linear::{bounds_for, concavity, Concavity, Line, LinearBounds};
use super::{inflection_points, NatParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceKind {
    /// The single point `x = 0` of the counting measure, evaluated exactly.
    Point,
    /// `(0, ε)` under the Lebesgue measure, bounded analytically.
    Origin,
    /// A piece of constant concavity with linear bounds on `g`.
    Linear,
}

/// One subdomain `[lo, hi)` with its bounding lines and log-integral bounds.
///
/// For the counting measure `lo` and `hi` are integers and the piece covers
/// `lo ..= hi - 1`; the lines are only required to bound `g` there.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPiece {
    pub lo: f64,
    pub hi: f64,
    pub kind: PieceKind,
    pub concavity: i8,
    pub lower: Line,
    pub upper: Line,
    pub log_int_lower: f64,
    pub log_int_upper: f64,
    conc: Concavity,
}

impl BoundPiece {
    /// `log(∫upper - ∫lower)`, `-inf` when the bounds coincide.
    pub fn log_gap(&self) -> f64 {
        log_sub(self.log_int_upper, self.log_int_lower)
    }
}

/// Bounds on `M(a)` and the pieces that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MBounds {
    pub lower: f64,
    pub upper: f64,
    pub pieces: Vec<BoundPiece>,
}

impl MBounds {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        if self.lower == self.upper {
            self.lower
        } else {
            0.5 * (self.lower + self.upper)
        }
    }

    /// Number of splittable pieces.
    pub fn linear_pieces(&self) -> usize {
        self.pieces.iter().filter(|p| p.kind == PieceKind::Linear).count()
    }

    /// One tab-separated line per piece, with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lo\thi\tconcavity\tb_l\tc_l\tb_u\tc_u\tlog_int_lower\tlog_int_upper\n");
        for p in &self.pieces {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.lo,
                p.hi,
                p.concavity,
                p.lower.slope,
                p.lower.intercept,
                p.upper.slope,
                p.upper.intercept,
                p.log_int_lower,
                p.log_int_upper
            );
        }
        out
    }
}

enum Issue {
    Split(f64),
    Fatal(GrmError),
}

impl From<GrmError> for Issue {
    fn from(e: GrmError) -> Self {
        Issue::Fatal(e)
    }
}

/// Greedy piecewise bounding of `M(a)`.
///
/// Construction finds the inflection points of `g`, cuts the domain there
/// and bounds each piece. [`Segmenter::split_largest`] then repeatedly halves
/// the piece whose upper and lower integrals differ the most. Children keep
/// their parent's lines whenever those integrate tighter, so the overall gap
/// never grows.
#[derive(Debug, Clone)]
pub struct Segmenter {
    family: Family,
    np: NatParams,
    fixed: Vec<BoundPiece>,
    pieces: Vec<BoundPiece>,
}

const MAX_CONSTRUCTION_STEPS: usize = 10_000;

impl Segmenter {
    pub fn new(family: Family, np: &NatParams) -> Result<Self> {
        if *np.a.numer() < 0 {
            return Err(GrmError::Domain(format!("moment exponent must be nonnegative, got {}", np.a)));
        }
        if np.eta.iter().any(|e| !e.is_finite()) {
            return Err(GrmError::InfeasibleNaturalParam(format!("non-finite parameters {:?}", np.eta)));
        }
        if family == Family::Exponential && np.eta[0] >= 0.0 {
            return Err(GrmError::InfeasibleNaturalParam(format!(
                "exponential node conditional needs eta_1 < 0, got {}",
                np.eta[0]
            )));
        }
        let mut seg = Segmenter {
            family,
            np: np.clone(),
            fixed: Vec::new(),
            pieces: Vec::new(),
        };
        seg.fixed.push(seg.origin_piece());

        let start = match family.measure() {
            Measure::Counting => 1.0,
            Measure::Lebesgue => LEBESGUE_EPS,
        };
        let mut cuts = vec![start];
        for r in inflection_points(np) {
            let c = seg.snap(r);
            if c > *cuts.last().unwrap() {
                cuts.push(c);
            }
        }
        cuts.push(f64::INFINITY);

        let mut queue: VecDeque<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
        let mut steps = 0;
        while let Some((lo, hi)) = queue.pop_front() {
            steps += 1;
            if steps > MAX_CONSTRUCTION_STEPS {
                return Err(GrmError::Normalization("piece construction did not terminate".into()));
            }
            match seg.make_piece(lo, hi, None, None) {
                Ok(Some(p)) => seg.pieces.push(p),
                Ok(None) => {}
                Err(Issue::Split(s)) => {
                    queue.push_front((s, hi));
                    queue.push_front((lo, s));
                }
                Err(Issue::Fatal(e)) => return Err(e),
            }
        }
        seg.pieces.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
        Ok(seg)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &NatParams {
        &self.np
    }

    /// Number of splittable pieces.
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    fn snap(&self, x: f64) -> f64 {
        match self.family.measure() {
            Measure::Counting => x.ceil(),
            Measure::Lebesgue => x,
        }
    }

    fn origin_piece(&self) -> BoundPiece {
        let a = self.np.a_f64();
        match self.family.measure() {
            Measure::Counting => {
                // 0^a · exp(0) with 0^0 = 1.
                let v = if a == 0.0 { 0.0 } else { f64::NEG_INFINITY };
                BoundPiece {
                    lo: 0.0,
                    hi: 1.0,
                    kind: PieceKind::Point,
                    concavity: 0,
                    lower: Line { slope: 0.0, intercept: v },
                    upper: Line { slope: 0.0, intercept: v },
                    log_int_lower: v,
                    log_int_upper: v,
                    conc: Concavity::Flat,
                }
            }
            Measure::Lebesgue => {
                // ∫_0^ε x^a dx times the extreme values of every other factor.
                let eps = LEBESGUE_EPS;
                let base = (a + 1.0) * eps.ln() - (a + 1.0).ln();
                let mut hi_terms = (self.np.eta[0] * eps).max(0.0);
                let mut lo_terms = (self.np.eta[0] * eps).min(0.0);
                for (idx, &e) in self.np.eta.iter().enumerate().skip(1) {
                    let t = e * eps.powf(1.0 / (idx + 1) as f64);
                    hi_terms += t.max(0.0);
                    lo_terms += t.min(0.0);
                }
                BoundPiece {
                    lo: 0.0,
                    hi: eps,
                    kind: PieceKind::Origin,
                    concavity: 0,
                    lower: Line {
                        slope: 0.0,
                        intercept: f64::NEG_INFINITY,
                    },
                    upper: Line {
                        slope: 0.0,
                        intercept: hi_terms + a * eps.ln(),
                    },
                    log_int_lower: base + lo_terms,
                    log_int_upper: base + hi_terms,
                    conc: Concavity::Flat,
                }
            }
        }
    }

    fn line_integral(&self, line: &Line, lo: f64, hi: f64) -> std::result::Result<f64, GrmError> {
        let li = self.family.log_integral(self.np.eta[0] + line.slope, lo, hi)?;
        if li == f64::NEG_INFINITY {
            return Ok(li);
        }
        Ok(line.intercept + li)
    }

    fn tail_split(&self, lo: f64) -> Issue {
        // Concave tail whose tangent slope cancels η_1: move the tail start out
        // until g' has decayed to at most |η_1| / 2.
        let eta1 = self.np.eta[0];
        let mut s = lo.max(1.0) * 2.0;
        for _ in 0..2000 {
            if eta1 + self.np.g1(s) <= 0.5 * eta1 {
                return Issue::Split(self.snap(s));
            }
            s *= 2.0;
            if !s.is_finite() {
                break;
            }
        }
        Issue::Fatal(GrmError::InfeasibleNaturalParam(format!(
            "exponential tail diverges for eta {:?}",
            self.np.eta
        )))
    }

    fn make_piece(
        &self,
        lo: f64,
        hi: f64,
        known: Option<Concavity>,
        parent: Option<&BoundPiece>,
    ) -> std::result::Result<Option<BoundPiece>, Issue> {
        let counting = self.family.measure() == Measure::Counting;
        // Closed hull of the support inside [lo, hi).
        let (h_lo, h_hi) = if counting {
            (lo, if hi.is_finite() { hi - 1.0 } else { hi })
        } else {
            (lo, hi)
        };
        if h_hi < h_lo || (!counting && hi <= lo) {
            return Ok(None);
        }
        let np = &self.np;
        let (conc, lines) = if counting && h_hi == h_lo {
            let c = Line {
                slope: 0.0,
                intercept: np.g0(h_lo),
            };
            (Concavity::Flat, LinearBounds { lower: c, upper: c })
        } else if counting && h_hi == h_lo + 1.0 {
            // Two support points: the secant through both is exact on the support.
            let g1 = np.g0(h_lo);
            let g2 = np.g0(h_hi);
            let s = Line {
                slope: g2 - g1,
                intercept: g1 - (g2 - g1) * h_lo,
            };
            (Concavity::Flat, LinearBounds { lower: s, upper: s })
        } else {
            let conc = match known {
                Some(c) => c,
                None => match concavity(np, h_lo, h_hi) {
                    Ok(c) => c,
                    Err(GrmError::NonConstantConcavity { at, .. }) => {
                        let mut s = self.snap(at);
                        if !(s > lo && s < hi) {
                            s = if hi.is_finite() {
                                self.snap(0.5 * (lo + hi))
                            } else {
                                self.snap(2.0 * lo + 1.0)
                            };
                        }
                        if !(s > lo && s < hi) {
                            return Err(Issue::Fatal(GrmError::NonConstantConcavity { lo, hi, at }));
                        }
                        return Err(Issue::Split(s));
                    }
                    Err(e) => return Err(Issue::Fatal(e)),
                },
            };
            (conc, bounds_for(np, h_lo, h_hi, conc))
        };

        if hi.is_infinite() && self.family == Family::Exponential && np.eta[0] + lines.upper.slope >= 0.0 {
            return Err(self.tail_split(lo));
        }

        let mut lower = lines.lower;
        let mut upper = lines.upper;
        let mut li_lower = self.line_integral(&lower, lo, hi)?;
        let mut li_upper = self.line_integral(&upper, lo, hi)?;
        // A child's secant (or flat tail line) is pointwise at least as tight as
        // the parent's, so only the tangent side can be improved by inheriting.
        if let Some(par) = parent {
            if conc == Concavity::Convex {
                let pl = self.line_integral(&par.lower, lo, hi)?;
                if pl > li_lower {
                    lower = par.lower;
                    li_lower = pl;
                }
            }
            if conc == Concavity::Concave {
                let pu = self.line_integral(&par.upper, lo, hi)?;
                if pu < li_upper {
                    upper = par.upper;
                    li_upper = pu;
                }
            }
        }
        let sign = match conc {
            Concavity::Flat => {
                let (h, _) = np.curvature(h_lo);
                if np.g_is_zero() || h == 0.0 {
                    0
                } else {
                    h.signum() as i8
                }
            }
            c => c.sign(),
        };
        Ok(Some(BoundPiece {
            lo,
            hi,
            kind: PieceKind::Linear,
            concavity: sign,
            lower,
            upper,
            log_int_lower: li_lower,
            // Rounding in the two integrals must not invert an exact piece.
            log_int_upper: li_upper.max(li_lower),
            conc,
        }))
    }

    /// Where the mass of the piece's upper bound has decayed, when that
    /// bound decays from the start of the piece on.
    fn decay_point(&self, p: &BoundPiece) -> Option<f64> {
        let t = self.np.eta[0] + p.upper.slope;
        let s = match self.family.measure() {
            Measure::Counting => {
                let mu = t.exp();
                if !(mu > p.lo) {
                    return None;
                }
                (mu + 10.0 * mu.sqrt() + 10.0).ceil()
            }
            Measure::Lebesgue => {
                if !(t < 0.0) {
                    return None;
                }
                (2.0 * p.lo).max(p.lo - 30.0 / t)
            }
        };
        (s.is_finite() && s > p.lo).then_some(s)
    }

    fn split_point(&self, p: &BoundPiece) -> Option<f64> {
        let counting = self.family.measure() == Measure::Counting;
        if let Some(s) = self.decay_point(p) {
            // Pieces reaching far past the decay point (the tail, or up to a
            // huge inflection point) are cut there first.
            if p.hi > 2.0 * s {
                return Some(s);
            }
        }
        let s = if p.hi.is_infinite() {
            if counting {
                (p.lo + 2.0).max(2.0 * p.lo)
            } else {
                2.0 * p.lo
            }
        } else if p.hi > 4.0 * p.lo {
            self.snap((p.lo * p.hi).sqrt())
        } else if counting {
            let n = p.hi - p.lo;
            if n < 3.0 {
                return None;
            }
            p.lo + (n / 2.0).floor()
        } else {
            0.5 * (p.lo + p.hi)
        };
        (s.is_finite() && s > p.lo && s < p.hi).then_some(s)
    }

    /// Splits the piece with the largest integral gap. Returns `false` when
    /// every piece is already exact or cannot be divided further.
    pub fn split_largest(&mut self) -> Result<bool> {
        let mut order: Vec<(usize, f64)> = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.log_gap()))
            .filter(|(_, g)| *g > f64::NEG_INFINITY)
            .collect();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (idx, _) in order {
            let Some(s) = self.split_point(&self.pieces[idx]) else {
                continue;
            };
            let parent = self.pieces[idx].clone();
            let mut children = Vec::with_capacity(2);
            for (lo, hi) in [(parent.lo, s), (s, parent.hi)] {
                match self.make_piece(lo, hi, Some(parent.conc), Some(&parent)) {
                    Ok(Some(c)) => children.push(c),
                    Ok(None) => {}
                    Err(Issue::Fatal(e)) => return Err(e),
                    Err(Issue::Split(_)) => {
                        // Cannot happen for a tail that moved right of a feasible one.
                        return Err(GrmError::InfeasibleNaturalParam("tail split became infeasible".into()));
                    }
                }
            }
            self.pieces.splice(idx..=idx, children);
            return Ok(true);
        }
        Ok(false)
    }

    /// Splits until there are `nq` pieces or nothing is left to refine.
    pub fn refine(&mut self, nq: usize) -> Result<()> {
        while self.pieces.len() < nq {
            if !self.split_largest()? {
                break;
            }
        }
        Ok(())
    }

    /// Splits until the bound gap on `M` is at most `gap_tol` or `nq_max` pieces exist.
    pub fn refine_until(&mut self, gap_tol: f64, nq_max: usize) -> Result<()> {
        while self.pieces.len() < nq_max {
            let (lower, upper) = self.totals();
            if upper - lower <= gap_tol {
                break;
            }
            if !self.split_largest()? {
                break;
            }
        }
        Ok(())
    }

    fn totals(&self) -> (f64, f64) {
        let all = self.fixed.iter().chain(self.pieces.iter());
        let lower = log_sum_exp(all.clone().map(|p| p.log_int_lower));
        let upper = log_sum_exp(all.map(|p| p.log_int_upper)).max(lower);
        (lower, upper)
    }

    pub fn bounds(&self) -> MBounds {
        let (lower, upper) = self.totals();
        let mut pieces: Vec<BoundPiece> = self.fixed.iter().chain(self.pieces.iter()).cloned().collect();
        pieces.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
        MBounds { lower, upper, pieces }
    }
}

/// Bounds on `M(a)` using `nq` pieces of constant concavity.
pub fn approx_m(family: Family, np: &NatParams, nq: usize) -> Result<MBounds> {
    if nq == 0 {
        return Err(GrmError::InvalidArgument("nq must be at least 1".into()));
    }
    let mut seg = Segmenter::new(family, np)?;
    seg.refine(nq)?;
    Ok(seg.bounds())
}

#[cfg(test)]
mod tests {
    use super::super::exponent;
    use super::*;
    use crate::numeric::log_sum_exp;
    use statrs::function::gamma::ln_gamma;

    /// Direct summation of the Poisson moment integral.
    fn poisson_oracle(eta: &[f64], a: f64) -> f64 {
        let term = |x: f64| -> f64 {
            if x == 0.0 {
                return if a == 0.0 { 0.0 } else { f64::NEG_INFINITY };
            }
            let mut s = eta[0] * x - ln_gamma(x + 1.0) + a * x.ln();
            for (i, e) in eta.iter().enumerate().skip(1) {
                s += e * x.powf(1.0 / (i + 1) as f64);
            }
            s
        };
        let mut terms = Vec::new();
        let mut x = 0.0;
        let mut best = f64::NEG_INFINITY;
        loop {
            let t = term(x);
            best = best.max(t);
            terms.push(t);
            if x > 10.0 && t < best - 40.0 && t < term(x - 1.0) {
                break;
            }
            x += 1.0;
        }
        log_sum_exp(terms)
    }

    #[test]
    fn independent_poisson_is_exact() {
        let np = NatParams::new(vec![0.0], exponent(0, 1));
        let b = approx_m(Family::Poisson, &np, 1).unwrap();
        assert!((b.lower - 1.0).abs() < 1e-14 && (b.upper - 1.0).abs() < 1e-14, "{b:?}");
    }

    #[test]
    fn first_moment_of_standard_poisson() {
        // log Σ x e^0 / x! = log e = 1.
        let np = NatParams::new(vec![0.0], exponent(1, 1));
        let b = approx_m(Family::Poisson, &np, 9).unwrap();
        assert!(b.lower <= 1.0 + 1e-14 && 1.0 <= b.upper + 1e-14);
        let fine = approx_m(Family::Poisson, &np, 40).unwrap();
        assert!(fine.gap() < 1e-10, "gap {}", fine.gap());
    }

    #[test]
    fn more_pieces_tighten_the_figure_example() {
        let np = NatParams::new(vec![3.0232, -4.4966], exponent(0, 1));
        let truth = poisson_oracle(&np.eta, 0.0);
        let two = approx_m(Family::Poisson, &np, 2).unwrap();
        let five = approx_m(Family::Poisson, &np, 5).unwrap();
        for b in [&two, &five] {
            assert!(b.lower <= truth && truth <= b.upper, "{} {} {}", b.lower, truth, b.upper);
        }
        assert!(five.gap() < two.gap());
    }

    #[test]
    fn gap_is_monotone_under_refinement() {
        let np = NatParams::new(vec![1.2, 2.5, -3.0], exponent(1, 3));
        let mut seg = Segmenter::new(Family::Poisson, &np).unwrap();
        let mut prev = seg.bounds().gap();
        for _ in 0..40 {
            if !seg.split_largest().unwrap() {
                break;
            }
            let g = seg.bounds().gap();
            assert!(g <= prev + 1e-12, "gap grew from {prev} to {g}");
            prev = g;
        }
    }

    #[test]
    fn pieces_bound_g_on_their_support() {
        let np = NatParams::new(vec![0.5, -2.0, 3.0], exponent(1, 2));
        let b = approx_m(Family::Poisson, &np, 12).unwrap();
        for p in b.pieces.iter().filter(|p| p.kind == PieceKind::Linear) {
            assert!(p.log_int_lower <= p.log_int_upper);
            let top = if p.hi.is_finite() { p.hi - 1.0 } else { p.lo + 500.0 };
            let mut x = p.lo;
            while x <= top {
                let g = np.g0(x);
                assert!(p.lower.eval(x) <= g + 1e-9 && g <= p.upper.eval(x) + 1e-9, "x={x}");
                x += 1.0;
            }
        }
    }

    #[test]
    fn exponential_family_brackets_quadrature() {
        let np = NatParams::new(vec![-1.5, 0.8, -0.4], exponent(1, 2));
        let b = approx_m(Family::Exponential, &np, 30).unwrap();
        // Composite Simpson on a substituted grid x = t², dense near 0.
        let f = |x: f64| -> f64 {
            if x == 0.0 {
                return 0.0;
            }
            (np.eta[0] * x + np.eta[1] * x.sqrt() + np.eta[2] * x.cbrt() + 0.5 * x.ln()).exp()
        };
        let n = 200_000;
        let tmax: f64 = 8.0;
        let h = tmax / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let t = i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(t * t) * 2.0 * t;
        }
        let truth = (s * h / 3.0).ln();
        assert!(b.lower <= truth && truth <= b.upper, "{} {} {}", b.lower, truth, b.upper);
        assert!(b.gap() < 0.05);
    }

    #[test]
    fn exponential_requires_negative_eta1() {
        let np = NatParams::new(vec![0.0, -1.0], exponent(0, 1));
        assert!(matches!(
            approx_m(Family::Exponential, &np, 5),
            Err(GrmError::InfeasibleNaturalParam(_))
        ));
    }

    #[test]
    fn exponential_concave_tail_is_made_feasible() {
        // g' at 1 is 2.5, far larger than |η_1|.
        let np = NatParams::new(vec![-0.3, 5.0], exponent(0, 1));
        let b = approx_m(Family::Exponential, &np, 9).unwrap();
        assert!(b.lower.is_finite() && b.upper.is_finite());
    }

    #[test]
    fn tsv_has_header_and_one_row_per_piece() {
        let np = NatParams::new(vec![3.0232, -4.4966], exponent(0, 1));
        let b = approx_m(Family::Poisson, &np, 5).unwrap();
        let tsv = b.to_tsv();
        assert_eq!(tsv.lines().count(), b.pieces.len() + 1);
        assert!(tsv.starts_with("lo\thi\tconcavity"));
    }

    #[test]
    fn negative_exponent_is_rejected() {
        let np = NatParams::new(vec![0.0, 1.0], exponent(-1, 2));
        assert!(matches!(approx_m(Family::Poisson, &np, 3), Err(GrmError::Domain(_))));
    }
}
