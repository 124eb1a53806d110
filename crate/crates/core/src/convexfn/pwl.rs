//! Convex piecewise-linear functions of one variable.

use crate::error::{Error, Result};
use crate::serial;
use serde::{Deserialize, Serialize};

/// A convex piecewise-linear function on the real line.
///
/// Knots are strictly increasing; between knots the function interpolates
/// linearly. Outside `[knots[0], knots[m-1]]` it follows the optional tail
/// slope, or is `+inf` when the tail is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PwlRepr", into = "PwlRepr")]
pub struct Pwl1 {
    knots: Vec<f64>,
    values: Vec<f64>,
    left_tail: Option<f64>,
    right_tail: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PwlRepr {
    #[serde(with = "serial::vec")]
    knots: Vec<f64>,
    #[serde(with = "serial::vec")]
    values: Vec<f64>,
    #[serde(with = "serial::opt", default, skip_serializing_if = "Option::is_none")]
    left_tail: Option<f64>,
    #[serde(with = "serial::opt", default, skip_serializing_if = "Option::is_none")]
    right_tail: Option<f64>,
}

impl TryFrom<PwlRepr> for Pwl1 {
    type Error = Error;
    fn try_from(r: PwlRepr) -> Result<Self> {
        Pwl1::with_tails(r.knots, r.values, r.left_tail, r.right_tail)
    }
}

impl From<Pwl1> for PwlRepr {
    fn from(p: Pwl1) -> Self {
        PwlRepr {
            knots: p.knots,
            values: p.values,
            left_tail: p.left_tail,
            right_tail: p.right_tail,
        }
    }
}

const CONVEXITY_TOL: f64 = 1e-12;
/// Relative slack at closed domain ends, covering bounds mapped through
/// scalings and shifts.
pub(crate) const ROUNDOFF: f64 = 4.0 * f64::EPSILON;

impl Pwl1 {
    /// Finite on `[knots[0], knots[m-1]]`, `+inf` outside.
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::with_tails(knots, values, None, None)
    }

    pub fn with_tails(
        knots: Vec<f64>,
        values: Vec<f64>,
        left_tail: Option<f64>,
        right_tail: Option<f64>,
    ) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} knots with {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite())
            || left_tail.is_some_and(|s| !s.is_finite())
            || right_tail.is_some_and(|s| !s.is_finite())
        {
            return Err(Error::Invalid(
                "piecewise-linear data must be finite".into(),
            ));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("knots must be strictly increasing".into()));
        }
        let p = Pwl1 {
            knots,
            values,
            left_tail,
            right_tail,
        };
        let s = p.augmented_slopes();
        for w in s.windows(2) {
            if w[1] - w[0] < -CONVEXITY_TOL * (1.0 + w[0].abs().max(w[1].abs()).min(1e300)) {
                return Err(Error::NotConvex(format!(
                    "slope sequence decreases from {} to {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(p)
    }

    /// Caller guarantees the invariants up to roundoff.
    fn raw(
        knots: Vec<f64>,
        values: Vec<f64>,
        left_tail: Option<f64>,
        right_tail: Option<f64>,
    ) -> Self {
        debug_assert!(!knots.is_empty() && knots.len() == values.len());
        Pwl1 {
            knots,
            values,
            left_tail,
            right_tail,
        }
    }

    /// Samples `f` at the knots.
    pub fn from_fn(knots: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = knots.iter().map(|&x| f(x)).collect();
        Self::new(knots, values)
    }

    /// `b x + c` on the whole line.
    pub fn affine(b: f64, c: f64) -> Self {
        Self::raw(vec![0.0], vec![c], Some(b), Some(b))
    }

    /// `offset` on `[l, u]`, `+inf` outside; `None` when `l > u`.
    pub fn indicator(l: f64, u: f64, offset: f64) -> Option<Self> {
        if l > u {
            return None;
        }
        Some(match (l.is_finite(), u.is_finite()) {
            (true, true) if l == u => Self::raw(vec![l], vec![offset], None, None),
            (true, true) => Self::raw(vec![l, u], vec![offset, offset], None, None),
            (true, false) => Self::raw(vec![l], vec![offset], None, Some(0.0)),
            (false, true) => Self::raw(vec![u], vec![offset], Some(0.0), None),
            (false, false) => Self::raw(vec![0.0], vec![offset], Some(0.0), Some(0.0)),
        })
    }

    /// `max(g l, g u) + offset`, the support function of `[l, u]`; `None` when `l > u`.
    pub fn support(l: f64, u: f64, offset: f64) -> Option<Self> {
        if l > u {
            return None;
        }
        Some(Self::raw(
            vec![0.0],
            vec![offset],
            l.is_finite().then_some(l),
            u.is_finite().then_some(u),
        ))
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left_tail(&self) -> Option<f64> {
        self.left_tail
    }

    pub fn right_tail(&self) -> Option<f64> {
        self.right_tail
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Closed domain `[lo, hi]`, with infinite ends where a tail exists.
    pub fn domain(&self) -> (f64, f64) {
        let lo = if self.left_tail.is_some() {
            f64::NEG_INFINITY
        } else {
            self.knots[0]
        };
        let hi = if self.right_tail.is_some() {
            f64::INFINITY
        } else {
            self.knots[self.knots.len() - 1]
        };
        (lo, hi)
    }

    pub fn segment_slopes(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0]))
            .collect()
    }

    /// Left tail (or `-inf`), segment slopes, right tail (or `+inf`).
    pub fn augmented_slopes(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.knots.len() + 1);
        s.push(self.left_tail.unwrap_or(f64::NEG_INFINITY));
        s.extend(self.segment_slopes());
        s.push(self.right_tail.unwrap_or(f64::INFINITY));
        s
    }

    /// Moves `x` onto a closed domain end it misses by roundoff only.
    pub fn snap(&self, x: f64) -> f64 {
        let (x0, xm) = (self.knots[0], self.knots[self.knots.len() - 1]);
        if self.left_tail.is_none() && x < x0 && x >= x0 - ROUNDOFF * x0.abs() {
            x0
        } else if self.right_tail.is_none() && x > xm && x <= xm + ROUNDOFF * xm.abs() {
            xm
        } else {
            x
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let x = self.snap(x);
        let m = self.knots.len();
        let (x0, xm) = (self.knots[0], self.knots[m - 1]);
        if x < x0 {
            return match self.left_tail {
                Some(s) => self.values[0] + s * (x - x0),
                None => f64::INFINITY,
            };
        }
        if x > xm {
            return match self.right_tail {
                Some(s) => self.values[m - 1] + s * (x - xm),
                None => f64::INFINITY,
            };
        }
        let k = self.knots.partition_point(|&k| k <= x);
        // x in [knots[k-1], knots[k])
        if k == m {
            return self.values[m - 1];
        }
        let (a, b) = (self.knots[k - 1], self.knots[k]);
        if x == a {
            return self.values[k - 1];
        }
        let t = (x - a) / (b - a);
        self.values[k - 1] + t * (self.values[k] - self.values[k - 1])
    }

    /// `(left derivative, right derivative)` at `x` in the domain.
    pub fn one_sided_slopes(&self, x: f64) -> (f64, f64) {
        let x = self.snap(x);
        let s = self.augmented_slopes();
        let m = self.knots.len();
        let k = self.knots.partition_point(|&k| k < x);
        if k < m && self.knots[k] == x {
            (s[k], s[k + 1])
        } else {
            // strictly between knots k-1 and k (or in a tail)
            (s[k], s[k])
        }
    }

    /// Linear-time conjugate `g -> sup_x (g x - p(x))`.
    pub fn conjugate(&self) -> Pwl1 {
        let m = self.knots.len();
        let sig = self.augmented_slopes();
        let mut knots: Vec<f64> = Vec::with_capacity(m + 1);
        let mut values = Vec::with_capacity(m + 1);
        for (k, &s) in sig.iter().enumerate() {
            if !s.is_finite() {
                continue;
            }
            let j = k.min(m - 1);
            let v = s * self.knots[j] - self.values[j];
            // numerically collinear segments share one dual knot
            if let Some(&last) = knots.last() {
                if s <= last + CONVEXITY_TOL * (1.0 + last.abs()) {
                    continue;
                }
            }
            knots.push(s);
            values.push(v);
        }
        let left = (!sig[0].is_finite()).then_some(self.knots[0]);
        let right = (!sig[m].is_finite()).then_some(self.knots[m - 1]);
        if knots.is_empty() {
            // a single point x0 with value v0: g -> g x0 - v0
            return Pwl1::raw(vec![0.0], vec![-self.values[0]], left, right);
        }
        Pwl1::raw(knots, values, left, right)
    }

    /// `p + q`, or `None` when the domains do not meet.
    pub fn add(&self, other: &Pwl1) -> Option<Pwl1> {
        let (lo, hi) = intersect(self.domain(), other.domain())?;
        let knots = merged_knots(&[self, other], lo, hi);
        let values = knots
            .iter()
            .map(|&x| self.eval(x) + other.eval(x))
            .collect();
        let left = self.left_tail.zip(other.left_tail).map(|(a, b)| a + b);
        let right = self.right_tail.zip(other.right_tail).map(|(a, b)| a + b);
        Some(Pwl1::raw(
            knots,
            values,
            left.filter(|_| lo.is_infinite()),
            right.filter(|_| hi.is_infinite()),
        ))
    }

    /// Pointwise maximum, or `None` when the domains do not meet.
    pub fn max(&self, other: &Pwl1) -> Option<Pwl1> {
        let (lo, hi) = intersect(self.domain(), other.domain())?;
        let mut knots = merged_knots(&[self, other], lo, hi);
        let diff = |x: f64| self.eval(x) - other.eval(x);
        let mut extra = Vec::new();
        for w in knots.windows(2) {
            let (da, db) = (diff(w[0]), diff(w[1]));
            if da * db < 0.0 {
                let t = w[0] + (w[1] - w[0]) * da / (da - db);
                if t > w[0] && t < w[1] {
                    extra.push(t);
                }
            }
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if lo.is_infinite() {
            let (s1, s2) = (self.left_tail.unwrap(), other.left_tail.unwrap());
            if s1 != s2 {
                let t = first - diff(first) / (s1 - s2);
                if t < first {
                    extra.push(t);
                }
            }
        }
        if hi.is_infinite() {
            let (s1, s2) = (self.right_tail.unwrap(), other.right_tail.unwrap());
            if s1 != s2 {
                let t = last - diff(last) / (s1 - s2);
                if t > last {
                    extra.push(t);
                }
            }
        }
        knots.extend(extra);
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let values = knots
            .iter()
            .map(|&x| self.eval(x).max(other.eval(x)))
            .collect();
        let left =
            (lo.is_infinite()).then(|| self.left_tail.unwrap().min(other.left_tail.unwrap()));
        let right =
            (hi.is_infinite()).then(|| self.right_tail.unwrap().max(other.right_tail.unwrap()));
        Some(Pwl1::raw(knots, values, left, right))
    }

    /// `p + b x + c`.
    pub fn add_affine(&self, b: f64, c: f64) -> Pwl1 {
        Pwl1::raw(
            self.knots.clone(),
            self.knots
                .iter()
                .zip(&self.values)
                .map(|(x, v)| v + b * x + c)
                .collect(),
            self.left_tail.map(|s| s + b),
            self.right_tail.map(|s| s + b),
        )
    }

    /// `lambda p` for `lambda > 0`.
    pub fn scale(&self, lambda: f64) -> Pwl1 {
        Pwl1::raw(
            self.knots.clone(),
            self.values.iter().map(|v| lambda * v).collect(),
            self.left_tail.map(|s| lambda * s),
            self.right_tail.map(|s| lambda * s),
        )
    }

    /// `x -> p(x - s)`.
    pub fn shift(&self, s: f64) -> Pwl1 {
        Pwl1::raw(
            self.knots.iter().map(|k| k + s).collect(),
            self.values.clone(),
            self.left_tail,
            self.right_tail,
        )
    }

    /// `x -> lambda p(x / lambda)` for `lambda > 0`.
    pub fn perspective(&self, lambda: f64) -> Pwl1 {
        Pwl1::raw(
            self.knots.iter().map(|k| lambda * k).collect(),
            self.values.iter().map(|v| lambda * v).collect(),
            self.left_tail,
            self.right_tail,
        )
    }

    /// `x -> p(a x)` for `a != 0`.
    pub fn compose_scalar(&self, a: f64) -> Pwl1 {
        if a > 0.0 {
            return Pwl1::raw(
                self.knots.iter().map(|k| k / a).collect(),
                self.values.clone(),
                self.left_tail.map(|s| s * a),
                self.right_tail.map(|s| s * a),
            );
        }
        Pwl1::raw(
            self.knots.iter().rev().map(|k| k / a).collect(),
            self.values.iter().rev().copied().collect(),
            self.right_tail.map(|s| s * a),
            self.left_tail.map(|s| s * a),
        )
    }

    /// `argmin_y p(y) + (x - y)^2 / (2 mu)`.
    pub fn prox(&self, x: f64, mu: f64) -> f64 {
        self.prox_with_slope(x, mu).0
    }

    /// The prox and, off the knots, the slope `s` of its piece, for which
    /// `x - prox = mu s` holds exactly.
    fn prox_with_slope(&self, x: f64, mu: f64) -> (f64, Option<f64>) {
        let s = self.augmented_slopes();
        let m = self.knots.len();
        // optimality: (x - y) / mu in the subdifferential of p at y, monotone in y
        let mut lo = 0;
        let mut hi = m;
        // find the first knot k with (x - knot_k)/mu <= right slope at k
        while lo < hi {
            let mid = (lo + hi) / 2;
            if (x - self.knots[mid]) / mu <= s[mid + 1] {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let k = lo;
        if k < m && (x - self.knots[k]) / mu >= s[k] {
            return (self.knots[k], None);
        }
        // interior of the piece with slope s[k]
        let y = x - mu * s[k];
        let left = if k == 0 {
            f64::NEG_INFINITY
        } else {
            self.knots[k - 1]
        };
        let right = if k == m { f64::INFINITY } else { self.knots[k] };
        (y.clamp(left, right), Some(s[k]))
    }

    /// Moreau envelope value and its derivative at `x`.
    pub fn moreau(&self, x: f64, mu: f64) -> (f64, f64) {
        let (y, slope) = self.prox_with_slope(x, mu);
        // avoid x - y, which cancels far out on a tail
        let g = slope.unwrap_or((x - y) / mu);
        (self.eval(y) + 0.5 * mu * g * g, g)
    }
}

fn intersect(a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo <= hi).then_some((lo, hi))
}

fn merged_knots(ps: &[&Pwl1], lo: f64, hi: f64) -> Vec<f64> {
    let mut knots: Vec<f64> = ps
        .iter()
        .flat_map(|p| p.knots.iter().copied())
        .filter(|&k| k >= lo && k <= hi)
        .collect();
    if lo.is_finite() {
        knots.push(lo);
    }
    if hi.is_finite() {
        knots.push(hi);
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abs_on(r: f64) -> Pwl1 {
        Pwl1::new(vec![-r, 0.0, r], vec![r, 0.0, r]).unwrap()
    }

    #[test]
    fn eval_and_slopes() {
        let p = abs_on(2.0);
        assert_eq!(p.eval(-1.0), 1.0);
        assert_eq!(p.eval(2.0), 2.0);
        assert_eq!(p.eval(2.5), f64::INFINITY);
        assert_eq!(p.one_sided_slopes(0.0), (-1.0, 1.0));
        assert_eq!(p.one_sided_slopes(1.0), (1.0, 1.0));
        assert_eq!(p.one_sided_slopes(2.0), (1.0, f64::INFINITY));
        assert!(Pwl1::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]).is_err());
        assert!(Pwl1::new(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn conjugate_of_abs_is_box_support() {
        let p = abs_on(3.0);
        let c = p.conjugate();
        // sup over [-3,3] of g x - |x| = 3 (|g| - 1)^+
        assert_eq!(c.knots(), &[-1.0, 1.0]);
        assert_eq!(c.values(), &[0.0, 0.0]);
        assert_eq!(c.left_tail(), Some(-3.0));
        assert_eq!(c.right_tail(), Some(3.0));
        assert_eq!(c.eval(2.0), 3.0);
        // full-line |x| conjugates to ind[-1, 1]
        let full = Pwl1::with_tails(vec![0.0], vec![0.0], Some(-1.0), Some(1.0)).unwrap();
        let c = full.conjugate();
        assert_eq!(c.domain(), (-1.0, 1.0));
        assert_eq!(c.eval(0.3), 0.0);
        assert_eq!(c.eval(1.01), f64::INFINITY);
    }

    #[test]
    fn point_and_affine_are_dual() {
        let point = Pwl1::new(vec![2.0], vec![5.0]).unwrap();
        let c = point.conjugate();
        assert_eq!(c.eval(3.0), 1.0);
        assert_eq!(c.eval(-1.0), -7.0);
        let back = c.conjugate();
        assert_eq!(back.domain(), (2.0, 2.0));
        assert_eq!(back.eval(2.0), 5.0);
    }

    #[test]
    fn sum_with_half_line_indicator() {
        let abs = Pwl1::with_tails(vec![0.0], vec![0.0], Some(-1.0), Some(1.0)).unwrap();
        let half = Pwl1::indicator(0.0, f64::INFINITY, 0.0).unwrap();
        let s = abs.add(&half).unwrap();
        assert_eq!(s.eval(-0.1), f64::INFINITY);
        assert_eq!(s.eval(2.0), 2.0);
        let c = s.conjugate();
        // (x + ind[0,inf))* = ind(-inf, 1]
        assert_eq!(c.domain(), (f64::NEG_INFINITY, 1.0));
        assert_eq!(c.eval(-10.0), 0.0);
        assert_eq!(c.eval(1.0), 0.0);
    }

    #[test]
    fn max_inserts_crossings() {
        let a = Pwl1::affine(1.0, 0.0);
        let b = Pwl1::affine(-1.0, 0.0);
        let m = a.max(&b).unwrap();
        for x in [-3.0, -0.5, 0.0, 0.25, 7.0] {
            assert_eq!(m.eval(x), f64::abs(x));
        }
        let c = Pwl1::affine(0.0, 1.0);
        let m = m.max(&c).unwrap();
        for x in [-3.0, -0.5, 0.0, 0.25, 1.0, 7.0] {
            assert_eq!(m.eval(x), f64::abs(x).max(1.0));
        }
    }

    #[test]
    fn prox_of_abs_is_soft_threshold() {
        let abs = Pwl1::with_tails(vec![0.0], vec![0.0], Some(-1.0), Some(1.0)).unwrap();
        for (x, want) in [(3.0, 2.0), (-3.0, -2.0), (0.5, 0.0), (-1.0, 0.0)] {
            assert_eq!(abs.prox(x, 1.0), want);
        }
        let (v, g) = abs.moreau(0.5, 1.0);
        assert_eq!((v, g), (0.125, 0.5));
        let (v, g) = abs.moreau(3.0, 1.0);
        assert_eq!((v, g), (2.5, 1.0));
        let (v, g) = abs.moreau(-1e24, 1.0);
        assert_eq!((v, g), (1e24 - 0.5, -1.0));
        let boxed = Pwl1::indicator(1.0, 2.0, 0.0).unwrap();
        assert_eq!(boxed.prox(0.0, 0.5), 1.0);
        assert_eq!(boxed.prox(1.5, 0.5), 1.5);
        assert_eq!(boxed.prox(9.0, 0.5), 2.0);
    }

    fn convex_pwl() -> impl Strategy<Value = Pwl1> {
        (
            proptest::collection::vec(0.01..1.0f64, 1..12),
            proptest::collection::vec(0.0..2.0f64, 12),
            -3.0..3.0f64,
            -2.0..2.0f64,
            proptest::option::of(0.0..1.0f64),
            proptest::option::of(0.0..1.0f64),
        )
            .prop_map(|(gaps, incs, s0, x0, lt, rt)| {
                let mut knots = vec![x0];
                for g in &gaps {
                    knots.push(knots.last().unwrap() + g);
                }
                let mut values = vec![0.0];
                let mut slope = s0;
                for (k, g) in gaps.iter().enumerate() {
                    values.push(values.last().unwrap() + slope * g);
                    slope += incs[k];
                }
                let slopes: Vec<f64> = knots
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0]))
                    .collect();
                let first = slopes[0];
                let last = *slopes.last().unwrap();
                Pwl1::with_tails(knots, values, lt.map(|d| first - d), rt.map(|d| last + d))
                    .unwrap()
            })
    }

    proptest! {
        #[test]
        fn conjugate_is_involutive_on_domain(p in convex_pwl(), t in 0.0..1.0f64) {
            let back = p.conjugate().conjugate();
            prop_assert_eq!(back.domain(), p.domain());
            for &k in p.knots() {
                prop_assert!((back.eval(k) - p.eval(k)).abs() <= 1e-9 * (1.0 + p.eval(k).abs()));
            }
            let (lo, hi) = (p.knots()[0], *p.knots().last().unwrap());
            let x = lo + t * (hi - lo);
            prop_assert!((back.eval(x) - p.eval(x)).abs() <= 1e-9 * (1.0 + p.eval(x).abs()));
        }

        #[test]
        fn fenchel_young_holds(p in convex_pwl(), x in -3.0..3.0f64, g in -5.0..5.0f64) {
            let c = p.conjugate();
            let (px, cg) = (p.eval(x), c.eval(g));
            if px.is_finite() && cg.is_finite() {
                prop_assert!(px + cg - g * x >= -1e-9 * (1.0 + px.abs() + cg.abs()));
            }
        }

        #[test]
        fn prox_satisfies_optimality(p in convex_pwl(), x in -5.0..5.0f64, mu in 0.05..3.0f64) {
            let y = p.prox(x, mu);
            let (l, r) = p.one_sided_slopes(y);
            let z = (x - y) / mu;
            prop_assert!(z >= l - 1e-9 && z <= r + 1e-9, "y={y} z={z} slopes=({l},{r})");
        }
    }
}
