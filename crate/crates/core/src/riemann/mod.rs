//! Riemann sums, integrals and derivatives of curves `[a, b] -> L0^d`, and the
//! Newton-Leibniz identity.
//!
//! Convergence is measured entrywise on every atom, which on a finite base is
//! equivalent to convergence in probability.

use crate::convexfn::ConvexFn;
use crate::differential::settle;
use crate::error::{Error, Result};
use crate::measure_l0::{FinitePartition, L0Bar};
use crate::rnmodule::RandomPoint;
use crate::serial;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MAX_CELLS: usize = 1 << 20;
/// Coarsest refinement compared, so early coincidences of sums do not stop the loop.
const MIN_CELLS: usize = 16;

/// Polynomial coefficients of one atom: `coeffs[j][k]` multiplies `t^k` in coordinate `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyRow {
    #[serde(with = "serial::mat")]
    pub coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum CurvePath {
    Polynomial {
        rows: Vec<PolyRow>,
    },
    /// `before` for `t < at`, `after` from `at` on.
    Step {
        at: L0Bar,
        before: RandomPoint,
        after: RandomPoint,
    },
    /// `t^exponent * scale`.
    Power {
        #[serde(with = "serial::scalar")]
        exponent: f64,
        scale: RandomPoint,
    },
    /// `t -> f(x0 + t h)`, rank 1.
    Segment {
        f: ConvexFn,
        x0: RandomPoint,
        h: RandomPoint,
    },
    Glue {
        partition: FinitePartition,
        curves: Vec<CurvePath>,
    },
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * t + a)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, a)| k as f64 * a)
        .collect()
}

impl CurvePath {
    pub fn shape(&self) -> Result<(usize, usize)> {
        match self {
            CurvePath::Polynomial { rows } => {
                let d = rows.first().map_or(0, |r| r.coeffs.len());
                if rows.is_empty() || rows.iter().any(|r| r.coeffs.len() != d) || d == 0 {
                    return Err(Error::Shape(
                        "polynomial rows need one coefficient list per coordinate".into(),
                    ));
                }
                Ok((rows.len(), d))
            }
            CurvePath::Step { at, before, after } => {
                if before.n() != at.len() || after.n() != at.len() || before.d() != after.d() {
                    return Err(Error::Shape("step curve tables disagree".into()));
                }
                Ok((before.n(), before.d()))
            }
            CurvePath::Power { scale, .. } => Ok((scale.n(), scale.d())),
            CurvePath::Segment { f, x0, h } => {
                if f.check(x0.n())? != 1 || x0.d() != 1 || h.n() != x0.n() || h.d() != 1 {
                    return Err(Error::Shape("segment curves are rank 1".into()));
                }
                Ok((x0.n(), 1))
            }
            CurvePath::Glue { partition, curves } => {
                if curves.len() != partition.parts().len() {
                    return Err(Error::Shape("one curve per part".into()));
                }
                let shapes = curves
                    .iter()
                    .map(CurvePath::shape)
                    .collect::<Result<Vec<_>>>()?;
                if shapes.windows(2).any(|w| w[0] != w[1]) || shapes[0].0 != partition.n() {
                    return Err(Error::Shape("glued curves disagree in shape".into()));
                }
                Ok(shapes[0])
            }
        }
    }

    fn row(&self, i: usize, t: f64) -> Result<Vec<f64>> {
        Ok(match self {
            CurvePath::Polynomial { rows } => {
                rows[i].coeffs.iter().map(|c| poly_eval(c, t)).collect()
            }
            CurvePath::Step { at, before, after } => {
                if t < at.get(i) {
                    before.row(i).to_vec()
                } else {
                    after.row(i).to_vec()
                }
            }
            CurvePath::Power { exponent, scale } => {
                scale.row(i).iter().map(|s| s * t.powf(*exponent)).collect()
            }
            CurvePath::Segment { f, x0, h } => {
                vec![f.eval_scenario(i, &[x0.get(i, 0) + t * h.get(i, 0)])?]
            }
            CurvePath::Glue { partition, curves } => curves[partition.part_of(i)].row(i, t)?,
        })
    }

    fn derivative_row(&self, i: usize, t: f64) -> Option<Result<Vec<f64>>> {
        match self {
            CurvePath::Polynomial { rows } => Some(Ok(rows[i]
                .coeffs
                .iter()
                .map(|c| poly_eval(&poly_deriv(c), t))
                .collect())),
            CurvePath::Step { .. } => None,
            CurvePath::Power { exponent, scale } => {
                let p = *exponent;
                let dt = if p == 1.0 { 1.0 } else { p * t.powf(p - 1.0) };
                Some(Ok(scale.row(i).iter().map(|s| s * dt).collect()))
            }
            CurvePath::Segment { f, x0, h } => {
                let x = x0.get(i, 0) + t * h.get(i, 0);
                Some(
                    f.gradient_scenario(i, &[x])
                        .map(|g| vec![g[0] * h.get(i, 0)]),
                )
            }
            CurvePath::Glue { partition, curves } => {
                curves[partition.part_of(i)].derivative_row(i, t)
            }
        }
    }

    pub fn has_derivative(&self) -> bool {
        match self {
            CurvePath::Step { .. } => false,
            CurvePath::Glue { curves, .. } => curves.iter().all(CurvePath::has_derivative),
            _ => true,
        }
    }
}

/// A curve on `[a, b]` with its declared hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    #[serde(with = "serial::scalar")]
    pub a: f64,
    #[serde(with = "serial::scalar")]
    pub b: f64,
    pub path: CurvePath,
    /// Bound on the entries of `(c(t2) - c(t1)) / (t2 - t1)` per atom.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<L0Bar>,
    /// Every coordinate is monotone in `t` on every atom.
    #[serde(default)]
    pub monotone: bool,
}

impl Curve {
    pub fn new(a: f64, b: f64, path: CurvePath) -> Self {
        Curve {
            a,
            b,
            path,
            modulus: None,
            monotone: false,
        }
    }

    pub fn with_modulus(mut self, modulus: L0Bar) -> Self {
        self.modulus = Some(modulus);
        self
    }

    pub fn monotone(mut self) -> Self {
        self.monotone = true;
        self
    }

    pub fn shape(&self) -> Result<(usize, usize)> {
        if !(self.a.is_finite() && self.b.is_finite() && self.a < self.b) {
            return Err(Error::Invalid(format!(
                "curve interval [{}, {}]",
                self.a, self.b
            )));
        }
        self.path.shape()
    }

    pub fn eval(&self, t: f64) -> Result<RandomPoint> {
        let (n, _) = self.shape()?;
        let rows = (0..n)
            .map(|i| self.path.row(i, t))
            .collect::<Result<Vec<_>>>()?;
        RandomPoint::from_rows(rows)
    }

    /// The declared derivative `c'(t)`, if the curve has one.
    pub fn derivative(&self, t: f64) -> Option<Result<RandomPoint>> {
        let (n, _) = match self.shape() {
            Ok(s) => s,
            Err(e) => return Some(Err(e)),
        };
        if !self.path.has_derivative() {
            return None;
        }
        let rows: Result<Vec<_>> = (0..n)
            .map(|i| self.path.derivative_row(i, t).expect("checked"))
            .collect();
        Some(rows.and_then(RandomPoint::from_rows))
    }
}

/// Breakpoints `a = t_0 < ... < t_m = b` with tags `xi_i in [t_{i-1}, t_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPartition {
    #[serde(with = "serial::vec")]
    breakpoints: Vec<f64>,
    #[serde(with = "serial::vec")]
    tags: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagRule {
    Left,
    Midpoint,
    Right,
}

impl IntervalPartition {
    pub fn new(breakpoints: Vec<f64>, tags: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || tags.len() != breakpoints.len() - 1 {
            return Err(Error::Shape("m + 1 breakpoints and m tags".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("breakpoints must increase strictly".into()));
        }
        if tags
            .iter()
            .enumerate()
            .any(|(k, x)| !(breakpoints[k] <= *x && *x <= breakpoints[k + 1]))
        {
            return Err(Error::Invalid("every tag must lie in its cell".into()));
        }
        Ok(IntervalPartition { breakpoints, tags })
    }

    pub fn uniform(a: f64, b: f64, cells: usize, rule: TagRule) -> Result<Self> {
        if cells == 0 {
            return Err(Error::Invalid("at least one cell".into()));
        }
        let h = (b - a) / cells as f64;
        let mut bp: Vec<f64> = (0..=cells).map(|k| a + k as f64 * h).collect();
        bp[cells] = b;
        let tags = bp
            .windows(2)
            .map(|w| match rule {
                TagRule::Left => w[0],
                TagRule::Midpoint => 0.5 * (w[0] + w[1]),
                TagRule::Right => w[1],
            })
            .collect();
        IntervalPartition::new(bp, tags)
    }

    pub fn mesh(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn tags(&self) -> &[f64] {
        &self.tags
    }
}

/// `sum_i c(xi_i) (t_i - t_{i-1})`.
pub fn riemann_sum(c: &Curve, p: &IntervalPartition) -> Result<RandomPoint> {
    sum_with(&|t| c.eval(t), c.shape()?, p)
}

fn sum_with(
    f: &dyn Fn(f64) -> Result<RandomPoint>,
    (n, d): (usize, usize),
    p: &IntervalPartition,
) -> Result<RandomPoint> {
    let mut acc = RandomPoint::zeros(n, d);
    for (w, &xi) in p.breakpoints.windows(2).zip(&p.tags) {
        acc = acc.axpy(w[1] - w[0], &f(xi)?)?;
    }
    Ok(acc)
}

/// Largest entry of `|x - y|` on each atom.
fn row_distance(x: &RandomPoint, y: &RandomPoint) -> Result<L0Bar> {
    let diff = x.sub(y)?;
    Ok(L0Bar::from_fn(diff.n(), |i| {
        diff.row(i).iter().fold(0.0, |m, v| m.max(v.abs()))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStep {
    pub cells: usize,
    /// Distance to the previous midpoint sum per atom.
    pub change: L0Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Integral {
    pub value: RandomPoint,
    /// Bound on the distance of any tagged sum at the final mesh to the integral.
    pub error_bound: L0Bar,
    pub cells: usize,
    pub trace: Vec<RefinementStep>,
    /// Largest distance of the left and right sums to the midpoint sum.
    pub tag_spread: L0Bar,
    pub tags_agree: bool,
}

enum Bound {
    Modulus(L0Bar),
    /// Total variation `|c(b) - c(a)|`, largest coordinate.
    Variation(L0Bar),
    /// Only the last refinement change is available.
    Empirical,
}

fn integrate(
    f: &dyn Fn(f64) -> Result<RandomPoint>,
    shape: (usize, usize),
    (a, b): (f64, f64),
    bound: Bound,
    tol: f64,
) -> Result<Integral> {
    let n = shape.0;
    let mut cells = MIN_CELLS;
    let mut prev = sum_with(
        f,
        shape,
        &IntervalPartition::uniform(a, b, cells, TagRule::Midpoint)?,
    )?;
    let mut trace = Vec::new();
    let mut calm = 0;
    loop {
        cells *= 2;
        if cells > MAX_CELLS {
            return Err(Error::Convergence(format!(
                "Riemann sums still moving at {MAX_CELLS} cells: last changes {:?}",
                trace
                    .last()
                    .map(|s: &RefinementStep| s.change.values().to_vec())
            )));
        }
        let next = sum_with(
            f,
            shape,
            &IntervalPartition::uniform(a, b, cells, TagRule::Midpoint)?,
        )?;
        let change = row_distance(&next, &prev)?;
        // two quiet refinements in a row, so a lucky coincidence does not stop early
        calm = if change.iter().all(|c| c <= tol) {
            calm + 1
        } else {
            0
        };
        let done = calm == 2;
        trace.push(RefinementStep {
            cells,
            change: change.clone(),
        });
        prev = next;
        if done {
            let mesh = (b - a) / cells as f64;
            let error_bound = match &bound {
                Bound::Modulus(m) => m.map(|l| l * (b - a) * mesh),
                Bound::Variation(v) => v.map(|t| t * mesh),
                Bound::Empirical => change.map(|c| 2.0 * c),
            };
            let left = sum_with(
                f,
                shape,
                &IntervalPartition::uniform(a, b, cells, TagRule::Left)?,
            )?;
            let right = sum_with(
                f,
                shape,
                &IntervalPartition::uniform(a, b, cells, TagRule::Right)?,
            )?;
            let tag_spread =
                row_distance(&left, &prev)?.zip_with(&row_distance(&right, &prev)?, f64::max)?;
            let tags_agree = (0..n).all(|i| tag_spread.get(i) <= 2.0 * error_bound.get(i) + 1e-12);
            return Ok(Integral {
                value: prev,
                error_bound,
                cells,
                trace,
                tag_spread,
                tags_agree,
            });
        }
    }
}

/// Midpoint sums on dyadic refinements until two successive changes are at
/// most `tol` on every atom (at most `MAX_CELLS` cells).
pub fn riemann_integral(c: &Curve, tol: f64) -> Result<Integral> {
    let shape = c.shape()?;
    let bound = match (&c.modulus, c.monotone) {
        (Some(m), _) if m.is_finite() => Bound::Modulus(m.clone()),
        (_, true) => Bound::Variation(row_distance(&c.eval(c.b)?, &c.eval(c.a)?)?),
        _ => {
            return Err(Error::precondition(
                Vec::new(),
                "Riemann integration needs a finite modulus or a monotone curve",
            ))
        }
    };
    integrate(&|t| c.eval(t), shape, (c.a, c.b), bound, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDerivative {
    pub value: RandomPoint,
    /// The declared derivative, when the curve has one.
    pub declared: Option<RandomPoint>,
    pub matches_declared: Option<bool>,
}

const DERIVATIVE_STEPS: usize = 30;

/// `c'(t)` by Richardson-extrapolated difference quotients on dyadic steps:
/// symmetric inside `(a, b)`, one-sided at the ends.
pub fn curve_derivative(c: &Curve, t: f64) -> Result<CurveDerivative> {
    let (n, d) = c.shape()?;
    if !(c.a <= t && t <= c.b) {
        return Err(Error::Invalid(format!(
            "t = {t} outside [{}, {}]",
            c.a, c.b
        )));
    }
    let (h0, kind) = if t == c.a {
        ((c.b - c.a) / 2.0, 1.0)
    } else if t == c.b {
        ((c.b - c.a) / 2.0, -1.0)
    } else {
        ((t - c.a).min(c.b - t), 0.0)
    };
    let mut quotients = Vec::with_capacity(DERIVATIVE_STEPS);
    let base = c.eval(t)?;
    for k in 0..DERIVATIVE_STEPS {
        let h = h0 * 0.5f64.powi(k as i32);
        let q = if kind == 0.0 {
            c.eval(t + h)?.sub(&c.eval(t - h)?)?.scale_uniform(0.5 / h)
        } else {
            c.eval(t + kind * h)?.sub(&base)?.scale_uniform(kind / h)
        };
        quotients.push(q);
    }
    // symmetric errors shrink like h^2, one-sided like h
    let rho = if kind == 0.0 { 0.25 } else { 0.5 };
    let mut value = RandomPoint::zeros(n, d);
    let mut stuck = Vec::new();
    for i in 0..n {
        for j in 0..d {
            let qs: Vec<f64> = quotients.iter().map(|q| q.get(i, j)).collect();
            match settle(&qs, rho) {
                Some(v) if v.is_finite() => value.set(i, j, v),
                _ => stuck.push(i),
            }
        }
    }
    if !stuck.is_empty() {
        stuck.dedup();
        return Err(Error::Convergence(format!(
            "difference quotients at t = {t} diverge on atoms {stuck:?}"
        )));
    }
    let declared = c.derivative(t).transpose()?;
    let matches_declared = declared.as_ref().map(|dv| {
        (0..n).all(|i| {
            (0..d).all(|j| {
                (dv.get(i, j) - value.get(i, j)).abs() <= 1e-8 * (1.0 + dv.get(i, j).abs())
            })
        })
    });
    Ok(CurveDerivative {
        value,
        declared,
        matches_declared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonLeibnizReport {
    /// The hypotheses were not declared; nothing was checked.
    pub vacuous: bool,
    pub reason: Option<String>,
    /// Largest entry of `|(c(b) - c(a)) - int c'|` per atom.
    pub residual: Option<L0Bar>,
    pub integral: Option<Integral>,
    pub passed: bool,
}

/// `c(b) - c(a) = int_a^b c'(t) dt` within `tol` on every atom, given a
/// declared derivative and a declared finite modulus.
pub fn newton_leibniz_check(c: &Curve, tol: f64) -> Result<NewtonLeibnizReport> {
    let shape = c.shape()?;
    let vacuous = |reason: &str| NewtonLeibnizReport {
        vacuous: true,
        reason: Some(reason.into()),
        residual: None,
        integral: None,
        passed: true,
    };
    if !c.path.has_derivative() {
        return Ok(vacuous("no derivative declared"));
    }
    match &c.modulus {
        None => return Ok(vacuous("no quotient bound declared")),
        Some(m) if !m.is_finite() => return Ok(vacuous("declared quotient bound is infinite")),
        Some(_) => {}
    }
    let deriv = |t: f64| c.derivative(t).expect("checked above");
    let integral = integrate(&deriv, shape, (c.a, c.b), Bound::Empirical, tol / 4.0)?;
    let delta = c.eval(c.b)?.sub(&c.eval(c.a)?)?;
    let residual = row_distance(&delta, &integral.value)?;
    let passed = residual.iter().all(|r| r <= tol);
    Ok(NewtonLeibnizReport {
        vacuous: false,
        reason: None,
        residual: Some(residual),
        integral: Some(integral),
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentKink {
    #[serde(with = "serial::scalar")]
    pub t: f64,
    pub atoms: Vec<usize>,
}

const JUMP_CELLS: usize = 1024;
const JUMP_WIDTH: f64 = 1e-12;

/// Points in `[0, 1]` where the right slope of `t -> phi_i(x + t s)` jumps.
/// Each rising cell of a fine grid is bisected towards its larger half; a
/// continuous slope flattens out, a jump keeps its size.
fn slope_jumps(f: &ConvexFn, i: usize, x: f64, s: f64) -> Result<Vec<f64>> {
    let slope = |t: f64| -> Result<f64> {
        let d = f.directional_scenario(i, &[x + t * s], &[s])?;
        Ok(if t >= 1.0 {
            -f.directional_scenario(i, &[x + s], &[-s])?
        } else {
            d
        })
    };
    let grid: Vec<f64> = (0..=JUMP_CELLS)
        .map(|k| k as f64 / JUMP_CELLS as f64)
        .collect();
    let slopes = grid.iter().map(|&t| slope(t)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for k in 0..JUMP_CELLS {
        let rise = slopes[k + 1] - slopes[k];
        if !(rise > 1e-9 * (1.0 + slopes[k].abs())) {
            continue;
        }
        let (mut lo, mut hi) = (grid[k], grid[k + 1]);
        let (mut s_lo, mut s_hi) = (slopes[k], slopes[k + 1]);
        while hi - lo > JUMP_WIDTH {
            let mid = 0.5 * (lo + hi);
            let s_mid = slope(mid)?;
            if s_mid - s_lo >= s_hi - s_mid {
                (hi, s_hi) = (mid, s_mid);
            } else {
                (lo, s_lo) = (mid, s_mid);
            }
        }
        if s_hi - s_lo > 0.25 * rise {
            out.push(hi);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    /// `f(x0 + h) - f(x0)`.
    pub increment: L0Bar,
    /// `int_0^1 f'(x0 + t h)(h) dt`.
    pub integral: Option<L0Bar>,
    pub residual: Option<L0Bar>,
    pub kinks: Vec<SegmentKink>,
    pub pairs_checked: usize,
    /// Pairs breaking `f'(x0)(h) <= (H(t2) - H(t1)) / (t2 - t1) <= f'(x0 + h)(h)`.
    pub monotonicity_violations: usize,
    pub passed: bool,
}

/// The identity `f(x0 + h) - f(x0) = int_0^1 f'(x0 + t h)(h) dt` for rank-1
/// `f` differentiable along the segment, with the difference-quotient bounds
/// of `H(t) = f(x0 + t h)` on `pairs` sampled `t1 < t2`.
pub fn segment_gradient_integral_check<R: Rng>(
    f: &ConvexFn,
    x0: &RandomPoint,
    h: &RandomPoint,
    tol: f64,
    pairs: usize,
    rng: &mut R,
) -> Result<SegmentReport> {
    let curve = Curve::new(
        0.0,
        1.0,
        CurvePath::Segment {
            f: f.clone(),
            x0: x0.clone(),
            h: h.clone(),
        },
    );
    let (n, _) = curve.shape()?;
    let (h0, h1) = (curve.eval(0.0)?, curve.eval(1.0)?);
    let bad: Vec<usize> = (0..n)
        .filter(|&i| !(h0.get(i, 0).is_finite() && h1.get(i, 0).is_finite()))
        .collect();
    if !bad.is_empty() {
        return Err(Error::outside(bad, "segment leaves the domain"));
    }
    let increment = L0Bar::from_fn(n, |i| h1.get(i, 0) - h0.get(i, 0));

    // kinks of the tree that the segment crosses, and the end points
    let mut kinks: Vec<SegmentKink> = Vec::new();
    let mut note = |t: f64, i: usize| match kinks.iter_mut().find(|k| k.t == t) {
        Some(k) => k.atoms.push(i),
        None => kinks.push(SegmentKink { t, atoms: vec![i] }),
    };
    for i in 0..n {
        let (x, s) = (x0.get(i, 0), h.get(i, 0));
        let mut ts: Vec<f64> = vec![0.0, 1.0];
        if s != 0.0 {
            ts.extend(
                f.kinks_scenario(i)
                    .into_iter()
                    .map(|k| (k - x) / s)
                    .filter(|t| (0.0..=1.0).contains(t)),
            );
        }
        let mut found: Vec<f64> = ts
            .into_iter()
            .filter(|t| f.gradient_scenario(i, &[x + t * s]).is_err())
            .collect();
        // kinks the tree does not list, such as crossings of sup pieces
        if s != 0.0 {
            for t in slope_jumps(f, i, x, s)? {
                if !found.iter().any(|k| (k - t).abs() <= 2.0 * JUMP_WIDTH) {
                    found.push(t);
                }
            }
        }
        for t in found {
            note(t, i);
        }
    }
    kinks.sort_by(|a, b| a.t.total_cmp(&b.t));
    if !kinks.is_empty() {
        return Ok(SegmentReport {
            increment,
            integral: None,
            residual: None,
            kinks,
            pairs_checked: 0,
            monotonicity_violations: 0,
            passed: false,
        });
    }

    let slope =
        |t: f64| -> Result<RandomPoint> { curve.derivative(t).expect("segments have derivatives") };
    let (s0, s1) = (slope(0.0)?, slope(1.0)?);
    // integrate piecewise between curvature breaks, where the slope is smooth
    let mut cuts: Vec<f64> = vec![0.0, 1.0];
    for i in 0..n {
        let (x, s) = (x0.get(i, 0), h.get(i, 0));
        if s != 0.0 {
            cuts.extend(
                f.curvature_breaks_scenario(i)
                    .into_iter()
                    .map(|k| (k - x) / s)
                    .filter(|t| 0.0 < *t && *t < 1.0),
            );
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|b, a| *b - *a < 1e-12);
    let piece_tol = tol / (4.0 * (cuts.len() - 1) as f64);
    let mut value = L0Bar::zeros(n);
    for w in cuts.windows(2) {
        let (l, r) = (slope(w[0])?, slope(w[1])?);
        let variation = L0Bar::from_fn(n, |i| (r.get(i, 0) - l.get(i, 0)).abs());
        let piece = integrate(
            &slope,
            (n, 1),
            (w[0], w[1]),
            Bound::Variation(variation),
            piece_tol,
        )?;
        value = value.zip_with(&piece.value.column(0), |a, b| a + b)?;
    }
    let residual = increment.zip_with(&value, |a, b| (a - b).abs())?;

    let mut violations = 0;
    for _ in 0..pairs {
        let (u, v): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let (t1, t2) = (u.min(v), u.max(v));
        if t2 - t1 < 1e-6 {
            continue;
        }
        let (a, b) = (curve.eval(t1)?, curve.eval(t2)?);
        for i in 0..n {
            let q = (b.get(i, 0) - a.get(i, 0)) / (t2 - t1);
            let slack = 1e-9 * (1.0 + q.abs());
            if q < s0.get(i, 0) - slack || q > s1.get(i, 0) + slack {
                violations += 1;
            }
        }
    }
    let passed = violations == 0 && residual.iter().all(|r| r <= tol);
    Ok(SegmentReport {
        increment,
        integral: Some(value),
        residual: Some(residual),
        kinks,
        pairs_checked: pairs,
        monotonicity_violations: violations,
        passed,
    })
}
