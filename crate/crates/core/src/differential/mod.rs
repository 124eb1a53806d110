//! Directional derivatives from difference quotients, Gateaux and Frechet
//! differentiability, and the first-order inequalities of convex functions.
//!
//! Quotients `(f(x0 + t y) - f(x0)) / t` are taken along `t = rho^k`; the
//! limit is declared when the Richardson-corrected quotients stagnate. For a
//! piecewise quadratic atom the corrected quotient is exact as soon as `t`
//! stays within one piece.

use crate::convexfn::ConvexFn;
use crate::error::{Error, Result};
use crate::measure_l0::{ext_add, ext_mul, ext_sub, EventSet, L0Bar};
use crate::rnmodule::{RandomFunctional, RandomPoint, SequenceDescriptor};
use crate::serial;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DYADIC_STEPS: usize = 40;
const STAGNATION: f64 = 1e-10;
pub const LEMMA_TOL: f64 = 1e-8;
const XI_SAMPLES: usize = 64;
/// Steps below this are dominated by roundoff in `x0 + t y`.
const MIN_STEP: f64 = 9.094947017729282e-13;

/// One step of a quotient trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Step size per atom.
    pub step: L0Bar,
    pub quotient: L0Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalDerivative {
    pub value: L0Bar,
    /// Atoms where the dyadic quotients stagnated; elsewhere the value comes
    /// from the structured tree.
    pub stagnated: EventSet,
    /// Quotients along `t = 2^-k`.
    pub quotient_trace: Vec<TraceRow>,
    /// Quotients at sampled steps `xi` in `L0_++`, stratified nets first.
    pub inf_trace: Vec<TraceRow>,
    /// Infimum over `xi` of the quotient: the net limit and sampled minimum combined.
    pub xi_infimum: L0Bar,
    /// `|value - xi_infimum|` per atom (0 where both are the same infinity).
    pub lemma_gap: L0Bar,
    /// Atoms where a sampled `xi`-quotient fell below the value.
    pub xi_below_value: EventSet,
}

impl DirectionalDerivative {
    /// The limit along `t` and the infimum over `xi` agree within `LEMMA_TOL`.
    pub fn lemma_holds(&self) -> bool {
        self.xi_below_value.is_empty()
            && self
                .lemma_gap
                .iter()
                .zip(self.value.iter())
                .all(|(g, v)| g <= LEMMA_TOL * (1.0 + if v.is_finite() { v.abs() } else { 0.0 }))
    }
}

fn require_domain(f: &ConvexFn, x0: &RandomPoint) -> Result<L0Bar> {
    let fx = f.eval(x0)?;
    let bad: Vec<usize> = (0..x0.n()).filter(|&i| !fx.get(i).is_finite()).collect();
    if !bad.is_empty() {
        return Err(Error::outside(bad, "base point outside the domain"));
    }
    Ok(fx)
}

fn shifted(x0: &[f64], t: f64, y: &[f64]) -> Vec<f64> {
    x0.iter().zip(y).map(|(a, b)| a + t * b).collect()
}

fn quotient(f: &ConvexFn, i: usize, x0: &[f64], fx: f64, t: f64, y: &[f64]) -> Result<f64> {
    let v = f.eval_scenario(i, &shifted(x0, t, y))?;
    Ok(ext_sub(v, fx) / t)
}

/// Limit of quotients whose error shrinks by `rho` per step, or `None` if
/// they never settle.
pub(crate) fn settle(qs: &[f64], rho: f64) -> Option<f64> {
    if qs.iter().all(|q| *q == f64::INFINITY) {
        return Some(f64::INFINITY);
    }
    let close = |a: f64, b: f64| (a - b).abs() <= STAGNATION * (1.0 + a.abs());
    let rich: Vec<Option<f64>> = (0..qs.len())
        .map(|k| {
            (k > 0 && qs[k].is_finite() && qs[k - 1].is_finite())
                .then(|| (qs[k] - rho * qs[k - 1]) / (1.0 - rho))
        })
        .collect();
    for k in 2..qs.len() {
        if let (Some(a), Some(b), Some(c)) = (rich[k - 2], rich[k - 1], rich[k]) {
            if close(c, b) && close(b, a) {
                // constant quotients are exact; otherwise the corrected value is
                return Some(if close(qs[k], qs[k - 1]) { qs[k] } else { c });
            }
        }
    }
    let tail = &qs[qs.len().saturating_sub(8)..];
    let falling = tail.windows(2).all(|w| w[1] < w[0]);
    (falling && tail.last().is_some_and(|q| *q < -1e6)).then_some(f64::NEG_INFINITY)
}

/// Quotient limit per atom with per-atom step ratio `rho_i` and scale `c_i`.
fn limit_along(
    f: &ConvexFn,
    x0: &RandomPoint,
    fx: &L0Bar,
    y: &RandomPoint,
    scale: &[f64],
    rho: &[f64],
) -> Result<(L0Bar, EventSet, Vec<TraceRow>)> {
    let n = x0.n();
    let mut trace = Vec::with_capacity(DYADIC_STEPS + 1);
    for k in 0..=DYADIC_STEPS {
        let step = L0Bar::from_fn(n, |i| scale[i] * rho[i].powi(k as i32));
        let mut q = L0Bar::constant(n, f64::NAN);
        for i in (0..n).filter(|&i| step.get(i) >= MIN_STEP) {
            q.set(
                i,
                quotient(f, i, x0.row(i), fx.get(i), step.get(i), y.row(i))?,
            );
        }
        trace.push(TraceRow { step, quotient: q });
    }
    let mut value = L0Bar::zeros(n);
    let mut stagnated = EventSet::empty(n);
    for i in 0..n {
        let qs: Vec<f64> = trace
            .iter()
            .map(|r| r.quotient.get(i))
            .filter(|q| !q.is_nan())
            .collect();
        match settle(&qs, rho[i]) {
            Some(v) => {
                value.set(i, v);
                stagnated.insert(i);
            }
            None => value.set(i, f.directional_scenario(i, x0.row(i), y.row(i))?),
        }
    }
    Ok((value, stagnated, trace))
}

fn dyadic(
    f: &ConvexFn,
    x0: &RandomPoint,
    fx: &L0Bar,
    y: &RandomPoint,
) -> Result<(L0Bar, EventSet, Vec<TraceRow>)> {
    let n = x0.n();
    limit_along(f, x0, fx, y, &vec![1.0; n], &vec![0.5; n])
}

/// Per-atom step ratios `2^-0.25` and `2^-2.5`: decay rates that differ by 10x.
fn stratified_rates(n: usize, flip: bool) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if (i % 2 == 0) != flip {
                2f64.powf(-0.25)
            } else {
                2f64.powf(-2.5)
            }
        })
        .collect()
}

/// `f'(x0; y)` as the limit of dyadic quotients, cross-checked against the
/// infimum over stratified steps `xi in L0_++`.
pub fn directional_derivative(
    f: &ConvexFn,
    x0: &RandomPoint,
    y: &RandomPoint,
) -> Result<DirectionalDerivative> {
    let fx = require_domain(f, x0)?;
    if y.n() != x0.n() || y.d() != x0.d() {
        return Err(Error::Shape(
            "direction and base point differ in shape".into(),
        ));
    }
    let n = x0.n();
    let (value, stagnated, quotient_trace) = dyadic(f, x0, &fx, y)?;

    let mut inf_trace = Vec::new();
    let mut xi_infimum = L0Bar::constant(n, f64::INFINITY);
    for flip in [false, true] {
        let scale: Vec<f64> = (0..n)
            .map(|i| if (i % 3 == 0) != flip { 1.0 } else { 0.1 })
            .collect();
        let (net, _, trace) = limit_along(f, x0, &fx, y, &scale, &stratified_rates(n, flip))?;
        xi_infimum = xi_infimum.zip_with(&net, f64::min)?;
        inf_trace.extend(trace.into_iter().step_by(8));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7869_696e);
    let mut xi_below_value = EventSet::empty(n);
    for _ in 0..XI_SAMPLES {
        let step = L0Bar::from_fn(n, |_| 2f64.powf(-rng.gen_range(0.0..30.0)));
        let mut q = L0Bar::zeros(n);
        for i in 0..n {
            let qi = quotient(f, i, x0.row(i), fx.get(i), step.get(i), y.row(i))?;
            q.set(i, qi);
            let v = value.get(i);
            // sampled quotients approach from above; roundoff in f(x0) and in
            // x0 + xi y grows like 1/xi
            let reach = x0.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let noise = 4.0 * f64::EPSILON * (1.0 + fx.get(i).abs() + reach * (1.0 + v.abs()))
                / step.get(i);
            if qi < v - LEMMA_TOL * (1.0 + v.abs()) - noise {
                xi_below_value.insert(i);
            }
            if qi.is_infinite() || noise <= LEMMA_TOL {
                xi_infimum.set(i, xi_infimum.get(i).min(qi));
            }
        }
        inf_trace.push(TraceRow { step, quotient: q });
    }
    let lemma_gap = value.zip_with(&xi_infimum, |a, b| if a == b { 0.0 } else { (a - b).abs() })?;
    Ok(DirectionalDerivative {
        value,
        stagnated,
        quotient_trace,
        inf_trace,
        xi_infimum,
        lemma_gap,
        xi_below_value,
    })
}

/// Per-atom evidence against differentiability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateauxWitness {
    pub atom: usize,
    /// Width of the subdifferential (rank 1) or largest one-sided gap.
    #[serde(with = "serial::scalar")]
    pub width: f64,
    #[serde(with = "serial::scalar")]
    pub lo: f64,
    #[serde(with = "serial::scalar")]
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gateaux {
    pub derivative: Option<RandomFunctional>,
    pub nonsmooth: EventSet,
    /// The widest non-differentiable atom.
    pub witness: Option<GateauxWitness>,
    pub directions_checked: usize,
}

const GATEAUX_WIDTH: f64 = 1e-9;

fn gateaux_directions(n: usize, d: usize) -> Vec<RandomPoint> {
    let mut out = Vec::with_capacity(2 * d + 8);
    for j in 0..d {
        for s in [1.0, -1.0] {
            out.push(RandomPoint::from_fn(
                n,
                d,
                |_, c| if c == j { s } else { 0.0 },
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6761_7465);
    for k in 0..8 {
        // different directions and magnitudes on different atoms
        out.push(RandomPoint::from_fn(n, d, |i, _| {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if (i + k) % 3 == 0 {
                10.0 * v
            } else {
                v
            }
        }));
    }
    out
}

/// The Gateaux derivative at `x0` when `partial f(x0)` is a singleton on every
/// atom, verified as `f'(x0; y) = u(y)` on `2d + 8` directions.
pub fn gateaux_derivative(f: &ConvexFn, x0: &RandomPoint) -> Result<Gateaux> {
    let fx = require_domain(f, x0)?;
    let (n, d) = (x0.n(), x0.d());
    let mut u = RandomPoint::zeros(n, d);
    let mut nonsmooth = EventSet::empty(n);
    let mut witness: Option<GateauxWitness> = None;
    let note = |i: usize, lo: f64, hi: f64, witness: &mut Option<GateauxWitness>| {
        let width = if lo.is_finite() && hi.is_finite() {
            hi - lo
        } else {
            f64::INFINITY
        };
        if witness.as_ref().is_none_or(|w| width > w.width) {
            *witness = Some(GateauxWitness {
                atom: i,
                width,
                lo,
                hi,
            });
        }
    };
    for i in 0..n {
        let row = x0.row(i);
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let hi = f.directional_scenario(i, row, &e)?;
            e[j] = -1.0;
            let lo = -f.directional_scenario(i, row, &e)?;
            let ok = lo.is_finite() && hi.is_finite() && hi - lo <= GATEAUX_WIDTH;
            if ok {
                u.set(i, j, 0.5 * (lo + hi));
            } else {
                nonsmooth.insert(i);
                note(i, lo, hi, &mut witness);
            }
        }
    }
    let dirs = gateaux_directions(n, d);
    let g = RandomFunctional::new(u.clone());
    for y in &dirs {
        let (val, _, _) = dyadic(f, x0, &fx, y)?;
        let uy = g.apply(y)?;
        for i in nonsmooth.complement().indices().collect::<Vec<_>>() {
            let (a, b) = (val.get(i), uy.get(i));
            if !a.is_finite() || (a - b).abs() > LEMMA_TOL * (1.0 + b.abs()) {
                nonsmooth.insert(i);
                note(i, b, a, &mut witness);
            }
        }
    }
    Ok(Gateaux {
        derivative: nonsmooth.is_empty().then_some(g),
        nonsmooth,
        witness,
        directions_checked: dirs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetTrace {
    /// `|f(x0 + h_k) - f(x0) - u(h_k)| / ||h_k||` per term, with `0/0 = 0`.
    pub quotients: Vec<L0Bar>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetReport {
    pub sequences: Vec<FrechetTrace>,
    pub passed: bool,
}

pub const FRECHET_TOL: f64 = 1e-6;

/// Frechet quotients along increment sequences `h_k -> 0`; a sequence passes
/// when on every atom some quotient is at most `FRECHET_TOL`. The least
/// quotient, not the last, is read because cancellation in
/// `f(x0 + h_k) - f(x0)` dominates once `|h_k|` nears the rounding level.
pub fn frechet_test(
    f: &ConvexFn,
    x0: &RandomPoint,
    u: &RandomFunctional,
    increments: &[SequenceDescriptor],
) -> Result<FrechetReport> {
    let fx = require_domain(f, x0)?;
    let n = x0.n();
    let mut sequences = Vec::with_capacity(increments.len());
    for seq in increments {
        let mut quotients = Vec::with_capacity(seq.prefix.len());
        for h in &seq.prefix {
            let fh = f.eval(&x0.add(h)?)?;
            let uh = u.apply(h)?;
            let norm = h.euclidean_norm();
            quotients.push(L0Bar::from_fn(n, |i| {
                let num = ext_sub(ext_sub(fh.get(i), fx.get(i)), uh.get(i)).abs();
                if norm.get(i) == 0.0 {
                    if num == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    num / norm.get(i)
                }
            }));
        }
        let passed = !quotients.is_empty()
            && (0..n).all(|i| quotients.iter().any(|q| q.get(i) <= FRECHET_TOL));
        sequences.push(FrechetTrace { quotients, passed });
    }
    let passed = sequences.iter().all(|s| s.passed);
    Ok(FrechetReport { sequences, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublinearityReport {
    pub checked: usize,
    pub subadditivity_violations: usize,
    pub homogeneity_violations: usize,
    /// Violations of `-f'(x0; -y) <= f'(x0; y)`.
    pub symmetry_violations: usize,
    pub passed: bool,
}

fn ext_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * (1.0 + a.abs().min(b.abs()))
}

fn random_direction<R: Rng>(rng: &mut R, n: usize, d: usize) -> RandomPoint {
    RandomPoint::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
}

/// Subadditivity and `L0_+`-homogeneity of `y -> f'(x0; y)` over sampled
/// directions and multipliers with zero strata.
pub fn sublinearity_check<R: Rng>(
    f: &ConvexFn,
    x0: &RandomPoint,
    samples: usize,
    rng: &mut R,
) -> Result<SublinearityReport> {
    let fx = require_domain(f, x0)?;
    let (n, d) = (x0.n(), x0.d());
    let mut report = SublinearityReport {
        checked: 0,
        subadditivity_violations: 0,
        homogeneity_violations: 0,
        symmetry_violations: 0,
        passed: true,
    };
    let deriv = |y: &RandomPoint| dyadic(f, x0, &fx, y).map(|r| r.0);
    for s in 0..samples {
        let (y, z) = (random_direction(rng, n, d), random_direction(rng, n, d));
        let xi = L0Bar::from_fn(n, |i| {
            if (i + s) % 3 == 0 {
                0.0
            } else {
                rng.gen_range(0.0..3.0)
            }
        });
        let (fy, fz, fyz) = (deriv(&y)?, deriv(&z)?, deriv(&y.add(&z)?)?);
        let (fxy, fneg) = (deriv(&y.scale(&xi)?)?, deriv(&y.neg())?);
        for i in 0..n {
            report.checked += 1;
            let sum = ext_add(fy.get(i), fz.get(i));
            if fyz.get(i) > sum + LEMMA_TOL * (1.0 + sum.abs()) {
                report.subadditivity_violations += 1;
            }
            if !ext_close(fxy.get(i), ext_mul(xi.get(i), fy.get(i)), LEMMA_TOL) {
                report.homogeneity_violations += 1;
            }
            if -fneg.get(i) > fy.get(i) + LEMMA_TOL * (1.0 + fy.get(i).abs()) {
                report.symmetry_violations += 1;
            }
        }
    }
    report.passed = report.subadditivity_violations == 0
        && report.homogeneity_violations == 0
        && report.symmetry_violations == 0;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// Smallest `rhs - lhs` seen (the margin for the strict check).
    #[serde(with = "serial::scalar")]
    pub min_slack: f64,
}

impl InequalityCheck {
    fn new(name: &str) -> Self {
        InequalityCheck {
            name: name.into(),
            checked: 0,
            violations: 0,
            min_slack: f64::INFINITY,
        }
    }

    /// Records `lhs <= rhs` (or `<` beyond `margin` when `strict`).
    fn record(&mut self, lhs: f64, rhs: f64, strict: Option<f64>) {
        self.checked += 1;
        let slack = if lhs == rhs { 0.0 } else { rhs - lhs };
        self.min_slack = self.min_slack.min(slack);
        let ok = match strict {
            Some(margin) => slack > margin,
            None => slack >= -LEMMA_TOL * (1.0 + lhs.abs().min(rhs.abs())),
        };
        if !ok {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub checks: Vec<InequalityCheck>,
    pub passed: bool,
}

pub const STRICT_MARGIN: f64 = 1e-10;

/// The first-order inequalities of convex functions around `x0`:
///
/// * `increment_bound`: `|f(x0 + l y) - f(x0)| <= l max(f(x0 + y) - f(x0), f(x0 - y) - f(x0))`, `l in [0, 1]`
/// * `tangent_minorant`: `f(x0) + l f'(x0; y) <= f(x0 + l y)` for `l` of mixed sign
/// * `gradient_inequality`: `f(y) >= f(x) + f'(x)(y - x)` where `f` is Gateaux at `x`
/// * `gradient_monotone`: `(f'(x) - f'(y))(x - y) >= 0`
/// * `strict_gradient_inequality` (when `strict`): `f(y) > f(x) + f'(x)(y - x)` where `x != y`
pub fn inequality_suite<R: Rng>(
    f: &ConvexFn,
    x0: &RandomPoint,
    samples: usize,
    strict: bool,
    rng: &mut R,
) -> Result<InequalityReport> {
    let fx0 = require_domain(f, x0)?;
    let (n, d) = (x0.n(), x0.d());
    let mut bound = InequalityCheck::new("increment_bound");
    let mut tangent = InequalityCheck::new("tangent_minorant");
    let mut gradient = InequalityCheck::new("gradient_inequality");
    let mut monotone = InequalityCheck::new("gradient_monotone");
    let mut strictness = InequalityCheck::new("strict_gradient_inequality");
    for s in 0..samples {
        let y = random_direction(rng, n, d);
        let lam = L0Bar::from_fn(n, |_| rng.gen_range(0.0..=1.0));
        let (fp, fm, fl) = (
            f.eval(&x0.add(&y)?)?,
            f.eval(&x0.sub(&y)?)?,
            f.eval(&x0.add(&y.scale(&lam)?)?)?,
        );
        for i in 0..n {
            let top = ext_sub(fp.get(i), fx0.get(i)).max(ext_sub(fm.get(i), fx0.get(i)));
            bound.record(
                ext_sub(fl.get(i), fx0.get(i)).abs(),
                ext_mul(lam.get(i), top),
                None,
            );
        }

        // lambda > 0, = 0 and < 0 on rotating strata
        let mixed = L0Bar::from_fn(n, |i| match (i + s) % 3 {
            0 => rng.gen_range(0.0..2.0),
            1 => 0.0,
            _ => -rng.gen_range(0.0..2.0),
        });
        let (dy, _, _) = dyadic(f, x0, &fx0, &y)?;
        let fm = f.eval(&x0.add(&y.scale(&mixed)?)?)?;
        for i in 0..n {
            tangent.record(
                ext_add(fx0.get(i), ext_mul(mixed.get(i), dy.get(i))),
                fm.get(i),
                None,
            );
        }

        let xa = x0.add(&random_direction(rng, n, d))?;
        let mut xb = x0.add(&random_direction(rng, n, d))?;
        for i in (0..n).filter(|i| (i + s) % 4 == 3) {
            xb.row_mut(i).copy_from_slice(xa.row(i));
        }
        let (fa, fb) = (f.eval(&xa)?, f.eval(&xb)?);
        let finite: Vec<bool> = (0..n)
            .map(|i| fa.get(i).is_finite() && fb.get(i).is_finite())
            .collect();
        if !finite.iter().any(|b| *b) {
            continue;
        }
        let (Some(ga), Some(gb)) = (gateaux_on(f, &xa, &finite)?, gateaux_on(f, &xb, &finite)?)
        else {
            continue;
        };
        for i in (0..n).filter(|&i| finite[i] && ga.contains(i) && gb.contains(i)) {
            let (ua, ub) = (ga.row(i), gb.row(i));
            let diff: Vec<f64> = xb
                .row(i)
                .iter()
                .zip(xa.row(i))
                .map(|(b, a)| b - a)
                .collect();
            let lin = dot(ua, &diff);
            gradient.record(fa.get(i) + lin, fb.get(i), None);
            let gd: Vec<f64> = ua.iter().zip(ub).map(|(a, b)| a - b).collect();
            monotone.record(0.0, -dot(&gd, &diff), None);
            if strict && diff.iter().any(|v| *v != 0.0) {
                strictness.record(fa.get(i) + lin, fb.get(i), Some(STRICT_MARGIN));
            }
        }
    }
    let mut checks = vec![bound, tangent, gradient, monotone];
    if strict {
        checks.push(strictness);
    }
    let passed = checks.iter().all(InequalityCheck::passed);
    Ok(InequalityReport { checks, passed })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradients at the atoms where `f` is Gateaux-differentiable at `x`.
struct PartialGradient {
    rows: RandomPoint,
    smooth: EventSet,
}

impl PartialGradient {
    fn contains(&self, i: usize) -> bool {
        self.smooth.contains(i)
    }

    fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }
}

/// Per-atom Gateaux derivative on `mask`, evaluated one atom at a time so that
/// atoms outside the domain do not abort the rest.
fn gateaux_on(f: &ConvexFn, x: &RandomPoint, mask: &[bool]) -> Result<Option<PartialGradient>> {
    let (n, d) = (x.n(), x.d());
    // atoms off the mask are moved to a domain witness so the whole point is admissible
    let mut y = x.clone();
    for i in (0..n).filter(|&i| !mask[i]) {
        match f.witness_row(i) {
            Ok(w) => y.row_mut(i).copy_from_slice(&w),
            Err(_) => return Ok(None),
        }
    }
    let g = match gateaux_derivative(f, &y) {
        Ok(g) => g,
        Err(Error::OutsideDomain { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut rows = RandomPoint::zeros(n, d);
    let smooth = EventSet::from_mask(
        (0..n)
            .map(|i| mask[i] && !g.nonsmooth.contains(i))
            .collect(),
    );
    // recompute gradients atom-wise; `derivative` is only set when every atom is smooth
    for i in smooth.indices() {
        rows.row_mut(i)
            .copy_from_slice(&f.gradient_scenario(i, y.row(i))?);
    }
    Ok(Some(PartialGradient { rows, smooth }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonDifferentiable {
    /// `None` for the base point.
    pub sequence: Option<usize>,
    pub term: usize,
    pub atoms: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AescReport {
    pub checked_terms: usize,
    pub non_differentiable: Vec<NonDifferentiable>,
    /// `||f'(x_k) - f'(x0)||` at the last checked term of each sequence.
    pub final_gaps: Vec<L0Bar>,
    pub passed: bool,
}

pub const AESC_TOL: f64 = 1e-6;

/// Along each sequence `x_k -> x0` (terms within `radius` of `x0`), checks
/// that `f` is Gateaux-differentiable at `x_k` and `f'(x_k) -> f'(x0)`.
pub fn aesc_gateaux_probe(
    f: &ConvexFn,
    x0: &RandomPoint,
    radius: &L0Bar,
    sequences: &[SequenceDescriptor],
) -> Result<AescReport> {
    radius.require_strictly_positive("radius")?;
    let n = x0.n();
    let all = vec![true; n];
    let mut report = AescReport {
        checked_terms: 0,
        non_differentiable: Vec::new(),
        final_gaps: Vec::new(),
        passed: true,
    };
    let base = gateaux_on(f, x0, &all)?
        .ok_or_else(|| Error::outside(Vec::new(), "base point outside the domain"))?;
    if !base.smooth.is_full() {
        report.non_differentiable.push(NonDifferentiable {
            sequence: None,
            term: 0,
            atoms: base.smooth.complement().indices().collect(),
        });
        report.passed = false;
        return Ok(report);
    }
    let scale = base.rows.euclidean_norm();
    for (s, seq) in sequences.iter().enumerate() {
        let mut last = L0Bar::constant(n, f64::NAN);
        for (k, xk) in seq.prefix.iter().enumerate() {
            let dist = xk.sub(x0)?.euclidean_norm();
            let mask: Vec<bool> = (0..n).map(|i| dist.get(i) <= radius.get(i)).collect();
            if !mask.iter().any(|b| *b) {
                continue;
            }
            report.checked_terms += 1;
            let g = gateaux_on(f, xk, &mask)?;
            let bad: Vec<usize> = match &g {
                Some(g) => (0..n).filter(|&i| mask[i] && !g.contains(i)).collect(),
                None => (0..n).filter(|&i| mask[i]).collect(),
            };
            if !bad.is_empty() {
                report.non_differentiable.push(NonDifferentiable {
                    sequence: Some(s),
                    term: k,
                    atoms: bad,
                });
                continue;
            }
            let g = g.expect("checked above");
            for i in (0..n).filter(|&i| mask[i]) {
                let gap: f64 = g
                    .row(i)
                    .iter()
                    .zip(base.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                last.set(i, gap.sqrt());
            }
        }
        let converged = (0..n).all(|i| {
            let v = last.get(i);
            v.is_nan() || v <= AESC_TOL * (1.0 + scale.get(i))
        });
        report.passed &= converged;
        report.final_gaps.push(last);
    }
    report.passed &= report.non_differentiable.is_empty();
    Ok(report)
}
