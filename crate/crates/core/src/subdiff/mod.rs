//! Subdifferentials, epsilon-subdifferentials, calculus rules and separation
//! of a point from a convex set, atom by atom.
//!
//! Membership is decided by the Fenchel gap `f(x) + f*(g) - g.x <= tol`
//! whenever `f*` has an exact tree; intervals (rank 1) and verified sample
//! clouds (rank >= 2) are derived views.

use crate::convexfn::ConvexFn;
use crate::error::{Error, Result};
use crate::legendre::{conjugate, TransformPath};
use crate::measure_l0::{ext_add, ext_mul, ext_sub, EventSet, L0Bar};
use crate::rnmodule::{ModuleHom, RandomFunctional, RandomPoint};
use crate::serial;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A closed interval of the extended line; empty when `lo > hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "serial::scalar")]
    pub lo: f64,
    #[serde(with = "serial::scalar")]
    pub hi: f64,
}

impl Interval {
    pub const EMPTY: Interval = Interval {
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || self.lo == f64::INFINITY || self.hi == f64::NEG_INFINITY
    }

    pub fn contains(&self, g: f64, tol: f64) -> bool {
        !self.is_empty() && self.lo - tol <= g && g <= self.hi + tol
    }

    /// Minkowski sum.
    pub fn add(&self, other: &Interval) -> Interval {
        if self.is_empty() || other.is_empty() {
            return Interval::EMPTY;
        }
        Interval::new(self.lo + other.lo, self.hi + other.hi)
    }

    /// `{l g : g in self}` with `0 * (+-inf) = 0`.
    pub fn scale(&self, l: f64) -> Interval {
        if self.is_empty() {
            return Interval::EMPTY;
        }
        let (a, b) = (ext_mul(l, self.lo), ext_mul(l, self.hi));
        Interval::new(a.min(b), a.max(b))
    }

    /// Inclusion with endpoint tolerance; infinite endpoints must match exactly.
    pub fn within(&self, other: &Interval, tol: f64) -> bool {
        if self.is_empty() {
            return true;
        }
        if other.is_empty() {
            return false;
        }
        let ge = |a: f64, b: f64| a >= b || (a.is_finite() && b.is_finite() && a >= b - tol);
        ge(self.lo, other.lo) && ge(other.hi, self.hi)
    }

    pub fn approx_eq(&self, other: &Interval, tol: f64) -> bool {
        self.within(other, tol) && other.within(self, tol)
    }
}

/// Verified subgradients at one atom of a rank >= 2 function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomCloud {
    #[serde(with = "serial::mat")]
    pub members: Vec<Vec<f64>>,
    /// Whether `phi_i` is differentiable at the base point (members = gradient).
    pub smooth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rep", rename_all = "snake_case")]
pub enum SubdiffSet {
    Intervals { intervals: Vec<Interval> },
    Cloud { atoms: Vec<AtomCloud> },
}

impl SubdiffSet {
    pub fn intervals(&self) -> Option<&[Interval]> {
        match self {
            SubdiffSet::Intervals { intervals } => Some(intervals),
            SubdiffSet::Cloud { .. } => None,
        }
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

fn require_structured(f: &ConvexFn) -> Result<()> {
    if !f.is_structured() {
        return Err(Error::Unsupported(
            "subdifferentials need a structured tree".into(),
        ));
    }
    Ok(())
}

/// Membership test for rank >= 2 rows: Fenchel gap with an exact conjugate,
/// otherwise `g.y <= f'(x; y)` over `+-e_j` and 64 sampled directions.
struct Oracle<'a> {
    f: &'a ConvexFn,
    conj: Option<ConvexFn>,
    dirs: Vec<Vec<f64>>,
}

impl<'a> Oracle<'a> {
    fn new(f: &'a ConvexFn, n: usize) -> Result<Self> {
        let conj = match conjugate(f, n, None) {
            Ok(t) if t.path == TransformPath::Exact => Some(t.func),
            Ok(_) | Err(Error::NeedsGrid(_)) => None,
            Err(e) => return Err(e),
        };
        let d = f.dim();
        let mut dirs = Vec::new();
        for j in 0..d {
            for s in [1.0, -1.0] {
                let mut e = vec![0.0; d];
                e[j] = s;
                dirs.push(e);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x6469_7273);
        for _ in 0..64 {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            dirs.push(v.iter().map(|a| a / r).collect());
        }
        Ok(Oracle { f, conj, dirs })
    }

    fn gap(&self, i: usize, x: &[f64], g: &[f64]) -> Result<Option<f64>> {
        let Some(c) = &self.conj else { return Ok(None) };
        let fx = self.f.eval_scenario(i, x)?;
        let fg = c.eval_scenario(i, g)?;
        let gx: f64 = g.iter().zip(x).map(|(a, b)| a * b).sum();
        Ok(Some(ext_sub(ext_add(fx, fg), gx)))
    }

    fn member(&self, i: usize, x: &[f64], g: &[f64], tol: f64) -> Result<bool> {
        if let Some(gap) = self.gap(i, x, g)? {
            return Ok(gap <= tol);
        }
        for y in &self.dirs {
            let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
            if gy > self.f.directional_scenario(i, x, y)? + tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Candidates from the box of one-sided partial derivatives, verified.
    fn cloud(
        &self,
        i: usize,
        x: &[f64],
        samples: usize,
        tol: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<AtomCloud> {
        let d = x.len();
        let mut lo = vec![0.0; d];
        let mut hi = vec![0.0; d];
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            hi[j] = self.f.directional_scenario(i, x, &e)?;
            e[j] = -1.0;
            lo[j] = -self.f.directional_scenario(i, x, &e)?;
        }
        let smooth = (0..d)
            .all(|j| hi[j].is_finite() && (hi[j] - lo[j]).abs() <= 1e-12 * (1.0 + hi[j].abs()));
        if smooth {
            let g: Vec<f64> = (0..d).map(|j| 0.5 * (lo[j] + hi[j])).collect();
            let members = if self.member(i, x, &g, tol)? {
                vec![g]
            } else {
                Vec::new()
            };
            return Ok(AtomCloud { members, smooth });
        }
        // unbounded sides are probed one unit past the finite end
        let span = |j: usize| -> (f64, f64) {
            match (lo[j].is_finite(), hi[j].is_finite()) {
                (true, true) => (lo[j], hi[j]),
                (true, false) => (lo[j], lo[j] + 1.0),
                (false, true) => (hi[j] - 1.0, hi[j]),
                (false, false) => (-1.0, 1.0),
            }
        };
        let mut members = Vec::new();
        let corners = 1usize << d.min(10);
        for k in 0..samples {
            let g: Vec<f64> = (0..d)
                .map(|j| {
                    let (a, b) = span(j);
                    if k < corners {
                        if k >> j & 1 == 1 {
                            b
                        } else {
                            a
                        }
                    } else {
                        rng.gen_range(a..=b)
                    }
                })
                .collect();
            if self.member(i, x, &g, tol)? {
                members.push(g);
            }
        }
        Ok(AtomCloud { members, smooth })
    }
}

/// `partial f(x0)`: exact one-sided derivative intervals for rank 1, verified
/// clouds of at most `samples` candidates per atom for rank >= 2.
pub fn subdifferential(f: &ConvexFn, x0: &RandomPoint, samples: usize) -> Result<SubdiffSet> {
    require_structured(f)?;
    require_domain(f, x0)?;
    let n = x0.n();
    if x0.d() == 1 {
        let intervals = (0..n)
            .map(|i| {
                f.subdiff_interval_scenario(i, x0.get(i, 0))
                    .map(|(lo, hi)| Interval::new(lo, hi))
            })
            .collect::<Result<_>>()?;
        return Ok(SubdiffSet::Intervals { intervals });
    }
    let oracle = Oracle::new(f, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x636c_6f75);
    let atoms = (0..n)
        .map(|i| oracle.cloud(i, x0.row(i), samples, 1e-9, &mut rng))
        .collect::<Result<_>>()?;
    Ok(SubdiffSet::Cloud { atoms })
}

/// Atoms where `g` is a subgradient at `x0`: Fenchel gap `<= tol`, or the
/// exact interval / directional test when `f*` has no exact tree. For rank 1
/// an infinite gap is rechecked against the interval, so that `g` within `tol`
/// of `dom f*` is not rejected.
pub fn is_subgradient(
    f: &ConvexFn,
    x0: &RandomPoint,
    g: &RandomFunctional,
    tol: f64,
) -> Result<EventSet> {
    require_structured(f)?;
    let n = x0.n();
    let fx = f.eval(x0)?;
    let oracle = Oracle::new(f, n)?;
    let mut out = EventSet::empty(n);
    for i in 0..n {
        if !fx.get(i).is_finite() {
            continue;
        }
        let (x, gi) = (x0.row(i), g.coeffs().row(i));
        // rank 1: an infinite gap may be `g` a rounding error outside dom f*
        let ok = match oracle
            .gap(i, x, gi)?
            .filter(|v| v.is_finite() || x.len() > 1)
        {
            Some(gap) => gap <= tol,
            None if x.len() == 1 => {
                let (lo, hi) = f.subdiff_interval_scenario(i, x[0])?;
                Interval::new(lo, hi).contains(gi[0], tol)
            }
            None => oracle.member(i, x, gi, tol)?,
        };
        if ok {
            out.insert(i);
        }
    }
    Ok(out)
}

fn exact_conjugate(f: &ConvexFn, n: usize) -> Result<ConvexFn> {
    let t = conjugate(f, n, None)?;
    if t.path != TransformPath::Exact {
        return Err(Error::NeedsGrid(
            "epsilon-subgradients need an exact conjugate".into(),
        ));
    }
    Ok(t.func)
}

/// Atoms where `f(x0) + f*(g) <= g(x0) + eps`.
pub fn eps_subdifferential_membership(
    f: &ConvexFn,
    x0: &RandomPoint,
    g: &RandomFunctional,
    eps: &L0Bar,
) -> Result<EventSet> {
    require_structured(f)?;
    eps.require_strictly_positive("epsilon")?;
    let n = x0.n();
    let conj = exact_conjugate(f, n)?;
    let (fx, fg, gx) = (f.eval(x0)?, conj.eval(g.coeffs())?, g.apply(x0)?);
    let mut out = EventSet::empty(n);
    for i in 0..n {
        let gap = ext_sub(ext_add(fx.get(i), fg.get(i)), gx.get(i));
        if gap <= eps.get(i) + 1e-12 * (1.0 + eps.get(i)) {
            out.insert(i);
        }
    }
    Ok(out)
}

const EPS_BUDGET: usize = 200;

/// Some `eps`-subgradient at `x0`: an exact subgradient where one exists
/// (interval point nearest 0, gradient, or verified cloud member), otherwise a
/// scan over dual points `+-2^(k/4 - 10) e_j` within the iteration budget.
pub fn eps_subgradient_construct(
    f: &ConvexFn,
    x0: &RandomPoint,
    eps: &L0Bar,
) -> Result<RandomFunctional> {
    require_structured(f)?;
    eps.require_strictly_positive("epsilon")?;
    let fx = require_domain(f, x0)?;
    let (n, d) = (x0.n(), x0.d());
    let conj = exact_conjugate(f, n)?;
    let gap = |i: usize, g: &[f64]| -> Result<f64> {
        let gx: f64 = g.iter().zip(x0.row(i)).map(|(a, b)| a * b).sum();
        Ok(ext_sub(ext_add(fx.get(i), conj.eval_scenario(i, g)?), gx))
    };
    let mut out = RandomPoint::zeros(n, d);
    let mut failed = Vec::new();
    let mut oracle = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6570_7367);
    for i in 0..n {
        let row = x0.row(i);
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        if d == 1 {
            let (lo, hi) = f.subdiff_interval_scenario(i, row[0])?;
            if lo <= hi {
                candidates.push(vec![0.0f64.clamp(lo, hi)]);
            }
        } else {
            if let Ok(g) = f.gradient_scenario(i, row) {
                candidates.push(g);
            }
            let oracle = oracle.get_or_insert(Oracle::new(f, n)?);
            candidates.extend(oracle.cloud(i, row, 2 * EPS_BUDGET, 0.0, &mut rng)?.members);
        }
        candidates.push(vec![0.0; d]);
        let found = candidates
            .into_iter()
            .find(|g| gap(i, g).is_ok_and(|v| v <= eps.get(i)));
        let found = match found {
            Some(g) => Some(g),
            None => {
                let mut hit = None;
                'scan: for k in 0..EPS_BUDGET / (2 * d) {
                    let r = 2f64.powf(k as f64 / 4.0 - 10.0);
                    for j in 0..d {
                        for s in [1.0, -1.0] {
                            let mut g = vec![0.0; d];
                            g[j] = s * r;
                            if gap(i, &g)? <= eps.get(i) {
                                hit = Some(g);
                                break 'scan;
                            }
                        }
                    }
                }
                hit
            }
        };
        match found {
            Some(g) => out.row_mut(i).copy_from_slice(&g),
            None => failed.push(i),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Convergence(format!(
            "no epsilon-subgradient found within {EPS_BUDGET} trials on atoms {failed:?}"
        )));
    }
    Ok(RandomFunctional::new(out))
}

/// `partial_eps phi_i(x0)` for rank 1, by bisection on the convex Fenchel gap
/// outward from a subgradient.
pub fn eps_subdiff_interval(
    f: &ConvexFn,
    n: usize,
    i: usize,
    x0: f64,
    eps: f64,
) -> Result<Interval> {
    if f.check(n)? != 1 {
        return Err(Error::Shape("epsilon intervals are rank-1 only".into()));
    }
    let conj = exact_conjugate(f, n)?;
    let fx = f.eval_scenario(i, &[x0])?;
    let gap =
        |g: f64| -> Result<f64> { Ok(ext_sub(ext_add(fx, conj.eval_scenario(i, &[g])?), g * x0)) };
    let (lo, hi) = f.subdiff_interval_scenario(i, x0)?;
    let start = if lo <= hi {
        0.0f64.clamp(lo, hi)
    } else {
        return Ok(Interval::EMPTY);
    };
    if !start.is_finite() {
        return Ok(Interval::new(lo, hi));
    }
    let edge = |dir: f64| -> Result<f64> {
        let mut inside = start;
        let mut step = 1.0;
        let mut outside = None;
        for _ in 0..EPS_BUDGET {
            let probe = inside + dir * step;
            if gap(probe)? <= eps {
                inside = probe;
                step *= 2.0;
            } else {
                outside = Some(probe);
                break;
            }
        }
        let Some(mut out) = outside else {
            return Ok(dir * f64::INFINITY);
        };
        for _ in 0..EPS_BUDGET {
            let mid = 0.5 * (inside + out);
            if mid == inside || mid == out {
                break;
            }
            if gap(mid)? <= eps {
                inside = mid;
            } else {
                out = mid;
            }
        }
        Ok(inside)
    };
    Ok(Interval::new(edge(-1.0)?, edge(1.0)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    /// Some atom fails the continuity hypothesis.
    pub vacuous: bool,
    pub hypothesis_fails: EventSet,
    /// Atoms where a side is empty; excluded from the verdict.
    pub untested: EventSet,
    /// Atoms where `lhs` is contained in `rhs`.
    pub forward: EventSet,
    /// Atoms where `rhs` is contained in `lhs`.
    pub backward: EventSet,
    pub lhs: Vec<Interval>,
    pub rhs: Vec<Interval>,
    pub passed: bool,
}

fn interval_at(f: &ConvexFn, i: usize, x: f64) -> Interval {
    match f.eval_scenario(i, &[x]) {
        Ok(v) if v.is_finite() => match f.subdiff_interval_scenario(i, x) {
            Ok((lo, hi)) => Interval::new(lo, hi),
            Err(_) => Interval::EMPTY,
        },
        _ => Interval::EMPTY,
    }
}

/// Points worth trying as the continuity point of a rank-1 `phi_i`.
fn candidate_points(fs: &[&ConvexFn], i: usize) -> Vec<f64> {
    let mut ks: Vec<f64> = fs.iter().flat_map(|f| f.kinks_scenario(i)).collect();
    ks.push(0.0);
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    let mut out = ks.clone();
    out.extend(ks.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    if let (Some(a), Some(b)) = (ks.first(), ks.last()) {
        out.push(a - 1.0);
        out.push(b + 1.0);
    }
    for f in fs {
        if let Ok(w) = f.witness_row(i) {
            out.push(w[0]);
        }
    }
    out
}

fn continuous_at(f: &ConvexFn, i: usize, u: f64) -> bool {
    let h = 1e-6 * (1.0 + u.abs());
    [u - h, u, u + h]
        .iter()
        .all(|&x| f.eval_scenario(i, &[x]).is_ok_and(|v| v.is_finite()))
}

fn finish(lhs: Vec<Interval>, rhs: Vec<Interval>, hyp: EventSet, tol: f64) -> RuleReport {
    let n = lhs.len();
    let mut untested = EventSet::empty(n);
    let mut forward = EventSet::empty(n);
    let mut backward = EventSet::empty(n);
    for i in 0..n {
        if lhs[i].is_empty() || rhs[i].is_empty() {
            untested.insert(i);
            continue;
        }
        if lhs[i].within(&rhs[i], tol) {
            forward.insert(i);
        }
        if rhs[i].within(&lhs[i], tol) {
            backward.insert(i);
        }
    }
    let passed = (0..n)
        .filter(|&i| !hyp.contains(i) && !untested.contains(i))
        .all(|i| forward.contains(i) && backward.contains(i));
    RuleReport {
        vacuous: !hyp.is_empty(),
        hypothesis_fails: hyp,
        untested,
        forward,
        backward,
        lhs,
        rhs,
        passed,
    }
}

/// `partial(F1 + F2)(u) = partial F1(u) + partial F2(u)` per atom (rank 1),
/// given `F1` continuous at some point of `dom F2`.
pub fn sum_rule_check(
    f1: &ConvexFn,
    f2: &ConvexFn,
    u: &RandomPoint,
    tol: f64,
) -> Result<RuleReport> {
    require_structured(f1)?;
    require_structured(f2)?;
    let n = u.n();
    if f1.check(n)? != 1 || f2.check(n)? != 1 || u.d() != 1 {
        return Err(Error::Shape("the sum rule check is rank-1 only".into()));
    }
    let total = ConvexFn::sum(vec![f1.clone(), f2.clone()]);
    let mut hyp = EventSet::empty(n);
    let mut lhs = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    for i in 0..n {
        let holds = candidate_points(&[f1, f2], i).into_iter().any(|p| {
            continuous_at(f1, i, p) && f2.eval_scenario(i, &[p]).is_ok_and(|v| v.is_finite())
        });
        if !holds {
            hyp.insert(i);
        }
        let x = u.get(i, 0);
        lhs.push(interval_at(&total, i, x));
        rhs.push(interval_at(f1, i, x).add(&interval_at(f2, i, x)));
    }
    Ok(finish(lhs, rhs, hyp, tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudRuleReport {
    pub forward_checked: usize,
    pub forward_failures: usize,
    pub backward_checked: usize,
    pub backward_failures: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rank", rename_all = "snake_case")]
pub enum ChainRuleReport {
    One(RuleReport),
    Many(CloudRuleReport),
}

impl ChainRuleReport {
    pub fn passed(&self) -> bool {
        match self {
            ChainRuleReport::One(r) => r.passed,
            ChainRuleReport::Many(r) => r.passed,
        }
    }
}

/// `partial(F o L)(u) = L* partial F(L u)`: exact intervals for rank 1;
/// mutual-inclusion sampling with `samples` candidates per atom and side for
/// invertible maps of rank >= 2.
pub fn chain_rule_check(
    f: &ConvexFn,
    map: &ModuleHom,
    u: &RandomPoint,
    tol: f64,
    samples: usize,
) -> Result<ChainRuleReport> {
    require_structured(f)?;
    let n = u.n();
    let d = f.check(n)?;
    if map.n() != n || map.d_out() != d || map.d_in() != u.d() {
        return Err(Error::Shape(
            "map does not fit the function and point".into(),
        ));
    }
    let composed = ConvexFn::precompose(map.clone(), f.clone());
    let lu = map.apply(u)?;
    if d == 1 && u.d() == 1 {
        let mut hyp = EventSet::empty(n);
        let mut lhs = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        for i in 0..n {
            let l = map.matrix(i)[(0, 0)];
            let holds = if l == 0.0 {
                continuous_at(f, i, 0.0)
            } else {
                candidate_points(&[f], i)
                    .into_iter()
                    .any(|p| continuous_at(f, i, p))
            };
            if !holds {
                hyp.insert(i);
            }
            lhs.push(interval_at(&composed, i, u.get(i, 0)));
            rhs.push(interval_at(f, i, lu.get(i, 0)).scale(l));
        }
        return Ok(ChainRuleReport::One(finish(lhs, rhs, hyp, tol)));
    }
    let inv_t = map
        .inverse()
        .ok_or_else(|| {
            Error::Unsupported("rank >= 2 chain rule checks need invertible maps".into())
        })?
        .adjoint();
    require_domain(&composed, u)?;
    let outer = Oracle::new(f, n)?;
    let inner = Oracle::new(&composed, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6368_6169);
    let mut report = CloudRuleReport {
        forward_checked: 0,
        forward_failures: 0,
        backward_checked: 0,
        backward_failures: 0,
        passed: true,
    };
    for i in 0..n {
        // g in partial(F o L)(u)  =>  L^-T g in partial F(L u)
        for g in inner.cloud(i, u.row(i), samples, tol, &mut rng)?.members {
            let h = mat_vec(inv_t.matrix(i), &g);
            report.forward_checked += 1;
            if !outer.member(i, lu.row(i), &h, 10.0 * tol)? {
                report.forward_failures += 1;
            }
        }
        // h in partial F(L u)  =>  L^T h in partial(F o L)(u)
        for h in outer.cloud(i, lu.row(i), samples, tol, &mut rng)?.members {
            let g = mat_vec(&map.matrix(i).transpose(), &h);
            report.backward_checked += 1;
            if !inner.member(i, u.row(i), &g, 10.0 * tol)? {
                report.backward_failures += 1;
            }
        }
    }
    report.passed = report.forward_failures == 0 && report.backward_failures == 0;
    Ok(ChainRuleReport::Many(report))
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v))
        .iter()
        .copied()
        .collect()
}

/// A closed convex set in `R^d` for one atom. Polytopes `{y : A y <= b}` must
/// be bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "snake_case")]
pub enum ConvexSet {
    Box {
        #[serde(with = "serial::vec")]
        lower: Vec<f64>,
        #[serde(with = "serial::vec")]
        upper: Vec<f64>,
    },
    Ball {
        #[serde(with = "serial::vec")]
        center: Vec<f64>,
        #[serde(with = "serial::scalar")]
        radius: f64,
    },
    Polytope {
        #[serde(with = "serial::mat")]
        a: Vec<Vec<f64>>,
        #[serde(with = "serial::vec")]
        b: Vec<f64>,
    },
}

const MAX_FACETS: usize = 16;

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn go(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..m {
            cur.push(j);
            go(j + 1, m, k, cur, out);
            cur.pop();
        }
    }
    go(0, m, k, &mut cur, &mut out);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Polytope { a, .. } => a.first().map_or(0, |r| r.len()),
        }
    }

    fn feasible(&self, y: &[f64], tol: f64) -> bool {
        match self {
            ConvexSet::Box { lower, upper } => {
                (0..y.len()).all(|j| lower[j] - tol <= y[j] && y[j] <= upper[j] + tol)
            }
            ConvexSet::Ball { center, radius } => {
                let r2: f64 = y.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                r2.sqrt() <= radius + tol
            }
            ConvexSet::Polytope { a, b } => a
                .iter()
                .zip(b)
                .all(|(row, bk)| dot(row, y) <= bk + tol * (1.0 + bk.abs())),
        }
    }

    fn vertices(a: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
        let d = a[0].len();
        let mut out = Vec::new();
        for s in subsets(a.len(), d) {
            let m = DMatrix::from_fn(d, d, |r, c| a[s[r]][c]);
            let rhs = DVector::from_fn(d, |r, _| b[s[r]]);
            if let Some(v) = m.lu().solve(&rhs) {
                let v: Vec<f64> = v.iter().copied().collect();
                if v.iter().all(|x| x.is_finite())
                    && a.iter()
                        .zip(b)
                        .all(|(row, bk)| dot(row, &v) <= bk + 1e-9 * (1.0 + bk.abs()))
                {
                    out.push(v);
                }
            }
        }
        out
    }

    /// Euclidean projection; `None` when the set is empty.
    pub fn project(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            ConvexSet::Box { lower, upper } => {
                if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return None;
                }
                Some(
                    x.iter()
                        .enumerate()
                        .map(|(j, v)| v.clamp(lower[j], upper[j]))
                        .collect(),
                )
            }
            ConvexSet::Ball { center, radius } => {
                if *radius < 0.0 {
                    return None;
                }
                let diff: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = dot(&diff, &diff).sqrt();
                if r <= *radius {
                    Some(x.to_vec())
                } else {
                    Some(
                        center
                            .iter()
                            .zip(&diff)
                            .map(|(c, v)| c + v * radius / r)
                            .collect(),
                    )
                }
            }
            ConvexSet::Polytope { a, b } => {
                if self.feasible(x, 0.0) {
                    return Some(x.to_vec());
                }
                // active-set enumeration: equality-constrained projections with
                // nonnegative multipliers that land in the set
                let d = x.len();
                let mut best: Option<(f64, Vec<f64>)> = None;
                for k in 1..=d.min(a.len()) {
                    for s in subsets(a.len(), k) {
                        let am = DMatrix::from_fn(k, d, |r, c| a[s[r]][c]);
                        let xv = DVector::from_column_slice(x);
                        let bs = DVector::from_fn(k, |r, _| b[s[r]]);
                        let gram = &am * am.transpose();
                        let Some(mu) = gram.lu().solve(&(&am * &xv - bs)) else {
                            continue;
                        };
                        if mu.iter().any(|m| *m < -1e-12 || !m.is_finite()) {
                            continue;
                        }
                        let y = &xv - am.transpose() * mu;
                        let y: Vec<f64> = y.iter().copied().collect();
                        if !self.feasible(&y, 1e-10) {
                            continue;
                        }
                        let dist: f64 = y.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
                        if best.as_ref().is_none_or(|(bd, _)| dist < *bd) {
                            best = Some((dist, y));
                        }
                    }
                }
                best.map(|(_, y)| y)
            }
        }
    }

    /// `sup {g.y : y in M}`.
    pub fn support(&self, g: &[f64]) -> Result<f64> {
        Ok(match self {
            ConvexSet::Box { lower, upper } => (0..g.len())
                .map(|j| (g[j] * lower[j]).max(g[j] * upper[j]))
                .sum(),
            ConvexSet::Ball { center, radius } => dot(g, center) + radius * dot(g, g).sqrt(),
            ConvexSet::Polytope { a, b } => {
                let vs = Self::vertices(a, b);
                if vs.is_empty() {
                    return Err(Error::Invalid(
                        "polytope has no vertices (empty or unbounded)".into(),
                    ));
                }
                vs.iter()
                    .map(|v| dot(g, v))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        })
    }

    /// Unit outward normal of a face containing `x`, if `x` is on the boundary.
    fn boundary_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        let tol = 1e-12;
        let d = x.len();
        match self {
            ConvexSet::Box { lower, upper } => (0..d).find_map(|j| {
                let mut e = vec![0.0; d];
                if x[j] >= upper[j] - tol * (1.0 + upper[j].abs()) {
                    e[j] = 1.0;
                    Some(e)
                } else if x[j] <= lower[j] + tol * (1.0 + lower[j].abs()) {
                    e[j] = -1.0;
                    Some(e)
                } else {
                    None
                }
            }),
            ConvexSet::Ball { center, radius } => {
                let diff: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = dot(&diff, &diff).sqrt();
                (r >= radius - tol * (1.0 + radius) && r > 0.0)
                    .then(|| diff.iter().map(|v| v / r).collect())
            }
            ConvexSet::Polytope { a, b } => a.iter().zip(b).find_map(|(row, bk)| {
                let nr = dot(row, row).sqrt();
                (nr > 0.0 && dot(row, x) >= bk - tol * (1.0 + bk.abs()))
                    .then(|| row.iter().map(|v| v / nr).collect())
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ConvexSet::Box { lower, upper } if lower.len() != upper.len() => {
                Err(Error::Shape("box bounds".into()))
            }
            ConvexSet::Polytope { a, b } => {
                if a.is_empty() || a.len() != b.len() || a.iter().any(|r| r.len() != a[0].len()) {
                    return Err(Error::Shape("polytope rows".into()));
                }
                if a.len() > MAX_FACETS {
                    return Err(Error::Unsupported(format!(
                        "polytopes with more than {MAX_FACETS} facets"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationResult {
    pub functional: RandomFunctional,
    /// `d(x, M) > 0`: `g(x) > sup_M g` with margin `d(x, M)`.
    pub strict_stratum: EventSet,
    /// `d(x, M) = 0`: `g(x) = sup_M g`.
    pub touch_stratum: EventSet,
    /// Touch atoms with `x` interior, where `g = 0`.
    pub degenerate: EventSet,
    pub margin: L0Bar,
    /// Euclidean distance per atom.
    pub distance: L0Bar,
}

/// Separates `x` from `M = (M_i)` atom by atom via Euclidean projection, and
/// verifies both strata conditions within `1e-9`.
pub fn separate_point_from_set(x: &RandomPoint, sets: &[ConvexSet]) -> Result<SeparationResult> {
    let (n, d) = (x.n(), x.d());
    if sets.len() != n || sets.iter().any(|s| s.dim() != d) {
        return Err(Error::Shape("one set of the point's rank per atom".into()));
    }
    let mut g = RandomPoint::zeros(n, d);
    let mut strict = EventSet::empty(n);
    let mut degenerate = EventSet::empty(n);
    let mut margin = L0Bar::zeros(n);
    let mut distance = L0Bar::zeros(n);
    let mut empty = Vec::new();
    for (i, m) in sets.iter().enumerate() {
        m.validate()?;
        let xi = x.row(i);
        let Some(p) = m.project(xi) else {
            empty.push(i);
            continue;
        };
        let diff: Vec<f64> = xi.iter().zip(&p).map(|(a, b)| a - b).collect();
        let dist = dot(&diff, &diff).sqrt();
        distance.set(i, dist);
        let normal = if dist > 0.0 {
            strict.insert(i);
            diff.iter().map(|v| v / dist).collect()
        } else {
            match m.boundary_normal(xi) {
                Some(v) => v,
                None => {
                    degenerate.insert(i);
                    vec![0.0; d]
                }
            }
        };
        let gap = dot(&normal, xi) - m.support(&normal)?;
        let scale = 1.0 + dot(xi, xi).sqrt();
        let ok = if dist > 0.0 {
            gap > 0.0 && (gap - dist).abs() <= 1e-9 * scale
        } else {
            gap.abs() <= 1e-9 * scale
        };
        if !ok {
            return Err(Error::Certificate(format!(
                "separation at atom {i}: g(x) - sup_M g = {gap}, distance {dist}"
            )));
        }
        margin.set(i, gap.max(0.0));
        g.row_mut(i).copy_from_slice(&normal);
    }
    if !empty.is_empty() {
        return Err(Error::outside(empty, "empty convex set"));
    }
    let touch = strict.complement();
    Ok(SeparationResult {
        functional: RandomFunctional::new(g),
        strict_stratum: strict,
        touch_stratum: touch,
        degenerate,
        margin,
        distance,
    })
}

#[cfg(test)]
mod tests;
