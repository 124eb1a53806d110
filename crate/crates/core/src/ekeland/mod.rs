//! Ekeland's variational principle per scenario, small-gradient points, and
//! the passage from approximate to exact subgradients at nearby points.
//!
//! Everything here is rank 1. On each atom one Ekeland step is exact: the
//! minimizer of `phi` over the sublevel set `S(x) = {y : phi(y) + c|y - x| <= phi(x)}`
//! nearest to `x` is already a strict minimizer of `phi + c|. - x_lambda|`, so
//! the iteration stops at the second step.

use crate::convexfn::{ConvexFn, Leaf};
use crate::differential::gateaux_derivative;
use crate::error::{Error, Result};
use crate::measure_l0::{ext_add, ext_sub, EventSet, L0Bar};
use crate::rnmodule::{RandomFunctional, RandomPoint};
use crate::subdiff::eps_subgradient_construct;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MAX_STEPS: usize = 10_000;
pub const MIN_DECREASE: f64 = 1e-12;
/// Sampled points per atom for the strict minimality condition.
pub const CONDITION3_SAMPLES: usize = 1000;
pub const MARGIN_TOL: f64 = 1e-10;
pub const BOUND_TOL: f64 = 1e-8;
pub const FIRST_ORDER_RESOLUTION: f64 = 1e-9;
const SAMPLE_SEED: u64 = 0x656b_656c;
/// Doublings allowed when bracketing an unconstrained minimum.
const BRACKET_DOUBLINGS: usize = 80;

fn require_rank_one(f: &ConvexFn, x: &RandomPoint) -> Result<usize> {
    if !f.is_structured() {
        return Err(Error::Unsupported(
            "Ekeland points need a structured tree".into(),
        ));
    }
    let d = f.check(x.n())?;
    if d != 1 || x.d() != 1 {
        return Err(Error::Unsupported(format!(
            "Ekeland points are rank 1 only, got rank {d}"
        )));
    }
    Ok(x.n())
}

fn require_domain(f: &ConvexFn, x: &RandomPoint) -> Result<L0Bar> {
    let fx = f.eval(x)?;
    let bad: Vec<usize> = (0..x.n()).filter(|&i| !fx.get(i).is_finite()).collect();
    if !bad.is_empty() {
        return Err(Error::outside(bad, "base point outside the domain"));
    }
    Ok(fx)
}

/// Rank-1 restriction of `f` to atom `i`.
struct Scenario<'a> {
    f: &'a ConvexFn,
    i: usize,
}

impl Scenario<'_> {
    fn value(&self, x: f64) -> Result<f64> {
        self.f.eval_scenario(self.i, &[x])
    }

    /// `phi'(x; dir)` at a point of the domain.
    fn slope(&self, x: f64, dir: f64) -> Result<f64> {
        self.f.directional_scenario(self.i, &[x], &[dir])
    }

    /// From `x0`, along `dir` where `phi` decreases, the nearest point where the
    /// descent stops: the slope turns nonnegative, the domain ends, or (with
    /// `cap = (c, level)`) `phi(y) + c|y - x0|` would exceed `level`. `None`
    /// if no stop is found, i.e. `phi` is unbounded below along `dir`.
    fn descend(&self, x0: f64, dir: f64, cap: Option<(f64, f64)>) -> Result<Option<f64>> {
        let admissible = |y: f64| -> Result<Option<f64>> {
            let v = self.value(y)?;
            if !v.is_finite() {
                return Ok(None);
            }
            match cap {
                Some((c, level)) if ext_add(v, c * (y - x0).abs()) > level => Ok(None),
                _ => Ok(Some(v)),
            }
        };
        // still descending and admissible at y
        let open =
            |y: f64| -> Result<bool> { Ok(admissible(y)?.is_some() && self.slope(y, dir)? < 0.0) };
        // bracket, then bisect in y itself so the ends become adjacent floats
        let mut y_lo = x0;
        let mut step = 1.0f64.max(x0.abs());
        let mut y_hi = None;
        for _ in 0..BRACKET_DOUBLINGS {
            let y = x0 + dir * step;
            if !open(y)? {
                y_hi = Some(y);
                break;
            }
            y_lo = y;
            step *= 2.0;
        }
        let Some(mut y_hi) = y_hi else {
            return Ok(None);
        };
        loop {
            let mid = 0.5 * (y_lo + y_hi);
            if mid == y_lo || mid == y_hi {
                break;
            }
            if open(mid)? {
                y_lo = mid;
            } else {
                y_hi = mid;
            }
        }
        let v_lo = admissible(y_lo)?.expect("the start and every open point are admissible");
        Ok(Some(match admissible(y_hi)? {
            Some(v_hi) if v_hi <= v_lo => y_hi,
            _ => y_lo,
        }))
    }

    /// A minimizer of `phi` found by descent from `x0`, or `None` if `phi` is
    /// unbounded below.
    fn argmin(&self, x0: f64, cap: Option<(f64, f64)>) -> Result<Option<f64>> {
        for dir in [1.0, -1.0] {
            if self.slope(x0, dir)? < 0.0 {
                return self.descend(x0, dir, cap);
            }
        }
        Ok(Some(x0))
    }

    fn infimum(&self, x0: f64) -> Result<Option<f64>> {
        self.argmin(x0, None)?.map(|y| self.value(y)).transpose()
    }
}

/// `phi_i^*(g) = -inf (phi_i - g x)`, from a domain point `x0`.
fn conjugate_at(f: &ConvexFn, n: usize, i: usize, x0: f64, g: f64) -> Result<f64> {
    let tilted = tilt(f, n, &vec![g; n], &L0Bar::zeros(n));
    let s = Scenario { f: &tilted, i };
    Ok(match s.infimum(x0)? {
        Some(v) => -v,
        None => f64::INFINITY,
    })
}

/// `f - g x + c`, atomwise.
fn tilt(f: &ConvexFn, n: usize, g: &[f64], c: &L0Bar) -> ConvexFn {
    let affine = ConvexFn::leaves((0..n).map(|i| Leaf::affine1(-g[i], c.get(i))).collect());
    ConvexFn::sum(vec![f.clone(), affine])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EkelandCertificate {
    pub x_lambda: RandomPoint,
    /// `f(x0) - (eps / lambda)|x_lambda - x0| - f(x_lambda)`.
    pub condition1_slack: L0Bar,
    /// `lambda - |x_lambda - x0|`.
    pub condition2_slack: L0Bar,
    /// Points sampled per atom for strict minimality.
    pub condition3_samples: usize,
    /// Least `(eps / lambda)|x - x_lambda| + f(x) - f(x_lambda)` over sampled `x != x_lambda`.
    pub condition3_min_margin: L0Bar,
    /// Sampled margins that are not positive, over all atoms.
    pub condition3_nonpositive: usize,
    /// Atoms where `0` is in the subdifferential of `f + (eps / lambda)|. - x_lambda|` at `x_lambda`.
    pub first_order: EventSet,
    /// Atoms where both one-sided slopes of that function are strictly positive.
    pub first_order_strict: EventSet,
    /// Atoms where the first-order condition holds at `x_lambda` or at resolution
    /// `FIRST_ORDER_RESOLUTION * (1 + |x_lambda|)` beside it.
    pub first_order_near: EventSet,
    pub steps: usize,
    /// `f(x_k)` after each step.
    pub trace: Vec<L0Bar>,
    pub passed: bool,
}

/// `x_lambda` with `f(x_lambda) <= f(x0) - (eps/lambda)|x_lambda - x0|`,
/// `|x_lambda - x0| <= lambda`, and `x_lambda` the strict minimizer of
/// `f + (eps/lambda)|. - x_lambda|`, given `f(x0) <= inf f + eps`.
pub fn ekeland_point(
    f: &ConvexFn,
    x0: &RandomPoint,
    eps: &L0Bar,
    lambda: &L0Bar,
) -> Result<EkelandCertificate> {
    let n = require_rank_one(f, x0)?;
    eps.require_strictly_positive("epsilon")?;
    lambda.require_strictly_positive("lambda")?;
    if eps.len() != n || lambda.len() != n {
        return Err(Error::Shape(
            "epsilon and lambda need one entry per atom".into(),
        ));
    }
    let fx0 = require_domain(f, x0)?;

    let mut unbounded = Vec::new();
    let mut far = Vec::new();
    for i in 0..n {
        let s = Scenario { f, i };
        match s.infimum(x0.get(i, 0))? {
            None => unbounded.push(i),
            Some(inf) if fx0.get(i) > inf + eps.get(i) + MIN_DECREASE * (1.0 + inf.abs()) => {
                far.push(i)
            }
            Some(_) => {}
        }
    }
    if !unbounded.is_empty() {
        return Err(Error::precondition(unbounded, "f is not bounded below"));
    }
    if !far.is_empty() {
        return Err(Error::precondition(far, "f(x0) exceeds inf f + epsilon"));
    }

    let c = |i: usize| eps.get(i) / lambda.get(i);
    let mut x: Vec<f64> = (0..n).map(|i| x0.get(i, 0)).collect();
    let mut fx: Vec<f64> = fx0.values().to_vec();
    let mut trace = vec![fx0.clone()];
    let mut active: Vec<bool> = vec![true; n];
    let mut steps = 0;
    while active.iter().any(|a| *a) {
        if steps == MAX_STEPS {
            let stuck: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
            return Err(Error::Convergence(format!(
                "Ekeland iteration still decreasing after {MAX_STEPS} steps on atoms {stuck:?}; last values {:?}",
                trace.last().map(|v| v.values().to_vec())
            )));
        }
        steps += 1;
        let live: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
        for i in live {
            let s = Scenario { f, i };
            let next = s
                .argmin(x[i], Some((c(i), fx[i])))?
                .expect("capped descent always stops");
            let value = s.value(next)?;
            active[i] = fx[i] - value > MIN_DECREASE;
            x[i] = next;
            fx[i] = value;
        }
        trace.push(L0Bar::new(fx.clone()));
    }

    let x_lambda = RandomPoint::from_fn(n, 1, |i, _| x[i]);
    let condition1_slack = L0Bar::from_fn(n, |i| {
        fx0.get(i) - c(i) * (x[i] - x0.get(i, 0)).abs() - fx[i]
    });
    let condition2_slack = L0Bar::from_fn(n, |i| lambda.get(i) - (x[i] - x0.get(i, 0)).abs());

    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    let mut min_margin = L0Bar::constant(n, f64::INFINITY);
    let mut nonpositive = 0;
    let mut first_order = EventSet::empty(n);
    let mut first_order_strict = EventSet::empty(n);
    let mut first_order_near = EventSet::empty(n);
    for i in 0..n {
        let s = Scenario { f, i };
        let (xl, l) = (x[i], lambda.get(i));
        let mut worst = f64::INFINITY;
        for y in condition3_points(xl, l, &mut rng) {
            if y == xl {
                continue;
            }
            let margin = ext_sub(ext_add(c(i) * (y - xl).abs(), s.value(y)?), fx[i]);
            worst = worst.min(margin);
            if margin <= 0.0 {
                nonpositive += 1;
            }
        }
        min_margin.set(i, worst);
        let (up, down) = (s.slope(xl, 1.0)? + c(i), s.slope(xl, -1.0)? + c(i));
        if up >= 0.0 && down >= 0.0 {
            first_order.insert(i);
            first_order_near.insert(i);
        } else {
            // the minimizer of f + c|. - x_lambda| may sit a roundoff-sized step
            // away, past a kink that the sup's active set resolves at 1e-12
            let delta = FIRST_ORDER_RESOLUTION * (1.0 + xl.abs());
            let dir = if up < 0.0 { 1.0 } else { -1.0 };
            let y = xl + dir * delta;
            if s.value(y)?.is_finite() && s.slope(y, dir)? + c(i) >= 0.0 {
                first_order_near.insert(i);
            }
        }
        if up > 0.0 && down > 0.0 {
            first_order_strict.insert(i);
        }
    }
    let slack_tol = |v: f64| MIN_DECREASE * (1.0 + v.abs());
    let passed = (0..n).all(|i| {
        condition1_slack.get(i) >= -slack_tol(fx0.get(i))
            && condition2_slack.get(i) >= -slack_tol(lambda.get(i))
            && min_margin.get(i) >= -MARGIN_TOL
    }) && first_order_near.is_full();
    Ok(EkelandCertificate {
        x_lambda,
        condition1_slack,
        condition2_slack,
        condition3_samples: CONDITION3_SAMPLES,
        condition3_min_margin: min_margin,
        condition3_nonpositive: nonpositive,
        first_order,
        first_order_strict,
        first_order_near,
        steps,
        trace,
        passed,
    })
}

/// A grid on `x +- 4 lambda`, geometric perturbations `x +- lambda 2^(-k/2)`,
/// and uniform draws on `x +- 8 lambda`: `CONDITION3_SAMPLES` points.
fn condition3_points<R: Rng>(x: f64, lambda: f64, rng: &mut R) -> Vec<f64> {
    const GRID: usize = 600;
    const RINGS: usize = 50;
    let mut out = Vec::with_capacity(CONDITION3_SAMPLES);
    out.extend((0..GRID).map(|k| x - 4.0 * lambda + 8.0 * lambda * (k as f64 + 0.5) / GRID as f64));
    for k in 0..RINGS {
        let r = lambda * 2f64.powf(-(k as f64) / 2.0);
        out.extend([x - r, x + r]);
    }
    while out.len() < CONDITION3_SAMPLES {
        out.push(x + lambda * rng.gen_range(-8.0..8.0));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallGradient {
    pub certificate: EkelandCertificate,
    pub gradient: RandomFunctional,
    pub gradient_norm: L0Bar,
    /// `eps / lambda`.
    pub bound: L0Bar,
    pub passed: bool,
}

/// An Ekeland point of a Gateaux-differentiable `f` with
/// `|f'(x_lambda)| <= eps / lambda`.
pub fn small_gradient_point(
    f: &ConvexFn,
    x0: &RandomPoint,
    eps: &L0Bar,
    lambda: &L0Bar,
) -> Result<SmallGradient> {
    let certificate = ekeland_point(f, x0, eps, lambda)?;
    let g = gateaux_derivative(f, &certificate.x_lambda)?;
    let Some(gradient) = g.derivative else {
        return Err(Error::precondition(
            g.nonsmooth.indices().collect(),
            "f is not Gateaux differentiable at the Ekeland point",
        ));
    };
    let gradient_norm = gradient.coeffs().euclidean_norm();
    let bound = eps.zip_with(lambda, |e, l| e / l)?;
    let passed = certificate.passed
        && gradient_norm
            .iter()
            .zip(bound.iter())
            .all(|(g, b)| g <= b + BOUND_TOL);
    Ok(SmallGradient {
        certificate,
        gradient,
        gradient_norm,
        bound,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSubgradient {
    pub u_lambda: RandomPoint,
    pub u_star_lambda: RandomFunctional,
    /// `|u - u_lambda|`, at most `lambda`.
    pub distance: L0Bar,
    /// `|u* - u*_lambda|`, at most `eps / lambda`.
    pub dual_distance: L0Bar,
    /// `f(u_lambda) - u*_lambda u_lambda + f*(u*_lambda)`, zero for a subgradient.
    pub fenchel_gap: L0Bar,
    /// Fenchel gap of the input pair, at most `eps`.
    pub initial_gap: L0Bar,
    /// Ekeland certificate of `G = f - u* + f*(u*)` from `u`.
    pub certificate: EkelandCertificate,
    pub passed: bool,
}

/// From `u* in partial_eps f(u)`, a point `u_lambda` within `lambda` of `u`
/// and `u*_lambda in partial f(u_lambda)` within `eps / lambda` of `u*`.
pub fn approx_to_exact_subgradient(
    f: &ConvexFn,
    u: &RandomPoint,
    u_star: &RandomFunctional,
    eps: &L0Bar,
    lambda: &L0Bar,
) -> Result<ExactSubgradient> {
    let n = require_rank_one(f, u)?;
    eps.require_strictly_positive("epsilon")?;
    lambda.require_strictly_positive("lambda")?;
    let fu = require_domain(f, u)?;
    let g: Vec<f64> = (0..n).map(|i| u_star.coeffs().get(i, 0)).collect();
    let conj = L0Bar::new(
        (0..n)
            .map(|i| conjugate_at(f, n, i, u.get(i, 0), g[i]))
            .collect::<Result<_>>()?,
    );
    let initial_gap = L0Bar::from_fn(n, |i| {
        ext_sub(ext_add(fu.get(i), conj.get(i)), g[i] * u.get(i, 0))
    });
    let outside: Vec<usize> = (0..n)
        .filter(|&i| !(initial_gap.get(i) <= eps.get(i) + MIN_DECREASE * (1.0 + fu.get(i).abs())))
        .collect();
    if !outside.is_empty() {
        return Err(Error::precondition(
            outside,
            "u* is not an epsilon-subgradient at u",
        ));
    }

    let big_g = tilt(f, n, &g, &conj);
    let certificate = ekeland_point(&big_g, u, eps, lambda)?;
    let u_lambda = certificate.x_lambda.clone();

    let mut star = RandomPoint::zeros(n, 1);
    let mut fenchel_gap = L0Bar::zeros(n);
    let mut broken = Vec::new();
    for i in 0..n {
        let x = u_lambda.get(i, 0);
        let (lo, hi) = f.subdiff_interval_scenario(i, x)?;
        if lo > hi {
            broken.push(i);
            continue;
        }
        let s = g[i].clamp(lo, hi);
        if (s - g[i]).abs() > eps.get(i) / lambda.get(i) + BOUND_TOL {
            broken.push(i);
        }
        star.set(i, 0, s);
        let fx = f.eval_scenario(i, &[x])?;
        fenchel_gap.set(i, ext_sub(ext_add(fx, conjugate_at(f, n, i, x, s)?), s * x));
    }
    if !broken.is_empty() {
        return Err(Error::Certificate(format!(
            "no subgradient within eps/lambda of u* at the Ekeland point on atoms {broken:?}"
        )));
    }
    let distance = L0Bar::from_fn(n, |i| (u_lambda.get(i, 0) - u.get(i, 0)).abs());
    let dual_distance = L0Bar::from_fn(n, |i| (star.get(i, 0) - g[i]).abs());
    let passed = certificate.passed
        && (0..n).all(|i| {
            distance.get(i) <= lambda.get(i) + BOUND_TOL
                && dual_distance.get(i) <= eps.get(i) / lambda.get(i) + BOUND_TOL
                && fenchel_gap.get(i) <= BOUND_TOL
        });
    Ok(ExactSubgradient {
        u_lambda,
        u_star_lambda: RandomFunctional::new(star),
        distance,
        dual_distance,
        fenchel_gap,
        initial_gap,
        certificate,
        passed,
    })
}

/// The balanced case `lambda = sqrt(eps)`: both distances at most `sqrt(eps)`.
pub fn approx_to_exact_subgradient_sqrt(
    f: &ConvexFn,
    u: &RandomPoint,
    u_star: &RandomFunctional,
    eps: &L0Bar,
) -> Result<ExactSubgradient> {
    approx_to_exact_subgradient(f, u, u_star, eps, &eps.map(f64::sqrt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseProbeRow {
    pub eps: L0Bar,
    pub point: RandomPoint,
    pub subgradient: RandomFunctional,
    pub distance: L0Bar,
    pub within_sqrt_eps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseProbeReport {
    pub rows: Vec<DenseProbeRow>,
    pub passed: bool,
}

/// Points with nonempty subdifferential within `sqrt(eps_k)` of `u`, for a
/// decreasing schedule `eps_k`.
pub fn dense_subdiff_probe(
    f: &ConvexFn,
    u: &RandomPoint,
    schedule: &[L0Bar],
) -> Result<DenseProbeReport> {
    if schedule
        .windows(2)
        .any(|w| w[1].iter().zip(w[0].iter()).any(|(b, a)| b > a))
    {
        return Err(Error::Invalid("epsilon schedule must decrease".into()));
    }
    let mut rows = Vec::with_capacity(schedule.len());
    for eps in schedule {
        let u_star = eps_subgradient_construct(f, u, eps)?;
        let r = approx_to_exact_subgradient_sqrt(f, u, &u_star, eps)?;
        let within_sqrt_eps = r.passed
            && r.distance
                .iter()
                .zip(eps.iter())
                .all(|(d, e)| d <= e.sqrt() + BOUND_TOL);
        rows.push(DenseProbeRow {
            eps: eps.clone(),
            point: r.u_lambda,
            subgradient: r.u_star_lambda,
            distance: r.distance,
            within_sqrt_eps,
        });
    }
    let passed = rows.iter().all(|r| r.within_sqrt_eps);
    Ok(DenseProbeReport { rows, passed })
}
