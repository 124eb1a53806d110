//! Sampled checks of locality, L0-convexity, lower semicontinuity and
//! local Lipschitz continuity.

use super::ConvexFn;
use crate::error::{Error, Result};
use crate::measure_l0::{ext_add, ext_mul, EventSet, L0Bar};
use crate::rnmodule::{RandomPoint, SequenceDescriptor};
use rand::Rng;
use serde::{Deserialize, Serialize};

fn random_point<R: Rng>(n: usize, d: usize, radius: f64, rng: &mut R) -> RandomPoint {
    RandomPoint::from_fn(n, d, |_, _| rng.gen_range(-radius..=radius))
}

fn random_event<R: Rng>(n: usize, rng: &mut R) -> EventSet {
    EventSet::from_mask((0..n).map(|_| rng.gen_bool(0.5)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityWitness {
    pub x: RandomPoint,
    pub event: EventSet,
    pub restricted_value: L0Bar,
    pub value_of_restriction: L0Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub passed: bool,
    pub samples: usize,
    pub violations: usize,
    pub witness: Option<LocalityWitness>,
}

/// Checks `I_A f(x) = I_A f(I_A x)` on random points and events; exact for
/// structured trees, within `1e-12` relative when blackboxes are present.
pub fn locality_check<R: Rng>(
    f: &ConvexFn,
    n: usize,
    samples: usize,
    radius: f64,
    rng: &mut R,
) -> Result<LocalityReport> {
    let d = f.check(n)?;
    let exact = f.is_structured();
    let mut violations = 0;
    let mut witness = None;
    for _ in 0..samples {
        let x = random_point(n, d, radius, rng);
        let a = random_event(n, rng);
        let ind = a.indicator();
        let lhs = ind.ext_mul(&f.eval(&x)?)?;
        let rhs = ind.ext_mul(&f.eval(&x.restrict(&a))?)?;
        let ok = (0..n).all(|i| {
            let (p, q) = (lhs.get(i), rhs.get(i));
            p == q || (!exact && (p - q).abs() <= 1e-12 * (1.0 + p.abs()))
        });
        if !ok {
            violations += 1;
            witness.get_or_insert(LocalityWitness {
                x,
                event: a,
                restricted_value: lhs,
                value_of_restriction: rhs,
            });
        }
    }
    Ok(LocalityReport {
        passed: violations == 0,
        samples,
        violations,
        witness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityWitness {
    pub x: RandomPoint,
    pub y: RandomPoint,
    pub xi: L0Bar,
    pub value_at_combination: L0Bar,
    pub combination_of_values: L0Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub passed: bool,
    pub samples: usize,
    pub violations: usize,
    pub witness: Option<ConvexityWitness>,
}

/// Checks `f(xi x + (1 - xi) y) <= xi f(x) + (1 - xi) f(y)` for random
/// L0-valued `xi` in `[0, 1]`, entrywise under the extended conventions.
pub fn l0_convexity_check<R: Rng>(
    f: &ConvexFn,
    n: usize,
    samples: usize,
    radius: f64,
    rng: &mut R,
) -> Result<ConvexityReport> {
    let d = f.check(n)?;
    let mut violations = 0;
    let mut witness = None;
    for _ in 0..samples {
        let x = random_point(n, d, radius, rng);
        let y = random_point(n, d, radius, rng);
        let xi = L0Bar::from_fn(n, |_| match rng.gen_range(0..8) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..1.0),
        });
        let one_minus = xi.map(|v| 1.0 - v);
        let z = x.scale(&xi)?.add(&y.scale(&one_minus)?)?;
        let lhs = f.eval(&z)?;
        let (fx, fy) = (f.eval(&x)?, f.eval(&y)?);
        let rhs = L0Bar::from_fn(n, |i| {
            ext_add(
                ext_mul(xi.get(i), fx.get(i)),
                ext_mul(one_minus.get(i), fy.get(i)),
            )
        });
        let ok = (0..n).all(|i| {
            let (l, r) = (lhs.get(i), rhs.get(i));
            if r == f64::INFINITY || l == f64::NEG_INFINITY {
                true
            } else if r == f64::NEG_INFINITY || l == f64::INFINITY {
                false
            } else {
                l <= r + 1e-9 * (1.0 + r.abs())
            }
        });
        if !ok {
            violations += 1;
            witness.get_or_insert(ConvexityWitness {
                x,
                y,
                xi,
                value_at_combination: lhs,
                combination_of_values: rhs,
            });
        }
    }
    Ok(ConvexityReport {
        passed: violations == 0,
        samples,
        violations,
        witness,
    })
}

/// Geometric approach sequences `x + r_k v` toward `x`, `r_k = 2^-k`, along
/// `+-e_j` and along atom-alternating directions with per-atom rates
/// `2^-k` and `4^-k`.
pub fn approach_sequences(x: &RandomPoint, terms: usize) -> Vec<Vec<RandomPoint>> {
    let (n, d) = (x.n(), x.d());
    let mut dirs: Vec<(RandomPoint, bool)> = Vec::new();
    for j in 0..d {
        for s in [1.0, -1.0] {
            dirs.push((
                RandomPoint::from_fn(n, d, |_, k| if k == j { s } else { 0.0 }),
                false,
            ));
        }
    }
    dirs.push((
        RandomPoint::from_fn(n, d, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }),
        true,
    ));
    dirs.push((
        RandomPoint::from_fn(n, d, |i, _| if i % 2 == 0 { -1.0 } else { 1.0 }),
        true,
    ));
    dirs.into_iter()
        .map(|(v, stratified)| {
            (1..=terms)
                .map(|k| {
                    let r = L0Bar::from_fn(n, |i| {
                        if stratified && i % 3 == 1 {
                            4f64.powi(-(k as i32))
                        } else {
                            2f64.powi(-(k as i32))
                        }
                    });
                    x.add(&v.scale(&r).expect("finite")).expect("same shape")
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LscWitness {
    pub sequence: usize,
    pub atom: usize,
    pub value_at_limit: f64,
    pub tail_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LscVerdict {
    pub passed: bool,
    pub witness: Option<LscWitness>,
}

impl LscVerdict {
    fn new() -> Self {
        LscVerdict {
            passed: true,
            witness: None,
        }
    }

    fn fail(&mut self, w: LscWitness) {
        self.passed = false;
        self.witness.get_or_insert(w);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LscReport {
    /// `liminf f(x_k) >= f(x)` along sequences converging to `x`.
    pub liminf: LscVerdict,
    /// Limits of sequences in `{f <= r}` stay in `{f <= r}`.
    pub sublevel: LscVerdict,
    /// Limits of `(x_k, t_k)` in the epigraph stay in the epigraph.
    pub epigraph: LscVerdict,
    pub sequences: usize,
}

impl LscReport {
    pub fn all_pass(&self) -> bool {
        self.liminf.passed && self.sublevel.passed && self.epigraph.passed
    }
}

const TAIL: usize = 3;

/// Probes the three equivalent forms of lower semicontinuity at `x` along
/// sequences converging to `x`; the tail of each prefix stands in for the limit.
pub fn lsc_probe(
    f: &ConvexFn,
    x: &RandomPoint,
    sequences: &[Vec<RandomPoint>],
) -> Result<LscReport> {
    let n = x.n();
    let fx = f.eval(x)?;
    let mut report = LscReport {
        liminf: LscVerdict::new(),
        sublevel: LscVerdict::new(),
        epigraph: LscVerdict::new(),
        sequences: sequences.len(),
    };
    for (s, seq) in sequences.iter().enumerate() {
        if seq.is_empty() {
            continue;
        }
        let start = seq.len().saturating_sub(TAIL);
        let vals: Vec<L0Bar> = seq[start..]
            .iter()
            .map(|p| f.eval(p))
            .collect::<Result<_>>()?;
        let len = seq.len();
        for i in 0..n {
            let limit = fx.get(i);
            let tol = 1e-8 * (1.0 + if limit.is_finite() { limit.abs() } else { 0.0 });
            let tail: Vec<f64> = vals.iter().map(|v| v.get(i)).collect();
            let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let witness = |t: f64| LscWitness {
                sequence: s,
                atom: i,
                value_at_limit: limit,
                tail_value: t,
            };
            if !(limit <= lo + tol) {
                report.liminf.fail(witness(lo));
            }
            // every tail term lies in the sublevel set {f <= hi}
            if hi.is_finite() && !(limit <= hi + tol) {
                report.sublevel.fail(witness(hi));
            }
            // (x_k, f(x_k) + 2^-k) lies in the epigraph and converges to (x, t*)
            let t_star = tail[tail.len() - 1] + 2f64.powi(-(len as i32));
            if t_star.is_finite() && !(limit <= t_star + tol) {
                report.epigraph.fail(witness(t_star));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Radius with oscillation at most 1 on the `2 delta`-ball.
    pub delta: L0Bar,
    /// Lipschitz bound `1 / delta` on the `delta`-ball.
    pub xi: L0Bar,
    pub pairs: usize,
    pub violations: usize,
    /// Largest sampled `|f(y) - f(z)| / |y - z|` per atom.
    pub max_ratio: L0Bar,
}

fn corners(x0: &[f64], r: f64) -> Vec<Vec<f64>> {
    let d = x0.len();
    (0..1usize << d)
        .map(|mask| {
            x0.iter()
                .enumerate()
                .map(|(j, v)| if mask >> j & 1 == 1 { v + r } else { v - r })
                .collect()
        })
        .collect()
}

/// Upper bound on the oscillation of a convex `phi_i` over the Euclidean ball of
/// radius `r`: `2 (max over the enclosing cube's corners - phi_i(x0))`.
fn oscillation_bound(f: &ConvexFn, i: usize, x0: &[f64], r: f64) -> f64 {
    let f0 = f.eval_row(i, x0);
    let top = corners(x0, r)
        .iter()
        .map(|c| f.eval_row(i, c))
        .fold(f64::NEG_INFINITY, f64::max);
    2.0 * (top - f0)
}

/// Per-atom radius search for the local Lipschitz bound around `x0`, verified
/// on sampled pairs in the `delta`-ball (Euclidean norm).
pub fn lipschitz_estimate<R: Rng>(
    f: &ConvexFn,
    x0: &RandomPoint,
    pairs: usize,
    rng: &mut R,
) -> Result<LipschitzEstimate> {
    let (n, d) = (x0.n(), x0.d());
    if f.check(n)? != d {
        return Err(Error::Shape("point rank".into()));
    }
    if !f.is_local() {
        return Err(Error::Unsupported(
            "Lipschitz estimate of a non-local function".into(),
        ));
    }
    let fx = f.eval(x0)?;
    let mut delta = L0Bar::zeros(n);
    let mut bad = Vec::new();
    for i in 0..n {
        let row = x0.row(i);
        let feasible = |dl: f64| {
            let b = oscillation_bound(f, i, row, 2.0 * dl);
            b.is_finite() && b <= 1.0
        };
        if !fx.get(i).is_finite() || !feasible(2f64.powi(-40)) {
            bad.push(i);
            continue;
        }
        let dl = if feasible(1.0) {
            1.0
        } else {
            let (mut lo, mut hi) = (2f64.powi(-40), 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if feasible(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        delta.set(i, dl);
    }
    if !bad.is_empty() {
        return Err(Error::outside(
            bad,
            "base point is not interior to the domain",
        ));
    }
    let xi = delta.map(|v| 1.0 / v);
    let mut violations = 0;
    let mut max_ratio = L0Bar::zeros(n);
    let ball = |rng: &mut R, i: usize| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let r2: f64 = v.iter().map(|a| a * a).sum();
            if r2 <= 1.0 {
                return v
                    .iter()
                    .zip(x0.row(i))
                    .map(|(a, c)| c + delta.get(i) * a)
                    .collect();
            }
        }
    };
    for _ in 0..pairs {
        for i in 0..n {
            let y = ball(rng, i);
            let z = ball(rng, i);
            let dist = y
                .iter()
                .zip(&z)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let diff = (f.eval_row(i, &y) - f.eval_row(i, &z)).abs();
            if dist > 0.0 {
                max_ratio.set(i, max_ratio.get(i).max(diff / dist));
            }
            if !(diff <= xi.get(i) * dist + 1e-12 * (1.0 + diff)) {
                violations += 1;
            }
        }
    }
    Ok(LipschitzEstimate {
        delta,
        xi,
        pairs,
        violations,
        max_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub applicable: bool,
    pub non_interior: EventSet,
    pub sequences: usize,
    pub checked_terms: usize,
    pub violations: usize,
    pub passed: bool,
}

/// Along every declared sequence `x_k -> x0`, checks
/// `|f(x_k) - f(x0)| <= xi * envelope(k)` once the envelope is inside the
/// Lipschitz ball, so `f(x_k) -> f(x0)` on every atom at the declared rate.
pub fn ae_seq_continuity_probe<R: Rng>(
    f: &ConvexFn,
    x0: &RandomPoint,
    sequences: &[SequenceDescriptor],
    rng: &mut R,
) -> Result<ContinuityReport> {
    let n = x0.n();
    let est = match lipschitz_estimate(f, x0, 0, rng) {
        Ok(e) => e,
        Err(Error::OutsideDomain { atoms, .. }) => {
            return Ok(ContinuityReport {
                applicable: false,
                non_interior: EventSet::from_indices(n, &atoms.0),
                sequences: sequences.len(),
                checked_terms: 0,
                violations: 0,
                passed: true,
            })
        }
        Err(e) => return Err(e),
    };
    let f0 = f.eval(x0)?;
    let mut checked = 0;
    let mut violations = 0;
    for seq in sequences {
        for (k, xk) in seq.prefix.iter().enumerate() {
            let fk = f.eval(xk)?;
            let dist = xk.sub(x0)?.euclidean_norm();
            for i in 0..n {
                let env = seq.envelope.at(i, k + 1);
                if !(env <= est.delta.get(i)) {
                    continue;
                }
                checked += 1;
                let diff = (fk.get(i) - f0.get(i)).abs();
                let within_envelope = dist.get(i) <= env + 1e-12 * (1.0 + env);
                if !(within_envelope && diff <= est.xi.get(i) * env + 1e-12 * (1.0 + diff)) {
                    violations += 1;
                }
            }
        }
    }
    Ok(ContinuityReport {
        applicable: true,
        non_interior: EventSet::empty(n),
        sequences: sequences.len(),
        checked_terms: checked,
        violations,
        passed: violations == 0,
    })
}
