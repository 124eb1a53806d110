//! Fenchel conjugates, biconjugates and closures of structured trees.
//!
//! Conjugation is exact wherever a rule exists: leaves have closed-form
//! conjugates and the combinators dualize as
//!
//! | `f`                      | `f*`                               |
//! |--------------------------|------------------------------------|
//! | `Glue(P, f_k)`           | `Glue(P, f_k*)`                    |
//! | `Scale(l, h)`            | `Perspective(l, h*)`               |
//! | `Perspective(l, h)`      | `Scale(l, h*)`                     |
//! | `Translate(s, h)`        | `h* + <s, .>`                      |
//! | `Precompose(L, h)`       | `Precompose(L^-T, h*)`, `L` invertible |
//! | `h + <b, .> + c`         | `Translate(b, h*) - c`             |
//!
//! Anything else falls back, atom by atom, to the exact conjugate of the
//! function sampled on a rank-1 grid, whose slopes bound the trust interval.

use crate::convexfn::probes::l0_convexity_check;
use crate::convexfn::{ConvexFn, Leaf, Pwl1};
use crate::error::{Error, Result};
use crate::measure_l0::{ext_add, ext_sub, EventSet, L0Bar};
use crate::rnmodule::RandomPoint;
use crate::serial;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sampling grid for the rank-1 fallback: `points` equispaced abscissae on
/// `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(with = "serial::scalar")]
    pub min: f64,
    #[serde(with = "serial::scalar")]
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub const DEFAULT_POINTS: usize = 1025;

    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        let g = GridSpec { min, max, points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 3
            || !(self.min < self.max)
            || !self.min.is_finite()
            || !self.max.is_finite()
        {
            return Err(Error::Invalid(format!(
                "grid needs finite min < max and at least 3 points, got {}:{}:{}",
                self.min, self.max, self.points
            )));
        }
        Ok(())
    }

    pub fn abscissae(&self) -> Vec<f64> {
        let h = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points)
            .map(|j| {
                if j + 1 == self.points {
                    self.max
                } else {
                    self.min + h * j as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformPath {
    Exact,
    Grid,
}

/// Dual points `g` with `lo <= g <= hi` where a grid conjugate is trusted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustInterval {
    #[serde(with = "serial::scalar")]
    pub lo: f64,
    #[serde(with = "serial::scalar")]
    pub hi: f64,
}

impl TrustInterval {
    pub const FULL: TrustInterval = TrustInterval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, g: f64) -> bool {
        self.lo <= g && g <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub func: ConvexFn,
    pub path: TransformPath,
    /// Per atom; unbounded on atoms computed exactly.
    pub trust: Vec<TrustInterval>,
    /// Atoms whose transform came from the grid.
    pub grid_atoms: EventSet,
}

impl Transform {
    /// Atoms where `g` lies outside the trust interval.
    pub fn untrusted(&self, g: &RandomPoint) -> Vec<usize> {
        (0..g.n())
            .filter(|&i| g.row(i).iter().any(|&v| !self.trust[i].contains(v)))
            .collect()
    }
}

struct Conjugator<'a> {
    grid: Option<&'a GridSpec>,
    trust: Vec<TrustInterval>,
    grid_atoms: EventSet,
}

impl Conjugator<'_> {
    fn conj(&mut self, f: &ConvexFn, n: usize) -> Result<ConvexFn> {
        match self.exact(f, n) {
            Err(Error::NeedsGrid(why)) => self.grid_all(f, n, &why),
            other => other,
        }
    }

    fn exact(&mut self, f: &ConvexFn, n: usize) -> Result<ConvexFn> {
        match f {
            ConvexFn::Leaves { leaves } => {
                let mut out = Vec::with_capacity(n);
                for (i, l) in leaves.iter().enumerate() {
                    out.push(match l.conjugate() {
                        Ok(c) => c,
                        Err(Error::NeedsGrid(why)) => self.grid_atom(f, i, &why)?,
                        Err(e) => return Err(e),
                    });
                }
                Ok(ConvexFn::leaves(out))
            }
            ConvexFn::Glue {
                partition,
                branches,
            } => {
                let mut out = Vec::with_capacity(branches.len());
                for (k, b) in branches.iter().enumerate() {
                    let part = &partition.parts()[k];
                    out.push(match self.exact(b, n) {
                        Err(Error::NeedsGrid(why)) => {
                            let mut leaves = vec![Leaf::PlusInf { dim: b.dim() }; n];
                            for i in part.indices() {
                                leaves[i] = self.grid_atom(b, i, &why)?;
                            }
                            ConvexFn::leaves(leaves)
                        }
                        other => other?,
                    });
                }
                Ok(ConvexFn::glue(partition.clone(), out))
            }
            ConvexFn::Scale { lambda, inner } => {
                Ok(ConvexFn::perspective(lambda.clone(), self.exact(inner, n)?))
            }
            ConvexFn::Perspective { lambda, inner } => {
                Ok(ConvexFn::scale(lambda.clone(), self.exact(inner, n)?))
            }
            ConvexFn::Translate { shift, inner } => {
                let linear = (0..n)
                    .map(|i| Leaf::Affine {
                        b: shift.row(i).to_vec(),
                        c: 0.0,
                    })
                    .collect();
                Ok(ConvexFn::sum(vec![self.exact(inner, n)?, ConvexFn::leaves(linear)]).collapse())
            }
            ConvexFn::Precompose { map, inner } => {
                let inv = map
                    .inverse()
                    .ok_or_else(|| Error::NeedsGrid("precomposition with a singular map".into()))?;
                Ok(ConvexFn::precompose(inv.adjoint(), self.exact(inner, n)?))
            }
            ConvexFn::Sum { terms } => {
                let (affine, rest): (Vec<&ConvexFn>, Vec<&ConvexFn>) =
                    terms.iter().partition(|t| affine_table(t));
                if rest.len() != 1 || affine.is_empty() {
                    return Err(Error::NeedsGrid(
                        "sum without an exact conjugate rule".into(),
                    ));
                }
                let d = f.dim();
                let mut b = RandomPoint::zeros(n, d);
                let mut c = L0Bar::zeros(n);
                for t in affine {
                    if let ConvexFn::Leaves { leaves } = t {
                        for (i, l) in leaves.iter().enumerate() {
                            if let Leaf::Affine { b: bi, c: ci } = l {
                                for (dst, v) in b.row_mut(i).iter_mut().zip(bi) {
                                    *dst += v;
                                }
                                c.set(i, c.get(i) + ci);
                            }
                        }
                    }
                }
                let h = self.exact(rest[0], n)?;
                let offset = (0..n)
                    .map(|i| Leaf::Affine {
                        b: vec![0.0; d],
                        c: -c.get(i),
                    })
                    .collect();
                Ok(
                    ConvexFn::sum(vec![ConvexFn::translate(b, h), ConvexFn::leaves(offset)])
                        .collapse(),
                )
            }
            ConvexFn::Sup { .. } => Err(Error::NeedsGrid("supremum of pieces".into())),
            ConvexFn::Blackbox(_) => Err(Error::NeedsGrid("blackbox".into())),
        }
    }

    fn grid_all(&mut self, f: &ConvexFn, n: usize, why: &str) -> Result<ConvexFn> {
        let leaves = (0..n)
            .map(|i| self.grid_atom(f, i, why))
            .collect::<Result<_>>()?;
        Ok(ConvexFn::leaves(leaves))
    }

    fn grid_atom(&mut self, f: &ConvexFn, i: usize, why: &str) -> Result<Leaf> {
        let grid = self
            .grid
            .ok_or_else(|| Error::NeedsGrid(format!("{why}: no exact rule, supply a grid")))?;
        if f.dim() != 1 {
            return Err(Error::Unsupported(format!(
                "{why}: grid transforms are rank-1 only"
            )));
        }
        let (leaf, trust) = grid_conjugate_atom(f, i, grid)?;
        self.grid_atoms.insert(i);
        self.trust[i] = trust;
        Ok(leaf)
    }
}

fn affine_table(f: &ConvexFn) -> bool {
    matches!(f, ConvexFn::Leaves { leaves } if leaves.iter().all(|l| matches!(l, Leaf::Affine { .. })))
}

/// Lower convex hull of points sorted by abscissa.
fn lower_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b when it lies on or above the chord from a to p
            if (b.1 - a.1) * (p.0 - a.0) >= (p.1 - a.1) * (b.0 - a.0) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn hull_pwl(pts: &[(f64, f64)]) -> Result<Pwl1> {
    let hull = lower_hull(pts);
    Pwl1::new(
        hull.iter().map(|p| p.0).collect(),
        hull.iter().map(|p| p.1).collect(),
    )
}

fn sample_atom(f: &ConvexFn, i: usize, xs: &[f64]) -> Result<Vec<f64>> {
    xs.iter().map(|&x| f.eval_scenario(i, &[x])).collect()
}

/// Conjugate of `phi_i` restricted to the grid, with the slope range of the
/// sampled hull as trust interval.
fn grid_conjugate_atom(f: &ConvexFn, i: usize, grid: &GridSpec) -> Result<(Leaf, TrustInterval)> {
    let xs = grid.abscissae();
    let vs = sample_atom(f, i, &xs)?;
    if vs.contains(&f64::NEG_INFINITY) {
        return Ok((Leaf::PlusInf { dim: 1 }, TrustInterval::FULL));
    }
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(&vs)
        .filter(|(_, v)| v.is_finite())
        .map(|(x, v)| (*x, *v))
        .collect();
    if pts.is_empty() {
        return Ok((Leaf::MinusInf { dim: 1 }, TrustInterval::FULL));
    }
    let p = hull_pwl(&pts)?;
    let s = p.segment_slopes();
    let trust = match (s.first(), s.last()) {
        (Some(&lo), Some(&hi)) => TrustInterval { lo, hi },
        _ => TrustInterval::FULL,
    };
    Ok((Leaf::Pwl(p.conjugate()), trust))
}

/// `f*` as a tree over dual points; exact where a rule applies, grid-based
/// (rank 1, `grid` required) elsewhere.
pub fn conjugate(f: &ConvexFn, n: usize, grid: Option<&GridSpec>) -> Result<Transform> {
    f.check(n)?;
    if !f.is_local() {
        return Err(Error::Unsupported(
            "conjugate of a non-local function".into(),
        ));
    }
    if let Some(g) = grid {
        g.validate()?;
    }
    let mut c = Conjugator {
        grid,
        trust: vec![TrustInterval::FULL; n],
        grid_atoms: EventSet::empty(n),
    };
    let func = c.conj(&f.collapse(), n)?;
    Ok(Transform {
        func,
        path: if c.grid_atoms.is_empty() {
            TransformPath::Exact
        } else {
            TransformPath::Grid
        },
        trust: c.trust,
        grid_atoms: c.grid_atoms,
    })
}

/// `f**`; the second transform is exact because every conjugate tree has an
/// exact rule.
pub fn biconjugate(f: &ConvexFn, n: usize, grid: Option<&GridSpec>) -> Result<Transform> {
    let first = conjugate(f, n, grid)?;
    let second = conjugate(&first.func, n, None)?;
    Ok(Transform {
        func: second.func,
        path: first.path,
        trust: first.trust,
        grid_atoms: first.grid_atoms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FenchelMoreauReport {
    pub passed: bool,
    pub path: TransformPath,
    pub checked: usize,
    /// Largest `|f** - f|` over sampled atoms in `dom f`.
    #[serde(with = "serial::scalar")]
    pub max_error: f64,
    /// Sampled atoms with `f = +inf` but `f** < +inf`.
    pub plus_inf_mismatches: usize,
}

/// Checks `f** = f` at the sample points.
pub fn fenchel_moreau_check(
    f: &ConvexFn,
    n: usize,
    samples: &[RandomPoint],
    tol: f64,
    grid: Option<&GridSpec>,
) -> Result<FenchelMoreauReport> {
    let proper = f.is_proper(n)?;
    if !proper.proper {
        let p = &proper.partition;
        return Err(Error::Improper(format!(
            "f is not proper: MI = {:?}, PI = {:?}",
            p.mi.indices().collect::<Vec<_>>(),
            p.pi.indices().collect::<Vec<_>>()
        )));
    }
    let bi = biconjugate(f, n, grid)?;
    let mut checked = 0;
    let mut max_error = 0.0f64;
    let mut mismatches = 0;
    for x in samples {
        let (a, b) = (f.eval(x)?, bi.func.eval(x)?);
        for i in 0..n {
            if a.get(i).is_finite() {
                checked += 1;
                max_error = max_error.max((a.get(i) - b.get(i)).abs());
            } else if a.get(i) == f64::INFINITY && b.get(i) < f64::INFINITY {
                mismatches += 1;
            }
        }
    }
    Ok(FenchelMoreauReport {
        passed: max_error <= tol && mismatches == 0,
        path: bi.path,
        checked,
        max_error,
        plus_inf_mismatches: mismatches,
    })
}

/// Boundary of the domain between an infinite abscissa `out` and a finite one
/// `inside`, snapped to whichever bracket end prints shorter.
fn domain_edge(f: &ConvexFn, i: usize, mut out: f64, mut inside: f64) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (out + inside);
        if mid == out || mid == inside {
            break;
        }
        if f.eval_scenario(i, &[mid])?.is_finite() {
            inside = mid;
        } else {
            out = mid;
        }
    }
    let len = |v: f64| serial::format_f64(v).len();
    Ok(if len(out) < len(inside) { out } else { inside })
}

/// `liminf phi_i` at a domain edge `e`, approached from the side `inward`:
/// the value at `e` unless it jumps above the linear extrapolation from inside.
fn edge_value(f: &ConvexFn, i: usize, e: f64, inward: f64, h: f64) -> Result<f64> {
    let v = f.eval_scenario(i, &[e])?;
    let eps = 1e-6 * h;
    let (a, b) = (
        f.eval_scenario(i, &[e + inward * eps])?,
        f.eval_scenario(i, &[e + 2.0 * inward * eps])?,
    );
    if !(a.is_finite() && b.is_finite()) {
        return Ok(v);
    }
    let limit = 2.0 * a - b;
    Ok(
        if v.is_finite() && v <= limit + 1e-9 * (1.0 + limit.abs()) {
            v
        } else {
            limit
        },
    )
}

/// Lower-semicontinuous hull of `phi_i` at grid resolution: the lower convex
/// hull of the grid samples, extended to the bisected domain edges.
fn grid_closure_atom(f: &ConvexFn, i: usize, grid: &GridSpec) -> Result<Leaf> {
    let xs = grid.abscissae();
    let h = xs[1] - xs[0];
    let vs = sample_atom(f, i, &xs)?;
    if vs.contains(&f64::NEG_INFINITY) {
        return Ok(Leaf::MinusInf { dim: 1 });
    }
    let finite: Vec<usize> = (0..xs.len()).filter(|&j| vs[j].is_finite()).collect();
    let (Some(&first), Some(&last)) = (finite.first(), finite.last()) else {
        return Ok(Leaf::PlusInf { dim: 1 });
    };
    let mut pts: Vec<(f64, f64)> = finite.iter().map(|&j| (xs[j], vs[j])).collect();
    let lo = if first > 0 {
        domain_edge(f, i, xs[first - 1], xs[first])?
    } else {
        xs[first]
    };
    let hi = if last + 1 < xs.len() {
        domain_edge(f, i, xs[last + 1], xs[last])?
    } else {
        xs[last]
    };
    if first == last && lo == hi {
        return Ok(Leaf::Pwl(Pwl1::new(vec![lo], vec![vs[first]])?));
    }
    let (vlo, vhi) = (
        edge_value(f, i, lo, 1.0, h)?,
        edge_value(f, i, hi, -1.0, h)?,
    );
    if lo < pts[0].0 {
        pts.insert(0, (lo, vlo));
    } else {
        pts[0].1 = vlo;
    }
    let k = pts.len() - 1;
    if hi > pts[k].0 {
        pts.push((hi, vhi));
    } else {
        pts[k].1 = vhi;
    }
    Ok(Leaf::Pwl(hull_pwl(&pts)?))
}

/// The closure `cl f = f**`: structured trees are already closed except on
/// `MI(f)`, which becomes `-inf` on the whole atom; other local rank-1 inputs
/// are closed on `grid`.
pub fn closure(f: &ConvexFn, n: usize, grid: Option<&GridSpec>) -> Result<Transform> {
    f.check(n)?;
    if !f.declared_convex() {
        return Err(Error::NotConvex(
            "closure of a function declared non-convex".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x636c6f73);
    if let Some(w) = l0_convexity_check(f, n, 200, 4.0, &mut rng)?.witness {
        return Err(Error::NotConvex(format!(
            "convexity fails at x = {:?}, y = {:?}, xi = {:?}",
            w.x.column(0),
            w.y.column(0),
            w.xi.values()
        )));
    }
    if f.is_structured() {
        let mi = f.effective_partition(n)?.mi;
        let d = f.dim();
        let func = if mi.is_empty() {
            f.clone()
        } else {
            ConvexFn::glue_on(
                &mi,
                ConvexFn::uniform(n, Leaf::MinusInf { dim: d }),
                f.clone(),
            )
        };
        return Ok(Transform {
            func,
            path: TransformPath::Exact,
            trust: vec![TrustInterval::FULL; n],
            grid_atoms: EventSet::empty(n),
        });
    }
    if !f.is_local() {
        return Err(Error::Unsupported("closure of a non-local function".into()));
    }
    if f.dim() != 1 {
        return Err(Error::Unsupported("grid closures are rank-1 only".into()));
    }
    let grid = grid.ok_or_else(|| Error::NeedsGrid("closure of a blackbox needs a grid".into()))?;
    grid.validate()?;
    let leaves = (0..n)
        .map(|i| grid_closure_atom(f, i, grid))
        .collect::<Result<_>>()?;
    Ok(Transform {
        func: ConvexFn::leaves(leaves),
        path: TransformPath::Grid,
        trust: vec![TrustInterval::FULL; n],
        grid_atoms: EventSet::full(n),
    })
}

/// `f(x) + f*(g) - <g, x>`, nonnegative by the Fenchel-Young inequality and
/// zero exactly where `g` is a subgradient at `x`.
pub fn young_fenchel_gap(f: &ConvexFn, x: &RandomPoint, g: &RandomPoint) -> Result<L0Bar> {
    let n = x.n();
    let fs = conjugate(f, n, None)?;
    let (fx, fg) = (f.eval(x)?, fs.func.eval(g)?);
    let pairing = g.dot(x)?;
    Ok(L0Bar::from_fn(n, |i| {
        ext_sub(ext_add(fx.get(i), fg.get(i)), pairing.get(i))
    }))
}
