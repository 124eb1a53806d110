//! Proper local L0-convex functions `f: L0^d -> L0bar` as expression trees.
//!
//! Leaves are per-scenario closed convex functions; nodes are combinators
//! that preserve L0-convexity. Every structured tree is local: the value at
//! atom `i` depends on row `i` only, so it is a family of classical convex
//! functions `phi_i` glued along the atoms.

mod blackbox;
mod leaf;
pub mod probes;
mod pwl;
pub mod samples;

pub use blackbox::{Blackbox, BlackboxKind};
pub use leaf::{Domain, Leaf, Stratum};
pub use pwl::Pwl1;

use crate::error::{Error, Result};
use crate::measure_l0::{ext_add, ext_mul, EventSet, FinitePartition, L0Bar};
use crate::rnmodule::{ModuleHom, RandomPoint};
use leaf::full_box;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ConvexFn {
    /// One leaf per atom.
    Leaves {
        leaves: Vec<Leaf>,
    },
    Sum {
        terms: Vec<ConvexFn>,
    },
    /// `lambda * f` with `lambda >= 0` and `0 * (+-inf) = 0`.
    Scale {
        lambda: L0Bar,
        inner: Box<ConvexFn>,
    },
    /// `lambda * f(x / lambda)`, the indicator of `{0}` where `lambda = 0`.
    Perspective {
        lambda: L0Bar,
        inner: Box<ConvexFn>,
    },
    Glue {
        partition: FinitePartition,
        branches: Vec<ConvexFn>,
    },
    /// `x -> f(L x)`.
    Precompose {
        map: ModuleHom,
        inner: Box<ConvexFn>,
    },
    Sup {
        pieces: Vec<ConvexFn>,
    },
    /// `x -> f(x - shift)`.
    Translate {
        shift: RandomPoint,
        inner: Box<ConvexFn>,
    },
    Blackbox(Blackbox),
}

/// The partition of atoms into `MI(f)`, `PI(f)` and `BP(f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivePartition {
    pub mi: EventSet,
    pub pi: EventSet,
    pub bp: EventSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Properness {
    pub proper: bool,
    pub partition: EffectivePartition,
    pub witness: Option<RandomPoint>,
}

impl ConvexFn {
    pub fn uniform(n: usize, leaf: Leaf) -> ConvexFn {
        ConvexFn::Leaves {
            leaves: vec![leaf; n],
        }
    }

    pub fn leaves(leaves: Vec<Leaf>) -> ConvexFn {
        ConvexFn::Leaves { leaves }
    }

    pub fn sum(terms: Vec<ConvexFn>) -> ConvexFn {
        ConvexFn::Sum { terms }
    }

    pub fn sup(pieces: Vec<ConvexFn>) -> ConvexFn {
        ConvexFn::Sup { pieces }
    }

    pub fn scale(lambda: L0Bar, inner: ConvexFn) -> ConvexFn {
        ConvexFn::Scale {
            lambda,
            inner: Box::new(inner),
        }
    }

    pub fn perspective(lambda: L0Bar, inner: ConvexFn) -> ConvexFn {
        ConvexFn::Perspective {
            lambda,
            inner: Box::new(inner),
        }
    }

    pub fn glue(partition: FinitePartition, branches: Vec<ConvexFn>) -> ConvexFn {
        ConvexFn::Glue {
            partition,
            branches,
        }
    }

    /// `f_a` on `a`, `f_rest` on its complement.
    pub fn glue_on(a: &EventSet, f_a: ConvexFn, f_rest: ConvexFn) -> ConvexFn {
        ConvexFn::Glue {
            partition: FinitePartition::binary(a),
            branches: vec![f_a, f_rest],
        }
    }

    pub fn precompose(map: ModuleHom, inner: ConvexFn) -> ConvexFn {
        ConvexFn::Precompose {
            map,
            inner: Box::new(inner),
        }
    }

    pub fn translate(shift: RandomPoint, inner: ConvexFn) -> ConvexFn {
        ConvexFn::Translate {
            shift,
            inner: Box::new(inner),
        }
    }

    /// Validates shapes against an `n`-atom base and returns the rank `d`.
    pub fn check(&self, n: usize) -> Result<usize> {
        match self {
            ConvexFn::Leaves { leaves } => {
                if leaves.len() != n {
                    return Err(Error::Shape(format!(
                        "{} leaves for {n} atoms",
                        leaves.len()
                    )));
                }
                for l in leaves {
                    l.validate()?;
                }
                let d = leaves[0].dim();
                if leaves.iter().any(|l| l.dim() != d) {
                    return Err(Error::Shape("leaves differ in rank".into()));
                }
                Ok(d)
            }
            ConvexFn::Sum { terms: fs } | ConvexFn::Sup { pieces: fs } => {
                let first = fs
                    .first()
                    .ok_or_else(|| Error::Invalid("empty sum or sup".into()))?;
                let d = first.check(n)?;
                for f in &fs[1..] {
                    if f.check(n)? != d {
                        return Err(Error::Shape("terms differ in rank".into()));
                    }
                }
                Ok(d)
            }
            ConvexFn::Scale { lambda, inner } | ConvexFn::Perspective { lambda, inner } => {
                if lambda.len() != n {
                    return Err(Error::Shape("scale length".into()));
                }
                if !(lambda.is_finite() && lambda.is_nonnegative()) {
                    return Err(Error::Invalid(
                        "scale must be finite and nonnegative".into(),
                    ));
                }
                inner.check(n)
            }
            ConvexFn::Glue {
                partition,
                branches,
            } => {
                if partition.n() != n || partition.parts().len() != branches.len() {
                    return Err(Error::Partition("glue partition vs branches".into()));
                }
                let d = branches[0].check(n)?;
                for b in &branches[1..] {
                    if b.check(n)? != d {
                        return Err(Error::Shape("glue branches differ in rank".into()));
                    }
                }
                Ok(d)
            }
            ConvexFn::Precompose { map, inner } => {
                if map.n() != n {
                    return Err(Error::Shape("map atom count".into()));
                }
                if inner.check(n)? != map.d_out() {
                    return Err(Error::Shape("map output rank vs inner rank".into()));
                }
                Ok(map.d_in())
            }
            ConvexFn::Translate { shift, inner } => {
                if shift.n() != n || !shift.is_finite() {
                    return Err(Error::Shape("translation shape".into()));
                }
                let d = inner.check(n)?;
                if shift.d() != d {
                    return Err(Error::Shape("translation rank".into()));
                }
                Ok(d)
            }
            ConvexFn::Blackbox(bb) => {
                bb.validate()?;
                Ok(bb.dim)
            }
        }
    }

    /// Rank of the argument; assumes a validated tree.
    pub fn dim(&self) -> usize {
        match self {
            ConvexFn::Leaves { leaves } => leaves[0].dim(),
            ConvexFn::Sum { terms: fs } | ConvexFn::Sup { pieces: fs } => fs[0].dim(),
            ConvexFn::Glue { branches, .. } => branches[0].dim(),
            ConvexFn::Scale { inner, .. }
            | ConvexFn::Perspective { inner, .. }
            | ConvexFn::Translate { inner, .. } => inner.dim(),
            ConvexFn::Precompose { map, .. } => map.d_in(),
            ConvexFn::Blackbox(bb) => bb.dim,
        }
    }

    fn children(&self) -> Vec<&ConvexFn> {
        match self {
            ConvexFn::Leaves { .. } | ConvexFn::Blackbox(_) => Vec::new(),
            ConvexFn::Sum { terms: fs }
            | ConvexFn::Sup { pieces: fs }
            | ConvexFn::Glue { branches: fs, .. } => fs.iter().collect(),
            ConvexFn::Scale { inner, .. }
            | ConvexFn::Perspective { inner, .. }
            | ConvexFn::Precompose { inner, .. }
            | ConvexFn::Translate { inner, .. } => vec![inner],
        }
    }

    /// No blackbox anywhere in the tree.
    pub fn is_structured(&self) -> bool {
        !matches!(self, ConvexFn::Blackbox(_)) && self.children().iter().all(|c| c.is_structured())
    }

    /// Every blackbox in the tree is row-local.
    pub fn is_local(&self) -> bool {
        match self {
            ConvexFn::Blackbox(bb) => bb.is_local(),
            _ => self.children().iter().all(|c| c.is_local()),
        }
    }

    /// Every blackbox in the tree is declared convex.
    pub fn declared_convex(&self) -> bool {
        match self {
            ConvexFn::Blackbox(bb) => bb.declared_convex(),
            _ => self.children().iter().all(|c| c.declared_convex()),
        }
    }

    fn check_point(&self, x: &RandomPoint) -> Result<()> {
        let d = self.check(x.n())?;
        if d != x.d() {
            return Err(Error::Shape(format!(
                "function of rank {d} at a point of rank {}",
                x.d()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &RandomPoint) -> Result<L0Bar> {
        self.check_point(x)?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &RandomPoint) -> L0Bar {
        let n = x.n();
        match self {
            ConvexFn::Leaves { leaves } => L0Bar::from_fn(n, |i| leaves[i].eval(x.row(i))),
            ConvexFn::Blackbox(bb) => bb.eval(x),
            _ if self.is_local() => L0Bar::from_fn(n, |i| self.eval_row(i, x.row(i))),
            ConvexFn::Sum { terms } => terms.iter().fold(L0Bar::zeros(n), |acc, t| {
                let v = t.eval_unchecked(x);
                L0Bar::from_fn(n, |i| ext_add(acc.get(i), v.get(i)))
            }),
            ConvexFn::Sup { pieces } => {
                let vals: Vec<L0Bar> = pieces.iter().map(|p| p.eval_unchecked(x)).collect();
                L0Bar::ess_sup(n, vals.iter()).expect("same shape")
            }
            ConvexFn::Scale { lambda, inner } => {
                let v = inner.eval_unchecked(x);
                L0Bar::from_fn(n, |i| ext_mul(lambda.get(i), v.get(i)))
            }
            ConvexFn::Perspective { lambda, inner } => {
                let safe = L0Bar::from_fn(n, |i| {
                    let l = lambda.get(i);
                    if l > 0.0 {
                        1.0 / l
                    } else {
                        0.0
                    }
                });
                let v = inner.eval_unchecked(&x.scale(&safe).expect("finite"));
                L0Bar::from_fn(n, |i| {
                    let l = lambda.get(i);
                    if l > 0.0 {
                        ext_mul(l, v.get(i))
                    } else if x.row(i).iter().all(|c| *c == 0.0) {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
            }
            ConvexFn::Glue {
                partition,
                branches,
            } => {
                let vals: Vec<L0Bar> = branches.iter().map(|b| b.eval_unchecked(x)).collect();
                L0Bar::glue(partition, &vals).expect("validated")
            }
            ConvexFn::Precompose { map, inner } => {
                inner.eval_unchecked(&map.apply(x).expect("validated"))
            }
            ConvexFn::Translate { shift, inner } => {
                inner.eval_unchecked(&x.sub(shift).expect("validated"))
            }
        }
    }

    /// `phi_i(row)`; requires every blackbox in the tree to be local.
    pub fn eval_scenario(&self, i: usize, row: &[f64]) -> Result<f64> {
        if !self.is_local() {
            return Err(Error::Unsupported(
                "per-scenario evaluation of a non-local function".into(),
            ));
        }
        Ok(self.eval_row(i, row))
    }

    fn eval_row(&self, i: usize, row: &[f64]) -> f64 {
        match self {
            ConvexFn::Leaves { leaves } => leaves[i].eval(row),
            ConvexFn::Blackbox(bb) => bb.eval_row(row).expect("local"),
            ConvexFn::Sum { terms } => terms
                .iter()
                .fold(0.0, |acc, t| ext_add(acc, t.eval_row(i, row))),
            ConvexFn::Sup { pieces } => pieces
                .iter()
                .map(|p| p.eval_row(i, row))
                .fold(f64::NEG_INFINITY, f64::max),
            ConvexFn::Scale { lambda, inner } => ext_mul(lambda.get(i), inner.eval_row(i, row)),
            ConvexFn::Perspective { lambda, inner } => {
                let l = lambda.get(i);
                if l > 0.0 {
                    let y: Vec<f64> = row.iter().map(|v| v / l).collect();
                    ext_mul(l, inner.eval_row(i, &y))
                } else if row.iter().all(|v| *v == 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ConvexFn::Glue {
                partition,
                branches,
            } => branches[partition.part_of(i)].eval_row(i, row),
            ConvexFn::Precompose { map, inner } => inner.eval_row(i, &map.apply_row(i, row)),
            ConvexFn::Translate { shift, inner } => {
                let y: Vec<f64> = row.iter().zip(shift.row(i)).map(|(a, b)| a - b).collect();
                inner.eval_row(i, &y)
            }
        }
    }

    /// Exact `phi_i'(row; dir)` for `row` in the domain of `phi_i`.
    pub fn directional_scenario(&self, i: usize, row: &[f64], dir: &[f64]) -> Result<f64> {
        let v = self.eval_scenario(i, row)?;
        if !v.is_finite() {
            return Err(Error::outside(
                vec![i],
                format!("value {v} at the base point"),
            ));
        }
        self.dir_row(i, row, dir)
    }

    fn dir_row(&self, i: usize, row: &[f64], dir: &[f64]) -> Result<f64> {
        Ok(match self {
            ConvexFn::Leaves { leaves } => leaves[i].directional(row, dir),
            ConvexFn::Blackbox(_) => {
                return Err(Error::Unsupported(
                    "exact directional derivative of a blackbox".into(),
                ))
            }
            ConvexFn::Sum { terms } => {
                let mut acc = 0.0;
                for t in terms {
                    acc = ext_add(acc, t.dir_row(i, row, dir)?);
                }
                acc
            }
            ConvexFn::Sup { pieces } => {
                let vals: Vec<f64> = pieces.iter().map(|p| p.eval_row(i, row)).collect();
                let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let tol = 1e-12 * (1.0 + top.abs());
                let mut best = f64::NEG_INFINITY;
                for (p, v) in pieces.iter().zip(&vals) {
                    if *v >= top - tol {
                        best = best.max(p.dir_row(i, row, dir)?);
                    } else if p.dir_row(i, row, dir).is_ok_and(|d| d == f64::INFINITY) {
                        // an inactive piece whose domain ends here still cuts the sup off
                        best = f64::INFINITY;
                    }
                }
                best
            }
            ConvexFn::Scale { lambda, inner } => {
                let l = lambda.get(i);
                if l == 0.0 {
                    0.0
                } else {
                    l * inner.dir_row(i, row, dir)?
                }
            }
            ConvexFn::Perspective { lambda, inner } => {
                let l = lambda.get(i);
                if l > 0.0 {
                    let y: Vec<f64> = row.iter().map(|v| v / l).collect();
                    inner.dir_row(i, &y, dir)?
                } else if dir.iter().all(|v| *v == 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ConvexFn::Glue {
                partition,
                branches,
            } => branches[partition.part_of(i)].dir_row(i, row, dir)?,
            ConvexFn::Precompose { map, inner } => {
                inner.dir_row(i, &map.apply_row(i, row), &map.apply_row(i, dir))?
            }
            ConvexFn::Translate { shift, inner } => {
                let y: Vec<f64> = row.iter().zip(shift.row(i)).map(|(a, b)| a - b).collect();
                inner.dir_row(i, &y, dir)?
            }
        })
    }

    /// Exact directional derivative at every atom; errors name atoms outside the domain.
    pub fn directional(&self, x: &RandomPoint, y: &RandomPoint) -> Result<L0Bar> {
        self.check_point(x)?;
        self.check_point(y)?;
        let fx = self.eval_unchecked(x);
        let bad: Vec<usize> = (0..x.n()).filter(|&i| !fx.get(i).is_finite()).collect();
        if !bad.is_empty() {
            return Err(Error::outside(
                bad,
                "directional derivative needs a finite base value",
            ));
        }
        let mut out = L0Bar::zeros(x.n());
        for i in 0..x.n() {
            out.set(i, self.dir_row(i, x.row(i), y.row(i))?);
        }
        Ok(out)
    }

    /// `[phi_i'_-(x), phi_i'_+(x)]` for rank 1; `lo > hi` never happens for finite values.
    pub fn subdiff_interval_scenario(&self, i: usize, x: f64) -> Result<(f64, f64)> {
        let up = self.directional_scenario(i, &[x], &[1.0])?;
        let down = self.directional_scenario(i, &[x], &[-1.0])?;
        Ok((-down, up))
    }

    /// Gradient at a point of differentiability of a smooth tree, per atom.
    pub fn gradient_scenario(&self, i: usize, row: &[f64]) -> Result<Vec<f64>> {
        let d = row.len();
        let mut g = vec![0.0; d];
        for (j, gj) in g.iter_mut().enumerate() {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let up = self.directional_scenario(i, row, &e)?;
            e[j] = -1.0;
            let down = -self.directional_scenario(i, row, &e)?;
            if !(up.is_finite() && down.is_finite()) || (up - down).abs() > 1e-9 * (1.0 + up.abs())
            {
                return Err(Error::precondition(
                    vec![i],
                    format!("not differentiable along coordinate {j}"),
                ));
            }
            *gj = 0.5 * (up + down);
        }
        Ok(g)
    }

    /// Points where `phi_i` (rank 1) may have a kink, from the tree structure.
    pub fn kinks_scenario(&self, i: usize) -> Vec<f64> {
        self.breaks_scenario(i, false)
    }

    /// Kinks of `phi_i` and of its derivative: between consecutive points the
    /// listed leaves are smooth to second order.
    pub fn curvature_breaks_scenario(&self, i: usize) -> Vec<f64> {
        self.breaks_scenario(i, true)
    }

    fn breaks_scenario(&self, i: usize, curvature: bool) -> Vec<f64> {
        let mut out = match self {
            ConvexFn::Leaves { leaves } if curvature => leaves[i].curvature_breaks(),
            ConvexFn::Leaves { leaves } => leaves[i].kinks(),
            ConvexFn::Blackbox(bb) => match bb.kind {
                BlackboxKind::OpenIntervalIndicator | BlackboxKind::LiftedBoundary => {
                    bb.params.clone()
                }
                _ => Vec::new(),
            },
            ConvexFn::Sum { terms: fs } | ConvexFn::Sup { pieces: fs } => fs
                .iter()
                .flat_map(|f| f.breaks_scenario(i, curvature))
                .collect(),
            ConvexFn::Scale { inner, .. } => inner.breaks_scenario(i, curvature),
            ConvexFn::Perspective { lambda, inner } => {
                let l = lambda.get(i);
                if l > 0.0 {
                    inner
                        .breaks_scenario(i, curvature)
                        .into_iter()
                        .map(|k| k * l)
                        .collect()
                } else {
                    vec![0.0]
                }
            }
            ConvexFn::Glue {
                partition,
                branches,
            } => branches[partition.part_of(i)].breaks_scenario(i, curvature),
            ConvexFn::Precompose { map, inner } => {
                let a = map.matrix(i)[(0, 0)];
                if a == 0.0 {
                    Vec::new()
                } else {
                    inner
                        .breaks_scenario(i, curvature)
                        .into_iter()
                        .map(|k| k / a)
                        .collect()
                }
            }
            ConvexFn::Translate { shift, inner } => inner
                .breaks_scenario(i, curvature)
                .into_iter()
                .map(|k| k + shift.get(i, 0))
                .collect(),
        };
        out.retain(|v| v.is_finite());
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Structural classification of `phi_i`.
    pub fn stratum(&self, i: usize) -> Result<Stratum> {
        let d = self.dim();
        Ok(match self {
            ConvexFn::Leaves { leaves } => leaves[i].stratum(),
            ConvexFn::Blackbox(_) => {
                return Err(Error::Unsupported(
                    "effective domain of a blackbox is undecidable".into(),
                ))
            }
            ConvexFn::Sum { terms } => {
                let mut acc = Stratum::Proper(full_box(d));
                for t in terms {
                    acc = combine(acc, t.stratum(i)?, |a, b| a || b);
                }
                acc
            }
            ConvexFn::Sup { pieces } => {
                let mut acc = Stratum::MinusOn(full_box(d));
                for p in pieces {
                    acc = combine(acc, p.stratum(i)?, |a, b| a && b);
                }
                acc
            }
            ConvexFn::Scale { lambda, inner } => {
                if lambda.get(i) == 0.0 {
                    Stratum::Proper(full_box(d))
                } else {
                    inner.stratum(i)?
                }
            }
            ConvexFn::Perspective { lambda, inner } => {
                let l = lambda.get(i);
                if l == 0.0 {
                    Stratum::Proper(Domain::Box(vec![(0.0, 0.0); d]))
                } else {
                    map_stratum(inner.stratum(i)?, |dom| {
                        dom.map_box(
                            |_, a, b| (a * l, b * l),
                            |w| w.iter().map(|v| v * l).collect(),
                        )
                    })
                }
            }
            ConvexFn::Glue {
                partition,
                branches,
            } => branches[partition.part_of(i)].stratum(i)?,
            ConvexFn::Precompose { map, inner } => {
                let m = map.matrix(i);
                let inner_s = inner.stratum(i)?;
                map_stratum(inner_s, |dom| {
                    if dom.is_full() {
                        return full_box(d);
                    }
                    if m.shape() == (1, 1) {
                        let a = m[(0, 0)];
                        if a != 0.0 {
                            return dom.map_box(
                                |_, l, u| {
                                    let (p, q) = (l / a, u / a);
                                    (p.min(q), p.max(q))
                                },
                                |w| vec![w[0] / a],
                            );
                        }
                        return match dom.contains(&[0.0]) {
                            Some(true) => full_box(1),
                            _ => Domain::Unknown,
                        };
                    }
                    match (m.clone().try_inverse(), dom.witness()) {
                        (Some(inv), Some(w)) if m.nrows() == m.ncols() => {
                            let v = &inv * nalgebra::DVector::from_vec(w);
                            Domain::Witness(v.iter().copied().collect())
                        }
                        _ => Domain::Unknown,
                    }
                })
            }
            ConvexFn::Translate { shift, inner } => {
                let s = shift.row(i);
                map_stratum(inner.stratum(i)?, |dom| {
                    dom.map_box(
                        |j, l, u| (l + s[j], u + s[j]),
                        |w| w.iter().zip(s).map(|(a, b)| a + b).collect(),
                    )
                })
            }
        })
    }

    /// `MI(f)`, `PI(f)`, `BP(f)` for structured trees.
    pub fn effective_partition(&self, n: usize) -> Result<EffectivePartition> {
        self.check(n)?;
        let mut mi = EventSet::empty(n);
        let mut pi = EventSet::empty(n);
        let mut bp = EventSet::empty(n);
        for i in 0..n {
            match self.stratum(i)? {
                Stratum::MinusOn(_) => mi.insert(i),
                Stratum::Empty => pi.insert(i),
                Stratum::Proper(_) => bp.insert(i),
            }
        }
        Ok(EffectivePartition { mi, pi, bp })
    }

    /// Properness with a witness point finite on every atom.
    pub fn is_proper(&self, n: usize) -> Result<Properness> {
        let partition = self.effective_partition(n)?;
        if !partition.bp.is_full() {
            return Ok(Properness {
                proper: false,
                partition,
                witness: None,
            });
        }
        let d = self.dim();
        let mut w = RandomPoint::zeros(n, d);
        for i in 0..n {
            let row = self.witness_row(i)?;
            w.row_mut(i).copy_from_slice(&row);
        }
        Ok(Properness {
            proper: true,
            partition,
            witness: Some(w),
        })
    }

    /// A point where `phi_i` is finite.
    pub fn witness_row(&self, i: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        let dom = match self.stratum(i)? {
            Stratum::Proper(dom) => dom,
            _ => return Err(Error::Improper(format!("atom {i} has no finite value"))),
        };
        let mut candidates = Vec::new();
        if let Some(w) = dom.witness() {
            candidates.push(w);
        }
        candidates.push(vec![0.0; d]);
        candidates.extend(self.kinks_probe(i, d));
        for c in candidates {
            if self.eval_row(i, &c).is_finite() {
                return Ok(c);
            }
        }
        Err(Error::Unsupported(format!(
            "no witness found for the domain at atom {i}"
        )))
    }

    fn kinks_probe(&self, i: usize, d: usize) -> Vec<Vec<f64>> {
        if d != 1 {
            return Vec::new();
        }
        let k = self.kinks_scenario(i);
        let mut out: Vec<Vec<f64>> = k.iter().map(|v| vec![*v]).collect();
        out.extend(k.windows(2).map(|w| vec![0.5 * (w[0] + w[1])]));
        out
    }

    /// Collapses nodes over leaves into single leaves wherever the result stays
    /// in the leaf family; evaluation is unchanged.
    pub fn collapse(&self) -> ConvexFn {
        match self {
            ConvexFn::Leaves { .. } | ConvexFn::Blackbox(_) => self.clone(),
            ConvexFn::Sum { terms } => {
                let cs: Vec<ConvexFn> = terms.iter().map(|t| t.collapse()).collect();
                per_leaf(&cs, |_, ls| Leaf::merge_sum(ls)).unwrap_or(ConvexFn::Sum { terms: cs })
            }
            ConvexFn::Sup { pieces } => {
                let cs: Vec<ConvexFn> = pieces.iter().map(|t| t.collapse()).collect();
                per_leaf(&cs, |_, ls| Leaf::merge_max(ls)).unwrap_or(ConvexFn::Sup { pieces: cs })
            }
            ConvexFn::Scale { lambda, inner } => {
                let c = inner.collapse();
                match &c {
                    ConvexFn::Leaves { leaves } => ConvexFn::Leaves {
                        leaves: leaves
                            .iter()
                            .enumerate()
                            .map(|(i, l)| l.scale(lambda.get(i)))
                            .collect(),
                    },
                    _ => ConvexFn::scale(lambda.clone(), c),
                }
            }
            ConvexFn::Perspective { lambda, inner } => {
                let c = inner.collapse();
                match &c {
                    ConvexFn::Leaves { leaves } => ConvexFn::Leaves {
                        leaves: leaves
                            .iter()
                            .enumerate()
                            .map(|(i, l)| l.perspective(lambda.get(i)))
                            .collect(),
                    },
                    _ => ConvexFn::perspective(lambda.clone(), c),
                }
            }
            ConvexFn::Glue {
                partition,
                branches,
            } => {
                let cs: Vec<ConvexFn> = branches.iter().map(|b| b.collapse()).collect();
                let n = partition.n();
                let all_leaves: Option<Vec<&Vec<Leaf>>> = cs
                    .iter()
                    .map(|c| match c {
                        ConvexFn::Leaves { leaves } => Some(leaves),
                        _ => None,
                    })
                    .collect();
                match all_leaves {
                    Some(ls) => ConvexFn::Leaves {
                        leaves: (0..n)
                            .map(|i| ls[partition.part_of(i)][i].clone())
                            .collect(),
                    },
                    None => ConvexFn::glue(partition.clone(), cs),
                }
            }
            ConvexFn::Precompose { map, inner } => {
                let c = inner.collapse();
                if let ConvexFn::Leaves { leaves } = &c {
                    let mapped: Option<Vec<Leaf>> = leaves
                        .iter()
                        .enumerate()
                        .map(|(i, l)| l.precompose(map.matrix(i)))
                        .collect();
                    if let Some(leaves) = mapped {
                        return ConvexFn::Leaves { leaves };
                    }
                }
                ConvexFn::precompose(map.clone(), c)
            }
            ConvexFn::Translate { shift, inner } => {
                let c = inner.collapse();
                if let ConvexFn::Leaves { leaves } = &c {
                    let moved: Option<Vec<Leaf>> = leaves
                        .iter()
                        .enumerate()
                        .map(|(i, l)| l.translate(shift.row(i)))
                        .collect();
                    if let Some(leaves) = moved {
                        return ConvexFn::Leaves { leaves };
                    }
                }
                ConvexFn::translate(shift.clone(), c)
            }
        }
    }

    /// The leaf at atom `i` when the collapsed tree is a leaf table.
    pub fn leaf_at(&self, i: usize) -> Option<Leaf> {
        match self.collapse() {
            ConvexFn::Leaves { leaves } => Some(leaves[i].clone()),
            _ => None,
        }
    }
}

fn per_leaf(cs: &[ConvexFn], merge: impl Fn(usize, &[&Leaf]) -> Option<Leaf>) -> Option<ConvexFn> {
    let tables: Option<Vec<&Vec<Leaf>>> = cs
        .iter()
        .map(|c| match c {
            ConvexFn::Leaves { leaves } => Some(leaves),
            _ => None,
        })
        .collect();
    let tables = tables?;
    let n = tables[0].len();
    let leaves: Option<Vec<Leaf>> = (0..n)
        .map(|i| {
            let ls: Vec<&Leaf> = tables.iter().map(|t| &t[i]).collect();
            merge(i, &ls)
        })
        .collect();
    leaves.map(|leaves| ConvexFn::Leaves { leaves })
}

fn map_stratum(s: Stratum, f: impl Fn(&Domain) -> Domain) -> Stratum {
    match s {
        Stratum::Empty => Stratum::Empty,
        Stratum::Proper(d) => Stratum::Proper(f(&d)),
        Stratum::MinusOn(d) => Stratum::MinusOn(f(&d)),
    }
}

/// Combines strata of a sum (`minus_wins = or`) or a sup (`minus_wins = and`):
/// the result is `-inf` on the common domain when the rule says so, finite there
/// otherwise, and `+inf` off it.
fn combine(a: Stratum, b: Stratum, minus_wins: impl Fn(bool, bool) -> bool) -> Stratum {
    let (ma, da) = match a {
        Stratum::Empty => return Stratum::Empty,
        Stratum::Proper(d) => (false, d),
        Stratum::MinusOn(d) => (true, d),
    };
    let (mb, db) = match b {
        Stratum::Empty => return Stratum::Empty,
        Stratum::Proper(d) => (false, d),
        Stratum::MinusOn(d) => (true, d),
    };
    match da.intersect(&db) {
        None => Stratum::Empty,
        Some(d) if minus_wins(ma, mb) => Stratum::MinusOn(d),
        Some(d) => Stratum::Proper(d),
    }
}
