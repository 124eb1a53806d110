//! The free module `E = L0^d` over an atomic base, its L0-seminorms, the
//! random conjugate space of coefficient tables, module homomorphisms, and
//! convergence checkers for the (eps, lambda) and locally L0-convex topologies.

use crate::error::{Error, Result};
use crate::measure_l0::{AtomicBase, EventSet, FinitePartition, L0Bar};
use crate::serial;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// An element of `L0^d`: row `i` is the value at atom `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RowsRepr", into = "RowsRepr")]
pub struct RandomPoint {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct RowsRepr(#[serde(with = "serial::mat")] Vec<Vec<f64>>);

impl TryFrom<RowsRepr> for RandomPoint {
    type Error = Error;
    fn try_from(r: RowsRepr) -> Result<Self> {
        RandomPoint::from_rows(r.0)
    }
}

impl From<RandomPoint> for RowsRepr {
    fn from(p: RandomPoint) -> Self {
        RowsRepr(p.rows().map(|r| r.to_vec()).collect())
    }
}

impl RandomPoint {
    pub fn zeros(n: usize, d: usize) -> Self {
        RandomPoint {
            n,
            d,
            data: vec![0.0; n * d],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Shape("random point with no rows".into()));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged or empty rows".into()));
        }
        Ok(RandomPoint {
            n,
            d,
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// Rank-1 point from an L0 table.
    pub fn scalar(values: &[f64]) -> Self {
        RandomPoint {
            n: values.len(),
            d: 1,
            data: values.to_vec(),
        }
    }

    /// Same row at every atom.
    pub fn constant(n: usize, row: &[f64]) -> Self {
        RandomPoint {
            n,
            d: row.len(),
            data: (0..n).flat_map(|_| row.iter().copied()).collect(),
        }
    }

    pub fn from_fn(n: usize, d: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                data.push(f(i, j));
            }
        }
        RandomPoint { n, d, data }
    }

    /// Standard basis direction `e_j` at every atom.
    pub fn basis(n: usize, d: usize, j: usize) -> Self {
        Self::from_fn(n, d, |_, k| if k == j { 1.0 } else { 0.0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.d + j] = v;
    }

    /// First coordinate as an L0 table (rank-1 convenience).
    pub fn column(&self, j: usize) -> L0Bar {
        L0Bar::from_fn(self.n, |i| self.get(i, j))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check(&self, other: &RandomPoint) -> Result<()> {
        if self.n != other.n || self.d != other.d {
            return Err(Error::Shape(format!(
                "points of shape {}x{} and {}x{}",
                self.n, self.d, other.n, other.d
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &RandomPoint) -> Result<RandomPoint> {
        self.check(other)?;
        Ok(RandomPoint {
            n: self.n,
            d: self.d,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &RandomPoint) -> Result<RandomPoint> {
        self.check(other)?;
        Ok(RandomPoint {
            n: self.n,
            d: self.d,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn neg(&self) -> RandomPoint {
        RandomPoint {
            n: self.n,
            d: self.d,
            data: self.data.iter().map(|a| -a).collect(),
        }
    }

    /// Module multiplication: row `i` scaled by `xi_i`.
    pub fn scale(&self, xi: &L0Bar) -> Result<RandomPoint> {
        if xi.len() != self.n {
            return Err(Error::Shape("scalar table length".into()));
        }
        xi.require_finite("module scalar")?;
        let mut out = self.clone();
        for i in 0..self.n {
            let s = xi.get(i);
            for v in out.row_mut(i) {
                *v *= s;
            }
        }
        Ok(out)
    }

    pub fn scale_uniform(&self, s: f64) -> RandomPoint {
        RandomPoint {
            n: self.n,
            d: self.d,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// `x + t * y` with a real step.
    pub fn axpy(&self, t: f64, y: &RandomPoint) -> Result<RandomPoint> {
        self.check(y)?;
        Ok(RandomPoint {
            n: self.n,
            d: self.d,
            data: self
                .data
                .iter()
                .zip(&y.data)
                .map(|(a, b)| a + t * b)
                .collect(),
        })
    }

    /// `I_A x`: rows outside `a` set to zero.
    pub fn restrict(&self, a: &EventSet) -> RandomPoint {
        let mut out = self.clone();
        for i in 0..self.n {
            if !a.contains(i) {
                out.row_mut(i).fill(0.0);
            }
        }
        out
    }

    /// Per-atom euclidean inner product.
    pub fn dot(&self, other: &RandomPoint) -> Result<L0Bar> {
        self.check(other)?;
        Ok(L0Bar::from_fn(self.n, |i| {
            self.row(i)
                .iter()
                .zip(other.row(i))
                .map(|(a, b)| a * b)
                .sum()
        }))
    }

    pub fn euclidean_norm(&self) -> L0Bar {
        L0Bar::from_fn(self.n, |i| {
            self.row(i).iter().map(|a| a * a).sum::<f64>().sqrt()
        })
    }
}

/// Row selection along a partition.
pub fn glue_points(partition: &FinitePartition, xs: &[RandomPoint]) -> Result<RandomPoint> {
    if xs.len() != partition.parts().len() {
        return Err(Error::Partition(format!(
            "{} points for {} parts",
            xs.len(),
            partition.parts().len()
        )));
    }
    let first = &xs[0];
    if first.n() != partition.n() {
        return Err(Error::Shape("glue point rows vs partition".into()));
    }
    let mut out = RandomPoint::zeros(first.n(), first.d());
    for (part, x) in partition.parts().iter().zip(xs) {
        first.check(x)?;
        for i in part.indices() {
            out.row_mut(i).copy_from_slice(x.row(i));
        }
    }
    Ok(out)
}

/// An element of the random conjugate space, acting by per-atom inner products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomFunctional {
    coeffs: RandomPoint,
}

impl RandomFunctional {
    pub fn new(coeffs: RandomPoint) -> Self {
        RandomFunctional { coeffs }
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self::new(RandomPoint::zeros(n, d))
    }

    pub fn coeffs(&self) -> &RandomPoint {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> RandomPoint {
        self.coeffs
    }

    pub fn apply(&self, x: &RandomPoint) -> Result<L0Bar> {
        self.coeffs.dot(x)
    }
}

/// An L0-seminorm on `L0^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L0Seminorm {
    /// Euclidean norm of each row.
    Euclidean,
    /// `sum_j w_ij |x_ij|` with nonnegative per-atom weights.
    WeightedCoordinate(RandomPoint),
    /// `|x_ij|` for a fixed coordinate `j`.
    AbsCoordinate(usize),
}

impl L0Seminorm {
    pub fn eval(&self, x: &RandomPoint) -> Result<L0Bar> {
        match self {
            L0Seminorm::Euclidean => Ok(x.euclidean_norm()),
            L0Seminorm::WeightedCoordinate(w) => {
                w.check(x)?;
                Ok(L0Bar::from_fn(x.n(), |i| {
                    x.row(i)
                        .iter()
                        .zip(w.row(i))
                        .map(|(a, b)| a.abs() * b)
                        .sum()
                }))
            }
            L0Seminorm::AbsCoordinate(j) => {
                if *j >= x.d() {
                    return Err(Error::Shape(format!("coordinate {j} of rank {}", x.d())));
                }
                Ok(L0Bar::from_fn(x.n(), |i| x.get(i, *j).abs()))
            }
        }
    }

    /// Whether `||x|| = 0` forces `x = 0` for rank `d` over `n` atoms.
    pub fn separates(&self, n: usize, d: usize) -> bool {
        match self {
            L0Seminorm::Euclidean => true,
            L0Seminorm::WeightedCoordinate(w) => {
                w.n() == n && w.d() == d && (0..n).all(|i| w.row(i).iter().all(|&v| v > 0.0))
            }
            L0Seminorm::AbsCoordinate(_) => d == 1,
        }
    }

    /// Closed-form dual norm of a coefficient row.
    fn dual_row(&self, i: usize, g: &[f64]) -> f64 {
        match self {
            L0Seminorm::Euclidean => g.iter().map(|a| a * a).sum::<f64>().sqrt(),
            L0Seminorm::WeightedCoordinate(w) => g
                .iter()
                .zip(w.row(i))
                .map(|(a, b)| a.abs() / b)
                .fold(0.0, f64::max),
            L0Seminorm::AbsCoordinate(_) => g[0].abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormFamily {
    members: Vec<L0Seminorm>,
}

impl SeminormFamily {
    pub fn new(members: Vec<L0Seminorm>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Invalid("empty seminorm family".into()));
        }
        Ok(SeminormFamily { members })
    }

    pub fn euclidean() -> Self {
        SeminormFamily {
            members: vec![L0Seminorm::Euclidean],
        }
    }

    pub fn members(&self) -> &[L0Seminorm] {
        &self.members
    }

    /// The pointwise sup separates points.
    pub fn is_norm(&self, n: usize, d: usize) -> bool {
        if self.members.iter().any(|m| m.separates(n, d)) {
            return true;
        }
        // coordinate seminorms jointly covering every coordinate
        (0..d).all(|j| {
            self.members.iter().any(|m| match m {
                L0Seminorm::AbsCoordinate(k) => *k == j,
                L0Seminorm::WeightedCoordinate(w) => (0..n).all(|i| w.get(i, j) > 0.0),
                L0Seminorm::Euclidean => true,
            })
        })
    }

    /// `||x||_Q` for the sub-family `q` (indices into the members).
    pub fn family_sup(&self, q: &[usize], x: &RandomPoint) -> Result<L0Bar> {
        if q.is_empty() {
            return Err(Error::Invalid("empty seminorm sub-family".into()));
        }
        let evals = q
            .iter()
            .map(|&k| {
                self.members
                    .get(k)
                    .ok_or_else(|| Error::Invalid(format!("no seminorm {k}")))?
                    .eval(x)
            })
            .collect::<Result<Vec<_>>>()?;
        L0Bar::ess_sup(x.n(), evals.iter())
    }

    pub fn sup_all(&self, x: &RandomPoint) -> Result<L0Bar> {
        let q: Vec<usize> = (0..self.members.len()).collect();
        self.family_sup(&q, x)
    }
}

/// `||g|| = sup { |g(x)| : ||x|| <= 1 }` via the closed-form dual norm.
pub fn functional_norm(g: &RandomFunctional, norm: &L0Seminorm) -> Result<L0Bar> {
    let c = g.coeffs();
    if !norm.separates(c.n(), c.d()) {
        return Err(Error::Invalid(
            "functional norm needs a separating L0-norm, got a seminorm".into(),
        ));
    }
    Ok(L0Bar::from_fn(c.n(), |i| norm.dual_row(i, c.row(i))))
}

/// Lower bound on `||g||` from sampled unit vectors, refined by a local
/// pattern search around the best sample. Independent of the dual formula.
pub fn functional_norm_sampled<R: Rng>(
    g: &RandomFunctional,
    norm: &L0Seminorm,
    samples: usize,
    rng: &mut R,
) -> Result<L0Bar> {
    let c = g.coeffs();
    let (n, d) = (c.n(), c.d());
    let mut out = L0Bar::zeros(n);
    for i in 0..n {
        let unit_value = |v: &[f64]| -> f64 {
            let mut p = RandomPoint::zeros(n, d);
            p.row_mut(i).copy_from_slice(v);
            let nv = norm.eval(&p).map(|e| e.get(i)).unwrap_or(0.0);
            if nv <= 0.0 {
                return 0.0;
            }
            let gv: f64 = v.iter().zip(c.row(i)).map(|(a, b)| a * b).sum();
            gv.abs() / nv
        };
        let mut best_v = vec![0.0; d];
        let mut best = 0.0;
        for _ in 0..samples {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let val = unit_value(&v);
            if val > best {
                best = val;
                best_v = v;
            }
        }
        let mut step = 0.1;
        let mut rounds = 0;
        while step > 1e-12 && best > 0.0 && rounds < 100_000 {
            rounds += 1;
            let scale = best_v.iter().map(|a| a.abs()).fold(0.0, f64::max);
            best_v.iter_mut().for_each(|a| *a /= scale);
            let mut improved = false;
            for j in 0..d {
                for s in [step, -step] {
                    let mut v = best_v.clone();
                    v[j] += s;
                    let val = unit_value(&v);
                    if val > best {
                        best = val;
                        best_v = v;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        out.set(i, best);
    }
    Ok(out)
}

/// Per-atom linear maps `R^{d_in} -> R^{d_out}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HomRepr", into = "HomRepr")]
pub struct ModuleHom {
    maps: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct HomRepr(Vec<MatRepr>);

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct MatRepr(#[serde(with = "serial::mat")] Vec<Vec<f64>>);

impl TryFrom<HomRepr> for ModuleHom {
    type Error = Error;
    fn try_from(r: HomRepr) -> Result<Self> {
        ModuleHom::from_rows(r.0.into_iter().map(|m| m.0).collect())
    }
}

impl From<ModuleHom> for HomRepr {
    fn from(h: ModuleHom) -> Self {
        HomRepr(
            h.maps
                .iter()
                .map(|m| {
                    MatRepr(
                        (0..m.nrows())
                            .map(|r| m.row(r).iter().copied().collect())
                            .collect(),
                    )
                })
                .collect(),
        )
    }
}

impl ModuleHom {
    pub fn new(maps: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Shape("no per-atom maps".into()))?;
        let (r, c) = first.shape();
        if maps.iter().any(|m| m.shape() != (r, c)) || r == 0 || c == 0 {
            return Err(Error::Shape("per-atom maps differ in shape".into()));
        }
        Ok(ModuleHom { maps })
    }

    /// Row-major per-atom matrices.
    pub fn from_rows(maps: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mats = maps
            .into_iter()
            .map(|rows| {
                let r = rows.len();
                let c = rows.first().map(|x| x.len()).unwrap_or(0);
                if rows.iter().any(|x| x.len() != c) {
                    return Err(Error::Shape("ragged matrix".into()));
                }
                Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mats)
    }

    /// `lambda_i * I_d` at each atom.
    pub fn scalar(lambda: &[f64], d: usize) -> Self {
        ModuleHom {
            maps: lambda
                .iter()
                .map(|&l| DMatrix::identity(d, d) * l)
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.maps.len()
    }

    pub fn d_in(&self) -> usize {
        self.maps[0].ncols()
    }

    pub fn d_out(&self) -> usize {
        self.maps[0].nrows()
    }

    pub fn matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.maps[i]
    }

    pub fn apply_row(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let m = &self.maps[i];
        (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * x[c]).sum())
            .collect()
    }

    pub fn apply(&self, x: &RandomPoint) -> Result<RandomPoint> {
        if x.n() != self.n() || x.d() != self.d_in() {
            return Err(Error::Shape(format!(
                "map {}->{} over {} atoms applied to {}x{}",
                self.d_in(),
                self.d_out(),
                self.n(),
                x.n(),
                x.d()
            )));
        }
        let mut out = RandomPoint::zeros(x.n(), self.d_out());
        for i in 0..x.n() {
            let y = self.apply_row(i, x.row(i));
            out.row_mut(i).copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Per-atom transpose: `<adj(g), x> = <g, L x>`.
    pub fn adjoint(&self) -> ModuleHom {
        ModuleHom {
            maps: self.maps.iter().map(|m| m.transpose()).collect(),
        }
    }

    pub fn apply_functional(&self, g: &RandomFunctional) -> Result<RandomFunctional> {
        Ok(RandomFunctional::new(self.adjoint().apply(g.coeffs())?))
    }

    /// Per-atom inverse when every map is square and invertible.
    pub fn inverse(&self) -> Option<ModuleHom> {
        if self.d_in() != self.d_out() {
            return None;
        }
        let maps = self
            .maps
            .iter()
            .map(|m| {
                let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if scale == 0.0 || m.determinant().abs() <= 1e-14 * scale.powi(m.nrows() as i32) {
                    None
                } else {
                    m.clone().try_inverse()
                }
            })
            .collect::<Option<Vec<_>>>()?;
        Some(ModuleHom { maps })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    /// `c * rate^k`
    Geometric,
    /// `c / k^rate`
    Power,
}

/// Declared per-atom tail bound on `||x_k - x||`, `k >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: EnvelopeKind,
    pub c: L0Bar,
    pub rate: L0Bar,
}

impl Envelope {
    pub fn uniform(kind: EnvelopeKind, n: usize, c: f64, rate: f64) -> Self {
        Envelope {
            kind,
            c: L0Bar::constant(n, c),
            rate: L0Bar::constant(n, rate),
        }
    }

    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.at_real(i, k as f64)
    }

    /// The envelope at a real index, for tails beyond `usize`.
    fn at_real(&self, i: usize, k: f64) -> f64 {
        let (c, r) = (self.c.get(i), self.rate.get(i));
        match self.kind {
            EnvelopeKind::Geometric => c * r.powf(k),
            EnvelopeKind::Power => c / k.powf(r),
        }
    }

    /// `lim_k envelope` at atom `i`.
    pub fn limit(&self, i: usize) -> f64 {
        let (c, r) = (self.c.get(i), self.rate.get(i));
        if c == 0.0 {
            return 0.0;
        }
        match self.kind {
            EnvelopeKind::Geometric if r < 1.0 => 0.0,
            EnvelopeKind::Geometric if r == 1.0 => c,
            EnvelopeKind::Geometric => f64::INFINITY,
            EnvelopeKind::Power if r > 0.0 => 0.0,
            EnvelopeKind::Power if r == 0.0 => c,
            EnvelopeKind::Power => f64::INFINITY,
        }
    }

    /// Smallest `K` with `envelope(k) <= eps` for every `k >= K`, if any; a
    /// real number since slow power tails overflow `usize`.
    fn tail_index(&self, i: usize, eps: f64) -> Option<f64> {
        let (c, r) = (self.c.get(i), self.rate.get(i));
        if c <= eps {
            // nonincreasing envelopes stay below from k = 1
            if self.limit(i) <= c {
                return Some(1.0);
            }
        }
        if self.limit(i) > 0.0 {
            return None;
        }
        let k = match self.kind {
            EnvelopeKind::Geometric => (eps / c).ln() / r.ln(),
            EnvelopeKind::Power => (c / eps).powf(1.0 / r),
        };
        Some(k.ceil().max(1.0))
    }
}

/// Finite prefix `x_1, x_2, ...` plus a declared tail bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDescriptor {
    pub prefix: Vec<RandomPoint>,
    pub envelope: Envelope,
}

fn prefix_consistent(
    seq: &SequenceDescriptor,
    x: &RandomPoint,
    fam: &SeminormFamily,
) -> Result<bool> {
    for (k, xk) in seq.prefix.iter().enumerate() {
        let diff = xk.sub(x)?;
        for m in fam.members() {
            let dist = m.eval(&diff)?;
            for i in 0..x.n() {
                let bound = seq.envelope.at(i, k + 1);
                if dist.get(i) > bound + 1e-12 * (1.0 + bound.abs()) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Convergence in the (eps, lambda)-topology: for every `eps > 0` and
/// `lambda in (0,1]` the tail eventually lies in `N(Q, eps, lambda)`, decided
/// through the normalized measure of the atoms where the tail bound exceeds `eps`.
pub fn converges_el(
    base: &AtomicBase,
    seq: &SequenceDescriptor,
    x: &RandomPoint,
    fam: &SeminormFamily,
) -> Result<bool> {
    if !prefix_consistent(seq, x, fam)? {
        return Ok(false);
    }
    let mu = base.normalized();
    let lambda = mu.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
    for j in 0..64 {
        let eps = 2f64.powi(-j);
        let idx: Vec<Option<f64>> = (0..x.n())
            .map(|i| seq.envelope.tail_index(i, eps))
            .collect();
        let never: f64 = idx
            .iter()
            .zip(&mu)
            .filter(|(k, _)| k.is_none())
            .map(|(_, w)| w)
            .sum();
        if never >= lambda {
            return Ok(false);
        }
        let k_star = idx.iter().flatten().copied().fold(1.0, f64::max);
        let bad: f64 = (0..x.n())
            .filter(|&i| seq.envelope.at_real(i, k_star) > eps * (1.0 + 1e-9))
            .map(|i| mu[i])
            .sum();
        if bad >= lambda {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Convergence in the locally L0-convex topology: the tail eventually lies
/// in `x + {||.||_Q <= eps}` for every `eps in L0_++`; on a finite base this
/// holds iff the entrywise sup of the tail bound tends to zero.
pub fn converges_tc(
    _base: &AtomicBase,
    seq: &SequenceDescriptor,
    x: &RandomPoint,
    fam: &SeminormFamily,
) -> Result<bool> {
    if !prefix_consistent(seq, x, fam)? {
        return Ok(false);
    }
    let sup_limit = (0..x.n())
        .map(|i| seq.envelope.limit(i))
        .fold(0.0, f64::max);
    Ok(sup_limit == 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(rows: &[&[f64]]) -> RandomPoint {
        RandomPoint::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn seminorm_examples() {
        let x = pt(&[&[3.0, 4.0], &[0.0, 0.0]]);
        assert_eq!(
            L0Seminorm::Euclidean.eval(&x).unwrap().values(),
            &[5.0, 0.0]
        );
        let xi = L0Bar::new(vec![2.0, -1.0]);
        assert_eq!(
            L0Seminorm::Euclidean
                .eval(&x.scale(&xi).unwrap())
                .unwrap()
                .values(),
            &[10.0, 0.0]
        );
        let fam = SeminormFamily::new(vec![
            L0Seminorm::AbsCoordinate(0),
            L0Seminorm::AbsCoordinate(1),
        ])
        .unwrap();
        let y = pt(&[&[3.0, 4.0]]);
        assert_eq!(fam.family_sup(&[0, 1], &y).unwrap().values(), &[4.0]);
        assert!(fam.family_sup(&[], &y).is_err());
        assert!(fam.is_norm(1, 2));
    }

    #[test]
    fn glue_points_examples() {
        let a = pt(&[&[1.0, 1.0], &[2.0, 2.0]]);
        let b = pt(&[&[9.0, 9.0], &[8.0, 8.0]]);
        let g = glue_points(&FinitePartition::singletons(2), &[a.clone(), b.clone()]).unwrap();
        assert_eq!(g, pt(&[&[1.0, 1.0], &[8.0, 8.0]]));
        assert_eq!(
            glue_points(&FinitePartition::trivial(2), std::slice::from_ref(&a)).unwrap(),
            a
        );
        let na = L0Seminorm::Euclidean.eval(&a).unwrap();
        let nb = L0Seminorm::Euclidean.eval(&b).unwrap();
        let ng = L0Seminorm::Euclidean.eval(&g).unwrap();
        assert_eq!(
            ng,
            L0Bar::glue(&FinitePartition::singletons(2), &[na, nb]).unwrap()
        );
    }

    #[test]
    fn functional_norm_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = RandomFunctional::new(pt(&[&[3.0, 4.0], &[0.0, 1.0]]));
        let exact = functional_norm(&g, &L0Seminorm::Euclidean).unwrap();
        assert_eq!(exact.values(), &[5.0, 1.0]);
        let sampled =
            functional_norm_sampled(&g, &L0Seminorm::Euclidean, 10_000, &mut rng).unwrap();
        for i in 0..2 {
            assert!(sampled.get(i) <= exact.get(i) + 1e-12);
            assert!(exact.get(i) - sampled.get(i) <= 1e-6);
        }
        let z = RandomFunctional::zeros(2, 2);
        assert_eq!(
            functional_norm(&z, &L0Seminorm::Euclidean)
                .unwrap()
                .values(),
            &[0.0, 0.0]
        );
        assert!(functional_norm(&g, &L0Seminorm::AbsCoordinate(0)).is_err());
    }

    #[test]
    fn functional_norm_rank3_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = RandomFunctional::new(pt(&[&[1.0, -2.0, 0.5], &[0.3, 0.0, 4.0]]));
        let exact = functional_norm(&g, &L0Seminorm::Euclidean).unwrap();
        let sampled =
            functional_norm_sampled(&g, &L0Seminorm::Euclidean, 10_000, &mut rng).unwrap();
        for i in 0..2 {
            assert!(
                exact.get(i) - sampled.get(i) <= 1e-6,
                "{} vs {}",
                exact.get(i),
                sampled.get(i)
            );
        }
        let w = pt(&[&[1.0, 2.0, 0.5], &[1.0, 1.0, 1.0]]);
        let wn = L0Seminorm::WeightedCoordinate(w);
        let exact = functional_norm(&g, &wn).unwrap();
        let sampled = functional_norm_sampled(&g, &wn, 10_000, &mut rng).unwrap();
        for i in 0..2 {
            assert!(exact.get(i) - sampled.get(i) <= 1e-6);
            assert!(sampled.get(i) <= exact.get(i) + 1e-12);
        }
    }

    #[test]
    fn adjoint_examples() {
        let x = pt(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let g = RandomFunctional::new(pt(&[&[0.3, -4.0], &[2.0, 2.0]]));
        let two = ModuleHom::scalar(&[2.0, 2.0], 2);
        assert_eq!(two.adjoint(), two);
        let m = ModuleHom::from_rows(vec![
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            vec![vec![0.0, -1.0], vec![5.0, 0.5]],
        ])
        .unwrap();
        let lhs = m.apply_functional(&g).unwrap().apply(&x).unwrap();
        let rhs = g.apply(&m.apply(&x).unwrap()).unwrap();
        for i in 0..2 {
            assert!((lhs.get(i) - rhs.get(i)).abs() < 1e-12);
        }
        assert_eq!(m.adjoint().adjoint(), m);
        let zero = ModuleHom::scalar(&[0.0, 0.0], 2);
        assert_eq!(zero.adjoint().apply(&x).unwrap(), RandomPoint::zeros(2, 2));
    }

    fn seq_from(
        x: &RandomPoint,
        dir: &RandomPoint,
        coef: impl Fn(usize, usize) -> f64,
        len: usize,
    ) -> Vec<RandomPoint> {
        (1..=len)
            .map(|k| {
                let s = L0Bar::from_fn(x.n(), |i| coef(i, k));
                x.add(&dir.scale(&s).unwrap()).unwrap()
            })
            .collect()
    }

    #[test]
    fn convergence_examples() {
        let base = AtomicBase::uniform(2);
        let fam = SeminormFamily::euclidean();
        let x = pt(&[&[1.0], &[-2.0]]);
        let e1 = RandomPoint::basis(2, 1, 0);
        // x + e1/k
        let s1 = SequenceDescriptor {
            prefix: seq_from(&x, &e1, |_, k| 1.0 / k as f64, 20),
            envelope: Envelope::uniform(EnvelopeKind::Power, 2, 1.0, 1.0),
        };
        // alternating x, x + e1
        let s2 = SequenceDescriptor {
            prefix: seq_from(&x, &e1, |_, k| (k % 2) as f64, 20),
            envelope: Envelope::uniform(EnvelopeKind::Power, 2, 1.0, 0.0),
        };
        // I_A (1/k) e1
        let s3 = SequenceDescriptor {
            prefix: seq_from(
                &x,
                &e1,
                |i, k| if i == 0 { 1.0 / k as f64 } else { 0.0 },
                20,
            ),
            envelope: Envelope {
                kind: EnvelopeKind::Power,
                c: L0Bar::new(vec![1.0, 0.0]),
                rate: L0Bar::new(vec![1.0, 1.0]),
            },
        };
        let blowup = SequenceDescriptor {
            prefix: seq_from(&x, &e1, |_, k| k as f64, 20),
            envelope: Envelope::uniform(EnvelopeKind::Power, 2, 1.0, -1.0),
        };
        // x + e1 / sqrt(k): the tail index at eps = 2^-63 is beyond usize
        let slow = SequenceDescriptor {
            prefix: seq_from(&x, &e1, |_, k| (k as f64).powf(-0.5), 20),
            envelope: Envelope::uniform(EnvelopeKind::Power, 2, 1.0, 0.5),
        };
        let constant = SequenceDescriptor {
            prefix: vec![x.clone(); 5],
            envelope: Envelope::uniform(EnvelopeKind::Geometric, 2, 0.0, 0.5),
        };
        for (s, want) in [
            (&s1, true),
            (&s2, false),
            (&s3, true),
            (&blowup, false),
            (&slow, true),
            (&constant, true),
        ] {
            assert_eq!(converges_el(&base, s, &x, &fam).unwrap(), want);
            assert_eq!(converges_tc(&base, s, &x, &fam).unwrap(), want);
        }
        // a prefix that violates its declared envelope is not certified
        let lying = SequenceDescriptor {
            prefix: seq_from(&x, &e1, |_, _| 1.0, 5),
            envelope: Envelope::uniform(EnvelopeKind::Geometric, 2, 0.5, 0.5),
        };
        assert!(!converges_el(&base, &lying, &x, &fam).unwrap());
        assert!(!converges_tc(&base, &lying, &x, &fam).unwrap());
    }

    fn row2() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0..10.0f64, 2)
    }

    proptest! {
        #[test]
        fn seminorm_axioms(x in row2(), y in row2(), xi in -5.0..5.0f64, w in proptest::collection::vec(0.0..3.0f64, 2)) {
            let px = RandomPoint::from_rows(vec![x]).unwrap();
            let py = RandomPoint::from_rows(vec![y]).unwrap();
            let kinds = [
                L0Seminorm::Euclidean,
                L0Seminorm::WeightedCoordinate(RandomPoint::from_rows(vec![w]).unwrap()),
                L0Seminorm::AbsCoordinate(1),
            ];
            for s in &kinds {
                let nx = s.eval(&px).unwrap().get(0);
                let ny = s.eval(&py).unwrap().get(0);
                let nxy = s.eval(&px.add(&py).unwrap()).unwrap().get(0);
                prop_assert!(nxy <= nx + ny + 1e-12 * (1.0 + nx + ny));
                let ns = s.eval(&px.scale(&L0Bar::new(vec![xi])).unwrap()).unwrap().get(0);
                prop_assert!((ns - xi.abs() * nx).abs() <= 1e-12 * (1.0 + ns));
                prop_assert!(nx >= 0.0);
            }
        }

        #[test]
        fn homomorphism_and_adjoint(m in proptest::collection::vec(-3.0..3.0f64, 4), x in row2(), g in row2(), xi in -2.0..2.0f64) {
            let h = ModuleHom::from_rows(vec![vec![m[0..2].to_vec(), m[2..4].to_vec()]]).unwrap();
            let px = RandomPoint::from_rows(vec![x]).unwrap();
            let s = L0Bar::new(vec![xi]);
            let a = h.apply(&px.scale(&s).unwrap()).unwrap();
            let b = h.apply(&px).unwrap().scale(&s).unwrap();
            for j in 0..2 {
                prop_assert!((a.get(0, j) - b.get(0, j)).abs() < 1e-9);
            }
            let gf = RandomFunctional::new(RandomPoint::from_rows(vec![g]).unwrap());
            let lhs = h.apply_functional(&gf).unwrap().apply(&px).unwrap().get(0);
            let rhs = gf.apply(&h.apply(&px).unwrap()).unwrap().get(0);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
