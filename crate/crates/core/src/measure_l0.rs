//! Finite atomic measure spaces and the lattice of extended L0 scalars.
//!
//! On an `n`-atom base an equivalence class of measurable functions is a
//! table of `n` values, "almost everywhere" means "on every atom", and every
//! countable partition has at most `n` nonempty parts. The arithmetic follows
//! the extended-real conventions `0 * (+-inf) = 0` and `(+inf) + (-inf) = +inf`.

use crate::error::{Error, Result};
use crate::serial;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A finite measure space with labeled atoms of strictly positive weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicBase {
    atoms: Vec<Atom>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub label: String,
    #[serde(with = "serial::scalar")]
    pub weight: f64,
}

impl AtomicBase {
    pub fn new(atoms: Vec<(String, f64)>) -> Result<Self> {
        let atoms: Vec<Atom> = atoms
            .into_iter()
            .map(|(label, weight)| Atom { label, weight })
            .collect();
        Self::from_atoms(atoms)
    }

    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Invalid("atomic base needs at least one atom".into()));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::Invalid(format!(
                    "atom {i} ({}) has non-positive or non-finite weight {}",
                    a.label, a.weight
                )));
            }
            if atoms[..i].iter().any(|b| b.label == a.label) {
                return Err(Error::Invalid(format!(
                    "duplicate atom label {:?}",
                    a.label
                )));
            }
        }
        Ok(AtomicBase { atoms })
    }

    /// `n` atoms labeled `w0..` with unit weight.
    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1, "atomic base needs at least one atom");
        AtomicBase {
            atoms: (0..n)
                .map(|i| Atom {
                    label: format!("w{i}"),
                    weight: 1.0,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }

    /// The probability `mu / mu(Omega)`.
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.atoms.iter().map(|a| a.weight).sum();
        self.atoms.iter().map(|a| a.weight / total).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a.label == label)
    }

    /// Normalized measure of an event.
    pub fn measure(&self, a: &EventSet) -> f64 {
        let w = self.normalized();
        a.indices().map(|i| w[i]).sum()
    }
}

/// Extended addition with `(+inf) + (-inf) = +inf`.
pub fn ext_add(a: f64, b: f64) -> f64 {
    if (a == f64::INFINITY && b == f64::NEG_INFINITY)
        || (a == f64::NEG_INFINITY && b == f64::INFINITY)
    {
        f64::INFINITY
    } else {
        a + b
    }
}

/// Extended subtraction `a + (-b)`, so `inf - inf = inf`.
pub fn ext_sub(a: f64, b: f64) -> f64 {
    ext_add(a, -b)
}

/// Extended multiplication with `0 * (+-inf) = 0`.
pub fn ext_mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// A table of extended reals, one per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct L0Bar {
    values: Vec<f64>,
}

impl Serialize for L0Bar {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serial::vec::serialize(&self.values, s)
    }
}

impl<'de> Deserialize<'de> for L0Bar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        serial::vec::deserialize(d).map(|values| L0Bar { values })
    }
}

impl From<Vec<f64>> for L0Bar {
    fn from(values: Vec<f64>) -> Self {
        L0Bar { values }
    }
}

impl L0Bar {
    pub fn new(values: Vec<f64>) -> Self {
        L0Bar { values }
    }

    pub fn constant(n: usize, v: f64) -> Self {
        L0Bar { values: vec![v; n] }
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        L0Bar {
            values: (0..n).map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    fn check_shape(&self, other: &L0Bar) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "L0 tables over {} and {} atoms",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &L0Bar, f: impl Fn(f64, f64) -> f64) -> Result<L0Bar> {
        self.check_shape(other)?;
        Ok(L0Bar {
            values: self
                .iter()
                .zip(other.iter())
                .map(|(a, b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> L0Bar {
        L0Bar {
            values: self.iter().map(f).collect(),
        }
    }

    pub fn ext_add(&self, other: &L0Bar) -> Result<L0Bar> {
        self.zip_with(other, ext_add)
    }

    pub fn ext_sub(&self, other: &L0Bar) -> Result<L0Bar> {
        self.zip_with(other, ext_sub)
    }

    pub fn ext_mul(&self, other: &L0Bar) -> Result<L0Bar> {
        self.zip_with(other, ext_mul)
    }

    /// Every entry finite (an element of L0).
    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Every entry finite and strictly positive (L0_{++}).
    pub fn is_strictly_positive(&self) -> bool {
        self.iter().all(|v| v.is_finite() && v > 0.0)
    }

    /// Every entry finite and nonnegative (L0_+).
    pub fn is_nonnegative(&self) -> bool {
        self.iter().all(|v| v.is_finite() && v >= 0.0)
    }

    pub fn require_finite(&self, what: &str) -> Result<()> {
        let bad: Vec<usize> = (0..self.len())
            .filter(|&i| !self.get(i).is_finite())
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::precondition(bad, format!("{what} must be finite")))
        }
    }

    pub fn require_strictly_positive(&self, what: &str) -> Result<()> {
        let bad: Vec<usize> = (0..self.len())
            .filter(|&i| !(self.get(i).is_finite() && self.get(i) > 0.0))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::precondition(
                bad,
                format!("{what} must lie in L0_++"),
            ))
        }
    }

    /// `a <= b` on every atom.
    pub fn leq(&self, other: &L0Bar) -> Result<bool> {
        self.check_shape(other)?;
        Ok(self.iter().zip(other.iter()).all(|(a, b)| a <= b))
    }

    /// `a <= b` on every atom of `on`.
    pub fn leq_on(&self, other: &L0Bar, on: &EventSet) -> Result<bool> {
        self.check_shape(other)?;
        if on.len() != self.len() {
            return Err(Error::Shape("event mask length".into()));
        }
        Ok(on.indices().all(|i| self.get(i) <= other.get(i)))
    }

    /// `(a < b)`, `(a = b)`, `(a > b)` as a partition of the atoms.
    pub fn comparison_strata(&self, other: &L0Bar) -> Result<(EventSet, EventSet, EventSet)> {
        self.check_shape(other)?;
        let n = self.len();
        let mut lt = EventSet::empty(n);
        let mut eq = EventSet::empty(n);
        let mut gt = EventSet::empty(n);
        for i in 0..n {
            let (a, b) = (self.get(i), other.get(i));
            if a < b {
                lt.insert(i);
            } else if a > b {
                gt.insert(i);
            } else {
                eq.insert(i);
            }
        }
        Ok((lt, eq, gt))
    }

    /// Entrywise supremum; the empty family over `n` atoms gives `-inf`.
    pub fn ess_sup<'a>(n: usize, family: impl IntoIterator<Item = &'a L0Bar>) -> Result<L0Bar> {
        let mut out = L0Bar::constant(n, f64::NEG_INFINITY);
        for a in family {
            out.check_shape(a)?;
            for i in 0..n {
                if a.get(i) > out.get(i) {
                    out.set(i, a.get(i));
                }
            }
        }
        Ok(out)
    }

    /// Entrywise infimum; the empty family over `n` atoms gives `+inf`.
    pub fn ess_inf<'a>(n: usize, family: impl IntoIterator<Item = &'a L0Bar>) -> Result<L0Bar> {
        let mut out = L0Bar::constant(n, f64::INFINITY);
        for a in family {
            out.check_shape(a)?;
            for i in 0..n {
                if a.get(i) < out.get(i) {
                    out.set(i, a.get(i));
                }
            }
        }
        Ok(out)
    }

    /// Concatenate `branches` along `partition`: the result agrees with
    /// branch `k` on part `k`.
    pub fn glue(partition: &FinitePartition, branches: &[L0Bar]) -> Result<L0Bar> {
        if branches.len() != partition.parts().len() {
            return Err(Error::Partition(format!(
                "{} branches for {} parts",
                branches.len(),
                partition.parts().len()
            )));
        }
        let n = partition.n();
        let mut out = L0Bar::zeros(n);
        for (part, b) in partition.parts().iter().zip(branches) {
            if b.len() != n {
                return Err(Error::Shape("glue branch length".into()));
            }
            for i in part.indices() {
                out.set(i, b.get(i));
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// An event, i.e. a set of atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventSet {
    mask: Vec<bool>,
}

impl EventSet {
    pub fn empty(n: usize) -> Self {
        EventSet {
            mask: vec![false; n],
        }
    }

    pub fn full(n: usize) -> Self {
        EventSet {
            mask: vec![true; n],
        }
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        EventSet { mask }
    }

    pub fn from_indices(n: usize, idx: &[usize]) -> Self {
        let mut e = Self::empty(n);
        for &i in idx {
            e.mask[i] = true;
        }
        e
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn insert(&mut self, i: usize) {
        self.mask[i] = true;
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn complement(&self) -> EventSet {
        EventSet {
            mask: self.mask.iter().map(|b| !b).collect(),
        }
    }

    pub fn union(&self, other: &EventSet) -> EventSet {
        EventSet {
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    pub fn intersection(&self, other: &EventSet) -> EventSet {
        EventSet {
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(a, b)| *a && *b)
                .collect(),
        }
    }

    /// The indicator class as an L0 table with entries in {0, 1}.
    pub fn indicator(&self) -> L0Bar {
        L0Bar::new(
            self.mask
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
    }
}

/// A finite measurable partition of the atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct FinitePartition {
    n: usize,
    parts: Vec<EventSet>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    atoms: usize,
    parts: Vec<Vec<usize>>,
}

impl TryFrom<PartitionRepr> for FinitePartition {
    type Error = Error;

    fn try_from(r: PartitionRepr) -> Result<Self> {
        if r.parts.iter().flatten().any(|&i| i >= r.atoms) {
            return Err(Error::Partition("atom index out of range".into()));
        }
        FinitePartition::new(
            r.parts
                .iter()
                .map(|p| EventSet::from_indices(r.atoms, p))
                .collect(),
        )
    }
}

impl From<FinitePartition> for PartitionRepr {
    fn from(p: FinitePartition) -> Self {
        PartitionRepr {
            atoms: p.n,
            parts: p.parts.iter().map(|e| e.indices().collect()).collect(),
        }
    }
}

impl FinitePartition {
    pub fn new(parts: Vec<EventSet>) -> Result<Self> {
        let n = parts
            .first()
            .map(|p| p.len())
            .ok_or_else(|| Error::Partition("no parts".into()))?;
        let mut seen = vec![false; n];
        for p in &parts {
            if p.len() != n {
                return Err(Error::Partition("parts over different bases".into()));
            }
            for i in p.indices() {
                if seen[i] {
                    return Err(Error::Partition(format!("atom {i} in two parts")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Partition(format!("atom {i} not covered")));
        }
        Ok(FinitePartition { n, parts })
    }

    /// `{A, A^c}`.
    pub fn binary(a: &EventSet) -> Self {
        FinitePartition {
            n: a.len(),
            parts: vec![a.clone(), a.complement()],
        }
    }

    pub fn trivial(n: usize) -> Self {
        FinitePartition {
            n,
            parts: vec![EventSet::full(n)],
        }
    }

    pub fn singletons(n: usize) -> Self {
        FinitePartition {
            n,
            parts: (0..n).map(|i| EventSet::from_indices(n, &[i])).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn parts(&self) -> &[EventSet] {
        &self.parts
    }

    /// Index of the part containing atom `i`.
    pub fn part_of(&self, i: usize) -> usize {
        self.parts
            .iter()
            .position(|p| p.contains(i))
            .expect("partition covers every atom")
    }
}
