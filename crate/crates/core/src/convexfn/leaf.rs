//! Per-scenario convex building blocks.

use super::pwl::{Pwl1, ROUNDOFF};
use crate::error::{Error, Result};
use crate::measure_l0::{ext_add, ext_mul};
use crate::serial;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A closed convex function `R^d -> [-inf, +inf]` with a closed-form description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Leaf {
    /// `1/2 x'Qx + b'x + c` with `Q` symmetric positive semidefinite.
    Quadratic {
        #[serde(with = "serial::mat")]
        q: Vec<Vec<f64>>,
        #[serde(with = "serial::vec")]
        b: Vec<f64>,
        #[serde(with = "serial::scalar")]
        c: f64,
    },
    Pwl(Pwl1),
    /// Moreau envelope `min_y p(y) + (x - y)^2 / (2 mu)`.
    MoreauPwl {
        pwl: Pwl1,
        #[serde(with = "serial::scalar")]
        mu: f64,
    },
    /// `p(x) + mu/2 x^2`.
    PwlQuad {
        pwl: Pwl1,
        #[serde(with = "serial::scalar")]
        mu: f64,
    },
    /// `offset` on the box, `+inf` off it (everywhere `+inf` if some `l > u`).
    Box {
        #[serde(with = "serial::vec")]
        lower: Vec<f64>,
        #[serde(with = "serial::vec")]
        upper: Vec<f64>,
        #[serde(with = "serial::scalar", default)]
        offset: f64,
    },
    /// Support function of the box plus `offset` (everywhere `-inf` if the box is empty).
    Support {
        #[serde(with = "serial::vec")]
        lower: Vec<f64>,
        #[serde(with = "serial::vec")]
        upper: Vec<f64>,
        #[serde(with = "serial::scalar", default)]
        offset: f64,
    },
    Affine {
        #[serde(with = "serial::vec")]
        b: Vec<f64>,
        #[serde(with = "serial::scalar")]
        c: f64,
    },
    MinusInf {
        dim: usize,
    },
    PlusInf {
        dim: usize,
    },
}

/// Per-scenario domain description.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// Product of closed intervals, ends possibly infinite; nonempty.
    Box(Vec<(f64, f64)>),
    /// Nonempty, shape unknown, contains the point.
    Witness(Vec<f64>),
    /// Nonempty status not decided structurally.
    Unknown,
}

/// Structural classification of one scenario function.
#[derive(Debug, Clone, PartialEq)]
pub enum Stratum {
    /// Identically `+inf`.
    Empty,
    /// Finite exactly on the domain, `+inf` elsewhere.
    Proper(Domain),
    /// `-inf` on the domain, `+inf` elsewhere.
    MinusOn(Domain),
}

pub(crate) fn full_box(d: usize) -> Domain {
    Domain::Box(vec![(f64::NEG_INFINITY, f64::INFINITY); d])
}

impl Domain {
    pub fn is_full(&self) -> bool {
        matches!(self, Domain::Box(b) if b.iter().all(|(l, u)| l.is_infinite() && u.is_infinite()))
    }

    pub fn contains(&self, x: &[f64]) -> Option<bool> {
        match self {
            Domain::Box(b) => Some(b.iter().zip(x).all(|((l, u), v)| l <= v && v <= u)),
            _ => None,
        }
    }

    /// A point of the domain, preferring the origin.
    pub fn witness(&self) -> Option<Vec<f64>> {
        match self {
            Domain::Box(b) => Some(
                b.iter()
                    .map(|&(l, u)| match (l.is_finite(), u.is_finite()) {
                        _ if l <= 0.0 && 0.0 <= u => 0.0,
                        (true, true) => 0.5 * (l + u),
                        (true, false) => l + 1.0,
                        (false, true) => u - 1.0,
                        (false, false) => 0.0,
                    })
                    .collect(),
            ),
            Domain::Witness(w) => Some(w.clone()),
            Domain::Unknown => None,
        }
    }

    /// `None` when provably empty.
    pub fn intersect(&self, other: &Domain) -> Option<Domain> {
        match (self, other) {
            (Domain::Box(a), Domain::Box(b)) => {
                let c: Vec<(f64, f64)> = a
                    .iter()
                    .zip(b)
                    .map(|(&(l1, u1), &(l2, u2))| (l1.max(l2), u1.min(u2)))
                    .collect();
                c.iter().all(|(l, u)| l <= u).then_some(Domain::Box(c))
            }
            (d, w @ Domain::Witness(x)) | (w @ Domain::Witness(x), d) => match d.contains(x) {
                Some(true) => Some(w.clone()),
                _ if d.is_full() => Some(w.clone()),
                _ => Some(Domain::Unknown),
            },
            _ => Some(Domain::Unknown),
        }
    }

    pub fn map_box(
        &self,
        f: impl Fn(usize, f64, f64) -> (f64, f64),
        g: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Domain {
        match self {
            Domain::Box(b) => Domain::Box(
                b.iter()
                    .enumerate()
                    .map(|(j, &(l, u))| f(j, l, u))
                    .collect(),
            ),
            Domain::Witness(w) => Domain::Witness(g(w)),
            Domain::Unknown => Domain::Unknown,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat(q: &[Vec<f64>]) -> DMatrix<f64> {
    let d = q.len();
    DMatrix::from_fn(d, d, |r, c| q[r][c])
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn qx(q: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    q.iter().map(|r| dot(r, x)).collect()
}

/// Support function of `[l, u]` at `g`, with `0 * inf = 0`.
fn interval_support(g: f64, l: f64, u: f64) -> f64 {
    if g > 0.0 {
        g * u
    } else if g < 0.0 {
        g * l
    } else {
        0.0
    }
}

impl Leaf {
    pub fn quadratic(q: Vec<Vec<f64>>, b: Vec<f64>, c: f64) -> Result<Leaf> {
        let d = b.len();
        if d == 0 || q.len() != d || q.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("quadratic leaf dimensions".into()));
        }
        let leaf = Leaf::Quadratic { q, b, c };
        leaf.validate()?;
        Ok(leaf)
    }

    /// `1/2 a x^2 + b x + c` in one variable.
    pub fn quad1(a: f64, b: f64, c: f64) -> Leaf {
        Leaf::Quadratic {
            q: vec![vec![a]],
            b: vec![b],
            c,
        }
    }

    /// `1/2 |x|^2` in `d` variables.
    pub fn half_sq(d: usize) -> Leaf {
        Leaf::Quadratic {
            q: (0..d)
                .map(|r| (0..d).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
                .collect(),
            b: vec![0.0; d],
            c: 0.0,
        }
    }

    /// `|x - center|` in one variable.
    pub fn abs1(center: f64) -> Leaf {
        Leaf::Pwl(Pwl1::with_tails(vec![center], vec![0.0], Some(-1.0), Some(1.0)).expect("valid"))
    }

    pub fn interval(l: f64, u: f64) -> Leaf {
        Leaf::Box {
            lower: vec![l],
            upper: vec![u],
            offset: 0.0,
        }
    }

    pub fn affine1(b: f64, c: f64) -> Leaf {
        Leaf::Affine { b: vec![b], c }
    }

    pub fn dim(&self) -> usize {
        match self {
            Leaf::Quadratic { b, .. } | Leaf::Affine { b, .. } => b.len(),
            Leaf::Pwl(_) | Leaf::MoreauPwl { .. } | Leaf::PwlQuad { .. } => 1,
            Leaf::Box { lower, .. } | Leaf::Support { lower, .. } => lower.len(),
            Leaf::MinusInf { dim } | Leaf::PlusInf { dim } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Leaf::Quadratic { q, b, c } => {
                let d = b.len();
                if d == 0 || q.len() != d || q.iter().any(|r| r.len() != d) {
                    return Err(Error::Shape("quadratic leaf dimensions".into()));
                }
                if !finite(b) || !c.is_finite() || q.iter().any(|r| !finite(r)) {
                    return Err(Error::Invalid(
                        "quadratic coefficients must be finite".into(),
                    ));
                }
                let m = mat(q);
                let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if (&m - m.transpose())
                    .iter()
                    .any(|v| v.abs() > 1e-12 * (1.0 + scale))
                {
                    return Err(Error::Invalid("quadratic form is not symmetric".into()));
                }
                let min_eig = m
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                if min_eig < -1e-12 * (1.0 + scale) {
                    return Err(Error::NotConvex(format!(
                        "quadratic form has eigenvalue {min_eig}"
                    )));
                }
            }
            Leaf::MoreauPwl { mu, .. } | Leaf::PwlQuad { mu, .. } => {
                if !(mu.is_finite() && *mu > 0.0) {
                    return Err(Error::Invalid(
                        "smoothing parameter must be positive".into(),
                    ));
                }
            }
            Leaf::Box {
                lower,
                upper,
                offset,
            }
            | Leaf::Support {
                lower,
                upper,
                offset,
            } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::Shape("box bounds dimensions".into()));
                }
                if lower.iter().chain(upper).any(|v| v.is_nan()) || !offset.is_finite() {
                    return Err(Error::Invalid("box bounds".into()));
                }
                if lower.contains(&f64::INFINITY) || upper.contains(&f64::NEG_INFINITY) {
                    return Err(Error::Invalid(
                        "box bound on the wrong side of infinity".into(),
                    ));
                }
            }
            Leaf::Affine { b, c } => {
                if b.is_empty() || !finite(b) || !c.is_finite() {
                    return Err(Error::Invalid("affine coefficients".into()));
                }
            }
            Leaf::MinusInf { dim } | Leaf::PlusInf { dim } => {
                if *dim == 0 {
                    return Err(Error::Shape("zero-dimensional constant".into()));
                }
            }
            Leaf::Pwl(_) => {}
        }
        Ok(())
    }

    fn box_empty(lower: &[f64], upper: &[f64]) -> bool {
        lower.iter().zip(upper).any(|(l, u)| l > u)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Leaf::Quadratic { q, b, c } => 0.5 * dot(x, &qx(q, x)) + dot(b, x) + c,
            Leaf::Pwl(p) => p.eval(x[0]),
            Leaf::MoreauPwl { pwl, mu } => pwl.moreau(x[0], *mu).0,
            Leaf::PwlQuad { pwl, mu } => ext_add(pwl.eval(x[0]), 0.5 * mu * x[0] * x[0]),
            Leaf::Box {
                lower,
                upper,
                offset,
            } => {
                let inside = lower.iter().zip(upper).zip(x).all(|((l, u), v)| {
                    let v = snap_to_box(*v, *l, *u);
                    *l <= v && v <= *u
                });
                if inside {
                    *offset
                } else {
                    f64::INFINITY
                }
            }
            Leaf::Support {
                lower,
                upper,
                offset,
            } => {
                if Self::box_empty(lower, upper) {
                    return f64::NEG_INFINITY;
                }
                let s = x
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .fold(0.0, |acc, (&g, (&l, &u))| {
                        ext_add(acc, interval_support(g, l, u))
                    });
                ext_add(s, *offset)
            }
            Leaf::Affine { b, c } => dot(b, x) + c,
            Leaf::MinusInf { .. } => f64::NEG_INFINITY,
            Leaf::PlusInf { .. } => f64::INFINITY,
        }
    }

    /// Exact `phi'(x; y)` for `x` in the domain.
    pub fn directional(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Leaf::Quadratic { q, b, .. } => {
                let g: Vec<f64> = qx(q, x).iter().zip(b).map(|(a, b)| a + b).collect();
                dot(&g, y)
            }
            Leaf::Pwl(p) => pwl_directional(p, x[0], y[0]),
            Leaf::MoreauPwl { pwl, mu } => pwl.moreau(x[0], *mu).1 * y[0],
            Leaf::PwlQuad { pwl, mu } => {
                ext_add(pwl_directional(pwl, x[0], y[0]), mu * x[0] * y[0])
            }
            Leaf::Box { lower, upper, .. } => {
                let stays = lower
                    .iter()
                    .zip(upper)
                    .zip(x.iter().zip(y))
                    .all(|((l, u), (v, w))| {
                        let v = snap_to_box(*v, *l, *u);
                        (*w <= 0.0 || v < *u) && (*w >= 0.0 || v > *l)
                    });
                if stays {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Leaf::Support { lower, upper, .. } => x
                .iter()
                .zip(y)
                .zip(lower.iter().zip(upper))
                .fold(0.0, |acc, ((&g, &w), (&l, &u))| {
                    let t = if g > 0.0 {
                        ext_mul(u, w)
                    } else if g < 0.0 {
                        ext_mul(l, w)
                    } else {
                        interval_support(w, l, u)
                    };
                    ext_add(acc, t)
                }),
            Leaf::Affine { b, .. } => dot(b, y),
            Leaf::MinusInf { .. } | Leaf::PlusInf { .. } => f64::NAN,
        }
    }

    /// Gradient where the leaf is differentiable on the whole line / space.
    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            Leaf::Quadratic { q, b, .. } => {
                Some(qx(q, x).iter().zip(b).map(|(a, b)| a + b).collect())
            }
            Leaf::Affine { b, .. } => Some(b.clone()),
            Leaf::MoreauPwl { pwl, mu } => Some(vec![pwl.moreau(x[0], *mu).1]),
            _ => None,
        }
    }

    /// Points where a rank-1 leaf may fail to be differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Leaf::Pwl(p) | Leaf::PwlQuad { pwl: p, .. } => p.knots().to_vec(),
            Leaf::Box { lower, upper, .. } if lower.len() == 1 => [lower[0], upper[0]]
                .into_iter()
                .filter(|v| v.is_finite())
                .collect(),
            Leaf::Support { lower, .. } if lower.len() == 1 => vec![0.0],
            _ => Vec::new(),
        }
    }

    /// Kinks plus the points where the derivative of a rank-1 leaf has a kink.
    pub fn curvature_breaks(&self) -> Vec<f64> {
        let mut out = self.kinks();
        if let Leaf::MoreauPwl { pwl, mu } = self {
            // the prox sticks to knot k for x in [k + mu s_k, k + mu s_{k+1}]
            let s = pwl.augmented_slopes();
            for (k, knot) in pwl.knots().iter().enumerate() {
                out.extend(
                    [knot + mu * s[k], knot + mu * s[k + 1]]
                        .into_iter()
                        .filter(|v| v.is_finite()),
                );
            }
        }
        out
    }

    pub fn stratum(&self) -> Stratum {
        let d = self.dim();
        match self {
            Leaf::Quadratic { .. } | Leaf::Affine { .. } | Leaf::MoreauPwl { .. } => {
                Stratum::Proper(full_box(d))
            }
            Leaf::Pwl(p) | Leaf::PwlQuad { pwl: p, .. } => {
                Stratum::Proper(Domain::Box(vec![p.domain()]))
            }
            Leaf::Box { lower, upper, .. } => {
                if Self::box_empty(lower, upper) {
                    Stratum::Empty
                } else {
                    Stratum::Proper(Domain::Box(
                        lower.iter().copied().zip(upper.iter().copied()).collect(),
                    ))
                }
            }
            Leaf::Support { lower, upper, .. } => {
                if Self::box_empty(lower, upper) {
                    return Stratum::MinusOn(full_box(d));
                }
                Stratum::Proper(Domain::Box(
                    lower
                        .iter()
                        .zip(upper)
                        .map(|(&l, &u)| {
                            (
                                if l.is_finite() {
                                    f64::NEG_INFINITY
                                } else {
                                    0.0
                                },
                                if u.is_finite() { f64::INFINITY } else { 0.0 },
                            )
                        })
                        .collect(),
                ))
            }
            Leaf::MinusInf { .. } => Stratum::MinusOn(full_box(d)),
            Leaf::PlusInf { .. } => Stratum::Empty,
        }
    }

    /// Exact conjugate; `NeedsGrid` for singular nonzero quadratic forms.
    pub fn conjugate(&self) -> Result<Leaf> {
        Ok(match self {
            Leaf::Quadratic { q, b, c } => {
                let m = mat(q);
                let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if scale == 0.0 {
                    return Ok(Leaf::Box {
                        lower: b.clone(),
                        upper: b.clone(),
                        offset: -c,
                    });
                }
                let min_eig = m
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                if min_eig <= 1e-12 * scale {
                    return Err(Error::NeedsGrid("singular quadratic form".into()));
                }
                let inv = m
                    .try_inverse()
                    .ok_or_else(|| Error::NeedsGrid("singular quadratic form".into()))?;
                let inv = (&inv + inv.transpose()) * 0.5;
                let qinv = rows(&inv);
                let ib = qx(&qinv, b);
                Leaf::Quadratic {
                    q: qinv,
                    b: ib.iter().map(|v| -v).collect(),
                    c: 0.5 * dot(b, &ib) - c,
                }
            }
            Leaf::Pwl(p) => Leaf::Pwl(p.conjugate()),
            Leaf::MoreauPwl { pwl, mu } => Leaf::PwlQuad {
                pwl: pwl.conjugate(),
                mu: *mu,
            },
            Leaf::PwlQuad { pwl, mu } => Leaf::MoreauPwl {
                pwl: pwl.conjugate(),
                mu: *mu,
            },
            Leaf::Box {
                lower,
                upper,
                offset,
            } => {
                if Self::box_empty(lower, upper) {
                    Leaf::MinusInf { dim: lower.len() }
                } else {
                    Leaf::Support {
                        lower: lower.clone(),
                        upper: upper.clone(),
                        offset: -offset,
                    }
                }
            }
            Leaf::Support {
                lower,
                upper,
                offset,
            } => {
                if Self::box_empty(lower, upper) {
                    Leaf::PlusInf { dim: lower.len() }
                } else {
                    Leaf::Box {
                        lower: lower.clone(),
                        upper: upper.clone(),
                        offset: -offset,
                    }
                }
            }
            Leaf::Affine { b, c } => Leaf::Box {
                lower: b.clone(),
                upper: b.clone(),
                offset: -c,
            },
            Leaf::MinusInf { dim } => Leaf::PlusInf { dim: *dim },
            Leaf::PlusInf { dim } => Leaf::MinusInf { dim: *dim },
        })
    }

    /// Rank-1 piecewise-linear view; `Err(())` means `+inf` everywhere.
    pub fn as_pwl(&self) -> Option<std::result::Result<Pwl1, ()>> {
        if self.dim() != 1 {
            return None;
        }
        match self {
            Leaf::Pwl(p) => Some(Ok(p.clone())),
            Leaf::Box {
                lower,
                upper,
                offset,
            } => Some(Pwl1::indicator(lower[0], upper[0], *offset).ok_or(())),
            Leaf::Support {
                lower,
                upper,
                offset,
            } => Pwl1::support(lower[0], upper[0], *offset).map(Ok),
            Leaf::Affine { b, c } => Some(Ok(Pwl1::affine(b[0], *c))),
            Leaf::Quadratic { q, b, c } if q[0][0] == 0.0 => Some(Ok(Pwl1::affine(b[0], *c))),
            Leaf::PlusInf { .. } => Some(Err(())),
            _ => None,
        }
    }

    fn from_pwl(p: Option<Pwl1>) -> Leaf {
        match p {
            Some(p) => Leaf::Pwl(p),
            None => Leaf::PlusInf { dim: 1 },
        }
    }

    /// `lambda * phi` for `lambda >= 0` with `0 * (+-inf) = 0`.
    pub fn scale(&self, lambda: f64) -> Leaf {
        let d = self.dim();
        if lambda == 0.0 {
            return Leaf::Affine {
                b: vec![0.0; d],
                c: 0.0,
            };
        }
        match self {
            Leaf::Quadratic { q, b, c } => Leaf::Quadratic {
                q: q.iter()
                    .map(|r| r.iter().map(|v| lambda * v).collect())
                    .collect(),
                b: b.iter().map(|v| lambda * v).collect(),
                c: lambda * c,
            },
            Leaf::Pwl(p) => Leaf::Pwl(p.scale(lambda)),
            Leaf::MoreauPwl { pwl, mu } => Leaf::MoreauPwl {
                pwl: pwl.scale(lambda),
                mu: mu / lambda,
            },
            Leaf::PwlQuad { pwl, mu } => Leaf::PwlQuad {
                pwl: pwl.scale(lambda),
                mu: mu * lambda,
            },
            Leaf::Box {
                lower,
                upper,
                offset,
            } => Leaf::Box {
                lower: lower.clone(),
                upper: upper.clone(),
                offset: lambda * offset,
            },
            Leaf::Support {
                lower,
                upper,
                offset,
            } => Leaf::Support {
                lower: lower.iter().map(|v| lambda * v).collect(),
                upper: upper.iter().map(|v| lambda * v).collect(),
                offset: lambda * offset,
            },
            Leaf::Affine { b, c } => Leaf::Affine {
                b: b.iter().map(|v| lambda * v).collect(),
                c: lambda * c,
            },
            Leaf::MinusInf { .. } | Leaf::PlusInf { .. } => self.clone(),
        }
    }

    /// `x -> lambda phi(x / lambda)`, the indicator of `{0}` at `lambda = 0`.
    pub fn perspective(&self, lambda: f64) -> Leaf {
        let d = self.dim();
        if lambda == 0.0 {
            return Leaf::Box {
                lower: vec![0.0; d],
                upper: vec![0.0; d],
                offset: 0.0,
            };
        }
        match self {
            Leaf::Quadratic { q, b, c } => Leaf::Quadratic {
                q: q.iter()
                    .map(|r| r.iter().map(|v| v / lambda).collect())
                    .collect(),
                b: b.clone(),
                c: lambda * c,
            },
            Leaf::Pwl(p) => Leaf::Pwl(p.perspective(lambda)),
            Leaf::MoreauPwl { pwl, mu } => Leaf::MoreauPwl {
                pwl: pwl.perspective(lambda),
                mu: mu * lambda,
            },
            Leaf::PwlQuad { pwl, mu } => Leaf::PwlQuad {
                pwl: pwl.perspective(lambda),
                mu: mu / lambda,
            },
            Leaf::Box {
                lower,
                upper,
                offset,
            } => Leaf::Box {
                lower: lower.iter().map(|v| lambda * v).collect(),
                upper: upper.iter().map(|v| lambda * v).collect(),
                offset: lambda * offset,
            },
            Leaf::Support {
                lower,
                upper,
                offset,
            } => Leaf::Support {
                lower: lower.clone(),
                upper: upper.clone(),
                offset: lambda * offset,
            },
            Leaf::Affine { b, c } => Leaf::Affine {
                b: b.clone(),
                c: lambda * c,
            },
            Leaf::MinusInf { .. } | Leaf::PlusInf { .. } => self.clone(),
        }
    }

    /// `x -> phi(x - s)` when the result is again a leaf.
    pub fn translate(&self, s: &[f64]) -> Option<Leaf> {
        Some(match self {
            Leaf::Quadratic { q, b, c } => {
                let qs = qx(q, s);
                Leaf::Quadratic {
                    q: q.clone(),
                    b: b.iter().zip(&qs).map(|(b, v)| b - v).collect(),
                    c: c + 0.5 * dot(s, &qs) - dot(b, s),
                }
            }
            Leaf::Pwl(p) => Leaf::Pwl(p.shift(s[0])),
            Leaf::MoreauPwl { pwl, mu } => Leaf::MoreauPwl {
                pwl: pwl.shift(s[0]),
                mu: *mu,
            },
            Leaf::PwlQuad { pwl, mu } => Leaf::PwlQuad {
                pwl: pwl
                    .shift(s[0])
                    .add_affine(-mu * s[0], 0.5 * mu * s[0] * s[0]),
                mu: *mu,
            },
            Leaf::Box {
                lower,
                upper,
                offset,
            } => Leaf::Box {
                lower: lower.iter().zip(s).map(|(l, v)| l + v).collect(),
                upper: upper.iter().zip(s).map(|(u, v)| u + v).collect(),
                offset: *offset,
            },
            Leaf::Support { .. } if self.dim() == 1 => {
                return self
                    .as_pwl()
                    .map(|p| Leaf::from_pwl(p.ok().map(|p| p.shift(s[0]))))
            }
            Leaf::Support { .. } => return None,
            Leaf::Affine { b, c } => Leaf::Affine {
                b: b.clone(),
                c: c - dot(b, s),
            },
            Leaf::MinusInf { .. } | Leaf::PlusInf { .. } => self.clone(),
        })
    }

    /// `x -> phi(M x)` when the result is again a leaf.
    pub fn precompose(&self, m: &DMatrix<f64>) -> Option<Leaf> {
        let d_in = m.ncols();
        match self {
            Leaf::Quadratic { q, b, c } => {
                let qm = m.transpose() * mat(q) * m;
                let qm = (&qm + qm.transpose()) * 0.5;
                let bm = m.transpose() * DMatrix::from_column_slice(b.len(), 1, b);
                return Some(Leaf::Quadratic {
                    q: rows(&qm),
                    b: bm.iter().copied().collect(),
                    c: *c,
                });
            }
            Leaf::Affine { b, c } => {
                let bm = m.transpose() * DMatrix::from_column_slice(b.len(), 1, b);
                return Some(Leaf::Affine {
                    b: bm.iter().copied().collect(),
                    c: *c,
                });
            }
            Leaf::MinusInf { .. } => return Some(Leaf::MinusInf { dim: d_in }),
            Leaf::PlusInf { .. } => return Some(Leaf::PlusInf { dim: d_in }),
            _ => {}
        }
        if m.shape() != (1, 1) {
            return None;
        }
        let a = m[(0, 0)];
        if a == 0.0 {
            let v = self.eval(&[0.0]);
            return Some(if v.is_finite() {
                Leaf::affine1(0.0, v)
            } else if v > 0.0 {
                Leaf::PlusInf { dim: 1 }
            } else {
                Leaf::MinusInf { dim: 1 }
            });
        }
        Some(match self {
            Leaf::Pwl(p) => Leaf::Pwl(p.compose_scalar(a)),
            Leaf::MoreauPwl { pwl, mu } => Leaf::MoreauPwl {
                pwl: pwl.compose_scalar(a),
                mu: mu / (a * a),
            },
            Leaf::PwlQuad { pwl, mu } => Leaf::PwlQuad {
                pwl: pwl.compose_scalar(a),
                mu: mu * a * a,
            },
            Leaf::Box {
                lower,
                upper,
                offset,
            } => {
                let (l, u) = (lower[0] / a, upper[0] / a);
                Leaf::Box {
                    lower: vec![l.min(u)],
                    upper: vec![l.max(u)],
                    offset: *offset,
                }
            }
            Leaf::Support { .. } => {
                Leaf::from_pwl(self.as_pwl()?.ok().map(|p| p.compose_scalar(a)))
            }
            _ => unreachable!("handled above"),
        })
    }

    /// Collapses a sum of leaves into one leaf when the result stays in the family.
    pub fn merge_sum(leaves: &[&Leaf]) -> Option<Leaf> {
        let d = leaves.first()?.dim();
        if leaves.iter().any(|l| matches!(l, Leaf::PlusInf { .. })) {
            return Some(Leaf::PlusInf { dim: d });
        }
        if leaves.iter().any(|l| matches!(l, Leaf::MinusInf { .. })) {
            let all_full = leaves
                .iter()
                .all(|l| matches!(l.stratum(), Stratum::Proper(ref dom) | Stratum::MinusOn(ref dom) if dom.is_full()));
            return all_full.then_some(Leaf::MinusInf { dim: d });
        }
        if leaves.len() == 1 {
            return Some(leaves[0].clone());
        }
        // quadratic part
        let mut q = vec![vec![0.0; d]; d];
        let mut b = vec![0.0; d];
        let mut c = 0.0;
        let mut has_quad = false;
        let mut pwl: Option<Pwl1> = None;
        let mut mu_extra = 0.0;
        let mut boxes: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        let mut moreau = 0usize;
        for leaf in leaves {
            match leaf {
                Leaf::Quadratic {
                    q: lq,
                    b: lb,
                    c: lc,
                } => {
                    for r in 0..d {
                        for s in 0..d {
                            q[r][s] += lq[r][s];
                        }
                        b[r] += lb[r];
                    }
                    c += lc;
                    has_quad = true;
                }
                Leaf::Affine { b: lb, c: lc } => {
                    for r in 0..d {
                        b[r] += lb[r];
                    }
                    c += lc;
                }
                Leaf::PwlQuad { pwl: p, mu } => {
                    mu_extra += mu;
                    pwl = match pwl {
                        None => Some(p.clone()),
                        Some(acc) => Some(match acc.add(p) {
                            Some(s) => s,
                            None => return Some(Leaf::PlusInf { dim: 1 }),
                        }),
                    };
                }
                Leaf::MoreauPwl { .. } => moreau += 1,
                Leaf::Box {
                    lower,
                    upper,
                    offset,
                } if d >= 2 => {
                    boxes = Some(match boxes {
                        None => (lower.clone(), upper.clone(), *offset),
                        Some((l, u, o)) => (
                            l.iter().zip(lower).map(|(a, b)| a.max(*b)).collect(),
                            u.iter().zip(upper).map(|(a, b)| a.min(*b)).collect(),
                            o + offset,
                        ),
                    });
                }
                other => {
                    let p = match other.as_pwl()? {
                        Ok(p) => p,
                        Err(()) => return Some(Leaf::PlusInf { dim: 1 }),
                    };
                    pwl = match pwl {
                        None => Some(p),
                        Some(acc) => Some(match acc.add(&p) {
                            Some(s) => s,
                            None => return Some(Leaf::PlusInf { dim: 1 }),
                        }),
                    };
                }
            }
        }
        let quad_zero = q.iter().all(|r| r.iter().all(|v| *v == 0.0));
        if moreau > 0 {
            return None;
        }
        if let Some((l, u, o)) = boxes {
            let quad_free = quad_zero && b.iter().all(|v| *v == 0.0);
            return quad_free.then_some(Leaf::Box {
                lower: l,
                upper: u,
                offset: o + c,
            });
        }
        match pwl {
            None if has_quad => Some(Leaf::Quadratic { q, b, c }),
            None => Some(Leaf::Affine { b, c }),
            Some(p) => {
                let p = p.add_affine(b[0], c);
                let mu = q[0][0] + mu_extra;
                Some(if mu > 0.0 {
                    Leaf::PwlQuad { pwl: p, mu }
                } else {
                    Leaf::Pwl(p)
                })
            }
        }
    }

    /// Pointwise maximum of rank-1 leaves when piecewise linear.
    pub fn merge_max(leaves: &[&Leaf]) -> Option<Leaf> {
        let d = leaves.first()?.dim();
        let proper: Vec<&&Leaf> = leaves
            .iter()
            .filter(|l| !matches!(l, Leaf::MinusInf { .. }))
            .collect();
        if proper.is_empty() {
            return Some(Leaf::MinusInf { dim: d });
        }
        if proper.len() == 1 {
            return Some((**proper[0]).clone());
        }
        let mut acc: Option<Pwl1> = None;
        for l in proper {
            let p = match l.as_pwl()? {
                Ok(p) => p,
                Err(()) => return Some(Leaf::PlusInf { dim: 1 }),
            };
            acc = Some(match acc {
                None => p,
                Some(a) => match a.max(&p) {
                    Some(m) => m,
                    None => return Some(Leaf::PlusInf { dim: 1 }),
                },
            });
        }
        acc.map(Leaf::Pwl)
    }
}

/// `v` moved onto `[l, u]` when it misses a finite end by roundoff only.
fn snap_to_box(v: f64, l: f64, u: f64) -> f64 {
    if v < l && v >= l - ROUNDOFF * l.abs() {
        l
    } else if v > u && v <= u + ROUNDOFF * u.abs() {
        u
    } else {
        v
    }
}

fn pwl_directional(p: &Pwl1, x: f64, y: f64) -> f64 {
    let (l, r) = p.one_sided_slopes(x);
    if y > 0.0 {
        ext_mul(r, y)
    } else if y < 0.0 {
        ext_mul(l, y)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_conjugate_inverts_the_form() {
        let f =
            Leaf::quadratic(vec![vec![2.0, 0.5], vec![0.5, 1.0]], vec![1.0, -1.0], 0.3).unwrap();
        let c = f.conjugate().unwrap();
        // Fenchel-Young equality at g = grad f(x)
        let x = [0.7, -0.2];
        let g = f.gradient(&x).unwrap();
        let gap = f.eval(&x) + c.eval(&g) - dot(&g, &x);
        assert!(gap.abs() < 1e-12, "{gap}");
        assert_eq!(Leaf::half_sq(1).conjugate().unwrap(), Leaf::half_sq(1));
        let singular =
            Leaf::quadratic(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![0.0, 0.0], 0.0).unwrap();
        assert!(matches!(singular.conjugate(), Err(Error::NeedsGrid(_))));
        assert!(Leaf::quadratic(vec![vec![-1.0]], vec![0.0], 0.0).is_err());
    }

    #[test]
    fn box_support_affine_duality() {
        let bx = Leaf::Box {
            lower: vec![-1.0, 0.0],
            upper: vec![1.0, f64::INFINITY],
            offset: 0.5,
        };
        let s = bx.conjugate().unwrap();
        assert_eq!(s.eval(&[2.0, -1.0]), 2.0 - 0.5);
        assert_eq!(s.eval(&[2.0, 1.0]), f64::INFINITY);
        assert_eq!(s.eval(&[0.0, 0.0]), -0.5);
        assert_eq!(s.conjugate().unwrap(), bx);
        let aff = Leaf::affine1(2.0, 1.0);
        let c = aff.conjugate().unwrap();
        assert_eq!(c.eval(&[2.0]), -1.0);
        assert_eq!(c.eval(&[2.1]), f64::INFINITY);
        let empty = Leaf::interval(1.0, 0.0);
        assert_eq!(empty.eval(&[0.5]), f64::INFINITY);
        assert_eq!(empty.conjugate().unwrap(), Leaf::MinusInf { dim: 1 });
        assert_eq!(empty.stratum(), Stratum::Empty);
    }

    #[test]
    fn moreau_and_pwl_quad_are_dual() {
        let p = Pwl1::with_tails(
            vec![-1.0, 0.0, 2.0],
            vec![1.0, 0.0, 1.0],
            Some(-2.0),
            Some(1.0),
        )
        .unwrap();
        let env = Leaf::MoreauPwl { pwl: p, mu: 0.5 };
        let dual = env.conjugate().unwrap();
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let g = env.gradient(&[x]).unwrap()[0];
            let gap = env.eval(&[x]) + dual.eval(&[g]) - g * x;
            assert!(gap.abs() < 1e-12, "x={x} gap={gap}");
        }
        let back = dual.conjugate().unwrap();
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert!((back.eval(&[x]) - env.eval(&[x])).abs() < 1e-12);
        }
    }

    #[test]
    fn directional_examples() {
        let abs = Leaf::abs1(0.0);
        assert_eq!(abs.directional(&[0.0], &[1.0]), 1.0);
        assert_eq!(abs.directional(&[0.0], &[-1.0]), 1.0);
        let half = Leaf::interval(0.0, f64::INFINITY);
        assert_eq!(half.directional(&[0.0], &[-1.0]), f64::INFINITY);
        assert_eq!(half.directional(&[0.0], &[1.0]), 0.0);
        let sq = Leaf::half_sq(1);
        assert_eq!(sq.directional(&[0.3], &[2.0]), 0.6);
        let sup = Leaf::Support {
            lower: vec![-1.0],
            upper: vec![2.0],
            offset: 0.0,
        };
        assert_eq!(sup.directional(&[0.0], &[1.0]), 2.0);
        assert_eq!(sup.directional(&[0.0], &[-1.0]), 1.0);
    }

    #[test]
    fn merges() {
        let abs = Leaf::abs1(0.0);
        let half = Leaf::interval(0.0, f64::INFINITY);
        let s = Leaf::merge_sum(&[&abs, &half]).unwrap();
        assert_eq!(s.eval(&[2.0]), 2.0);
        assert_eq!(s.eval(&[-2.0]), f64::INFINITY);
        let q = Leaf::merge_sum(&[&Leaf::half_sq(1), &Leaf::affine1(1.0, 2.0)]).unwrap();
        assert_eq!(q, Leaf::quad1(1.0, 1.0, 2.0));
        let pq = Leaf::merge_sum(&[&Leaf::half_sq(1), &abs]).unwrap();
        assert!(matches!(pq, Leaf::PwlQuad { .. }));
        assert_eq!(pq.eval(&[-2.0]), 4.0);
        let m = Leaf::merge_max(&[&Leaf::affine1(1.0, 0.0), &Leaf::affine1(-1.0, 0.0)]).unwrap();
        assert_eq!(m.eval(&[-3.0]), 3.0);
    }

    #[test]
    fn algebra_matches_definitions() {
        let leaves = [
            Leaf::quad1(2.0, -1.0, 0.5),
            Leaf::abs1(0.3),
            Leaf::MoreauPwl {
                pwl: Pwl1::with_tails(vec![0.0], vec![0.0], Some(-1.0), Some(1.0)).unwrap(),
                mu: 0.7,
            },
            Leaf::PwlQuad {
                pwl: Pwl1::new(vec![-1.0, 0.5, 2.0], vec![0.0, -1.0, 1.0]).unwrap(),
                mu: 0.4,
            },
            Leaf::interval(-1.0, 2.0),
            Leaf::Support {
                lower: vec![-1.0],
                upper: vec![3.0],
                offset: 0.25,
            },
            Leaf::affine1(-0.5, 2.0),
        ];
        let xs = [-2.5, -1.0, -0.3, 0.0, 0.4, 1.7, 3.0];
        let close = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-12 * (1.0 + a.abs());
        for leaf in &leaves {
            let (lam, s, a) = (1.7, 0.6, -1.3);
            let sc = leaf.scale(lam);
            let pe = leaf.perspective(lam);
            let tr = leaf.translate(&[s]).unwrap();
            let pc = leaf.precompose(&DMatrix::from_element(1, 1, a)).unwrap();
            for &x in &xs {
                assert!(
                    close(sc.eval(&[x]), lam * leaf.eval(&[x])),
                    "{leaf:?} scale"
                );
                assert!(
                    close(pe.eval(&[x]), lam * leaf.eval(&[x / lam])),
                    "{leaf:?} perspective"
                );
                assert!(
                    close(tr.eval(&[x]), leaf.eval(&[x - s])),
                    "{leaf:?} translate"
                );
                assert!(
                    close(pc.eval(&[x]), leaf.eval(&[a * x])),
                    "{leaf:?} precompose"
                );
            }
        }
    }
}
