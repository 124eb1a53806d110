//! Brute-force classical convex analysis on one scenario at a time: double-loop
//! conjugates, finite-difference derivatives, and grid scans of the Fenchel
//! gap. Slow on purpose; used only to validate the engine.

use crate::convexfn::ConvexFn;
use crate::error::{Error, Result};
use crate::measure_l0::{ext_add, ext_sub};
use crate::subdiff::Interval;
use std::fmt;
use std::sync::Arc;

/// Values of a function of one variable on increasing nodes; `+inf` off the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn1 {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

/// Values on the tensor grid `xs x ys`, `values[a][b]` at `(xs[a], ys[b])`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn2 {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// `m` equally spaced nodes on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..m)
            .map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64)
            .collect(),
    }
}

impl GridFn1 {
    pub fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != values.len() {
            return Err(Error::Shape("one value per node".into()));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("nodes must increase".into()));
        }
        Ok(GridFn1 { xs, values })
    }

    pub fn sample(xs: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = xs.iter().map(|&x| f(x)).collect();
        GridFn1::new(xs, values)
    }

    /// Finite slopes between consecutive finite values never decrease by more than `1e-12`.
    pub fn is_discretely_convex(&self) -> bool {
        let finite: Vec<(f64, f64)> = self
            .xs
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(x, v)| (*x, *v))
            .collect();
        let slopes: Vec<f64> = finite
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        slopes
            .windows(2)
            .all(|s| s[1] - s[0] >= -1e-12 * (1.0 + s[0].abs()))
    }

    /// Linear interpolation between nodes, `+inf` outside `[xs[0], xs[m-1]]`.
    pub fn eval(&self, x: f64) -> f64 {
        let m = self.xs.len();
        if !(self.xs[0] <= x && x <= self.xs[m - 1]) {
            return f64::INFINITY;
        }
        let k = self.xs.partition_point(|&t| t <= x).min(m - 1).max(1);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        if x == x0 {
            return v0;
        }
        if x == x1 {
            return v1;
        }
        if !(v0.is_finite() && v1.is_finite()) {
            return f64::INFINITY;
        }
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }
}

/// A scenario function given by a grid or by a closed form.
#[derive(Clone)]
pub enum ScenarioFn {
    Grid1(GridFn1),
    Closed {
        dim: usize,
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for ScenarioFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioFn::Grid1(g) => f.debug_tuple("Grid1").field(&g.xs.len()).finish(),
            ScenarioFn::Closed { dim, .. } => f.debug_struct("Closed").field("dim", dim).finish(),
        }
    }
}

impl ScenarioFn {
    pub fn closed(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScenarioFn::Closed {
            dim,
            f: Arc::new(f),
        }
    }

    /// Atom `i` of an engine function, through plain evaluation only.
    pub fn from_engine(f: &ConvexFn, i: usize) -> Self {
        let f = f.clone();
        let dim = f.dim();
        ScenarioFn::closed(dim, move |x| f.eval_scenario(i, x).unwrap_or(f64::NAN))
    }

    pub fn dim(&self) -> usize {
        match self {
            ScenarioFn::Grid1(_) => 1,
            ScenarioFn::Closed { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScenarioFn::Grid1(g) => g.eval(x[0]),
            ScenarioFn::Closed { f, .. } => f(x),
        }
    }

    pub fn materialize(&self, xs: &[f64]) -> Result<GridFn1> {
        if self.dim() != 1 {
            return Err(Error::Shape("one-variable grids only".into()));
        }
        GridFn1::sample(xs.to_vec(), |x| self.eval(&[x]))
    }

    pub fn materialize2(&self, xs: &[f64], ys: &[f64]) -> Result<GridFn2> {
        if self.dim() != 2 {
            return Err(Error::Shape("two-variable grids only".into()));
        }
        let values = xs
            .iter()
            .map(|&a| ys.iter().map(|&b| self.eval(&[a, b])).collect())
            .collect();
        Ok(GridFn2 {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            values,
        })
    }
}

/// `phi*(g) = max_x g x - phi(x)` over the grid nodes, for every `g` in `dual`.
pub fn brute_conjugate(phi: &GridFn1, dual: &[f64]) -> GridFn1 {
    let values = dual
        .iter()
        .map(|&g| {
            phi.xs
                .iter()
                .zip(&phi.values)
                .map(|(&x, &v)| ext_sub(g * x, v))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    GridFn1 {
        xs: dual.to_vec(),
        values,
    }
}

/// The same double loop on a two-variable grid.
pub fn brute_conjugate2(phi: &GridFn2, du: &[f64], dv: &[f64]) -> GridFn2 {
    let values = du
        .iter()
        .map(|&g| {
            dv.iter()
                .map(|&h| {
                    let mut best = f64::NEG_INFINITY;
                    for (a, &x) in phi.xs.iter().enumerate() {
                        for (b, &y) in phi.ys.iter().enumerate() {
                            best = best.max(ext_sub(g * x + h * y, phi.values[a][b]));
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    GridFn2 {
        xs: du.to_vec(),
        ys: dv.to_vec(),
        values,
    }
}

/// `phi*(g)` for a closed-form convex `phi` of one variable: a scan of `m`
/// nodes on `[lo, hi]`, then `levels` rescans of the two cells around the
/// best node. Exact up to roundoff when the maximizer lies in `[lo, hi]`.
pub fn brute_conjugate_refined(
    phi: &ScenarioFn,
    lo: f64,
    hi: f64,
    m: usize,
    levels: usize,
    dual: &[f64],
) -> Vec<f64> {
    dual.iter()
        .map(|&g| {
            let objective = |x: f64| ext_sub(g * x, phi.eval(&[x]));
            let (mut a, mut b) = (lo, hi);
            let mut best = f64::NEG_INFINITY;
            for _ in 0..=levels {
                let xs = linspace(a, b, m);
                let (k, v) = xs.iter().map(|&x| objective(x)).enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (k, v)| if v > acc.1 { (k, v) } else { acc },
                );
                best = best.max(v);
                if !v.is_finite() {
                    break;
                }
                (a, b) = (xs[k.saturating_sub(1)], xs[(k + 1).min(m - 1)]);
            }
            best
        })
        .collect()
}

/// The same rescans on a square of side `2 radius` around `center`, for
/// functions of two variables; the window keeps `window` cells around the
/// best node so that elongated level sets are not cut off.
pub fn brute_conjugate_refined2(
    phi: &ScenarioFn,
    center: [f64; 2],
    radius: f64,
    m: usize,
    levels: usize,
    window: usize,
    dual: &[[f64; 2]],
) -> Vec<f64> {
    dual.iter()
        .map(|g| {
            let objective = |x: f64, y: f64| ext_sub(g[0] * x + g[1] * y, phi.eval(&[x, y]));
            let mut bx = (center[0] - radius, center[0] + radius);
            let mut by = (center[1] - radius, center[1] + radius);
            let mut best = f64::NEG_INFINITY;
            for _ in 0..=levels {
                let (xs, ys) = (linspace(bx.0, bx.1, m), linspace(by.0, by.1, m));
                let mut arg = (0, 0, f64::NEG_INFINITY);
                for (a, &x) in xs.iter().enumerate() {
                    for (b, &y) in ys.iter().enumerate() {
                        let v = objective(x, y);
                        if v > arg.2 {
                            arg = (a, b, v);
                        }
                    }
                }
                best = best.max(arg.2);
                if !arg.2.is_finite() {
                    break;
                }
                let cut = |nodes: &[f64], k: usize| {
                    (
                        nodes[k.saturating_sub(window)],
                        nodes[(k + window).min(m - 1)],
                    )
                };
                (bx, by) = (cut(&xs, arg.0), cut(&ys, arg.1));
            }
            best
        })
        .collect()
}

/// Difference quotients `(phi(x0 + h y) - phi(x0)) / h` for `h = 2^-k`,
/// `k = 0..=steps`, with one Richardson step on the last two.
pub fn brute_directional(phi: &ScenarioFn, x0: &[f64], y: &[f64], steps: u32) -> f64 {
    let base = phi.eval(x0);
    let q = |h: f64| {
        let x: Vec<f64> = x0.iter().zip(y).map(|(a, b)| a + h * b).collect();
        ext_sub(phi.eval(&x), base) / h
    };
    let (coarse, fine) = (
        q(2f64.powi(-(steps as i32) + 1)),
        q(2f64.powi(-(steps as i32))),
    );
    if !(coarse.is_finite() && fine.is_finite()) {
        return fine;
    }
    2.0 * fine - coarse
}

/// `[phi'_-(x0), phi'_+(x0)]` from one-sided quotients down to `h_min`.
pub fn brute_subdiff_interval(phi: &ScenarioFn, x0: f64, h_min: f64) -> Interval {
    if !phi.eval(&[x0]).is_finite() {
        return Interval::EMPTY;
    }
    let steps = (-h_min.log2()).ceil().max(1.0) as u32;
    let right = brute_directional(phi, &[x0], &[1.0], steps);
    let left = -brute_directional(phi, &[x0], &[-1.0], steps);
    Interval::new(left, right)
}

/// Hull of the dual nodes `g` with `phi(x0) - g x0 + phi*(g) <= eps`, the
/// conjugate taken over the grid of `phi`.
pub fn brute_eps_subdiff(phi: &GridFn1, x0: f64, eps: f64, g_grid: &[f64]) -> Interval {
    let fx = phi.eval(x0);
    let conj = brute_conjugate(phi, g_grid);
    let members: Vec<f64> = g_grid
        .iter()
        .zip(&conj.values)
        .filter(|(&g, &c)| ext_sub(ext_add(fx, c), g * x0) <= eps)
        .map(|(g, _)| *g)
        .collect();
    match (members.first(), members.last()) {
        (Some(&lo), Some(&hi)) => Interval::new(lo, hi),
        _ => Interval::EMPTY,
    }
}
