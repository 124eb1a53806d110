//! Named evaluators without closed-form structure. They feed the probes and
//! the grid closure only; exact transforms reject them.

use crate::error::{Error, Result};
use crate::measure_l0::L0Bar;
use crate::rnmodule::RandomPoint;
use crate::serial;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlackboxKind {
    /// `0` on the open interval `(a, b)`, `+inf` elsewhere. Convex, not lsc.
    OpenIntervalIndicator,
    /// `0` on `(a, b)`, `1` at `a` and `b`, `+inf` outside. Convex, not lsc.
    LiftedBoundary,
    /// `1/2 |x_i|^2 + sum_j x_j[0]`: convex, but the value at atom `i` reads every atom.
    ScenarioCoupled,
    /// `sin(x[0])`: not convex.
    Sine,
    /// `1/2 |x|^2` evaluated opaquely.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blackbox {
    pub kind: BlackboxKind,
    #[serde(with = "serial::vec", default)]
    pub params: Vec<f64>,
    pub dim: usize,
}

impl Blackbox {
    pub fn new(kind: BlackboxKind, params: Vec<f64>, dim: usize) -> Result<Self> {
        let bb = Blackbox { kind, params, dim };
        bb.validate()?;
        Ok(bb)
    }

    pub fn open_interval_indicator(a: f64, b: f64) -> Self {
        Blackbox {
            kind: BlackboxKind::OpenIntervalIndicator,
            params: vec![a, b],
            dim: 1,
        }
    }

    pub fn lifted_boundary(a: f64, b: f64) -> Self {
        Blackbox {
            kind: BlackboxKind::LiftedBoundary,
            params: vec![a, b],
            dim: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Shape("zero-dimensional blackbox".into()));
        }
        match self.kind {
            BlackboxKind::OpenIntervalIndicator | BlackboxKind::LiftedBoundary
                if (self.dim != 1
                    || self.params.len() != 2
                    || !(self.params[0] < self.params[1])) =>
            {
                return Err(Error::Invalid(format!(
                    "{:?} needs dim 1 and params a < b",
                    self.kind
                )));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn declared_convex(&self) -> bool {
        !matches!(self.kind, BlackboxKind::Sine)
    }

    pub fn is_local(&self) -> bool {
        !matches!(self.kind, BlackboxKind::ScenarioCoupled)
    }

    /// Value at one atom from its row alone; `None` for non-local kinds.
    pub fn eval_row(&self, row: &[f64]) -> Option<f64> {
        let x = row[0];
        Some(match self.kind {
            BlackboxKind::OpenIntervalIndicator => {
                let (a, b) = (self.params[0], self.params[1]);
                if a < x && x < b {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            BlackboxKind::LiftedBoundary => {
                let (a, b) = (self.params[0], self.params[1]);
                if a < x && x < b {
                    0.0
                } else if x == a || x == b {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            BlackboxKind::Sine => row[0].sin() + row[1..].iter().map(|v| 0.5 * v * v).sum::<f64>(),
            BlackboxKind::Quadratic => row.iter().map(|v| 0.5 * v * v).sum(),
            BlackboxKind::ScenarioCoupled => return None,
        })
    }

    pub fn eval(&self, x: &RandomPoint) -> L0Bar {
        match self.kind {
            BlackboxKind::ScenarioCoupled => {
                let total: f64 = (0..x.n()).map(|i| x.get(i, 0)).sum();
                L0Bar::from_fn(x.n(), |i| {
                    x.row(i).iter().map(|v| 0.5 * v * v).sum::<f64>() + total
                })
            }
            _ => L0Bar::from_fn(x.n(), |i| self.eval_row(x.row(i)).expect("local kind")),
        }
    }
}
