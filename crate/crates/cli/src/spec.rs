//! Problem files: one base, one function, the inputs of one operation.

use crate::error::{CliError, CliResult};
use randcvx::measure_l0::Atom;
use randcvx::rnmodule::SequenceDescriptor;
use randcvx::{
    serial, AtomicBase, ConvexFn, ConvexSet, Curve, GridSpec, L0Bar, ModuleHom, RandomPoint,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA: &str = "randcvx/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operation {
    Eval,
    Conjugate,
    Biconjugate,
    Closure,
    Subdiff,
    EpsSubdiff,
    SumRule,
    ChainRule,
    Separate,
    Dirderiv,
    Gateaux,
    Frechet,
    Lipschitz,
    Riemann,
    NewtonLeibniz,
    Ekeland,
    SmallGradient,
    ApproxSubgradient,
    DenseProbe,
    CheckSuite,
}

/// The property suites run by `check-suite`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Locality,
    Convexity,
    FenchelMoreau,
    DirectionalLimit,
    Inequalities,
    Ekeland,
    Oracle,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Locality,
        Suite::Convexity,
        Suite::FenchelMoreau,
        Suite::DirectionalLimit,
        Suite::Inequalities,
        Suite::Ekeland,
        Suite::Oracle,
    ];
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<L0Bar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<L0Bar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<L0Bar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(with = "serial::opt", default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Dual or primal abscissae at which transforms are tabulated (rank 1).
    #[serde(with = "serial::vec", default, skip_serializing_if = "Vec::is_empty")]
    pub abscissae: Vec<f64>,
    /// Decreasing tolerances for `dense-probe`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<L0Bar>,
    /// Corpus directory for `check-suite`, relative to the problem file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub schema: String,
    pub base: AtomicBase,
    pub rank: usize,
    pub operation: Operation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<ConvexFn>,
    /// Second summand for `sum-rule`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<ConvexFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<ModuleHom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<RandomPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<RandomPoint>,
    /// Coefficients of a random functional (a candidate subgradient).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<RandomPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<Vec<ConvexSet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<Curve>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequences: Vec<SequenceDescriptor>,
    #[serde(default)]
    pub params: Params,
    /// Suites expected to fail under `check-suite`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect_fail: Vec<Suite>,
}

impl ProblemSpec {
    pub fn parse(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ProblemSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::schema(path, e.into_inner().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem specs serialize")
    }

    pub fn n(&self) -> usize {
        self.base.len()
    }

    /// Schema floor and shape consistency of every referenced object.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema != SCHEMA {
            return Err(CliError::schema(
                "schema",
                format!("expected \"{SCHEMA}\", found \"{}\"", self.schema),
            ));
        }
        let atoms: Vec<(String, f64)> = self
            .base
            .atoms()
            .iter()
            .map(|Atom { label, weight }| (label.clone(), *weight))
            .collect();
        if atoms.is_empty() {
            return Err(CliError::schema(
                "base.atoms",
                "at least one atom is required",
            ));
        }
        AtomicBase::new(atoms).map_err(|e| CliError::schema("base.atoms", e.to_string()))?;
        let (n, d) = (self.n(), self.rank);
        if d == 0 {
            return Err(CliError::schema("rank", "rank must be at least 1"));
        }
        for (field, f) in [("function", &self.function), ("second", &self.second)] {
            if let Some(f) = f {
                let fd = f
                    .check(n)
                    .map_err(|e| CliError::schema(field, e.to_string()))?;
                let want = if field == "function" {
                    self.map.as_ref().map_or(d, ModuleHom::d_out)
                } else {
                    d
                };
                if fd != want {
                    return Err(CliError::schema(
                        field,
                        format!("rank {fd}, expected {want}"),
                    ));
                }
            }
        }
        if let Some(m) = &self.map {
            if m.n() != n || m.d_in() != d {
                return Err(CliError::schema(
                    "map",
                    format!("expected {n} maps from rank {d}"),
                ));
            }
        }
        for (field, p) in [
            ("point", &self.point),
            ("direction", &self.direction),
            ("functional", &self.functional),
        ] {
            if let Some(p) = p {
                if p.n() != n || p.d() != d {
                    return Err(CliError::schema(
                        field,
                        format!("shape {}x{}, expected {n}x{d}", p.n(), p.d()),
                    ));
                }
            }
        }
        if let Some(sets) = &self.sets {
            if sets.len() != n || sets.iter().any(|s| s.dim() != d) {
                return Err(CliError::schema(
                    "sets",
                    format!("expected {n} sets of rank {d}"),
                ));
            }
        }
        if let Some(c) = &self.curve {
            let (cn, cd) = c
                .shape()
                .map_err(|e| CliError::schema("curve", e.to_string()))?;
            if cn != n || cd != d {
                return Err(CliError::schema(
                    "curve",
                    format!("shape {cn}x{cd}, expected {n}x{d}"),
                ));
            }
        }
        for (k, s) in self.sequences.iter().enumerate() {
            if s.prefix.iter().any(|p| p.n() != n || p.d() != d)
                || s.envelope.c.len() != n
                || s.envelope.rate.len() != n
            {
                return Err(CliError::schema(
                    format!("sequences[{k}]"),
                    format!("terms must be {n}x{d}"),
                ));
            }
        }
        let p = &self.params;
        for (field, v) in [
            ("params.eps", &p.eps),
            ("params.lambda", &p.lambda),
            ("params.radius", &p.radius),
        ] {
            if v.as_ref().is_some_and(|v| v.len() != n) {
                return Err(CliError::schema(field, format!("expected {n} entries")));
            }
        }
        if let Some((k, _)) = p.schedule.iter().enumerate().find(|(_, v)| v.len() != n) {
            return Err(CliError::schema(
                format!("params.schedule[{k}]"),
                format!("expected {n} entries"),
            ));
        }
        if let Some(g) = &p.grid {
            g.validate()
                .map_err(|e| CliError::schema("params.grid", e.to_string()))?;
        }
        if p.tol.is_some_and(|t| !(t > 0.0)) {
            return Err(CliError::schema("params.tol", "must be positive"));
        }
        Ok(())
    }

    pub fn function(&self) -> CliResult<&ConvexFn> {
        self.function
            .as_ref()
            .ok_or_else(|| missing("function", self.operation))
    }

    pub fn point(&self) -> CliResult<&RandomPoint> {
        self.point
            .as_ref()
            .ok_or_else(|| missing("point", self.operation))
    }

    pub fn direction(&self) -> CliResult<&RandomPoint> {
        self.direction
            .as_ref()
            .ok_or_else(|| missing("direction", self.operation))
    }

    pub fn eps(&self) -> CliResult<&L0Bar> {
        self.params
            .eps
            .as_ref()
            .ok_or_else(|| missing("params.eps", self.operation))
    }
}

pub(crate) fn missing(field: &str, op: Operation) -> CliError {
    let op = serde_json::to_value(op)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    CliError::schema(field, format!("required by `{op}`"))
}

/// Parses `MIN:MAX:POINTS`.
pub fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [min, max, points] = parts.as_slice() else {
        return Err("expected MIN:MAX:POINTS".into());
    };
    let num = |v: &str| serial::parse_f64(v).ok_or_else(|| format!("not a number: {v}"));
    let points = points
        .parse()
        .map_err(|_| format!("not a point count: {points}"))?;
    GridSpec::new(num(min)?, num(max)?, points).map_err(|e| e.to_string())
}
