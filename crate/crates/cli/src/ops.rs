//! One function per operation; each turns a validated spec into a result.

use crate::error::{CliError, CliResult};
use crate::spec::{missing, Operation, ProblemSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use randcvx::convexfn::probes::{ae_seq_continuity_probe, lipschitz_estimate};
use randcvx::differential::{directional_derivative, frechet_test, gateaux_derivative};
use randcvx::ekeland::{
    approx_to_exact_subgradient, approx_to_exact_subgradient_sqrt, dense_subdiff_probe,
    ekeland_point, small_gradient_point,
};
use randcvx::legendre::{biconjugate, closure, conjugate};
use randcvx::riemann::{newton_leibniz_check, riemann_integral, segment_gradient_integral_check};
use randcvx::rnmodule::{Envelope, EnvelopeKind, SequenceDescriptor};
use randcvx::serial::format_f64;
use randcvx::subdiff::{
    chain_rule_check, eps_subdiff_interval, eps_subdifferential_membership,
    separate_point_from_set, subdifferential, sum_rule_check,
};
use randcvx::{
    ConvexFn, Error, GridSpec, Interval, L0Bar, RandomFunctional, RandomPoint, Transform,
};
use serde::Serialize;
use serde_json::{json, Value};

const DEFAULT_TOL: f64 = 1e-8;
const DEFAULT_SAMPLES: usize = 64;
const DEFAULT_PAIRS: usize = 1000;
const INCREMENT_TERMS: usize = 40;

/// Flags that override the problem file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub grid: Option<GridSpec>,
    pub corpus: Option<std::path::PathBuf>,
}

/// Plot data: a header and one row per (atom, sample).
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl PlotTable {
    fn new(header: Vec<&'static str>) -> Self {
        PlotTable {
            header,
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub result: Value,
    pub verdict: Option<bool>,
    pub plot: Option<PlotTable>,
}

impl Outcome {
    fn new(result: impl Serialize) -> Self {
        Outcome {
            result: to_json(&result),
            verdict: None,
            plot: None,
        }
    }

    fn verdict(mut self, passed: bool) -> Self {
        self.verdict = Some(passed);
        self
    }

    fn plot(mut self, table: PlotTable) -> Self {
        self.plot = Some(table);
        self
    }
}

pub(crate) fn to_json(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

/// Settings after applying the overrides to the problem file.
pub struct Resolved {
    pub seed: u64,
    pub tol: f64,
    pub grid: Option<GridSpec>,
    pub samples: usize,
}

impl Resolved {
    pub fn new(spec: &ProblemSpec, o: &Overrides) -> Self {
        Resolved {
            seed: o.seed.or(spec.params.seed).unwrap_or(0),
            tol: o.tol.or(spec.params.tol).unwrap_or(DEFAULT_TOL),
            grid: o.grid.or(spec.params.grid),
            samples: spec.params.samples.unwrap_or(DEFAULT_SAMPLES),
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

pub fn dispatch(spec: &ProblemSpec, cfg: &Resolved) -> CliResult<Outcome> {
    use Operation as Op;
    match spec.operation {
        Op::Eval => {
            let value = spec.function()?.eval(spec.point()?)?;
            Ok(Outcome::new(json!({ "value": value })))
        }
        Op::Conjugate => transform(
            spec,
            conjugate(spec.function()?, spec.n(), cfg.grid.as_ref())?,
        ),
        Op::Biconjugate => transform(
            spec,
            biconjugate(spec.function()?, spec.n(), cfg.grid.as_ref())?,
        ),
        Op::Closure => transform(
            spec,
            closure(spec.function()?, spec.n(), cfg.grid.as_ref())?,
        ),
        Op::Subdiff => Ok(Outcome::new(subdifferential(
            spec.function()?,
            spec.point()?,
            cfg.samples,
        )?)),
        Op::EpsSubdiff => eps_subdiff(spec),
        Op::SumRule => {
            let second = spec
                .second
                .as_ref()
                .ok_or_else(|| missing("second", spec.operation))?;
            let r = sum_rule_check(spec.function()?, second, spec.point()?, cfg.tol)?;
            let passed = r.passed;
            Ok(Outcome::new(r).verdict(passed))
        }
        Op::ChainRule => {
            let map = spec
                .map
                .as_ref()
                .ok_or_else(|| missing("map", spec.operation))?;
            let r = chain_rule_check(spec.function()?, map, spec.point()?, cfg.tol, cfg.samples)?;
            let passed = r.passed();
            Ok(Outcome::new(r).verdict(passed))
        }
        Op::Separate => {
            let sets = spec
                .sets
                .as_ref()
                .ok_or_else(|| missing("sets", spec.operation))?;
            Ok(Outcome::new(separate_point_from_set(spec.point()?, sets)?))
        }
        Op::Dirderiv => dirderiv(spec),
        Op::Gateaux => {
            let g = gateaux_derivative(spec.function()?, spec.point()?)?;
            let smooth = g.derivative.is_some();
            Ok(Outcome::new(g).verdict(smooth))
        }
        Op::Frechet => frechet(spec),
        Op::Lipschitz => lipschitz(spec, cfg),
        Op::Riemann => {
            let curve = spec
                .curve
                .as_ref()
                .ok_or_else(|| missing("curve", spec.operation))?;
            let r = riemann_integral(curve, cfg.tol)?;
            let mut table = PlotTable::new(vec!["atom", "cells", "change"]);
            for step in &r.trace {
                for (i, label) in labels(spec).enumerate() {
                    table.rows.push(vec![
                        label,
                        step.cells.to_string(),
                        format_f64(step.change.get(i)),
                    ]);
                }
            }
            let agree = r.tags_agree;
            Ok(Outcome::new(r).verdict(agree).plot(table))
        }
        Op::NewtonLeibniz => {
            if let Some(curve) = &spec.curve {
                let r = newton_leibniz_check(curve, cfg.tol)?;
                let passed = r.passed;
                return Ok(Outcome::new(r).verdict(passed));
            }
            let r = segment_gradient_integral_check(
                spec.function()?,
                spec.point()?,
                spec.direction()?,
                cfg.tol,
                cfg.samples,
                &mut cfg.rng(),
            )?;
            let passed = r.passed;
            Ok(Outcome::new(r).verdict(passed))
        }
        Op::Ekeland => {
            let c = ekeland_point(spec.function()?, spec.point()?, spec.eps()?, lambda(spec)?)?;
            let passed = c.passed;
            Ok(Outcome::new(c).verdict(passed))
        }
        Op::SmallGradient => {
            let r =
                small_gradient_point(spec.function()?, spec.point()?, spec.eps()?, lambda(spec)?)?;
            let passed = r.passed;
            Ok(Outcome::new(r).verdict(passed))
        }
        Op::ApproxSubgradient => {
            let u_star = RandomFunctional::new(
                spec.functional
                    .clone()
                    .ok_or_else(|| missing("functional", spec.operation))?,
            );
            let (f, u, eps) = (spec.function()?, spec.point()?, spec.eps()?);
            let r = match &spec.params.lambda {
                Some(l) => approx_to_exact_subgradient(f, u, &u_star, eps, l)?,
                None => approx_to_exact_subgradient_sqrt(f, u, &u_star, eps)?,
            };
            let passed = r.passed;
            Ok(Outcome::new(r).verdict(passed))
        }
        Op::DenseProbe => {
            if spec.params.schedule.is_empty() {
                return Err(missing("params.schedule", spec.operation));
            }
            let r = dense_subdiff_probe(spec.function()?, spec.point()?, &spec.params.schedule)?;
            let passed = r.passed;
            Ok(Outcome::new(r).verdict(passed))
        }
        Op::CheckSuite => Err(CliError::schema(
            "operation",
            "`check-suite` runs on a corpus directory, see `run_file`",
        )),
    }
}

fn labels(spec: &ProblemSpec) -> impl Iterator<Item = String> + '_ {
    spec.base.atoms().iter().map(|a| a.label.clone())
}

fn lambda(spec: &ProblemSpec) -> CliResult<&L0Bar> {
    spec.params
        .lambda
        .as_ref()
        .ok_or_else(|| missing("params.lambda", spec.operation))
}

/// The transform tree plus, at the requested abscissae, one table per atom.
fn transform(spec: &ProblemSpec, t: Transform) -> CliResult<Outcome> {
    let xs = &spec.params.abscissae;
    let mut table = PlotTable::new(vec!["atom", "x", "value", "trusted"]);
    let mut tables = Vec::new();
    if !xs.is_empty() {
        if spec.rank != 1 {
            return Err(CliError::schema(
                "params.abscissae",
                "tables are rank-1 only",
            ));
        }
        for (i, label) in labels(spec).enumerate() {
            let mut row = Vec::with_capacity(xs.len());
            for &x in xs {
                let v = t.func.eval_scenario(i, &[x])?;
                let trusted = t.trust[i].contains(x);
                table.rows.push(vec![
                    label.clone(),
                    format_f64(x),
                    format_f64(v),
                    trusted.to_string(),
                ]);
                row.push(format_f64(v));
            }
            tables.push(json!({ "atom": label, "values": row }));
        }
    }
    let mut result = json!({
        "path": t.path,
        "trust": t.trust,
        "grid_atoms": t.grid_atoms,
        "function": t.func,
    });
    if !tables.is_empty() {
        result["abscissae"] = to_json(&xs.iter().map(|x| format_f64(*x)).collect::<Vec<_>>());
        result["tables"] = Value::Array(tables);
    }
    if let (Some(x), Some(f)) = (&spec.point, &spec.function) {
        result["at_point"] = json!({ "function": f.eval(x)?, "transform": t.func.eval(x)? });
    }
    let mut out = Outcome::new(result);
    if !table.rows.is_empty() {
        out = out.plot(table);
    }
    Ok(out)
}

fn eps_subdiff(spec: &ProblemSpec) -> CliResult<Outcome> {
    let (f, x0, eps) = (spec.function()?, spec.point()?, spec.eps()?);
    let mut result = json!({});
    if spec.rank == 1 {
        let intervals = (0..spec.n())
            .map(|i| eps_subdiff_interval(f, spec.n(), i, x0.get(i, 0), eps.get(i)))
            .collect::<Result<Vec<Interval>, Error>>()?;
        result["intervals"] = to_json(&intervals);
    }
    let mut verdict = None;
    if let Some(g) = &spec.functional {
        let members =
            eps_subdifferential_membership(f, x0, &RandomFunctional::new(g.clone()), eps)?;
        verdict = Some(members.is_full());
        result["member"] = to_json(&members);
    } else if spec.rank != 1 {
        return Err(missing("functional", spec.operation));
    }
    let mut out = Outcome::new(result);
    out.verdict = verdict;
    Ok(out)
}

fn dirderiv(spec: &ProblemSpec) -> CliResult<Outcome> {
    let r = directional_derivative(spec.function()?, spec.point()?, spec.direction()?)?;
    let mut table = PlotTable::new(vec!["atom", "k", "step", "quotient"]);
    for (k, row) in r.quotient_trace.iter().enumerate() {
        for (i, label) in labels(spec).enumerate() {
            table.rows.push(vec![
                label,
                k.to_string(),
                format_f64(row.step.get(i)),
                format_f64(row.quotient.get(i)),
            ]);
        }
    }
    let holds = r.lemma_holds();
    Ok(Outcome::new(r).verdict(holds).plot(table))
}

/// Increments `2^-k v` along `+-e_j` and along a direction whose rate
/// differs between atoms.
pub fn default_increments(n: usize, d: usize) -> Vec<SequenceDescriptor> {
    let mut dirs = Vec::new();
    for j in 0..d {
        for s in [1.0, -1.0] {
            dirs.push(RandomPoint::from_fn(
                n,
                d,
                |_, c| if c == j { s } else { 0.0 },
            ));
        }
    }
    dirs.push(RandomPoint::from_fn(n, d, |i, _| {
        if i % 2 == 0 {
            1.0
        } else {
            -0.5
        }
    }));
    let mut out: Vec<SequenceDescriptor> = dirs
        .into_iter()
        .map(|v| {
            let norm = (v.row(0).iter().map(|x| x * x).sum::<f64>())
                .sqrt()
                .max(1.0);
            SequenceDescriptor {
                prefix: (1..=INCREMENT_TERMS)
                    .map(|k| v.scale_uniform(2f64.powi(-(k as i32))))
                    .collect(),
                envelope: Envelope::uniform(EnvelopeKind::Geometric, n, norm, 0.5),
            }
        })
        .collect();
    // per-atom rates 1/2 and 1/4
    let rates = L0Bar::from_fn(n, |i| if i % 2 == 0 { 0.5 } else { 0.25 });
    out.push(SequenceDescriptor {
        prefix: (1..=INCREMENT_TERMS)
            .map(|k| RandomPoint::from_fn(n, d, |i, _| rates.get(i).powi(k as i32)))
            .collect(),
        envelope: Envelope {
            kind: EnvelopeKind::Geometric,
            c: L0Bar::constant(n, (d as f64).sqrt()),
            rate: rates,
        },
    });
    out
}

/// The Gateaux derivative where it exists, else the least-norm subgradient
/// on each atom (rank 1).
fn reference_functional(f: &ConvexFn, x0: &RandomPoint) -> CliResult<RandomFunctional> {
    if let Some(u) = gateaux_derivative(f, x0)?.derivative {
        return Ok(u);
    }
    if x0.d() != 1 {
        return Err(Error::precondition(
            (0..x0.n()).collect(),
            "not Gateaux differentiable and no functional given",
        )
        .into());
    }
    let intervals = subdifferential(f, x0, 0)?;
    let intervals = intervals.intervals().expect("rank 1 gives intervals");
    let coeffs = RandomPoint::from_fn(x0.n(), 1, |i, _| {
        0.0f64.clamp(intervals[i].lo, intervals[i].hi)
    });
    Ok(RandomFunctional::new(coeffs))
}

fn frechet(spec: &ProblemSpec) -> CliResult<Outcome> {
    let (f, x0) = (spec.function()?, spec.point()?);
    let u = match &spec.functional {
        Some(c) => RandomFunctional::new(c.clone()),
        None => reference_functional(f, x0)?,
    };
    let increments = if spec.sequences.is_empty() {
        default_increments(spec.n(), spec.rank)
    } else {
        spec.sequences.clone()
    };
    let r = frechet_test(f, x0, &u, &increments)?;
    let mut table = PlotTable::new(vec!["sequence", "k", "atom", "quotient"]);
    for (s, trace) in r.sequences.iter().enumerate() {
        for (k, q) in trace.quotients.iter().enumerate() {
            for (i, label) in labels(spec).enumerate() {
                table.rows.push(vec![
                    s.to_string(),
                    k.to_string(),
                    label,
                    format_f64(q.get(i)),
                ]);
            }
        }
    }
    let passed = r.passed;
    Ok(Outcome::new(json!({ "functional": u, "report": r }))
        .verdict(passed)
        .plot(table))
}

fn lipschitz(spec: &ProblemSpec, cfg: &Resolved) -> CliResult<Outcome> {
    let (f, x0) = (spec.function()?, spec.point()?);
    let mut rng = cfg.rng();
    let pairs = spec.params.samples.unwrap_or(DEFAULT_PAIRS);
    let est = lipschitz_estimate(f, x0, pairs, &mut rng)?;
    let mut passed = est.violations == 0;
    let mut result = json!({ "estimate": est });
    if !spec.sequences.is_empty() {
        let c = ae_seq_continuity_probe(f, x0, &spec.sequences, &mut rng)?;
        passed &= c.passed;
        result["continuity"] = to_json(&c);
    }
    Ok(Outcome::new(result).verdict(passed))
}
