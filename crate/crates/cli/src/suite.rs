//! Property suites over a corpus of problem files.

use crate::error::{CliError, CliResult};
use crate::ops::to_json;
use crate::report::hash_json;
use crate::spec::{ProblemSpec, Suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use randcvx::convexfn::probes::{l0_convexity_check, locality_check};
use randcvx::differential::{directional_derivative, inequality_suite};
use randcvx::ekeland::ekeland_point;
use randcvx::legendre::{conjugate, fenchel_moreau_check};
use randcvx::oracle::{
    brute_conjugate_refined, brute_conjugate_refined2, brute_directional, brute_subdiff_interval,
    linspace,
};
use randcvx::subdiff::subdifferential;
use randcvx::{ConvexFn, Error, GridSpec, L0Bar, RandomPoint, ScenarioFn, TransformPath};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const EXACT_TOL: f64 = 1e-9;
pub const GRID_TOL: f64 = 1e-6;
/// Largest rank-1 window scanned by the oracles.
const WINDOW: f64 = 64.0;
const DOMAIN_SAMPLES: usize = 100;
const QUOTIENT_STEPS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail { detail: String },
    Skip { reason: String },
}

impl Verdict {
    fn fail(detail: impl Into<String>) -> Self {
        Verdict::Fail {
            detail: detail.into(),
        }
    }

    fn skip(reason: impl Into<String>) -> Self {
        Verdict::Skip {
            reason: reason.into(),
        }
    }

    fn check(ok: bool, detail: impl FnOnce() -> String) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::fail(detail())
        }
    }

    pub fn failed(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub file: String,
    pub verdicts: BTreeMap<Suite, Verdict>,
    pub expect_fail: Vec<Suite>,
    /// The failing suites are exactly the expected ones.
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub rows: Vec<SuiteRow>,
    pub failures: usize,
    /// SHA-256 of the seed and rows in canonical JSON.
    pub determinism_hash: String,
}

impl Summary {
    /// Rows where `suite` ran and passed.
    pub fn passed(&self, suite: Suite) -> usize {
        self.rows
            .iter()
            .filter(|r| r.verdicts.get(&suite) == Some(&Verdict::Pass))
            .count()
    }
}

fn row_seed(seed: u64, file: &str) -> u64 {
    let h = Sha256::digest(file.as_bytes());
    seed ^ u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

/// Runs every suite on every `*.json` file of `dir`, in parallel on at most
/// `threads` workers.
pub fn check_suite(dir: &Path, seed: u64, threads: Option<usize>) -> CliResult<Summary> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().expect("thread pool");
    let rows: Vec<SuiteRow> = pool.install(|| {
        files
            .par_iter()
            .map(|p| {
                let name = p
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                match ProblemSpec::load(p) {
                    Ok(spec) => run_instance(&name, &spec, row_seed(seed, &name)),
                    Err(e) => SuiteRow {
                        file: name,
                        verdicts: BTreeMap::new(),
                        expect_fail: Vec::new(),
                        ok: false,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    let failures = rows.iter().filter(|r| !r.ok).count();
    let determinism_hash = hash_json(&serde_json::json!({ "seed": seed, "rows": to_json(&rows) }));
    Ok(Summary {
        seed,
        rows,
        failures,
        determinism_hash,
    })
}

pub fn run_instance(file: &str, spec: &ProblemSpec, seed: u64) -> SuiteRow {
    let mut verdicts = BTreeMap::new();
    let error = match spec.function() {
        Ok(f) => {
            let ctx = Instance::new(spec, f, seed);
            for suite in Suite::ALL {
                let v = ctx
                    .run(suite)
                    .unwrap_or_else(|e| Verdict::fail(e.to_string()));
                verdicts.insert(suite, v);
            }
            None
        }
        Err(e) => Some(e.to_string()),
    };
    let failed: Vec<Suite> = verdicts
        .iter()
        .filter(|(_, v)| v.failed())
        .map(|(s, _)| *s)
        .collect();
    let mut expected = spec.expect_fail.clone();
    expected.sort();
    expected.dedup();
    SuiteRow {
        file: file.into(),
        ok: error.is_none() && failed == expected,
        verdicts,
        expect_fail: expected,
        error,
    }
}

struct Instance<'a> {
    spec: &'a ProblemSpec,
    f: &'a ConvexFn,
    n: usize,
    d: usize,
    seed: u64,
    base: Option<RandomPoint>,
}

impl<'a> Instance<'a> {
    fn new(spec: &'a ProblemSpec, f: &'a ConvexFn, seed: u64) -> Self {
        let (n, d) = (spec.n(), spec.rank);
        let base = spec.point.clone().or_else(|| {
            let rows = (0..n)
                .map(|i| f.witness_row(i))
                .collect::<Result<Vec<_>, _>>()
                .ok()?;
            RandomPoint::from_rows(rows).ok()
        });
        Instance {
            spec,
            f,
            n,
            d,
            seed,
            base,
        }
    }

    fn rng(&self, suite: Suite) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(suite as u64))
    }

    fn grid(&self) -> GridSpec {
        self.spec
            .params
            .grid
            .unwrap_or_else(|| GridSpec::new(-4.0, 4.0, 2048).expect("valid grid"))
    }

    fn run(&self, suite: Suite) -> Result<Verdict, Error> {
        let mut rng = self.rng(suite);
        let structured = self.f.is_structured();
        match suite {
            Suite::Locality => {
                let r = locality_check(self.f, self.n, 64, 3.0, &mut rng)?;
                Ok(Verdict::check(r.passed, || {
                    format!("{} of {} samples non-local", r.violations, r.samples)
                }))
            }
            Suite::Convexity => {
                let r = l0_convexity_check(self.f, self.n, 64, 3.0, &mut rng)?;
                Ok(Verdict::check(r.passed, || {
                    format!("{} of {} samples non-convex", r.violations, r.samples)
                }))
            }
            Suite::FenchelMoreau => {
                if !structured {
                    return Ok(Verdict::skip("blackbox"));
                }
                if !self.f.is_proper(self.n)?.proper {
                    return Ok(Verdict::skip("improper"));
                }
                let grid = self.grid();
                let inside = (grid.min, grid.max);
                let samples = self.domain_points(DOMAIN_SAMPLES, Some(inside), &mut rng);
                if samples.is_empty() {
                    return Ok(Verdict::skip("no domain point"));
                }
                let r = fenchel_moreau_check(self.f, self.n, &samples, EXACT_TOL, Some(&grid))?;
                let tol = if r.path == TransformPath::Grid {
                    GRID_TOL
                } else {
                    EXACT_TOL
                };
                let ok = r.max_error <= tol && r.plus_inf_mismatches == 0;
                Ok(Verdict::check(ok, || {
                    format!(
                        "max |f** - f| = {:e}, {} +inf mismatches",
                        r.max_error, r.plus_inf_mismatches
                    )
                }))
            }
            Suite::DirectionalLimit => {
                if !structured {
                    return Ok(Verdict::skip("blackbox"));
                }
                let Some(x0) = &self.base else {
                    return Ok(Verdict::skip("no domain point"));
                };
                for k in 0..4 {
                    let y = RandomPoint::from_fn(self.n, self.d, |i, _| {
                        let v: f64 = rng.gen_range(-2.0..2.0);
                        if (i + k) % 3 == 0 {
                            10.0 * v
                        } else {
                            v
                        }
                    });
                    let r = directional_derivative(self.f, x0, &y)?;
                    if !r.lemma_holds() {
                        return Ok(Verdict::fail(format!(
                            "direction {k}: gap {:?}",
                            r.lemma_gap.values()
                        )));
                    }
                }
                Ok(Verdict::Pass)
            }
            Suite::Inequalities => {
                if !structured {
                    return Ok(Verdict::skip("blackbox"));
                }
                let Some(x0) = &self.base else {
                    return Ok(Verdict::skip("no domain point"));
                };
                let r = inequality_suite(self.f, x0, 32, false, &mut rng)?;
                Ok(Verdict::check(r.passed, || {
                    let bad: Vec<_> = r
                        .checks
                        .iter()
                        .filter(|c| !c.passed())
                        .map(|c| c.name.clone())
                        .collect();
                    format!("violated: {}", bad.join(", "))
                }))
            }
            Suite::Ekeland => self.ekeland(),
            Suite::Oracle => {
                if !structured {
                    return Ok(Verdict::skip("blackbox"));
                }
                if self.d == 1 {
                    self.oracle_rank_one(&mut rng)
                } else if self.d == 2 {
                    self.oracle_rank_two(&mut rng)
                } else {
                    Ok(Verdict::skip("no oracle above rank 2"))
                }
            }
        }
    }

    /// Up to `count` random points in the domain, near the base point; rows
    /// are kept inside `window` when one is given.
    fn domain_points(
        &self,
        count: usize,
        window: Option<(f64, f64)>,
        rng: &mut ChaCha8Rng,
    ) -> Vec<RandomPoint> {
        let Some(base) = &self.base else {
            return Vec::new();
        };
        let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let fits = |r: &[f64]| r.iter().all(|v| lo <= *v && *v <= hi);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut rows = Vec::with_capacity(self.n);
            for i in 0..self.n {
                let w = base.row(i);
                let mut row = w.to_vec();
                for radius in [2.0, 1.0, 0.5, 0.25, 0.125] {
                    let cand: Vec<f64> = w
                        .iter()
                        .map(|v| v + radius * rng.gen_range(-1.0..1.0))
                        .collect();
                    if fits(&cand) && self.f.eval_scenario(i, &cand).is_ok_and(|v| v.is_finite()) {
                        row = cand;
                        break;
                    }
                }
                if !fits(&row) {
                    return out;
                }
                rows.push(row);
            }
            out.push(RandomPoint::from_rows(rows).expect("rows share the rank"));
        }
        out
    }

    fn ekeland(&self) -> Result<Verdict, Error> {
        if !self.f.is_structured() || self.d != 1 {
            return Ok(Verdict::skip("rank-1 structured trees only"));
        }
        let Some(x0) = &self.base else {
            return Ok(Verdict::skip("no domain point"));
        };
        // tolerance from the oracle's infimum, so that x0 is an eps-minimizer
        let fx = self.f.eval(x0)?;
        let mut eps = L0Bar::zeros(self.n);
        for i in 0..self.n {
            let phi = ScenarioFn::from_engine(self.f, i);
            let inf = -brute_conjugate_refined(&phi, -WINDOW, WINDOW, 2049, 4, &[0.0])[0];
            eps.set(i, (fx.get(i) - inf).max(0.0) + 0.1);
        }
        let lambda = self
            .spec
            .params
            .lambda
            .clone()
            .unwrap_or_else(|| L0Bar::constant(self.n, 0.5));
        match ekeland_point(
            self.f,
            x0,
            self.spec.params.eps.as_ref().unwrap_or(&eps),
            &lambda,
        ) {
            Ok(c) => Ok(Verdict::check(c.passed, || {
                format!(
                    "slacks {:?} {:?}, margin {:?}",
                    c.condition1_slack.values(),
                    c.condition2_slack.values(),
                    c.condition3_min_margin.values()
                )
            })),
            Err(Error::Precondition { atoms, what }) => {
                Ok(Verdict::skip(format!("atoms {atoms}: {what}")))
            }
            Err(e) => Err(e),
        }
    }

    fn oracle_rank_one(&self, rng: &mut ChaCha8Rng) -> Result<Verdict, Error> {
        let (f, n) = (self.f, self.n);
        let points = self.domain_points(8, None, rng);
        for x in &points {
            let glued = f.eval(x)?;
            for i in 0..n {
                let alone = ScenarioFn::from_engine(f, i).eval(x.row(i));
                if glued.get(i).to_bits() != alone.to_bits() {
                    return Ok(Verdict::fail(format!(
                        "eval atom {i}: {} vs {alone}",
                        glued.get(i)
                    )));
                }
            }
        }
        let grid = self.grid();
        let t = conjugate(f, n, Some(&grid))?;
        for i in 0..n {
            let phi = ScenarioFn::from_engine(f, i);
            let gridded = t.grid_atoms.contains(i);
            let (lo, hi) = if gridded {
                (grid.min, grid.max)
            } else {
                (-WINDOW, WINDOW)
            };
            let tol = if gridded { GRID_TOL } else { EXACT_TOL };
            let dual = dual_points(&phi, lo, hi);
            let want = brute_conjugate_refined(&phi, lo, hi, 2049, 6, &dual);
            for (g, w) in dual.iter().zip(&want) {
                if gridded && !t.trust[i].contains(*g) {
                    continue;
                }
                let got = t.func.eval_scenario(i, &[*g])?;
                if !close(got, *w, tol) {
                    return Ok(Verdict::fail(format!(
                        "conjugate atom {i} at {g}: {got} vs {w}"
                    )));
                }
            }
        }
        let mut probes: Vec<RandomPoint> = points.into_iter().take(4).collect();
        if let Some(base) = &self.base {
            // one kink per atom where the domain allows it
            let at_kinks = RandomPoint::from_fn(n, 1, |i, _| {
                f.kinks_scenario(i)
                    .into_iter()
                    .find(|k| f.eval_scenario(i, &[*k]).is_ok_and(|v| v.is_finite()))
                    .unwrap_or(base.get(i, 0))
            });
            probes.push(at_kinks);
        }
        let h = 2f64.powi(-(QUOTIENT_STEPS as i32));
        for x in &probes {
            let sub = subdifferential(f, x, 0)?;
            let intervals = sub.intervals().expect("rank 1 gives intervals");
            let y = RandomPoint::from_fn(n, 1, |_, _| rng.gen_range(-2.0..2.0));
            let dir = directional_derivative(f, x, &y)?;
            for i in 0..n {
                if near_other_kink(f, i, x.get(i, 0), 4.0 * h * 2.0) {
                    continue;
                }
                let phi = ScenarioFn::from_engine(f, i);
                let brute = brute_subdiff_interval(&phi, x.get(i, 0), h);
                let e = intervals[i];
                if !(close(e.lo, brute.lo, EXACT_TOL) && close(e.hi, brute.hi, EXACT_TOL)) {
                    return Ok(Verdict::fail(format!(
                        "subdifferential atom {i} at {}: {e:?} vs {brute:?}",
                        x.get(i, 0)
                    )));
                }
                let q = brute_directional(&phi, x.row(i), y.row(i), QUOTIENT_STEPS);
                if !close(dir.value.get(i), q, EXACT_TOL) {
                    return Ok(Verdict::fail(format!(
                        "directional atom {i}: {} vs {q}",
                        dir.value.get(i)
                    )));
                }
            }
        }
        Ok(Verdict::Pass)
    }

    fn oracle_rank_two(&self, rng: &mut ChaCha8Rng) -> Result<Verdict, Error> {
        let (f, n) = (self.f, self.n);
        let t = match conjugate(f, n, None) {
            Ok(t) => t,
            Err(Error::NeedsGrid(_) | Error::Unsupported(_)) => {
                return Ok(Verdict::skip("no exact conjugate"))
            }
            Err(e) => return Err(e),
        };
        let dual: Vec<[f64; 2]> = (0..6)
            .map(|_| [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)])
            .collect();
        for i in 0..n {
            let phi = ScenarioFn::from_engine(f, i);
            let want = brute_conjugate_refined2(&phi, [0.0, 0.0], 16.0, 65, 12, 3, &dual);
            for (g, w) in dual.iter().zip(&want) {
                let got = t.func.eval_scenario(i, g)?;
                if got.is_finite() && !close(got, *w, EXACT_TOL) {
                    return Ok(Verdict::fail(format!(
                        "conjugate atom {i} at {g:?}: {got} vs {w}"
                    )));
                }
            }
        }
        for x in self.domain_points(4, None, rng) {
            let glued = f.eval(&x)?;
            let y = RandomPoint::from_fn(n, 2, |_, _| rng.gen_range(-2.0..2.0));
            let dir = directional_derivative(f, &x, &y)?;
            for i in 0..n {
                let phi = ScenarioFn::from_engine(f, i);
                if glued.get(i).to_bits() != phi.eval(x.row(i)).to_bits() {
                    return Ok(Verdict::fail(format!("eval atom {i}")));
                }
                let q = brute_directional(&phi, x.row(i), y.row(i), QUOTIENT_STEPS);
                if !close(dir.value.get(i), q, EXACT_TOL) {
                    return Ok(Verdict::fail(format!(
                        "directional atom {i}: {} vs {q}",
                        dir.value.get(i)
                    )));
                }
            }
        }
        Ok(Verdict::Pass)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * (1.0 + a.abs().min(b.abs()))
}

/// A kink other than `x` itself within `r` of `x`, where one-sided quotients
/// at step `r` would straddle it.
fn near_other_kink(f: &ConvexFn, i: usize, x: f64, r: f64) -> bool {
    f.kinks_scenario(i)
        .iter()
        .any(|k| *k != x && (k - x).abs() <= r)
}

/// Dual points whose maximizers lie in `[lo, hi]`: between the oracle's
/// slopes at the window ends, pulled in by the quotient error, clipped to
/// `[-5, 5]`.
fn dual_points(phi: &ScenarioFn, lo: f64, hi: f64) -> Vec<f64> {
    let slope_at = |x: f64, dir: f64| {
        if phi.eval(&[x]).is_finite() {
            dir * brute_directional(phi, &[x], &[dir], QUOTIENT_STEPS)
        } else {
            -dir * f64::INFINITY
        }
    };
    let (a, b) = (
        slope_at(lo, 1.0).max(-5.0) + 1e-6,
        slope_at(hi, -1.0).min(5.0) - 1e-6,
    );
    if !(a <= b) {
        return Vec::new();
    }
    linspace(a, b, 9)
}
