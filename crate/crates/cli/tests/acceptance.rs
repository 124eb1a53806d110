//! Acceptance criteria for the engine, one line per criterion on stdout.
//! Run alone with `cargo test -p randcvx-cli --test acceptance`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use randcvx::convexfn::probes::{
    ae_seq_continuity_probe, approach_sequences, lipschitz_estimate, lsc_probe,
};
use randcvx::convexfn::samples::{random_leaf, random_tree};
use randcvx::differential::{directional_derivative, frechet_test, gateaux_derivative};
use randcvx::ekeland::{approx_to_exact_subgradient_sqrt, ekeland_point};
use randcvx::legendre::closure;
use randcvx::oracle::brute_conjugate_refined;
use randcvx::riemann::{
    newton_leibniz_check, riemann_integral, riemann_sum, segment_gradient_integral_check, PolyRow,
};
use randcvx::rnmodule::{
    converges_el, converges_tc, Envelope, EnvelopeKind, SeminormFamily, SequenceDescriptor,
};
use randcvx::subdiff::{chain_rule_check, eps_subdiff_interval, subdifferential, sum_rule_check};
use randcvx::{
    Blackbox, ConvexFn, Curve, CurvePath, Error, GridSpec, Interval, IntervalPartition, L0Bar,
    Leaf, ModuleHom, RandomFunctional, RandomPoint, ScenarioFn, TagRule,
};
use randcvx_cli::ops::default_increments;
use randcvx_cli::{check_suite, run_file, Overrides, ProblemSpec, Suite, Summary, Verdict};
use std::path::PathBuf;
use std::time::Instant;

const SEED: u64 = 7;

struct Check {
    passed: bool,
    detail: String,
}

impl Check {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Check {
            passed,
            detail: detail.into(),
        }
    }
}

struct Ctx {
    dir: PathBuf,
    corpus: Vec<(String, ProblemSpec)>,
    summary: Summary,
}

impl Ctx {
    fn load() -> Self {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus");
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .expect("shipped corpus")
            .map(|e| e.expect("corpus entry").path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let corpus = files
            .iter()
            .map(|p| {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                (name, ProblemSpec::load(p).expect("corpus files parse"))
            })
            .collect();
        let summary = check_suite(&dir, SEED, None).expect("corpus runs");
        Ctx {
            dir,
            corpus,
            summary,
        }
    }

    /// Structured corpus functions with their atom count and rank.
    fn structured(&self) -> impl Iterator<Item = (&str, &ConvexFn, usize, usize)> {
        self.corpus.iter().filter_map(|(name, s)| {
            let f = s.function.as_ref()?;
            f.is_structured()
                .then_some((name.as_str(), f, s.n(), s.rank))
        })
    }

    fn suite_counts(&self, suite: Suite) -> (usize, usize) {
        let rows = self
            .summary
            .rows
            .iter()
            .filter_map(|r| r.verdicts.get(&suite));
        rows.fold((0, 0), |(p, f), v| match v {
            Verdict::Pass => (p + 1, f),
            Verdict::Fail { .. } => (p, f + 1),
            Verdict::Skip { .. } => (p, f),
        })
    }
}

fn witness(f: &ConvexFn, n: usize) -> Option<RandomPoint> {
    let rows = (0..n)
        .map(|i| f.witness_row(i))
        .collect::<Result<Vec<_>, _>>()
        .ok()?;
    RandomPoint::from_rows(rows).ok()
}

fn finite_row(f: &ConvexFn, i: usize, row: &[f64]) -> bool {
    f.eval_scenario(i, row).is_ok_and(|v| v.is_finite())
}

/// A point whose rows have every coordinate neighbour at distance `1e-3` in
/// the domain.
fn interior_point<R: Rng>(f: &ConvexFn, n: usize, d: usize, rng: &mut R) -> Option<RandomPoint> {
    let w = witness(f, n)?;
    let inside = |i: usize, row: &[f64]| {
        finite_row(f, i, row)
            && (0..d).all(|j| {
                [-1e-3, 1e-3].iter().all(|s| {
                    let mut r = row.to_vec();
                    r[j] += s;
                    finite_row(f, i, &r)
                })
            })
    };
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let base = w.row(i).to_vec();
        let found = std::iter::once(base.clone())
            .chain((0..200).map(|k| {
                let r = 2.0 * 0.98f64.powi(k);
                base.iter()
                    .map(|v| v + r * rng.gen_range(-1.0..1.0))
                    .collect()
            }))
            .find(|row| inside(i, row))?;
        rows.push(found);
    }
    RandomPoint::from_rows(rows).ok()
}

fn random_direction<R: Rng>(rng: &mut R, n: usize, d: usize) -> RandomPoint {
    RandomPoint::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0))
}

fn col(v: &[f64]) -> RandomPoint {
    RandomPoint::from_fn(v.len(), 1, |i, _| v[i])
}

fn oracle_inf(f: &ConvexFn, i: usize) -> f64 {
    -brute_conjugate_refined(&ScenarioFn::from_engine(f, i), -64.0, 64.0, 2049, 4, &[0.0])[0]
}

fn oracle_and_engine_agree(ctx: &Ctx) -> Check {
    let (pass, fail) = ctx.suite_counts(Suite::Oracle);
    Check::new(
        pass >= 60 && fail == 0,
        format!("{pass} instances agree, {fail} disagree"),
    )
}

fn fenchel_moreau(ctx: &Ctx) -> Check {
    let (pass, fail) = ctx.suite_counts(Suite::FenchelMoreau);
    let (a, b) = (-0.5, 1.25);
    let f = ConvexFn::Blackbox(Blackbox::open_interval_indicator(a, b));
    let grid = GridSpec::new(-2.0, 2.0, 1025).expect("valid grid");
    let h = 4.0 / 1024.0;
    let hull = match closure(&f, 1, Some(&grid)) {
        Ok(cl) => {
            let at = |x: f64| {
                cl.func
                    .eval(&col(&[x]))
                    .map(|v| v.get(0))
                    .unwrap_or(f64::NAN)
            };
            [a, 0.0, b].iter().all(|x| at(*x) == 0.0)
                && [a - h, b + h].iter().all(|x| at(*x) == f64::INFINITY)
        }
        Err(_) => false,
    };
    Check::new(
        pass > 0 && fail == 0 && hull,
        format!(
            "{pass} instances with f** = f, {fail} without; open-interval closure {}",
            if hull { "closed" } else { "wrong" }
        ),
    )
}

fn lower_semicontinuity(ctx: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut checked, mut failed) = (0, Vec::new());
    for (name, f, n, d) in ctx.structured() {
        let points = [witness(f, n), interior_point(f, n, d, &mut rng)];
        for x in points.iter().flatten() {
            checked += 1;
            match lsc_probe(f, x, &approach_sequences(x, 40)) {
                Ok(r) if r.all_pass() => {}
                _ => failed.push(name.to_string()),
            }
        }
    }
    let mut caught = 0;
    for bb in [
        Blackbox::open_interval_indicator(0.0, 1.0),
        Blackbox::lifted_boundary(0.0, 1.0),
    ] {
        let f = ConvexFn::Blackbox(bb);
        let x = col(&[0.0, 0.5]);
        if let Ok(r) = lsc_probe(&f, &x, &approach_sequences(&x, 40)) {
            let w = [&r.liminf, &r.sublevel, &r.epigraph]
                .iter()
                .find_map(|v| v.witness.clone());
            if !r.all_pass() && w.is_some_and(|w| w.atom == 0) {
                caught += 1;
            }
        }
    }
    Check::new(
        failed.is_empty() && caught == 2,
        format!("{checked} structured points lsc, {} not ({failed:?}); {caught}/2 non-lsc blackboxes caught", failed.len()),
    )
}

fn lipschitz_and_continuity(ctx: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut instances, mut pairs, mut terms, mut bad) = (0, 0, 0, Vec::new());
    for (name, f, n, d) in ctx.structured() {
        let Some(x0) = interior_point(f, n, d, &mut rng) else {
            continue;
        };
        instances += 1;
        let est = lipschitz_estimate(f, &x0, 1000, &mut rng);
        let seqs: Vec<SequenceDescriptor> = default_increments(n, d)
            .into_iter()
            .map(|s| SequenceDescriptor {
                prefix: s
                    .prefix
                    .iter()
                    .map(|h| x0.add(h).expect("same shape"))
                    .collect(),
                envelope: s.envelope,
            })
            .collect();
        let cont = ae_seq_continuity_probe(f, &x0, &seqs, &mut rng);
        match (est, cont) {
            (Ok(e), Ok(c)) if e.violations == 0 && e.pairs >= 1000 && c.applicable && c.passed => {
                pairs += e.pairs;
                terms += c.checked_terms;
            }
            _ => bad.push(name.to_string()),
        }
    }
    Check::new(
        bad.is_empty() && instances > 0,
        format!(
            "{instances} interior points, {pairs} pairs, {terms} sequence terms; failing: {bad:?}"
        ),
    )
}

fn random_sequence<R: Rng>(rng: &mut R, x: &RandomPoint, convergent: bool) -> SequenceDescriptor {
    let (n, d) = (x.n(), x.d());
    let kind = if rng.gen_bool(0.5) {
        EnvelopeKind::Geometric
    } else {
        EnvelopeKind::Power
    };
    let stuck: Vec<bool> = if convergent {
        vec![false; n]
    } else {
        let first = rng.gen_range(0..n);
        (0..n).map(|i| i == first || rng.gen_bool(0.3)).collect()
    };
    let c = L0Bar::from_fn(n, |_| rng.gen_range(0.5..2.0));
    let rate = L0Bar::from_fn(n, |i| match (kind, stuck[i]) {
        (EnvelopeKind::Geometric, false) => rng.gen_range(0.1..0.9),
        (EnvelopeKind::Geometric, true) => rng.gen_range(1.0..1.2),
        (EnvelopeKind::Power, false) => rng.gen_range(0.5..2.0),
        (EnvelopeKind::Power, true) => rng.gen_range(-0.5..=0.0),
    });
    let envelope = Envelope { kind, c, rate };
    let prefix = (1..=20)
        .map(|k| {
            let mut p = x.clone();
            for i in 0..n {
                let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
                let dist = envelope.at(i, k) * rng.gen_range(0.5..1.0);
                for j in 0..d {
                    p.set(i, j, x.get(i, j) + dist * dir[j] / norm);
                }
            }
            p
        })
        .collect();
    SequenceDescriptor { prefix, envelope }
}

fn topologies_agree(ctx: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let fam = SeminormFamily::euclidean();
    let (mut total, mut disagree, mut wrong) = (0, 0, 0);
    for (_, spec) in &ctx.corpus {
        let x = RandomPoint::from_fn(spec.n(), spec.rank, |_, _| rng.gen_range(-1.0..1.0));
        for k in 0..100 {
            let convergent = k < 50;
            let seq = random_sequence(&mut rng, &x, convergent);
            let el = converges_el(&spec.base, &seq, &x, &fam).expect("shapes match");
            let tc = converges_tc(&spec.base, &seq, &x, &fam).expect("shapes match");
            total += 1;
            disagree += usize::from(el != tc);
            wrong += usize::from(el != convergent);
        }
    }
    Check::new(
        disagree == 0 && wrong == 0,
        format!("{total} sequences, {disagree} disagreements, {wrong} wrong verdicts"),
    )
}

fn subdifferential_calculus() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let abs = ConvexFn::uniform(1, Leaf::abs1(0.0));
    let ray = ConvexFn::uniform(1, Leaf::interval(0.0, f64::INFINITY));
    let special = sum_rule_check(&abs, &ray, &col(&[0.0]), 1e-8)
        .is_ok_and(|r| r.passed && !r.vacuous && r.lhs[0] == Interval::new(f64::NEG_INFINITY, 1.0));
    let (mut sums, mut sum_fail) = (0, 0);
    let mut tries = 0;
    while sums < 20 && tries < 2000 {
        tries += 1;
        let n = rng.gen_range(1..=6);
        let f1 = random_tree(&mut rng, n, 1);
        let f2 = ConvexFn::leaves((0..n).map(|_| random_leaf(&mut rng)).collect());
        let Some(u) = witness(&ConvexFn::sum(vec![f1.clone(), f2.clone()]), n) else {
            continue;
        };
        match sum_rule_check(&f1, &f2, &u, 1e-8) {
            Ok(r) if !r.vacuous && r.untested.is_empty() => {
                sums += 1;
                sum_fail += usize::from(!r.passed);
            }
            _ => {}
        }
    }
    let (mut chains, mut chain_fail) = (0, 0);
    tries = 0;
    while chains < 20 && tries < 2000 {
        tries += 1;
        let rank_two = chains >= 15;
        let n = rng.gen_range(1..=4);
        let (f, map) = if rank_two {
            let f = ConvexFn::leaves(
                (0..n)
                    .map(|_| {
                        let a = rng.gen_range(0.5..2.0);
                        Leaf::quadratic(
                            vec![vec![a, 0.25], vec![0.25, 1.0]],
                            vec![rng.gen_range(-1.0..1.0), 0.0],
                            0.0,
                        )
                        .expect("positive definite")
                    })
                    .collect(),
            );
            let maps = (0..n)
                .map(|_| {
                    vec![
                        vec![rng.gen_range(0.5..2.0), rng.gen_range(-0.5..0.5)],
                        vec![0.0, rng.gen_range(0.5..2.0)],
                    ]
                })
                .collect();
            (f, ModuleHom::from_rows(maps).expect("square maps"))
        } else {
            let lam: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0.25..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            (random_tree(&mut rng, n, 1), ModuleHom::scalar(&lam, 1))
        };
        let Some(w) = witness(&f, n) else { continue };
        let u = map
            .inverse()
            .expect("invertible")
            .apply(&w)
            .expect("shapes match");
        if let Ok(r) = chain_rule_check(&f, &map, &u, 1e-8, 64) {
            if let randcvx::subdiff::ChainRuleReport::One(one) = &r {
                if one.vacuous || !one.untested.is_empty() {
                    continue;
                }
            }
            chains += 1;
            chain_fail += usize::from(!r.passed());
        }
    }
    Check::new(
        special && sums >= 20 && sum_fail == 0 && chains >= 20 && chain_fail == 0,
        format!(
            "sum rule {}/{sums} pass, chain rule {}/{chains} pass, |x| + ind[0,inf) at 0 {}",
            sums - sum_fail,
            chains - chain_fail,
            if special { "gives (-inf, 1]" } else { "wrong" }
        ),
    )
}

fn directional_limit(ctx: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let pool: Vec<_> = ctx.structured().collect();
    let (mut triples, mut bad, mut worst) = (0, Vec::new(), 0.0f64);
    let mut k = 0;
    while triples < 50 && k < 50 * pool.len() {
        let (name, f, n, d) = pool[k % pool.len()];
        k += 1;
        let Some(x0) = interior_point(f, n, d, &mut rng).or_else(|| witness(f, n)) else {
            continue;
        };
        // per-atom scales a factor 10 apart
        let y = RandomPoint::from_fn(n, d, |i, _| {
            rng.gen_range(-1.0..1.0) * if i % 2 == 0 { 1.0 } else { 10.0 }
        });
        triples += 1;
        match directional_derivative(f, &x0, &y) {
            Ok(r) => {
                for (g, v) in r.lemma_gap.iter().zip(r.value.iter()) {
                    worst = worst.max(g / (1.0 + if v.is_finite() { v.abs() } else { 0.0 }));
                }
                if !r.lemma_holds() {
                    bad.push(name.to_string());
                }
            }
            Err(_) => bad.push(name.to_string()),
        }
    }
    Check::new(
        triples >= 50 && bad.is_empty() && worst <= 1e-8,
        format!("{triples} triples, largest relative gap {worst:e}, failing: {bad:?}"),
    )
}

fn gateaux_and_frechet(ctx: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut gateaux, mut frechet, mut bad) = (0, 0, Vec::new());
    for (name, f, n, d) in ctx.structured() {
        let Some(x0) = interior_point(f, n, d, &mut rng) else {
            continue;
        };
        let Ok(g) = gateaux_derivative(f, &x0) else {
            bad.push(format!("{name}: gateaux error"));
            continue;
        };
        let Some(u) = g.derivative else { continue };
        gateaux += 1;
        let mut ok = g.directions_checked > 0;
        if d == 1 {
            let sub = subdifferential(f, &x0, 0).expect("domain point");
            for (i, iv) in sub.intervals().expect("rank 1").iter().enumerate() {
                let ui = u.coeffs().get(i, 0);
                ok &= iv.hi - iv.lo <= 1e-9 && iv.lo - 1e-9 <= ui && ui <= iv.hi + 1e-9;
            }
        }
        for _ in 0..8 {
            let y = random_direction(&mut rng, n, d);
            let dir = directional_derivative(f, &x0, &y).expect("domain point");
            let uy = u.apply(&y).expect("same shape");
            ok &= (0..n)
                .all(|i| (dir.value.get(i) - uy.get(i)).abs() <= 1e-8 * (1.0 + uy.get(i).abs()));
        }
        // continuously differentiable around x0: no kink within 1e-3
        let smooth = (0..n).all(|i| {
            f.kinks_scenario(i)
                .iter()
                .all(|k| (k - x0.get(i, 0)).abs() > 1e-3)
        }) || d == 2;
        if ok && smooth {
            frechet += 1;
            ok = frechet_test(f, &x0, &u, &default_increments(n, d)).is_ok_and(|r| r.passed);
        }
        if !ok {
            bad.push(name.to_string());
        }
    }
    let abs = ConvexFn::uniform(1, Leaf::abs1(0.0));
    let pinned = frechet_test(
        &abs,
        &col(&[0.0]),
        &RandomFunctional::zeros(1, 1),
        &default_increments(1, 1),
    )
    .is_ok_and(|r| {
        !r.passed
            && r.sequences[..2]
                .iter()
                .all(|s| s.quotients.iter().all(|q| q.get(0) == 1.0))
    });
    Check::new(
        gateaux > 0 && frechet > 0 && bad.is_empty() && pinned,
        format!(
            "{gateaux} Gateaux derivatives, {frechet} Frechet checks, failing: {bad:?}; |x| at 0 {}",
            if pinned { "pinned at 1" } else { "not pinned" }
        ),
    )
}

fn poly_curve<R: Rng>(rng: &mut R, n: usize, d: usize, degree: usize) -> Curve {
    let mut modulus = L0Bar::zeros(n);
    let rows = (0..n)
        .map(|i| {
            let coeffs: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..=degree).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let m = coeffs
                .iter()
                .map(|c| {
                    c.iter()
                        .enumerate()
                        .map(|(k, a)| k as f64 * a.abs())
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            modulus.set(i, m.max(1e-3));
            PolyRow { coeffs }
        })
        .collect();
    Curve::new(0.0, 1.0, CurvePath::Polynomial { rows }).with_modulus(modulus)
}

fn row_gap(a: &RandomPoint, b: &RandomPoint, i: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(i))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn riemann_and_newton_leibniz(ctx: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut notes = Vec::new();
    let mut linear = 0.0f64;
    for _ in 0..10 {
        let (n, d) = (rng.gen_range(1..=8), rng.gen_range(1..=2));
        let mut c = poly_curve(&mut rng, n, d, 1);
        if let CurvePath::Polynomial { rows } = &mut c.path {
            rows.iter_mut()
                .flat_map(|r| r.coeffs.iter_mut())
                .for_each(|p| p[0] = 0.0);
        }
        let r = riemann_integral(&c, 1e-12).expect("integrable");
        let v = c.eval(1.0).expect("on the interval");
        for i in 0..n {
            linear = linear.max(row_gap(&r.value, &v.scale_uniform(0.5), i));
        }
    }
    let (mut nl_worst, mut tag_ok) = (0.0f64, true);
    for k in 0..20 {
        let (n, d) = (rng.gen_range(1..=8), rng.gen_range(1..=2));
        let c = poly_curve(&mut rng, n, d, 1 + k % 4);
        let nl = newton_leibniz_check(&c, 1e-8).expect("polynomial");
        nl_worst = nl_worst.max(
            nl.residual
                .map_or(f64::INFINITY, |r| r.iter().fold(0.0, f64::max)),
        );
        let r = riemann_integral(&c, 1e-9).expect("integrable");
        for rule in [TagRule::Left, TagRule::Midpoint, TagRule::Right] {
            let p = IntervalPartition::uniform(0.0, 1.0, r.cells, rule).expect("valid partition");
            let s = riemann_sum(&c, &p).expect("same curve");
            tag_ok &=
                (0..n).all(|i| row_gap(&s, &r.value, i) <= 2.0 * r.error_bound.get(i) + 1e-15);
        }
    }
    let (mut segments, mut broken) = (0, Vec::new());
    for (name, f, n, d) in ctx.structured().filter(|(_, _, _, d)| *d == 1) {
        // the identity needs a differentiable segment, so resample segments
        // that cross a kink
        let found = (0..10).find_map(|_| {
            let x0 = interior_point(f, n, d, &mut rng)?;
            let x0 = RandomPoint::from_fn(n, 1, |i, _| x0.get(i, 0) + rng.gen_range(-1e-2..1e-2));
            let h = RandomPoint::from_fn(n, 1, |_, _| rng.gen_range(-1e-3..1e-3));
            let r = segment_gradient_integral_check(f, &x0, &h, 1e-7, 64, &mut rng).ok()?;
            r.kinks.is_empty().then_some(r)
        });
        if let Some(r) = found {
            segments += 1;
            if !r.passed {
                let worst = r
                    .residual
                    .map_or(f64::INFINITY, |v| v.iter().fold(0.0, f64::max));
                broken.push(format!(
                    "{name}: residual {worst:e}, {} order violations",
                    r.monotonicity_violations
                ));
            }
        }
    }
    if linear > 1e-10 {
        notes.push("linear integral");
    }
    if nl_worst > 1e-8 {
        notes.push("Newton-Leibniz");
    }
    if !tag_ok {
        notes.push("tag independence");
    }
    if !broken.is_empty() || segments == 0 {
        notes.push("segment identity");
    }
    Check::new(
        notes.is_empty(),
        format!(
            "|int t v - v/2| <= {linear:e}, NL residual <= {nl_worst:e}, tags {}, segments {}/{segments}; failing: {notes:?} {broken:?}",
            if tag_ok { "agree" } else { "differ" },
            segments - broken.len(),
        ),
    )
}

/// A rank-1 tree bounded below, a base point and an `eps` making the base
/// point an `eps`-minimizer.
fn ekeland_instance<R: Rng>(rng: &mut R) -> Option<(ConvexFn, RandomPoint, L0Bar)> {
    let n = rng.gen_range(1..=8);
    let depth = rng.gen_range(0..=2);
    let f = random_tree(rng, n, depth);
    let x0 = witness(&f, n)?;
    let fx = f.eval(&x0).ok()?;
    let mut eps = L0Bar::zeros(n);
    for i in 0..n {
        let inf = oracle_inf(&f, i);
        if !inf.is_finite() || inf < -30.0 {
            return None;
        }
        eps.set(i, (fx.get(i) - inf).max(0.0) + rng.gen_range(0.01..1.0));
    }
    Some((f, x0, eps))
}

fn ekeland_certificates() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut certs, mut bad, mut worst_slack, mut worst_margin) =
        (0, 0, f64::INFINITY, f64::INFINITY);
    let mut tries = 0;
    while certs < 20 && tries < 2000 {
        tries += 1;
        let Some((f, x0, eps)) = ekeland_instance(&mut rng) else {
            continue;
        };
        let lambda = L0Bar::from_fn(x0.n(), |_| rng.gen_range(0.1..2.0));
        match ekeland_point(&f, &x0, &eps, &lambda) {
            Ok(c) => {
                certs += 1;
                let slack = c
                    .condition1_slack
                    .iter()
                    .chain(c.condition2_slack.iter())
                    .fold(f64::INFINITY, f64::min);
                let margin = c.condition3_min_margin.iter().fold(f64::INFINITY, f64::min);
                worst_slack = worst_slack.min(slack);
                worst_margin = worst_margin.min(margin);
                let ok = slack >= -1e-12
                    && margin >= -1e-10
                    && c.condition3_samples >= 1000
                    && c.first_order.is_full();
                bad += usize::from(!ok);
            }
            Err(Error::Precondition { .. }) => {}
            Err(_) => bad += 1,
        }
    }
    Check::new(
        certs >= 20 && bad == 0,
        format!("{certs} certificates, {bad} failing; least slack {worst_slack:e}, least margin {worst_margin:e}"),
    )
}

fn approximate_to_exact_subgradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut done, mut bad, mut hard) = (0, 0, 0);
    let mut tries = 0;
    while done < 20 && tries < 2000 {
        tries += 1;
        let n = rng.gen_range(1..=8);
        let depth = rng.gen_range(0..=2);
        let f = random_tree(&mut rng, n, depth);
        let Some(u) = witness(&f, n) else { continue };
        let eps = L0Bar::from_fn(n, |_| rng.gen_range(0.01..1.0));
        let mut star = RandomPoint::zeros(n, 1);
        let mut ok = true;
        for i in 0..n {
            match eps_subdiff_interval(&f, n, i, u.get(i, 0), eps.get(i)) {
                Ok(iv) if iv.lo <= iv.hi => {
                    let (lo, hi) = (iv.lo.max(iv.hi - 10.0), iv.hi.min(iv.lo + 10.0));
                    star.set(i, 0, if lo < hi { rng.gen_range(lo..=hi) } else { lo });
                }
                _ => ok = false,
            }
        }
        if !ok || !star.is_finite() {
            continue;
        }
        match approx_to_exact_subgradient_sqrt(&f, &u, &RandomFunctional::new(star), &eps) {
            Ok(r) => {
                done += 1;
                let within = (0..n).all(|i| {
                    let s = eps.get(i).sqrt() + 1e-8;
                    r.distance.get(i) <= s
                        && r.dual_distance.get(i) <= s
                        && r.fenchel_gap.get(i) <= 1e-8
                });
                bad += usize::from(!(within && r.passed));
            }
            Err(Error::Precondition { .. }) => {}
            Err(_) => hard += 1,
        }
    }
    Check::new(
        done >= 20 && bad == 0 && hard == 0,
        format!("{done} instances, {bad} outside sqrt(eps), {hard} hard failures"),
    )
}

fn determinism(ctx: &Ctx) -> Check {
    let again = check_suite(&ctx.dir, SEED, Some(1)).expect("corpus runs");
    let same_suite = again.determinism_hash == ctx.summary.determinism_hash;
    let tmp = tempfile::tempdir().expect("temporary directory");
    let spec = tmp.path().join("ekeland.json");
    std::fs::write(&spec, include_str!("data/ekeland.json")).expect("write spec");
    let run = |out: &str| {
        let out = tmp.path().join(out);
        let report = run_file(&spec, &out, &Overrides::default()).expect("runs");
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timings");
        (report.determinism_hash, v)
    };
    let same_report = run("a.json") == run("b.json");
    Check::new(
        same_suite && same_report,
        format!(
            "check-suite hash {} across thread counts, report {}",
            if same_suite { "stable" } else { "differs" },
            if same_report {
                "byte-identical"
            } else {
                "differs"
            }
        ),
    )
}

fn main() {
    let started = Instant::now();
    let ctx = Ctx::load();
    println!(
        "corpus: {} instances, {} unexpected failures",
        ctx.summary.rows.len(),
        ctx.summary.failures
    );
    type Run<'a> = Box<dyn Fn() -> Check + 'a>;
    let criteria: Vec<(&str, Run)> = vec![
        (
            "engine vs scenario oracles",
            Box::new(|| oracle_and_engine_agree(&ctx)),
        ),
        (
            "Fenchel-Moreau and closure",
            Box::new(|| fenchel_moreau(&ctx)),
        ),
        (
            "lower semicontinuity probes",
            Box::new(|| lower_semicontinuity(&ctx)),
        ),
        (
            "Lipschitz and a.s. continuity",
            Box::new(|| lipschitz_and_continuity(&ctx)),
        ),
        (
            "topologies agree on sequences",
            Box::new(|| topologies_agree(&ctx)),
        ),
        ("sum and chain rules", Box::new(subdifferential_calculus)),
        (
            "dyadic limit vs xi infimum",
            Box::new(|| directional_limit(&ctx)),
        ),
        (
            "Gateaux and Frechet",
            Box::new(|| gateaux_and_frechet(&ctx)),
        ),
        (
            "Riemann and Newton-Leibniz",
            Box::new(|| riemann_and_newton_leibniz(&ctx)),
        ),
        ("Ekeland certificates", Box::new(ekeland_certificates)),
        (
            "approximate to exact subgradients",
            Box::new(approximate_to_exact_subgradients),
        ),
        ("determinism", Box::new(|| determinism(&ctx))),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let check = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Check::new(false, "panicked"));
        failed += usize::from(!check.passed);
        println!(
            "criterion {:>2} {:<36} {} [{:.1}s] {}",
            k + 1,
            name,
            if check.passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            check.detail
        );
    }
    println!(
        "{} of 12 criteria pass in {:.1}s",
        12 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
