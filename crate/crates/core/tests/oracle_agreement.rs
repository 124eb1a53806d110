//! Engine results against the brute-force oracles on random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use randcvx::convexfn::samples::{random_pwl, random_tree};
use randcvx::differential::directional_derivative;
use randcvx::legendre::conjugate;
use randcvx::oracle::{
    brute_conjugate, brute_conjugate_refined, brute_directional, brute_subdiff_interval, linspace,
};
use randcvx::subdiff::subdifferential;
use randcvx::{ConvexFn, GridSpec, Leaf, RandomPoint, ScenarioFn, TransformPath};

const WINDOW: f64 = 32.0;

fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * (1.0 + a.abs().min(b.abs()))
}

#[test]
fn pwl_conjugates_match_the_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let tails = case % 2 == 0;
        let p = random_pwl(&mut rng, tails);
        let f = ConvexFn::leaves(vec![Leaf::Pwl(p.clone())]);
        let engine = conjugate(&f, 1, None).unwrap();
        assert_eq!(engine.path, TransformPath::Exact);

        // every maximizer of g x - p(x) over the closed domain is a knot, so
        // a grid holding the knots sees the exact supremum
        let m = rng.gen_range(64..=2048 - p.knots().len());
        let (lo, hi) = (p.knots()[0], *p.knots().last().unwrap());
        let mut xs = linspace(lo, hi, m);
        xs.extend_from_slice(p.knots());
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let phi = ScenarioFn::from_engine(&f, 0).materialize(&xs).unwrap();
        let (glo, ghi) = if tails {
            (p.left_tail().unwrap(), p.right_tail().unwrap())
        } else {
            (-6.0, 6.0)
        };
        let dual = linspace(glo, ghi, 41);
        let brute = brute_conjugate(&phi, &dual);
        for (g, want) in dual.iter().zip(&brute.values) {
            let got = engine.func.eval_scenario(0, &[*g]).unwrap();
            assert!(
                close(got, *want, 1e-9),
                "case {case}: f*({g}) = {got}, brute {want}"
            );
        }
    }
}

/// Dual points whose maximizers lie inside `[-WINDOW, WINDOW]`: between the
/// oracle's slopes at the window ends, pulled in by the quotient error and
/// clipped to `[-5, 5]`.
fn dual_points(phi: &ScenarioFn) -> Vec<f64> {
    let slope_at = |x: f64, dir: f64| {
        if phi.eval(&[x]).is_finite() {
            dir * brute_directional(phi, &[x], &[dir], 16)
        } else {
            -dir * f64::INFINITY
        }
    };
    let (lo, hi) = (
        slope_at(-WINDOW, 1.0).max(-5.0) + 1e-6,
        slope_at(WINDOW, -1.0).min(5.0) - 1e-6,
    );
    if !(lo <= hi) {
        return Vec::new();
    }
    linspace(lo, hi, 9)
}

#[test]
fn tree_conjugates_match_grid_scans() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let grid = GridSpec::new(-WINDOW, WINDOW, 2048).unwrap();
    let (mut exact, mut gridded) = (0, 0);
    for case in 0..60 {
        let n = rng.gen_range(1..=4);
        let f = random_tree(&mut rng, n, 2);
        let engine = conjugate(&f, n, Some(&grid)).unwrap();
        for i in 0..n {
            let phi = ScenarioFn::from_engine(&f, i);
            let dual = dual_points(&phi);
            let want = if engine.grid_atoms.contains(i) {
                // the grid path must equal the discrete conjugate of its own samples
                gridded += 1;
                let samples = phi.materialize(&grid.abscissae()).unwrap();
                brute_conjugate(&samples, &dual).values
            } else {
                exact += 1;
                brute_conjugate_refined(&phi, -WINDOW, WINDOW, 2049, 6, &dual)
            };
            for (g, w) in dual.iter().zip(&want) {
                if !engine.trust[i].contains(*g) {
                    continue;
                }
                let got = engine.func.eval_scenario(i, &[*g]).unwrap();
                assert!(
                    close(got, *w, 1e-9),
                    "case {case} atom {i}: f*({g}) = {got}, oracle {w}"
                );
            }
        }
    }
    assert!(exact > 0 && gridded > 0);
}

fn domain_point<R: Rng>(f: &ConvexFn, n: usize, rng: &mut R) -> Option<RandomPoint> {
    let rows = (0..n)
        .map(|i| {
            (0..64)
                .map(|_| vec![rng.gen_range(-4.0..4.0)])
                .find(|r| f.eval_scenario(i, r).is_ok_and(|v| v.is_finite()))
        })
        .collect::<Option<Vec<_>>>()?;
    RandomPoint::from_rows(rows).ok()
}

#[test]
fn subdifferentials_and_directional_derivatives_match_quotients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    for case in 0..80 {
        let n = rng.gen_range(1..=4);
        let f = random_tree(&mut rng, n, 2);
        let Some(x0) = domain_point(&f, n, &mut rng) else {
            continue;
        };
        let y = RandomPoint::from_fn(n, 1, |_, _| rng.gen_range(-2.0..2.0));
        let sub = subdifferential(&f, &x0, 0).unwrap();
        let dir = directional_derivative(&f, &x0, &y).unwrap();
        for (i, engine) in sub.intervals().unwrap().iter().enumerate() {
            let phi = ScenarioFn::from_engine(&f, i);
            let brute = brute_subdiff_interval(&phi, x0.get(i, 0), 2f64.powi(-16));
            assert!(
                close(engine.lo, brute.lo, 1e-6) && close(engine.hi, brute.hi, 1e-6),
                "case {case} atom {i}: {engine:?} vs {brute:?}"
            );
            let q = brute_directional(&phi, x0.row(i), y.row(i), 16);
            assert!(
                close(dir.value.get(i), q, 1e-6),
                "case {case} atom {i}: {} vs {q}",
                dir.value.get(i)
            );
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn glued_evaluation_is_scenario_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let f = random_tree(&mut rng, n, 3);
        let x = RandomPoint::from_fn(n, 1, |_, _| rng.gen_range(-4.0..4.0));
        let glued = f.eval(&x).unwrap();
        for i in 0..n {
            let alone = ScenarioFn::from_engine(&f, i).eval(x.row(i));
            assert_eq!(glued.get(i).to_bits(), alone.to_bits());
        }
    }
}

#[test]
fn two_variable_conjugates_match_the_double_loop() {
    use randcvx::oracle::brute_conjugate_refined2;
    let q = Leaf::quadratic(
        vec![vec![2.0, 0.5], vec![0.5, 1.0]],
        vec![0.25, -0.5],
        0.125,
    )
    .unwrap();
    let boxed = Leaf::Box {
        lower: vec![-1.0, 0.0],
        upper: vec![2.0, 1.5],
        offset: 0.5,
    };
    let f = ConvexFn::leaves(vec![q, boxed]);
    let engine = conjugate(&f, 2, None).unwrap();
    let dual = [[0.0, 0.0], [1.0, -0.5], [-2.0, 1.25], [0.75, 3.0]];
    for i in 0..2 {
        let phi = ScenarioFn::from_engine(&f, i);
        let want = brute_conjugate_refined2(&phi, [0.0, 0.0], 8.0, 65, 10, 3, &dual);
        for (g, w) in dual.iter().zip(&want) {
            let got = engine.func.eval_scenario(i, g).unwrap();
            assert!(
                close(got, *w, 1e-9),
                "atom {i}: f*({g:?}) = {got}, oracle {w}"
            );
        }
    }
    // the plain double loop on a grid through the box corners is exact for the box
    let xs = linspace(-1.0, 2.0, 61);
    let ys = linspace(0.0, 1.5, 31);
    let scan = ScenarioFn::from_engine(&f, 1)
        .materialize2(&xs, &ys)
        .unwrap();
    let d = linspace(-2.0, 2.0, 9);
    let brute = randcvx::oracle::brute_conjugate2(&scan, &d, &d);
    for (a, g) in d.iter().enumerate() {
        for (b, h) in d.iter().enumerate() {
            let got = engine.func.eval_scenario(1, &[*g, *h]).unwrap();
            assert!(close(got, brute.values[a][b], 1e-12));
        }
    }
}
