use super::*;
use crate::convexfn::samples::random_tree;
use crate::convexfn::Leaf;
use crate::measure_l0::FinitePartition;
use proptest::prelude::*;

fn col(v: &[f64]) -> RandomPoint {
    RandomPoint::from_fn(v.len(), 1, |i, _| v[i])
}

fn func(v: &[f64]) -> RandomFunctional {
    RandomFunctional::new(col(v))
}

fn abs(n: usize) -> ConvexFn {
    ConvexFn::uniform(n, Leaf::abs1(0.0))
}

fn half_sq(n: usize) -> ConvexFn {
    ConvexFn::uniform(n, Leaf::half_sq(1))
}

fn intervals(s: SubdiffSet) -> Vec<Interval> {
    s.intervals().expect("rank 1").to_vec()
}

fn event(mask: &[bool]) -> EventSet {
    EventSet::from_mask(mask.to_vec())
}

#[test]
fn abs_at_zero_is_unit_interval() {
    let s = intervals(subdifferential(&abs(3), &col(&[0.0; 3]), 16).unwrap());
    assert!(s.iter().all(|i| *i == Interval::new(-1.0, 1.0)));
}

#[test]
fn smooth_subdifferential_is_gradient() {
    let s = intervals(subdifferential(&half_sq(2), &col(&[1.5, -2.0]), 16).unwrap());
    assert_eq!(s, vec![Interval::point(1.5), Interval::point(-2.0)]);
}

#[test]
fn glue_selects_branch_subdifferential() {
    let f = ConvexFn::glue_on(&event(&[true, false, true]), abs(3), half_sq(3));
    let s = intervals(subdifferential(&f, &col(&[0.0; 3]), 16).unwrap());
    assert_eq!(
        s,
        vec![
            Interval::new(-1.0, 1.0),
            Interval::point(0.0),
            Interval::new(-1.0, 1.0)
        ]
    );
    // one-sided difference quotients agree with the endpoints
    for (i, iv) in s.iter().enumerate() {
        let h = 1e-7;
        let right = f.eval_scenario(i, &[h]).unwrap() / h;
        let left = -f.eval_scenario(i, &[-h]).unwrap() / h;
        assert!((right - iv.hi).abs() < 1e-6 && (left - iv.lo).abs() < 1e-6);
    }
}

#[test]
fn subdifferential_outside_domain_names_atoms() {
    let f = ConvexFn::uniform(3, Leaf::interval(0.0, 1.0));
    match subdifferential(&f, &col(&[0.5, 2.0, -1.0]), 16) {
        Err(Error::OutsideDomain { atoms, .. }) => assert_eq!(atoms.0, vec![1, 2]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn boundary_of_box_has_half_line() {
    let f = ConvexFn::uniform(1, Leaf::interval(0.0, 1.0));
    let s = intervals(subdifferential(&f, &col(&[0.0]), 16).unwrap());
    assert_eq!(s[0], Interval::new(f64::NEG_INFINITY, 0.0));
}

#[test]
fn is_subgradient_examples() {
    let x0 = col(&[0.0, 0.0]);
    assert!(is_subgradient(&abs(2), &x0, &func(&[1.0, 1.0]), 1e-9)
        .unwrap()
        .is_full());
    assert!(is_subgradient(&abs(2), &x0, &func(&[1.01, 1.01]), 1e-9)
        .unwrap()
        .is_empty());
    let f = ConvexFn::glue_on(&event(&[true, false]), abs(2), half_sq(2));
    let ok = is_subgradient(&f, &x0, &func(&[1.0, 0.5]), 1e-9).unwrap();
    assert_eq!(ok, event(&[true, false]));
}

#[test]
fn is_subgradient_without_exact_conjugate() {
    let f = ConvexFn::sup(vec![abs(1), ConvexFn::uniform(1, Leaf::affine1(0.5, 0.25))]);
    // max(|x|, x/2 + 1/4) at x = 0.5: both pieces active, slopes 0.5 and 1
    let x0 = col(&[0.5]);
    assert!(is_subgradient(&f, &x0, &func(&[0.75]), 1e-9)
        .unwrap()
        .is_full());
    assert!(is_subgradient(&f, &x0, &func(&[0.4]), 1e-9)
        .unwrap()
        .is_empty());
}

#[test]
fn rank_two_cloud_members_are_verified() {
    let f = ConvexFn::uniform(
        2,
        Leaf::Support {
            lower: vec![-1.0, -2.0],
            upper: vec![1.0, 2.0],
            offset: 0.0,
        },
    );
    let x0 = RandomPoint::from_rows(vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let SubdiffSet::Cloud { atoms } = subdifferential(&f, &x0, 32).unwrap() else {
        panic!()
    };
    assert!(!atoms[0].smooth && atoms[0].members.len() == 32);
    for g in &atoms[0].members {
        assert!(g[0].abs() <= 1.0 + 1e-12 && g[1].abs() <= 2.0 + 1e-12);
    }
    // at (1, 0) the first coordinate is pinned at the upper bound
    assert!(atoms[1].members.iter().all(|g| g[0] == 1.0));
    let q = ConvexFn::uniform(2, Leaf::half_sq(2));
    let SubdiffSet::Cloud { atoms } = subdifferential(&q, &x0, 32).unwrap() else {
        panic!()
    };
    assert!(atoms[1].smooth);
    assert_eq!(atoms[1].members, vec![vec![1.0, 0.0]]);
}

#[test]
fn eps_subdifferential_of_abs() {
    let f = abs(1);
    let x0 = col(&[1.0]);
    let eps = L0Bar::constant(1, 0.5);
    assert!(eps_subdifferential_membership(&f, &x0, &func(&[0.5]), &eps)
        .unwrap()
        .is_full());
    assert!(
        eps_subdifferential_membership(&f, &x0, &func(&[0.49]), &eps)
            .unwrap()
            .is_empty()
    );
    let iv = eps_subdiff_interval(&f, 1, 0, 1.0, 0.5).unwrap();
    assert!(iv.approx_eq(&Interval::new(0.5, 1.0), 1e-12), "{iv:?}");
    // at 0 the gap is f*(g): any eps admits exactly [-1, 1]
    let at0 = col(&[0.0]);
    for g in [-1.0, 0.3, 1.0] {
        assert!(
            eps_subdifferential_membership(&f, &at0, &func(&[g]), &L0Bar::constant(1, 1e-3))
                .unwrap()
                .is_full()
        );
    }
    assert!(
        eps_subdifferential_membership(&f, &at0, &func(&[1.001]), &L0Bar::constant(1, 10.0))
            .unwrap()
            .is_empty()
    );
}

#[test]
fn eps_rejects_nonpositive_eps() {
    assert!(
        eps_subdifferential_membership(&abs(1), &col(&[0.0]), &func(&[0.0]), &L0Bar::zeros(1))
            .is_err()
    );
}

#[test]
fn eps_construct_prefers_gradient() {
    let g = eps_subgradient_construct(&half_sq(2), &col(&[2.0, -3.0]), &L0Bar::constant(2, 0.1))
        .unwrap();
    assert_eq!(g.coeffs().column(0).values(), &[2.0, -3.0]);
}

#[test]
fn eps_construct_at_boundary_and_corner() {
    let f = ConvexFn::uniform(2, Leaf::interval(0.0, 1.0));
    let eps = L0Bar::constant(2, 0.25);
    let g = eps_subgradient_construct(&f, &col(&[0.0, 1.0]), &eps).unwrap();
    assert!(
        eps_subdifferential_membership(&f, &col(&[0.0, 1.0]), &g, &eps)
            .unwrap()
            .is_full()
    );
    // support of [1, 2]^2 at the origin: the subdifferential is the box itself,
    // away from both 0 and the coordinate axes
    let s = ConvexFn::uniform(
        1,
        Leaf::Support {
            lower: vec![1.0, 1.0],
            upper: vec![2.0, 2.0],
            offset: 0.0,
        },
    );
    let x0 = RandomPoint::zeros(1, 2);
    let eps = L0Bar::constant(1, 1e-3);
    let g = eps_subgradient_construct(&s, &x0, &eps).unwrap();
    assert!(eps_subdifferential_membership(&s, &x0, &g, &eps)
        .unwrap()
        .is_full());
}

#[test]
fn eps_construct_outside_domain_fails() {
    let f = ConvexFn::uniform(2, Leaf::interval(0.0, 1.0));
    assert!(matches!(
        eps_subgradient_construct(&f, &col(&[0.5, 3.0]), &L0Bar::constant(2, 0.1)),
        Err(Error::OutsideDomain { .. })
    ));
}

#[test]
fn sum_rule_abs_plus_half_line() {
    let f2 = ConvexFn::uniform(1, Leaf::interval(0.0, f64::INFINITY));
    let r = sum_rule_check(&abs(1), &f2, &col(&[0.0]), 1e-9).unwrap();
    assert!(r.passed && !r.vacuous);
    assert_eq!(r.lhs[0], Interval::new(f64::NEG_INFINITY, 1.0));
    assert_eq!(r.rhs[0], Interval::new(f64::NEG_INFINITY, 1.0));
}

#[test]
fn sum_rule_quadratics_add_gradients() {
    let r = sum_rule_check(&half_sq(2), &half_sq(2), &col(&[1.0, -0.5]), 1e-9).unwrap();
    assert!(r.passed);
    assert_eq!(r.lhs, vec![Interval::point(2.0), Interval::point(-1.0)]);
}

#[test]
fn sum_rule_crossing_indicators_is_vacuous() {
    let f1 = ConvexFn::uniform(1, Leaf::interval(0.0, 0.0));
    let f2 = ConvexFn::uniform(1, Leaf::interval(0.0, 1.0));
    let r = sum_rule_check(&f1, &f2, &col(&[0.0]), 1e-9).unwrap();
    assert!(r.vacuous);
    assert!(r.hypothesis_fails.is_full());
}

#[test]
fn sum_rule_empty_side_is_untested() {
    let f1 = abs(1);
    let f2 = ConvexFn::uniform(1, Leaf::interval(0.0, 1.0));
    let r = sum_rule_check(&f1, &f2, &col(&[3.0]), 1e-9).unwrap();
    assert!(r.untested.is_full() && r.passed);
}

#[test]
fn chain_rule_examples() {
    let two = ModuleHom::scalar(&[2.0], 1);
    let ChainRuleReport::One(r) = chain_rule_check(&abs(1), &two, &col(&[0.0]), 1e-9, 0).unwrap()
    else {
        panic!()
    };
    assert!(r.passed);
    assert_eq!(r.lhs[0], Interval::new(-2.0, 2.0));

    let zero = ModuleHom::scalar(&[0.0, 0.0], 1);
    let ChainRuleReport::One(r) =
        chain_rule_check(&half_sq(2), &zero, &col(&[1.0, -1.0]), 1e-9, 0).unwrap()
    else {
        panic!()
    };
    assert!(r.passed && !r.vacuous);
    assert_eq!(r.rhs, vec![Interval::point(0.0); 2]);

    let ladder = ModuleHom::scalar(&[1.0, 2.0, 3.0], 1);
    let ChainRuleReport::One(r) =
        chain_rule_check(&abs(3), &ladder, &col(&[0.0; 3]), 1e-9, 0).unwrap()
    else {
        panic!()
    };
    assert!(r.passed);
    assert_eq!(
        r.lhs,
        (1..=3)
            .map(|i| Interval::new(-(i as f64), i as f64))
            .collect::<Vec<_>>()
    );
}

#[test]
fn chain_rule_zero_map_needs_continuity_at_zero() {
    let f = ConvexFn::uniform(1, Leaf::interval(0.0, 1.0));
    let zero = ModuleHom::scalar(&[0.0], 1);
    let ChainRuleReport::One(r) = chain_rule_check(&f, &zero, &col(&[0.0]), 1e-9, 0).unwrap()
    else {
        panic!()
    };
    assert!(r.vacuous);
}

#[test]
fn chain_rule_rank_two_by_sampling() {
    let f = ConvexFn::uniform(
        2,
        Leaf::Support {
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
            offset: 0.0,
        },
    );
    let map = ModuleHom::from_rows(vec![
        vec![vec![2.0, 1.0], vec![0.0, 1.0]],
        vec![vec![0.0, -1.0], vec![3.0, 0.0]],
    ])
    .unwrap();
    let u = RandomPoint::from_rows(vec![vec![0.0, 0.0], vec![0.5, 0.0]]).unwrap();
    let r = chain_rule_check(&f, &map, &u, 1e-9, 500).unwrap();
    let ChainRuleReport::Many(c) = &r else {
        panic!()
    };
    assert!(r.passed(), "{c:?}");
    assert!(c.forward_checked >= 500 && c.backward_checked >= 500);
}

#[test]
fn separation_interval_example() {
    let m = ConvexSet::Box {
        lower: vec![1.0],
        upper: vec![2.0],
    };
    let r = separate_point_from_set(&col(&[0.0, 1.5]), &[m.clone(), m]).unwrap();
    assert_eq!(r.distance.values(), &[1.0, 0.0]);
    assert_eq!(r.strict_stratum, event(&[true, false]));
    assert_eq!(r.touch_stratum, event(&[false, true]));
    assert_eq!(r.functional.coeffs().get(0, 0), -1.0);
    assert_eq!(r.margin.values(), &[1.0, 0.0]);
    assert_eq!(r.degenerate, event(&[false, true]));
}

#[test]
fn separation_interior_is_degenerate() {
    let m = ConvexSet::Ball {
        center: vec![0.0, 0.0],
        radius: 1.0,
    };
    let x = RandomPoint::from_rows(vec![vec![0.1, 0.2], vec![0.0, 0.0]]).unwrap();
    let r = separate_point_from_set(&x, &[m.clone(), m]).unwrap();
    assert!(r.touch_stratum.is_full() && r.degenerate.is_full());
    assert!(r.functional.coeffs().rows().all(|g| g == [0.0, 0.0]));
}

#[test]
fn separation_ball_points_toward_x() {
    let m = ConvexSet::Ball {
        center: vec![1.0, 1.0],
        radius: 1.0,
    };
    let x = RandomPoint::from_rows(vec![vec![4.0, 5.0], vec![1.0, 2.0]]).unwrap();
    let r = separate_point_from_set(&x, &[m.clone(), m]).unwrap();
    let g = r.functional.coeffs();
    assert!((g.get(0, 0) - 0.6).abs() < 1e-15 && (g.get(0, 1) - 0.8).abs() < 1e-15);
    assert!((r.margin.get(0) - 4.0).abs() < 1e-12);
    // boundary point: supporting normal, no degeneracy
    assert_eq!(g.row(1), &[0.0, 1.0]);
    assert!(r.degenerate.is_empty());
}

#[test]
fn separation_polytope() {
    // triangle 0 <= y1, 0 <= y2, y1 + y2 <= 1
    let m = ConvexSet::Polytope {
        a: vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
        b: vec![0.0, 0.0, 1.0],
    };
    let x = RandomPoint::from_rows(vec![vec![1.0, 1.0], vec![3.0, -1.0], vec![0.5, 0.5]]).unwrap();
    let r = separate_point_from_set(&x, &[m.clone(), m.clone(), m]).unwrap();
    assert!((r.distance.get(0) - 0.5f64.sqrt()).abs() < 1e-12);
    // nearest point of (3, -1) is the vertex (1, 0)
    assert!((r.distance.get(1) - 5f64.sqrt()).abs() < 1e-12);
    assert_eq!(r.strict_stratum, event(&[true, true, false]));
    assert!(r.degenerate.is_empty());
}

#[test]
fn separation_empty_set_names_atoms() {
    let bad = ConvexSet::Box {
        lower: vec![1.0],
        upper: vec![0.0],
    };
    let ok = ConvexSet::Box {
        lower: vec![0.0],
        upper: vec![1.0],
    };
    match separate_point_from_set(&col(&[0.0, 0.0]), &[ok, bad]) {
        Err(Error::OutsideDomain { atoms, .. }) => assert_eq!(atoms.0, vec![1]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn convex_set_serde_round_trip() {
    let m = ConvexSet::Polytope {
        a: vec![vec![1.0, 0.0]],
        b: vec![2.0],
    };
    let s = serde_json::to_string(&m).unwrap();
    assert!(s.contains("\"set\":\"polytope\""));
    assert_eq!(serde_json::from_str::<ConvexSet>(&s).unwrap(), m);
}

fn tree_strategy() -> impl Strategy<Value = ConvexFn> {
    any::<u64>().prop_map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_tree(&mut rng, 3, 2)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subdifferential_is_monotone(f in tree_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        for i in 0..3 {
            let (ia, ib) = (interval_at(&f, i, a), interval_at(&f, i, b));
            if ia.is_empty() || ib.is_empty() {
                continue;
            }
            for ga in [ia.lo, ia.hi] {
                for gb in [ib.lo, ib.hi] {
                    if ga.is_finite() && gb.is_finite() {
                        prop_assert!((ga - gb) * (a - b) >= -1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_subgradient_iff_grid_minimizer(f in tree_strategy()) {
        let xs: Vec<f64> = (0..=96).map(|k| -6.0 + k as f64 / 8.0).collect();
        for i in 0..3 {
            let vals: Vec<f64> = xs.iter().map(|x| f.eval_scenario(i, &[*x]).unwrap()).collect();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            if !min.is_finite() {
                continue;
            }
            for (x, v) in xs.iter().zip(&vals) {
                if !v.is_finite() {
                    continue;
                }
                let zero_in = interval_at(&f, i, *x).contains(0.0, 1e-9);
                if zero_in {
                    prop_assert!(*v <= min + 1e-9 * (1.0 + min.abs()));
                }
                if *v < min + 1e-12 && *x > -6.0 && *x < 6.0 {
                    // an interior grid minimizer on a local piece: a kink or a flat piece
                    let iv = interval_at(&f, i, *x);
                    prop_assert!(iv.lo <= 1e-9 || iv.hi >= -1e-9 || iv.is_empty());
                }
            }
        }
    }

    #[test]
    fn eps_subdifferential_contains_subdifferential(f in tree_strategy(), x in -2.0f64..2.0, e in 0.01f64..1.0) {
        let Ok(t) = conjugate(&f, 3, None) else { return Ok(()) };
        prop_assume!(t.path == TransformPath::Exact);
        for i in 0..3 {
            let iv = interval_at(&f, i, x);
            if iv.is_empty() {
                continue;
            }
            let big = eps_subdiff_interval(&f, 3, i, x, e).unwrap();
            prop_assert!(iv.within(&big, 1e-9), "{:?} not in {:?}", iv, big);
            let small = eps_subdiff_interval(&f, 3, i, x, e * 1e-4).unwrap();
            prop_assert!(small.within(&big, 1e-9));
            // curvature at most 64 bounds the endpoint gap by sqrt(128 eps),
            // plus eps / delta from a kink at distance delta on that side
            let kinks = f.kinks_scenario(i);
            let reach = |side: f64| {
                kinks
                    .iter()
                    .map(|k| side * (k - x))
                    .filter(|t| *t > 0.0)
                    .fold(f64::INFINITY, f64::min)
            };
            let es = e * 1e-4;
            for (s, d, side) in [(small.lo, iv.lo, -1.0), (small.hi, iv.hi, 1.0)] {
                if d.is_finite() {
                    let bound = (128.0 * es).sqrt() + es / reach(side) + 1e-9 * (1.0 + d.abs());
                    prop_assert!(s.is_finite() && (s - d).abs() <= bound, "atom {} x {} s {} d {}", i, x, s, d);
                }
            }
        }
    }

    #[test]
    fn eps_endpoints_converge_linearly_on_pwl(seed in any::<u64>(), x in -2.5f64..2.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = ConvexFn::uniform(1, Leaf::Pwl(crate::convexfn::samples::random_pwl(&mut rng, true)));
        let iv = interval_at(&f, 0, x);
        let a = eps_subdiff_interval(&f, 1, 0, x, 1e-5).unwrap();
        let b = eps_subdiff_interval(&f, 1, 0, x, 1e-6).unwrap();
        for (ea, eb, d) in [(a.lo, b.lo, iv.lo), (a.hi, b.hi, iv.hi)] {
            if d.is_finite() {
                let (da, db) = ((ea - d).abs(), (eb - d).abs());
                prop_assert!((db - da / 10.0).abs() <= 1e-9 * (1.0 + da), "{} {}", da, db);
            }
        }
    }

    #[test]
    fn separation_strata_hold(cx in -2.0f64..2.0, cy in -2.0f64..2.0, r in 0.1f64..2.0, px in -4.0f64..4.0, py in -4.0f64..4.0) {
        let sets = vec![
            ConvexSet::Ball { center: vec![cx, cy], radius: r },
            ConvexSet::Box { lower: vec![cx - r, cy], upper: vec![cx + r, cy + r] },
            ConvexSet::Polytope { a: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]], b: vec![cx.abs() + r, cy.abs() + r, r] },
        ];
        let x = RandomPoint::constant(3, &[px, py]);
        let res = separate_point_from_set(&x, &sets).unwrap();
        prop_assert_eq!(res.strict_stratum.union(&res.touch_stratum), EventSet::full(3));
        for i in 0..3 {
            let g = res.functional.coeffs().row(i);
            let gap = dot(g, x.row(i)) - sets[i].support(g).unwrap();
            if res.strict_stratum.contains(i) {
                prop_assert!(gap > 0.0 && (gap - res.distance.get(i)).abs() < 1e-9 * (1.0 + px.hypot(py)));
            } else {
                prop_assert!(gap.abs() < 1e-9);
            }
        }
    }
}

#[test]
fn glue_stratifies_subdifferential() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (a, b) = (random_tree(&mut rng, 4, 1), random_tree(&mut rng, 4, 1));
        let p = FinitePartition::binary(&event(&[true, false, false, true]));
        let g = ConvexFn::glue(p.clone(), vec![a.clone(), b.clone()]);
        for x in [-1.0, 0.0, 0.25, 1.5] {
            for i in 0..4 {
                let branch = if p.part_of(i) == 0 { &a } else { &b };
                assert_eq!(interval_at(&g, i, x), interval_at(branch, i, x));
            }
        }
    }
}
