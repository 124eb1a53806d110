//! Random structured trees of rank 1, for property tests, corpora and benches.

use super::{ConvexFn, Leaf, Pwl1};
use crate::measure_l0::{EventSet, FinitePartition, L0Bar};
use crate::rnmodule::{ModuleHom, RandomPoint};
use rand::Rng;

fn round(v: f64) -> f64 {
    (v * 8.0).round() / 8.0
}

/// A random convex PWL function with 2 to 5 knots in `[-3, 3]`.
pub fn random_pwl<R: Rng>(rng: &mut R, tails: bool) -> Pwl1 {
    let m = rng.gen_range(2..=5);
    let mut knots: Vec<f64> = (0..m).map(|_| round(rng.gen_range(-3.0..3.0))).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    if knots.len() < 2 {
        knots = vec![-1.0, 1.0];
    }
    let mut slope = round(rng.gen_range(-2.0..0.0));
    let mut values = vec![round(rng.gen_range(-1.0..1.0))];
    for w in knots.windows(2) {
        let next = values[values.len() - 1] + slope * (w[1] - w[0]);
        values.push(next);
        slope += round(rng.gen_range(0.0..1.5));
    }
    let s = {
        let k = knots.len();
        (values[k - 1] - values[k - 2]) / (knots[k - 1] - knots[k - 2])
    };
    let s0 = (values[1] - values[0]) / (knots[1] - knots[0]);
    let (lt, rt) = if tails {
        (
            Some(s0 - round(rng.gen_range(0.0..1.0))),
            Some(s + round(rng.gen_range(0.0..1.0))),
        )
    } else {
        (None, None)
    };
    Pwl1::with_tails(knots, values, lt, rt).expect("convex by construction")
}

/// A random closed proper leaf of rank 1.
pub fn random_leaf<R: Rng>(rng: &mut R) -> Leaf {
    match rng.gen_range(0..7) {
        0 => Leaf::quad1(
            round(rng.gen_range(0.0..3.0)),
            round(rng.gen_range(-2.0..2.0)),
            round(rng.gen_range(-1.0..1.0)),
        ),
        1 => Leaf::abs1(round(rng.gen_range(-1.0..1.0))),
        2 => {
            let l = round(rng.gen_range(-3.0..0.0));
            Leaf::interval(l, l + round(rng.gen_range(0.5..4.0)))
        }
        3 => Leaf::affine1(
            round(rng.gen_range(-2.0..2.0)),
            round(rng.gen_range(-1.0..1.0)),
        ),
        4 => {
            let tails = rng.gen_bool(0.7);
            Leaf::Pwl(random_pwl(rng, tails))
        }
        5 => Leaf::MoreauPwl {
            pwl: random_pwl(rng, true),
            mu: round(rng.gen_range(0.25..2.0)),
        },
        _ => Leaf::PwlQuad {
            pwl: random_pwl(rng, true),
            mu: round(rng.gen_range(0.25..2.0)),
        },
    }
}

fn random_event<R: Rng>(rng: &mut R, n: usize) -> EventSet {
    EventSet::from_mask((0..n).map(|_| rng.gen_bool(0.5)).collect())
}

/// A random structured tree of rank 1 over `n` atoms. Every leaf is proper on
/// every atom; `Sum` and `Sup` of box-bounded terms may still have empty domains.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize, depth: usize) -> ConvexFn {
    if depth == 0 {
        return ConvexFn::leaves((0..n).map(|_| random_leaf(rng)).collect());
    }
    let sub = |rng: &mut R| random_tree(rng, n, depth - 1);
    match rng.gen_range(0..8) {
        0 => ConvexFn::sum(vec![sub(rng), sub(rng)]),
        1 => ConvexFn::sup(vec![sub(rng), sub(rng)]),
        2 => ConvexFn::scale(
            L0Bar::from_fn(n, |_| round(rng.gen_range(0.0..2.0))),
            sub(rng),
        ),
        3 => ConvexFn::perspective(
            L0Bar::from_fn(n, |_| round(rng.gen_range(0.25..2.0))),
            sub(rng),
        ),
        4 => {
            let a = random_event(rng, n);
            let (fa, fb) = (sub(rng), sub(rng));
            ConvexFn::glue(FinitePartition::binary(&a), vec![fa, fb])
        }
        5 => ConvexFn::translate(
            RandomPoint::from_fn(n, 1, |_, _| round(rng.gen_range(-1.0..1.0))),
            sub(rng),
        ),
        6 => {
            let m: Vec<f64> = (0..n)
                .map(|_| {
                    let v = round(rng.gen_range(0.25..2.0));
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            ConvexFn::precompose(ModuleHom::scalar(&m, 1), sub(rng))
        }
        _ => sub(rng),
    }
}
