//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use randcvx::convexfn::samples::random_tree;
use randcvx::legendre::conjugate;
use randcvx::{ConvexFn, EventSet, GridSpec, Leaf, RandomPoint};

/// `1/2 x^2` on the first half of the atoms, `|x|` on the rest.
pub fn glue_square_abs(n: usize) -> ConvexFn {
    let head: Vec<usize> = (0..n / 2).collect();
    ConvexFn::glue_on(
        &EventSet::from_indices(n, &head),
        ConvexFn::uniform(n, Leaf::quad1(1.0, 0.0, 0.0)),
        ConvexFn::uniform(n, Leaf::abs1(0.0)),
    )
}

/// A sup of flat quadratics on `[-2, 2]`, which forces the grid path.
pub fn sup_quadratics(n: usize) -> ConvexFn {
    ConvexFn::sum(vec![
        ConvexFn::sup(vec![
            ConvexFn::uniform(n, Leaf::quad1(0.25, -0.5, 0.0)),
            ConvexFn::uniform(n, Leaf::quad1(0.125, 0.5, 0.0)),
        ]),
        ConvexFn::uniform(n, Leaf::interval(-2.0, 2.0)),
    ])
}

/// Random trees whose conjugates have closed forms.
pub fn exact_trees(n: usize, count: usize, seed: u64) -> Vec<ConvexFn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let f = random_tree(&mut rng, n, 2);
        if conjugate(&f, n, None).is_ok() {
            out.push(f);
        }
    }
    out
}

pub fn random_point(n: usize, seed: u64) -> RandomPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RandomPoint::from_fn(n, 1, |_, _| rng.gen_range(-0.9..0.9))
}

pub fn grid(points: usize) -> GridSpec {
    GridSpec::new(-4.0, 4.0, points).expect("valid grid")
}
