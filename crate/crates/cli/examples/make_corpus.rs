//! Regenerates the shipped check-suite corpus.
//!
//! cargo run -p randcvx-cli --example make_corpus -- crates/cli/corpus

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use randcvx::convexfn::samples::random_tree;
use randcvx::legendre::conjugate;
use randcvx::{
    AtomicBase, Blackbox, BlackboxKind, ConvexFn, EventSet, GridSpec, L0Bar, Leaf, Pwl1,
    RandomPoint,
};
use randcvx_cli::spec::{Params, SCHEMA};
use randcvx_cli::{Operation, ProblemSpec, Suite};
use std::path::PathBuf;

const RANDOM_RANK_ONE: usize = 48;
const RANDOM_RANK_TWO: usize = 8;

fn spec(n: usize, rank: usize, f: ConvexFn) -> ProblemSpec {
    ProblemSpec {
        schema: SCHEMA.into(),
        base: AtomicBase::uniform(n),
        rank,
        operation: Operation::Conjugate,
        function: Some(f),
        second: None,
        map: None,
        point: None,
        direction: None,
        functional: None,
        sets: None,
        curve: None,
        sequences: Vec::new(),
        params: Params::default(),
        expect_fail: Vec::new(),
    }
}

fn exact_and_proper(f: &ConvexFn, n: usize) -> bool {
    conjugate(f, n, None).is_ok() && f.is_proper(n).is_ok_and(|p| p.proper)
}

fn round(v: f64) -> f64 {
    (v * 8.0).round() / 8.0
}

fn random_rank_two(rng: &mut ChaCha8Rng, n: usize) -> ConvexFn {
    let leaf = |rng: &mut ChaCha8Rng| match rng.gen_range(0..3) {
        0 => {
            let (a, b, c) = (
                round(rng.gen_range(0.5..2.0)),
                round(rng.gen_range(0.5..2.0)),
                round(rng.gen_range(-0.25..0.25)),
            );
            let lin = vec![
                round(rng.gen_range(-1.0..1.0)),
                round(rng.gen_range(-1.0..1.0)),
            ];
            Leaf::quadratic(vec![vec![a, c], vec![c, b]], lin, 0.0).expect("diagonally dominant")
        }
        1 => {
            let lower = vec![
                round(rng.gen_range(-2.0..0.0)),
                round(rng.gen_range(-2.0..0.0)),
            ];
            let upper = vec![
                lower[0] + round(rng.gen_range(0.5..3.0)),
                lower[1] + round(rng.gen_range(0.5..3.0)),
            ];
            Leaf::Box {
                lower,
                upper,
                offset: round(rng.gen_range(-1.0..1.0)),
            }
        }
        _ => Leaf::half_sq(2),
    };
    let f = ConvexFn::leaves((0..n).map(|_| leaf(rng)).collect());
    match rng.gen_range(0..3) {
        0 => ConvexFn::scale(L0Bar::from_fn(n, |_| round(rng.gen_range(0.25..2.0))), f),
        1 => ConvexFn::translate(
            RandomPoint::from_fn(n, 2, |_, _| round(rng.gen_range(-1.0..1.0))),
            f,
        ),
        _ => f,
    }
}

fn hand_built() -> Vec<(&'static str, ProblemSpec)> {
    let mut out = Vec::new();
    let glue = ConvexFn::glue_on(
        &EventSet::from_indices(2, &[0]),
        ConvexFn::uniform(2, Leaf::quad1(1.0, 0.0, 0.0)),
        ConvexFn::uniform(2, Leaf::abs1(0.0)),
    );
    out.push(("glue_half_square_abs", spec(2, 1, glue)));
    let abs_ray = ConvexFn::sum(vec![
        ConvexFn::uniform(1, Leaf::abs1(0.0)),
        ConvexFn::uniform(1, Leaf::interval(0.0, f64::INFINITY)),
    ]);
    out.push(("abs_plus_ray_indicator", spec(1, 1, abs_ray)));
    // sup of affine pieces through lattice points; the grid is aligned to the
    // lattice so sampling is exact
    let pieces = |n: usize, slopes: &[(f64, f64)]| {
        ConvexFn::sup(
            slopes
                .iter()
                .map(|(b, c)| ConvexFn::uniform(n, Leaf::affine1(*b, *c)))
                .collect(),
        )
    };
    let aligned = GridSpec::new(-4.0, 4.0 - 1.0 / 256.0, 2048).expect("valid grid");
    for (k, slopes) in [
        vec![(-1.0, 0.0), (1.0, 0.0), (0.25, 0.5)],
        vec![(-2.0, -1.0), (0.5, 0.0), (1.5, -0.75)],
        vec![(-0.5, 0.25), (0.0, 0.5), (2.0, -2.0)],
    ]
    .into_iter()
    .enumerate()
    {
        let mut s = spec(
            3,
            1,
            ConvexFn::sum(vec![
                pieces(3, &slopes),
                ConvexFn::uniform(3, Leaf::interval(-3.0, 3.0)),
            ]),
        );
        s.params.grid = Some(aligned);
        out.push((["sup_affine_a", "sup_affine_b", "sup_affine_c"][k], s));
    }
    // sup of flat quadratics crossing at a lattice point; between nodes the
    // sampling error is below h^2 kappa / 8
    let quads = ConvexFn::sup(vec![
        ConvexFn::uniform(2, Leaf::quad1(0.25, -0.5, 0.0)),
        ConvexFn::uniform(2, Leaf::quad1(0.125, 0.5, 0.0)),
    ]);
    let mut s = spec(
        2,
        1,
        ConvexFn::sum(vec![quads, ConvexFn::uniform(2, Leaf::interval(-2.0, 2.0))]),
    );
    s.params.grid = Some(aligned);
    out.push(("sup_flat_quadratics", s));
    let pwl = Pwl1::with_tails(
        vec![-1.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.5],
        Some(-2.0),
        Some(1.0),
    )
    .expect("convex");
    out.push((
        "moreau_envelope",
        spec(
            1,
            1,
            ConvexFn::uniform(
                1,
                Leaf::MoreauPwl {
                    pwl: pwl.clone(),
                    mu: 0.5,
                },
            ),
        ),
    ));
    out.push((
        "pwl_plus_quadratic",
        spec(1, 1, ConvexFn::uniform(1, Leaf::PwlQuad { pwl, mu: 1.0 })),
    ));
    let q =
        Leaf::quadratic(vec![vec![2.0, 0.5], vec![0.5, 1.0]], vec![0.0, -1.0], 0.0).expect("psd");
    out.push((
        "rank_two_quadratic",
        spec(2, 2, ConvexFn::leaves(vec![q, Leaf::half_sq(2)])),
    ));
    let bx = Leaf::Box {
        lower: vec![-1.0, 0.0],
        upper: vec![1.0, 2.0],
        offset: 0.0,
    };
    out.push(("rank_two_box", spec(1, 2, ConvexFn::uniform(1, bx))));
    let coupled =
        Blackbox::new(BlackboxKind::ScenarioCoupled, Vec::new(), 1).expect("valid blackbox");
    let mut s = spec(3, 1, ConvexFn::Blackbox(coupled));
    // L0-convexity with xi = 1_A already forces locality
    s.expect_fail = vec![Suite::Locality, Suite::Convexity];
    out.push(("scenario_coupled_blackbox", s));
    out
}

fn main() {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/cli/corpus".into()),
    );
    std::fs::create_dir_all(&dir).expect("corpus directory");
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut specs: Vec<(String, ProblemSpec)> = Vec::new();
    while specs.len() < RANDOM_RANK_ONE {
        let n = rng.gen_range(1..=8);
        let depth = rng.gen_range(0..=2);
        let f = random_tree(&mut rng, n, depth);
        if exact_and_proper(&f, n) {
            specs.push((format!("tree_{:02}", specs.len()), spec(n, 1, f)));
        }
    }
    for k in 0..RANDOM_RANK_TWO {
        let n = rng.gen_range(1..=4);
        let f = random_rank_two(&mut rng, n);
        specs.push((format!("rank_two_{k:02}"), spec(n, 2, f)));
    }
    specs.extend(
        hand_built()
            .into_iter()
            .map(|(name, s)| (name.to_string(), s)),
    );
    for (name, s) in &specs {
        std::fs::write(dir.join(format!("{name}.json")), s.to_json() + "\n")
            .expect("write corpus file");
    }
    println!("wrote {} problems to {}", specs.len(), dir.display());
}
