#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snellforge_core::laglad::LadlagProcess;
use snellforge_core::probspace::{build_space, FiniteFilteredSpace, Transition, TreeSpec};
use snellforge_core::snell::MertensDecomposition;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random transitions out of one node: positive probabilities, centred noise.
pub fn random_branching(rng: &mut ChaCha8Rng, b: usize, dt: f64) -> Vec<Transition> {
    let w: Vec<f64> = (0..b).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|x| x / total).collect();
    let raw: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean: f64 = p.iter().zip(&raw).map(|(p, x)| p * x).sum();
    p.iter()
        .zip(&raw)
        .map(|(&p, &x)| Transition::new(p, if b == 1 { 0.0 } else { (x - mean) * dt.sqrt() }))
        .collect()
}

/// Random tree with `steps` steps and between 1 and `max_branching` children per node.
pub fn random_space(
    rng: &mut ChaCha8Rng,
    steps: usize,
    max_branching: usize,
    dt: f64,
) -> FiniteFilteredSpace {
    let mut entries = Vec::new();
    let mut width = 1usize;
    for _ in 0..steps {
        let mut next = 0;
        for _ in 0..width {
            let b = rng.gen_range(1..=max_branching);
            next += b;
            entries.push(random_branching(rng, b, dt));
        }
        width = next;
    }
    build_space(steps, dt, &TreeSpec::Explicit(entries)).unwrap()
}

pub fn random_obstacle(
    rng: &mut ChaCha8Rng,
    space: &FiniteFilteredSpace,
    lo: f64,
    hi: f64,
) -> LadlagProcess {
    let block: Vec<f64> = (0..space.node_count())
        .map(|_| rng.gen_range(lo..hi))
        .collect();
    let at: Vec<f64> = (0..space.node_count())
        .map(|_| rng.gen_range(lo..hi))
        .collect();
    LadlagProcess::from_fns(space, |p| block[p], |n| at[n])
}

/// Random strong supermartingale built from its decomposition.
#[allow(clippy::needless_range_loop)]
pub fn random_supermartingale(rng: &mut ChaCha8Rng, space: &FiniteFilteredSpace) -> LadlagProcess {
    let nn = space.node_count();
    let mut dm = vec![0.0; nn];
    let mut da = vec![0.0; nn];
    let mut db = vec![0.0; nn];
    for n in 0..nn {
        if rng.gen_bool(0.5) {
            db[n] = rng.gen_range(0.0..2.0);
        }
        if space.is_leaf(n) {
            continue;
        }
        let a = if rng.gen_bool(0.5) {
            rng.gen_range(0.0..2.0)
        } else {
            0.0
        };
        let kids = space.children(n);
        let raw: Vec<f64> = kids.clone().map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mean: f64 = kids.clone().zip(&raw).map(|(c, x)| space.prob(c) * x).sum();
        for (c, x) in kids.zip(raw) {
            dm[c] = x - mean;
            da[c] = a;
        }
    }
    let dec = MertensDecomposition::from_increments(space, &dm, &da, &db).unwrap();
    dec.reconstruct(space, rng.gen_range(-5.0..5.0))
}

pub fn max_abs_diff(
    a: &[(snellforge_core::splitstop::Atom, f64)],
    b: &[(snellforge_core::splitstop::Atom, f64)],
) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|((x, u), (y, v))| {
            assert_eq!(x, y);
            (u - v).abs()
        })
        .fold(0.0, f64::max)
}
