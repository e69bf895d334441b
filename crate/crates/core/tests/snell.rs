mod common;

use common::*;
use proptest::prelude::*;
use snellforge_core::laglad::{eval_at_split, make_process, LadlagProcess};
use snellforge_core::probspace::{build_space, FiniteFilteredSpace, TreeSpec};
use snellforge_core::snell::*;
use snellforge_core::splitstop::*;

fn worked_tree() -> (FiniteFilteredSpace, LadlagProcess) {
    let s = build_space(2, 1.0, &TreeSpec::Binomial).unwrap();
    let xi = make_process(
        &s,
        vec![1.0, 5.0, 5.0, 0.0, 0.0, 0.0, 0.0],
        vec![1.0, 2.0, 0.0, 3.0, 1.0, 1.0, 0.0],
    )
    .unwrap();
    (s, xi)
}

/// `v(delta)` spread out over leaves.
fn per_leaf(space: &FiniteFilteredSpace, values: &[(Atom, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; space.leaf_count()];
    for (a, v) in values {
        for l in a.leaves(space) {
            out[space.leaf_index(l)] = *v;
        }
    }
    out
}

#[test]
fn split_times_beat_stopping_times_on_worked_tree() {
    let (s, xi) = worked_tree();
    let term = SplitStoppingTime::terminal_empty(&s);
    let vp = snell_backward(&s, &xi, &term).unwrap();
    assert_eq!(vp.v.at(0), 5.0);
    let family = enumerate(&s, &term, EnumConstraint::All, DEFAULT_ENUM_CAP).unwrap();
    let best = |only_plain: bool| {
        family
            .iter()
            .filter(|r| !only_plain || r.pre_set().iter().all(|&p| !p))
            .filter(|r| !r.is_pre(0))
            .map(|r| s.expectation(&eval_at_split(&s, &xi, r).unwrap()))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    assert_eq!(best(false), 5.0);
    assert_eq!(best(true), 1.25);
}

#[test]
fn backward_values_match_exhaustive_search() {
    for seed in 0..25 {
        let mut r = rng(seed);
        let steps = 1 + (seed as usize % 3);
        let s = random_space(&mut r, steps, 3, 0.5);
        if count_split_times(&s) > 30_000 {
            continue;
        }
        let xi = random_obstacle(&mut r, &s, -5.0, 5.0);
        for term in [
            SplitStoppingTime::terminal_empty(&s),
            SplitStoppingTime::terminal_omega(&s),
        ] {
            let vp = snell_backward(&s, &xi, &term).unwrap();
            let mut oracle = BruteForceOracle::new(&s, &xi, &term, DEFAULT_ENUM_CAP).unwrap();
            for d in oracle.family().to_vec() {
                let dev = max_abs_diff(&vp.value_at(&s, &d), &oracle.value(&d));
                assert!(dev <= 1e-12, "seed {seed}: deviation {dev}");
                let dev = max_abs_diff(&vp.strict_value_at(&s, &d), &oracle.strict_value(&d));
                assert!(dev <= 1e-12, "seed {seed}: strict deviation {dev}");
            }
        }
    }
}

#[test]
fn value_family_is_a_supermartingale_system() {
    for seed in 100..110 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 2, 3, 1.0);
        let xi = random_obstacle(&mut r, &s, -5.0, 5.0);
        let term = SplitStoppingTime::terminal_empty(&s);
        let vp = snell_backward(&s, &xi, &term).unwrap();
        let family = enumerate(&s, &term, EnumConstraint::All, DEFAULT_ENUM_CAP).unwrap();
        for rho in &family {
            for delta in &family {
                if !geq(&s, delta, rho) {
                    continue;
                }
                let later = per_leaf(&s, &vp.value_at(&s, delta));
                for (a, v) in vp.value_at(&s, rho) {
                    let owner = match a {
                        Atom::At(n) => n,
                        Atom::Pre(n) => s.parent(n).unwrap_or(n),
                    };
                    let ce = s.cond_exp_leaves(owner, &later);
                    assert!(v >= ce - 1e-12, "seed {seed}: {v} < {ce}");
                }
            }
        }
    }
}

#[test]
fn value_is_the_smallest_dominating_supermartingale() {
    for seed in 200..260 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 3, 3, 1.0);
        let xi = random_obstacle(&mut r, &s, -5.0, 5.0);
        let vp = snell_backward(&s, &xi, &SplitStoppingTime::terminal_empty(&s)).unwrap();
        let u = random_supermartingale(&mut r, &s);
        let gap = (0..s.node_count())
            .map(|n| (xi.at(n) - u.at(n)).max(xi.pre(n) - u.pre(n)))
            .fold(f64::NEG_INFINITY, f64::max);
        let u = u.map(|x| x + gap);
        for n in 0..s.node_count() {
            assert!(u.at(n) >= vp.v.at(n) - 1e-12);
            assert!(u.pre(n) >= vp.v.pre(n) - 1e-12);
        }
        assert!(mertens_decompose(&s, &vp.v).is_ok());
    }
}

#[test]
fn omega_terminal_reads_the_pre_value() {
    let s = build_space(1, 1.0, &TreeSpec::Binomial).unwrap();
    let xi = make_process(&s, vec![0.0, 4.0, 4.0], vec![0.0, 1.0, 1.0]).unwrap();
    let empty = snell_backward(&s, &xi, &SplitStoppingTime::terminal_empty(&s)).unwrap();
    let omega = snell_backward(&s, &xi, &SplitStoppingTime::terminal_omega(&s)).unwrap();
    assert_eq!(empty.v.at(0), 4.0);
    assert_eq!(omega.v.at(0), 4.0);
    assert_eq!(omega.v.at(1), 4.0);
}

#[test]
fn mertens_reconstructs_and_satisfies_skorokhod() {
    for seed in 300..360 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 3, 3, 0.5);
        let xi = random_obstacle(&mut r, &s, -5.0, 5.0);
        let vp = snell_backward(&s, &xi, &SplitStoppingTime::terminal_empty(&s)).unwrap();
        let dec = mertens_decompose(&s, &vp.v).unwrap();
        let rebuilt = dec.reconstruct(&s, vp.v.at(0));
        assert!(rebuilt.sup_distance(&vp.v) <= 1e-12);
        assert!(skorokhod_report(&s, &vp.v, &xi, &dec).max() <= 1e-12);
        let again = mertens_decompose(&s, &rebuilt).unwrap();
        for (x, y) in again.a.iter().zip(&dec.a).chain(again.b.iter().zip(&dec.b)) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn synthesized_supermartingales_round_trip() {
    for seed in 400..440 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 3, 3, 1.0);
        let x = random_supermartingale(&mut r, &s);
        let dec = mertens_decompose(&s, &x).unwrap();
        assert!(dec.reconstruct(&s, x.at(0)).sup_distance(&x) <= 1e-12);
        // strong supermartingale inequalities on the grid
        for n in 0..s.node_count() {
            if let Some(c) = s.children(n).next() {
                assert!(x.at(n) >= x.pre(c) - 1e-12);
                assert!(x.pre(c) >= s.cond_exp_at(n, x.at_values()) - 1e-12);
            }
        }
    }
}

#[test]
fn non_minimal_dominating_supermartingale_fails_skorokhod() {
    let (s, xi) = worked_tree();
    let vp = snell_backward(&s, &xi, &SplitStoppingTime::terminal_empty(&s)).unwrap();
    let lifted = vp.v.map(|x| x + 1.0);
    let dec = mertens_decompose(&s, &lifted).unwrap();
    assert!(skorokhod_report(&s, &lifted, &xi, &dec).max() > 0.1);
}

#[test]
fn optimal_split_time_on_worked_tree() {
    let (s, xi) = worked_tree();
    let term = SplitStoppingTime::terminal_empty(&s);
    let mut oracle = BruteForceOracle::new(&s, &xi, &term, DEFAULT_ENUM_CAP).unwrap();
    let best = oracle.optimal_from_root(1e-12).unwrap();
    assert_eq!(best, &SplitStoppingTime::constant(&s, 1, true));
}

#[test]
fn martingale_on_lambda_intervals() {
    for seed in 500..540 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 3, 3, 1.0);
        let xi = random_obstacle(&mut r, &s, 0.0, 5.0);
        let vp = snell_backward(&s, &xi, &SplitStoppingTime::terminal_empty(&s)).unwrap();
        for t in 0..=s.steps() {
            let theta = StoppingTime::constant(&s, t);
            for lambda in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let rep = martingale_interval_check(&s, &vp, &xi, &theta, lambda).unwrap();
                assert!(rep.holds(1e-10), "seed {seed}: {rep:?}");
            }
        }
    }
}

#[test]
fn lambda_interval_rejects_negative_obstacles() {
    let s = build_space(1, 1.0, &TreeSpec::Binomial).unwrap();
    let xi = make_process(&s, vec![0.0, 0.0, 0.0], vec![0.0, -1.0, 1.0]).unwrap();
    let vp = snell_backward(&s, &xi, &SplitStoppingTime::terminal_empty(&s)).unwrap();
    let theta = StoppingTime::constant(&s, 0);
    assert!(matches!(
        martingale_interval_check(&s, &vp, &xi, &theta, 0.5),
        Err(snellforge_core::Error::NegativeObstacle { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn order_is_a_partial_order(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let s = random_space(&mut r, 2, 2, 1.0);
        let term = SplitStoppingTime::terminal_empty(&s);
        let fam = enumerate(&s, &term, EnumConstraint::All, DEFAULT_ENUM_CAP).unwrap();
        for a in &fam {
            prop_assert!(geq(&s, a, a));
            for b in &fam {
                if geq(&s, a, b) && geq(&s, b, a) {
                    prop_assert_eq!(a, b);
                }
                if gt(&s, a, b) {
                    prop_assert!(geq(&s, a, b));
                }
                if !geq(&s, a, b) { continue; }
                for c in &fam {
                    if geq(&s, b, c) {
                        prop_assert!(geq(&s, a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn gluing_stays_in_the_family(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let s = random_space(&mut r, 2, 3, 1.0);
        let term = SplitStoppingTime::terminal_empty(&s);
        let fam = enumerate(&s, &term, EnumConstraint::All, DEFAULT_ENUM_CAP).unwrap();
        let pick = |r: &mut rand_chacha::ChaCha8Rng| fam[rand::Rng::gen_range(r, 0..fam.len())].clone();
        let delta = pick(&mut r);
        let above: Vec<_> = fam.iter().filter(|x| geq(&s, x, &delta)).cloned().collect();
        let r1 = above[rand::Rng::gen_range(&mut r, 0..above.len())].clone();
        let r2 = above[rand::Rng::gen_range(&mut r, 0..above.len())].clone();
        let mut event = vec![false; s.leaf_count()];
        for a in delta.atoms(&s) {
            let inside = rand::Rng::gen_bool(&mut r, 0.5);
            for l in a.leaves(&s) {
                event[s.leaf_index(l)] = inside;
            }
        }
        let glued = glue(&s, &delta, &r1, &r2, &event).unwrap();
        prop_assert!(geq(&s, &glued, &delta));
        prop_assert!(below_terminal(&s, &glued, &term));
    }

    #[test]
    fn enumeration_respects_constraints(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let s = random_space(&mut r, 2, 3, 1.0);
        let term = SplitStoppingTime::terminal_omega(&s);
        let fam = enumerate(&s, &term, EnumConstraint::All, DEFAULT_ENUM_CAP).unwrap();
        let delta = &fam[rand::Rng::gen_range(&mut r, 0..fam.len())];
        let at_least = enumerate(&s, &term, EnumConstraint::AtLeast(delta), DEFAULT_ENUM_CAP).unwrap();
        let after = enumerate(&s, &term, EnumConstraint::After(delta), DEFAULT_ENUM_CAP).unwrap();
        prop_assert_eq!(at_least.len(), fam.iter().filter(|x| geq(&s, x, delta)).count());
        prop_assert_eq!(after.len(), fam.iter().filter(|x| gt(&s, x, delta)).count());
        prop_assert!(!after.is_empty());
    }
}
