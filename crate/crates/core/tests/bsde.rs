mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use snellforge_core::drbsde::*;
use snellforge_core::laglad::{make_process, LadlagProcess};
use snellforge_core::martrep::{orthogonal_decompose, orthogonality_defects};
use snellforge_core::probspace::{build_space, FiniteFilteredSpace, Transition, TreeSpec};
use snellforge_core::rbsde::*;
use snellforge_core::snell::{mertens_decompose, snell_backward};
use snellforge_core::splitstop::SplitStoppingTime;
use snellforge_core::Error;

fn one_step(xi0: f64, zeta0: f64) -> (FiniteFilteredSpace, AdmissiblePair) {
    let s = build_space(1, 1.0, &TreeSpec::Binomial).unwrap();
    let xi = make_process(&s, vec![xi0, -1.0, -1.0], vec![xi0, 1.0, 0.0]).unwrap();
    let zeta = make_process(&s, vec![zeta0, 3.0, 3.0], vec![zeta0, 1.0, 0.0]).unwrap();
    let pair = AdmissiblePair::new(&s, xi, zeta).unwrap();
    (s, pair)
}

fn random_pair(r: &mut rand_chacha::ChaCha8Rng, s: &FiniteFilteredSpace) -> AdmissiblePair {
    let xi = random_obstacle(r, s, -5.0, 5.0);
    let gap_block: Vec<f64> = (0..s.node_count())
        .map(|_| {
            if r.gen_bool(0.2) {
                0.0
            } else {
                r.gen_range(0.0..3.0)
            }
        })
        .collect();
    let gap_at: Vec<f64> = (0..s.node_count())
        .map(|n| {
            if s.is_leaf(n) || r.gen_bool(0.2) {
                0.0
            } else {
                r.gen_range(0.0..3.0)
            }
        })
        .collect();
    let zeta = LadlagProcess::from_fns(
        s,
        |p| xi.pre(s.children(p).start) + gap_block[p],
        |n| xi.at(n) + gap_at[n],
    );
    let zeta = make_process(s, zeta.pre_values().to_vec(), zeta.at_values().to_vec()).unwrap();
    AdmissiblePair::new(s, xi, zeta).unwrap()
}

#[test]
fn rbsde_invariants_on_random_scenarios() {
    for seed in 0..80 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 1 + seed as usize % 3, 3, 0.25);
        let xi = random_obstacle(&mut r, &s, -5.0, 5.0);
        let g: Vec<f64> = (0..s.node_count())
            .map(|_| r.gen_range(-2.0..2.0))
            .collect();
        for term in [
            SplitStoppingTime::terminal_empty(&s),
            SplitStoppingTime::terminal_omega(&s),
        ] {
            let sol = solve_with_driver_process(&s, &xi, &g, &term).unwrap();
            let rep = check_rbsde(&s, &xi, &term, &sol).unwrap();
            assert!(
                rep.residual <= 1e-10 && rep.max() <= 1e-10,
                "seed {seed}: {rep:?}"
            );
        }
    }
}

#[test]
fn ref_of_a_supermartingale_is_itself() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 3, 3, 1.0);
        let x = random_supermartingale(&mut r, &s);
        let y = ref_operator(&s, &x, &SplitStoppingTime::terminal_empty(&s)).unwrap();
        assert!(y.sup_distance(&x) <= 1e-12);
    }
}

#[test]
fn picard_contracts_and_is_unique() {
    for seed in 0..40 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 1 + seed as usize % 3, 3, 0.1);
        let xi = random_obstacle(&mut r, &s, -5.0, 5.0);
        let coeffs = Affine {
            a: r.gen_range(-1.0..1.0),
            b: r.gen_range(-1.0..1.0),
            c: r.gen_range(-1.0..1.0),
        };
        let k = coeffs.b.abs().max(coeffs.c.abs());
        let driver = Driver::Affine {
            coeffs,
            lipschitz_bound: Some(k),
        };
        let term = SplitStoppingTime::terminal_empty(&s);
        let params = PicardParams::default();
        let a = solve_lipschitz(&s, &xi, &driver, &term, &params, None).unwrap();
        let start = PicardStart {
            y: ref_operator(&s, &xi, &term).unwrap().at_values().to_vec(),
            z: vec![0.0; s.node_count()],
        };
        let b = solve_lipschitz(&s, &xi, &driver, &term, &params, Some(&start)).unwrap();
        assert!(a.solution.y.sup_distance(&b.solution.y) <= 10.0 * params.tol);
        for beta in [10.0, 100.0, 1000.0] {
            let r = a.trace.max_ratio(&s, beta);
            assert!(r < 1.0, "seed {seed} beta {beta}: ratio {r}");
        }
        assert!(a
            .trace
            .contraction_beta(&s, &[10.0, 100.0, 1000.0])
            .is_some());
        let rep = check_rbsde(&s, &xi, &term, &a.solution).unwrap();
        assert!(rep.max() <= 1e-10);
    }
}

#[test]
fn apriori_ratios_on_one_step() {
    let s = build_space(1, 1.0, &TreeSpec::Binomial).unwrap();
    let xi = make_process(&s, vec![-10.0; 3], vec![-10.0, 1.0, -1.0]).unwrap();
    let term = SplitStoppingTime::terminal_empty(&s);
    let a = solve_with_driver_process(&s, &xi, &[1.0; 3], &term).unwrap();
    let b = solve_with_driver_process(&s, &xi, &[0.0; 3], &term).unwrap();
    let rep = apriori_diagnostic(&s, &a, &b, 4.0, 0.5).unwrap();
    // A constant driver shift moves Y deterministically: no martingale part.
    assert!(rep.r1.abs() <= 1e-12);
    assert!(rep.r2.is_finite() && rep.r2 > 0.0);
    assert!(rep.beta_large_enough && rep.r1_within_bound);
    let c = solve_with_driver_process(&s, &xi, &[-1.0; 3], &term).unwrap();
    let doubled = apriori_diagnostic(&s, &a, &c, 4.0, 0.5).unwrap();
    assert!((doubled.r1 - rep.r1).abs() <= 1e-12);
    assert!((doubled.r2 - rep.r2).abs() <= 1e-12);
    assert!(matches!(
        apriori_diagnostic(&s, &a, &a, 4.0, 0.5),
        Err(Error::InvalidParameter(_))
    ));
}

#[test]
fn apriori_scaling_on_random_non_binding_scenarios() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 3, 3, 0.5);
        let xi = random_obstacle(&mut r, &s, -5.0, 5.0).map(|x| x - 100.0);
        let leaf = random_obstacle(&mut r, &s, -5.0, 5.0);
        let xi = LadlagProcess::from_fns(
            &s,
            |p| xi.pre(s.children(p).start),
            |n| if s.is_leaf(n) { leaf.at(n) } else { xi.at(n) },
        );
        let term = SplitStoppingTime::terminal_empty(&s);
        let ga: Vec<f64> = (0..s.node_count())
            .map(|_| r.gen_range(-1.0..1.0))
            .collect();
        let gb: Vec<f64> = (0..s.node_count())
            .map(|_| r.gen_range(-1.0..1.0))
            .collect();
        let gc: Vec<f64> = ga.iter().zip(&gb).map(|(a, b)| a + 2.0 * (b - a)).collect();
        let sa = solve_with_driver_process(&s, &xi, &ga, &term).unwrap();
        let sb = solve_with_driver_process(&s, &xi, &gb, &term).unwrap();
        let sc = solve_with_driver_process(&s, &xi, &gc, &term).unwrap();
        let one = apriori_diagnostic(&s, &sa, &sb, 10.0, 1.0).unwrap();
        let two = apriori_diagnostic(&s, &sa, &sc, 10.0, 1.0).unwrap();
        assert!((one.r1 - two.r1).abs() <= 1e-9 * (1.0 + one.r1));
        assert!((one.r2 - two.r2).abs() <= 1e-9 * (1.0 + one.r2));
    }
}

#[test]
fn tilde_obstacles_examples() {
    let s = build_space(1, 1.0, &TreeSpec::Binomial).unwrap();
    let xi = make_process(&s, vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]).unwrap();
    let pair = AdmissiblePair::new(&s, xi.clone(), xi).unwrap();
    let t = tilde_obstacles(&s, &pair, &[0.0; 3]).unwrap();
    assert_eq!(t.xi.at(0), 0.5);
    assert_eq!(t.xi.at(1), 0.0);
    assert_eq!(t.xi.at(2), 0.0);

    let mut r = rng(7);
    let s = random_space(&mut r, 3, 3, 1.0);
    let m = random_supermartingale(&mut r, &s);
    let dec = mertens_decompose(&s, &m).unwrap();
    let mart = LadlagProcess::from_fns(&s, |p| dec.m[p], |n| dec.m[n]);
    let pair = AdmissiblePair::new(&s, mart.clone(), mart).unwrap();
    let t = tilde_obstacles(&s, &pair, &vec![0.0; s.node_count()]).unwrap();
    assert!(t.xi.sup_distance(&LadlagProcess::constant(&s, 0.0)) <= 1e-12);
}

#[test]
fn coupled_iteration_examples() {
    let s = build_space(1, 1.0, &TreeSpec::Binomial).unwrap();
    let zero = LadlagProcess::constant(&s, 0.0);
    let trivial = TildeObstacles {
        xi: zero.clone(),
        zeta: zero.clone(),
        expected: zero.clone(),
    };
    let c = coupled_iterate(&s, &trivial, &CoupledParams::default()).unwrap();
    assert_eq!(c.iterations, 1);
    assert_eq!(c.j.v, zero);
    assert_eq!(c.jbar.v, zero);

    let (s, pair) = one_step(0.0, 2.0);
    let t = tilde_obstacles(&s, &pair, &[0.0; 3]).unwrap();
    assert_eq!((t.xi.at(0), t.zeta.at(0)), (-0.5, 1.5));
    let c = coupled_iterate(&s, &t, &CoupledParams::default()).unwrap();
    assert_eq!(c.j.v, LadlagProcess::constant(&s, 0.0));
    assert_eq!(c.jbar.v, LadlagProcess::constant(&s, 0.0));

    let (s, pair) = one_step(1.0, 2.0);
    let t = tilde_obstacles(&s, &pair, &[0.0; 3]).unwrap();
    assert_eq!(t.xi.at(0), 0.5);
    let c = coupled_iterate(&s, &t, &CoupledParams::default()).unwrap();
    assert_eq!(c.j.v.at(0), 0.5);
    assert_eq!(c.jbar.v, LadlagProcess::constant(&s, 0.0));
    assert_eq!(c.iterations, 2);
    assert_eq!(c.increments[1], 0.0);
}

#[test]
fn mokobodzki_verdicts() {
    let (s, pair) = one_step(1.0, 2.0);
    let v = mokobodzki_probe(&s, &pair, &[0.0; 3], &CoupledParams::default()).unwrap();
    assert!(v.holds_at_tolerance);
    let (h, hbar) = v.witness.unwrap();
    assert_eq!(h.at(0), 0.5);
    assert_eq!(hbar.at(0), 0.0);
    let truncated = CoupledParams {
        max_iter: 1,
        ..CoupledParams::default()
    };
    let v = mokobodzki_probe(&s, &pair, &[0.0; 3], &truncated).unwrap();
    assert!(!v.holds_at_tolerance && v.witness.is_none());

    let zero = LadlagProcess::constant(&s, 0.0);
    let pair = AdmissiblePair::new(&s, zero.clone(), zero.clone()).unwrap();
    let v = mokobodzki_probe(&s, &pair, &[0.0; 3], &CoupledParams::default()).unwrap();
    assert_eq!(v.witness, Some((zero.clone(), zero)));
}

#[test]
fn assembled_solution_examples() {
    let (s, pair) = one_step(1.0, 2.0);
    let sol = solve_drbsde_process(&s, &pair, &[0.0; 3], &CoupledParams::default()).unwrap();
    assert_eq!(sol.y.at(0), 1.0);
    assert_eq!(sol.delta_b(&s, 0), 0.5);
    assert_eq!(sol.delta_b_prime(&s, 0), 0.0);

    let (s, pair) = one_step(0.0, 2.0);
    let sol = solve_drbsde_process(&s, &pair, &[0.0; 3], &CoupledParams::default()).unwrap();
    assert_eq!(sol.y.at(0), 0.5);
    for v in [&sol.a, &sol.b, &sol.a_prime, &sol.b_prime] {
        assert!(v.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn degenerate_band_reproduces_the_obstacle() {
    let third = 1.0 / 3.0;
    let tree = TreeSpec::Uniform(vec![
        Transition::new(third, 1.0),
        Transition::new(third, 0.0),
        Transition::new(1.0 - 2.0 * third, -1.0),
    ]);
    let s = build_space(1, 1.0, &tree).unwrap();
    // supermartingale: pre-value 2 at time 1, mean of children 1, value 3 at the root
    let xi = make_process(&s, vec![3.0, 2.0, 2.0, 2.0], vec![3.0, 3.0, 1.0, -1.0]).unwrap();
    let pair = AdmissiblePair::new(&s, xi.clone(), xi.clone()).unwrap();
    let sol = solve_drbsde_process(&s, &pair, &[0.0; 4], &CoupledParams::default()).unwrap();
    assert!(sol.y.sup_distance(&xi) <= 1e-12);
    let dec = mertens_decompose(&s, &xi).unwrap();
    let rep = orthogonal_decompose(&s, &dec.m).unwrap();
    for n in 0..s.node_count() {
        assert!((sol.z[n] - rep.z[n]).abs() <= 1e-12);
        assert!((sol.ortho[n] - rep.ortho[n]).abs() <= 1e-12);
        let net_a = sol.delta_a(&s, n) - sol.delta_a_prime(&s, n);
        assert!((net_a - dec.delta_a(&s, n)).abs() <= 1e-12);
        let net_b = sol.delta_b(&s, n) - sol.delta_b_prime(&s, n);
        assert!((net_b - dec.delta_b(&s, n)).abs() <= 1e-12);
    }
}

#[test]
fn drbsde_invariants_on_random_scenarios() {
    for seed in 0..60 {
        let mut r = rng(seed);
        let s = random_space(&mut r, 1 + seed as usize % 3, 3, 0.5);
        let pair = random_pair(&mut r, &s);
        let g: Vec<f64> = (0..s.node_count())
            .map(|_| r.gen_range(-2.0..2.0))
            .collect();
        let t = tilde_obstacles(&s, &pair, &g).unwrap();
        let c = coupled_iterate(&s, &t, &CoupledParams::default()).unwrap();
        assert!(c.monotonicity_defect <= 1e-12, "seed {seed}");
        let sol = assemble_solution(&s, &pair, &t, &c, &g, 1e-10).unwrap();
        let rep = check_drbsde(&s, &pair, &t, &sol);
        assert!(rep.max() <= 1e-10, "seed {seed}: {rep:?}");
    }
}

#[test]
fn drbsde_with_lipschitz_driver() {
    let (s, pair) = one_step(1.0, 2.0);
    let driver = Driver::Affine {
        coeffs: Affine {
            a: 0.0,
            b: -0.1,
            c: 0.0,
        },
        lipschitz_bound: Some(0.1),
    };
    let params = DrbsdeParams::default();
    let a = solve_drbsde(&s, &pair, &driver, &params, None).unwrap();
    let start = PicardStart {
        y: vec![5.0, -3.0, 2.0],
        z: vec![1.0, 0.0, 0.0],
    };
    let b = solve_drbsde(&s, &pair, &driver, &params, Some(&start)).unwrap();
    assert!(a.solution.y.sup_distance(&b.solution.y) <= 10.0 * params.picard.tol);

    let undeclared = Driver::Affine {
        coeffs: Affine {
            a: 0.0,
            b: -0.1,
            c: 0.0,
        },
        lipschitz_bound: None,
    };
    assert_eq!(
        solve_drbsde(&s, &pair, &undeclared, &params, None).unwrap_err(),
        Error::MissingLipschitzBound
    );

    let g = Driver::Process(vec![0.3, 0.0, 0.0]);
    let once = solve_drbsde(&s, &pair, &g, &params, None).unwrap();
    assert_eq!(once.iterations, 1);
    let direct = solve_drbsde_process(&s, &pair, &[0.3, 0.0, 0.0], &params.coupled).unwrap();
    assert_eq!(once.solution, direct);
}

#[test]
fn inadmissible_pairs_rejected() {
    let s = build_space(1, 1.0, &TreeSpec::Binomial).unwrap();
    let lo = make_process(&s, vec![0.0; 3], vec![0.0, 1.0, 0.0]).unwrap();
    let hi = make_process(&s, vec![0.0; 3], vec![0.0, 2.0, 0.0]).unwrap();
    assert!(matches!(
        AdmissiblePair::new(&s, lo.clone(), hi),
        Err(Error::NotAdmissible(_))
    ));
    let below = lo.map(|x| x - 1.0);
    assert!(matches!(
        AdmissiblePair::new(&s, lo, below),
        Err(Error::NotAdmissible(_))
    ));
}

#[test]
fn value_equals_rbsde_with_zero_driver() {
    let mut r = rng(11);
    let s = random_space(&mut r, 3, 3, 1.0);
    let xi = random_obstacle(&mut r, &s, -5.0, 5.0);
    let term = SplitStoppingTime::terminal_empty(&s);
    let vp = snell_backward(&s, &xi, &term).unwrap();
    let sol = solve_with_driver_process(&s, &xi, &vec![0.0; s.node_count()], &term).unwrap();
    assert_eq!(sol.y, vp.v);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orthogonal_part_is_orthogonal(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let s = random_space(&mut r, 3, 3, 0.5);
        let x = random_supermartingale(&mut r, &s);
        let dec = mertens_decompose(&s, &x).unwrap();
        let rep = orthogonal_decompose(&s, &dec.m).unwrap();
        let (ortho, pyth) = orthogonality_defects(&s, &dec.m, &rep);
        prop_assert!(ortho <= 1e-10 && pyth <= 1e-10);
    }
}
