//! The `check` command: the cross-module invariant suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use snellforge_core::drbsde::{
    check_drbsde, coupled_iterate, solve_drbsde, tilde_obstacles, AdmissiblePair, DrbsdeSolution,
    INVARIANT_TOL,
};
use snellforge_core::laglad::make_process;
use snellforge_core::martrep::{orthogonal_decompose, orthogonality_defects};
use snellforge_core::rbsde::{
    check_rbsde, ref_operator, relative_gap, solve_lipschitz, PicardStart, PicardTrace,
    RbsdeSolution, BETA_SCHEDULE,
};
use snellforge_core::snell::{
    martingale_interval_check, mertens_decompose, skorokhod_report, snell_backward,
    BruteForceOracle, ValueProcesses,
};
use snellforge_core::splitstop::{count_split_times, StoppingTime};
use snellforge_core::{Error as CoreError, FiniteFilteredSpace, LadlagProcess};

use crate::error::CliResult;
use crate::gen::{generate, GenParams};
use crate::run::{fmt_f64, Replayed, SolutionFile};
use crate::scenario::{Problem, TerminalChoice};

/// Tolerance for the aggregation and reconstruction identities.
pub const EXACT_TOL: f64 = 1e-12;
/// Levels used for the martingale-interval check.
pub const LAMBDAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
/// Above this many split stopping times the brute-force comparison is skipped.
pub const AGGREGATION_LIMIT: u128 = 100_000;

/// Pass/fail record of one invariant across all checked scenarios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Invariant {
    pub name: String,
    pub tol: f64,
    pub max_deviation: f64,
    pub cases: usize,
    pub failures: usize,
    pub skipped: usize,
    /// Scenario and message of the first failure.
    pub first_failure: Option<String>,
}

impl Invariant {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SuiteReport {
    pub scenarios: usize,
    pub invariants: Vec<Invariant>,
}

impl SuiteReport {
    fn entry(&mut self, name: &str, tol: f64) -> &mut Invariant {
        let i = match self.invariants.iter().position(|x| x.name == name) {
            Some(i) => i,
            None => {
                self.invariants.push(Invariant {
                    name: name.to_string(),
                    tol,
                    max_deviation: 0.0,
                    cases: 0,
                    failures: 0,
                    skipped: 0,
                    first_failure: None,
                });
                self.invariants.len() - 1
            }
        };
        &mut self.invariants[i]
    }

    /// Record a deviation; the case passes when `deviation <= tol`.
    pub fn record(&mut self, name: &str, tol: f64, deviation: f64, case: &str) {
        self.record_with(name, tol, deviation, deviation <= tol, case);
    }

    pub fn record_with(&mut self, name: &str, tol: f64, deviation: f64, pass: bool, case: &str) {
        let e = self.entry(name, tol);
        e.cases += 1;
        if deviation.is_nan() || deviation > e.max_deviation {
            e.max_deviation = if deviation.is_nan() {
                f64::INFINITY
            } else {
                deviation
            };
        }
        if !pass {
            e.failures += 1;
            e.first_failure
                .get_or_insert_with(|| format!("{case}: deviation {}", fmt_f64(deviation)));
        }
    }

    /// Record that an invariant could not be evaluated because of `err`.
    pub fn record_error(&mut self, name: &str, tol: f64, err: &CoreError, case: &str) {
        let e = self.entry(name, tol);
        e.cases += 1;
        e.failures += 1;
        e.max_deviation = f64::INFINITY;
        e.first_failure
            .get_or_insert_with(|| format!("{case}: {err}"));
    }

    pub fn skip(&mut self, name: &str, tol: f64) {
        self.entry(name, tol).skipped += 1;
    }

    pub fn failed(&self) -> usize {
        self.invariants.iter().filter(|i| !i.passed()).count()
    }

    pub fn passed(&self) -> bool {
        self.failed() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Invariant> {
        self.invariants.iter().find(|i| i.name == name)
    }

    pub fn render(&self) -> String {
        let width = self
            .invariants
            .iter()
            .map(|i| i.name.len())
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        for i in &self.invariants {
            out.push_str(&format!(
                "{} {:width$}  max_dev={:<12} tol={:<8} cases={} skipped={}",
                if i.passed() { "PASS" } else { "FAIL" },
                i.name,
                format!("{:.3e}", i.max_deviation),
                format!("{:e}", i.tol),
                i.cases,
                i.skipped,
            ));
            if let Some(f) = &i.first_failure {
                out.push_str(&format!("  first failure: {f}"));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "{} scenario(s), {} invariant(s), {} failed\n",
            self.scenarios,
            self.invariants.len(),
            self.failed()
        ));
        out
    }
}

/// Run every applicable invariant on one scenario.
pub fn check_problem(problem: &Problem, suite: &mut SuiteReport, case: &str, cap: u128) {
    suite.scenarios += 1;
    let Problem {
        space,
        xi,
        terminal,
        ..
    } = problem;
    match snell_backward(space, xi, terminal) {
        Ok(vp) => check_value(problem, &vp, suite, case, cap),
        Err(e) => suite.record_error("snell_solve", 0.0, &e, case),
    }
    check_lambda(problem, suite, case);

    let params = &problem.params;
    match solve_lipschitz(space, xi, &problem.driver, terminal, &params.picard, None) {
        Ok(lip) => {
            check_rbsde_solution(problem, &lip.solution, suite, case);
            if problem.driver.depends_on_solution() {
                record_contraction(space, &lip.trace, "picard_contraction", suite, case);
                let start = ref_operator(space, xi, terminal).map(|y| PicardStart {
                    y: y.at_values().to_vec(),
                    z: vec![0.0; space.node_count()],
                });
                let other = start.and_then(|s| {
                    solve_lipschitz(
                        space,
                        xi,
                        &problem.driver,
                        terminal,
                        &params.picard,
                        Some(&s),
                    )
                });
                let tol = 10.0 * params.picard.tol;
                match other {
                    Ok(b) => suite.record(
                        "picard_uniqueness",
                        tol,
                        solution_gap(
                            &lip.solution.y,
                            &lip.solution.z,
                            &b.solution.y,
                            &b.solution.z,
                        ),
                        case,
                    ),
                    Err(e) => suite.record_error("picard_uniqueness", tol, &e, case),
                }
            }
        }
        Err(e) => suite.record_error("rbsde_solve", 0.0, &e, case),
    }

    if let Some(pair) = &problem.pair {
        match solve_drbsde(space, pair, &problem.driver, params, None) {
            Ok(lip) => {
                check_drbsde_solution(problem, pair, &lip.solution, suite, case);
                match tilde_obstacles(space, pair, &lip.solution.driver)
                    .and_then(|t| coupled_iterate(space, &t, &params.coupled))
                {
                    Ok(c) => suite.record(
                        "drbsde_monotone_iterates",
                        INVARIANT_TOL,
                        c.monotonicity_defect,
                        case,
                    ),
                    Err(e) => {
                        suite.record_error("drbsde_monotone_iterates", INVARIANT_TOL, &e, case)
                    }
                }
                if problem.driver.depends_on_solution() {
                    record_contraction(space, &lip.trace, "drbsde_picard_contraction", suite, case);
                    let mid: Vec<f64> = (0..space.node_count())
                        .map(|n| 0.5 * (pair.xi().at(n) + pair.zeta().at(n)))
                        .collect();
                    let start = PicardStart {
                        y: mid,
                        z: vec![0.0; space.node_count()],
                    };
                    let tol = 10.0 * params.picard.tol;
                    match solve_drbsde(space, pair, &problem.driver, params, Some(&start)) {
                        Ok(b) => {
                            let gap = solution_gap(
                                &lip.solution.y,
                                &lip.solution.z,
                                &b.solution.y,
                                &b.solution.z,
                            );
                            suite.record("drbsde_picard_uniqueness", tol, gap, case);
                        }
                        Err(e) => suite.record_error("drbsde_picard_uniqueness", tol, &e, case),
                    }
                }
            }
            Err(e) => suite.record_error("drbsde_solve", 0.0, &e, case),
        }
    }
}

/// Check a previously written solution instead of recomputing it.
pub fn check_replay(
    problem: &Problem,
    file: &SolutionFile,
    suite: &mut SuiteReport,
    case: &str,
    cap: u128,
) -> CliResult<()> {
    suite.scenarios += 1;
    match Replayed::from_dump(&problem.space, &file.solution)? {
        Replayed::Snell(vp) => check_value(problem, &vp, suite, case, cap),
        Replayed::Rbsde(sol) => check_rbsde_solution(problem, &sol, suite, case),
        Replayed::Drbsde(sol) => {
            let pair = problem.pair.as_ref().ok_or_else(|| {
                crate::error::CliError::Invalid("drbsde solution without obstacles.zeta".into())
            })?;
            check_drbsde_solution(problem, pair, &sol, suite, case);
        }
    }
    Ok(())
}

/// Gap between two solutions, in the measure used to stop the Picard iteration.
fn solution_gap(y1: &LadlagProcess, z1: &[f64], y2: &LadlagProcess, z2: &[f64]) -> f64 {
    relative_gap(y1.at_values(), y2.at_values())
        .max(relative_gap(y1.pre_values(), y2.pre_values()))
        .max(relative_gap(z1, z2))
}

fn record_contraction(
    space: &FiniteFilteredSpace,
    trace: &PicardTrace,
    name: &str,
    suite: &mut SuiteReport,
    case: &str,
) {
    match trace.contraction_beta(space, &BETA_SCHEDULE) {
        Some((_, r)) => suite.record_with(name, 1.0, r, true, case),
        None => {
            let best = BETA_SCHEDULE
                .iter()
                .map(|&b| trace.max_ratio(space, b))
                .fold(f64::INFINITY, f64::min);
            suite.record_with(name, 1.0, best, false, case);
        }
    }
}

fn check_value(
    problem: &Problem,
    vp: &ValueProcesses,
    suite: &mut SuiteReport,
    case: &str,
    cap: u128,
) {
    let Problem {
        space, terminal, ..
    } = problem;
    let xi = &effective_obstacle(problem);
    let floor = (0..space.node_count())
        .map(|n| (xi.at(n) - vp.v.at(n)).max(xi.pre(n) - vp.v.pre(n)))
        .fold(0.0, f64::max);
    suite.record("snell_dominates_obstacle", EXACT_TOL, floor, case);
    let identity = (0..space.node_count())
        .map(|n| (vp.v.at(n) - xi.at(n).max(vp.vplus[n])).abs())
        .fold(0.0, f64::max);
    suite.record("snell_identity", EXACT_TOL, identity, case);

    if count_split_times(space) <= cap.min(AGGREGATION_LIMIT) {
        match BruteForceOracle::new(space, xi, terminal, cap) {
            Ok(mut oracle) => {
                let mut dev = 0.0f64;
                for d in oracle.family().to_vec() {
                    let diff =
                        |a: &[(snellforge_core::splitstop::Atom, f64)],
                         b: &[(snellforge_core::splitstop::Atom, f64)]| {
                            a.iter()
                                .zip(b)
                                .map(|((_, x), (_, y))| (x - y).abs())
                                .fold(0.0, f64::max)
                        };
                    dev = dev.max(diff(&vp.value_at(space, &d), &oracle.value(&d)));
                    dev = dev.max(diff(
                        &vp.strict_value_at(space, &d),
                        &oracle.strict_value(&d),
                    ));
                }
                suite.record("aggregation", EXACT_TOL, dev, case);
            }
            Err(e) => suite.record_error("aggregation", EXACT_TOL, &e, case),
        }
    } else {
        suite.skip("aggregation", EXACT_TOL);
    }

    match mertens_decompose(space, &vp.v) {
        Ok(dec) => {
            let rec = dec.reconstruct(space, vp.v.at(0)).sup_distance(&vp.v);
            suite.record("mertens_reconstruction", EXACT_TOL, rec, case);
            suite.record(
                "skorokhod",
                EXACT_TOL,
                skorokhod_report(space, &vp.v, xi, &dec).max(),
                case,
            );
            match orthogonal_decompose(space, &dec.m) {
                Ok(rep) => {
                    let (ortho, pyth) = orthogonality_defects(space, &dec.m, &rep);
                    suite.record("orthogonality", INVARIANT_TOL, ortho, case);
                    suite.record("energy_split", INVARIANT_TOL, pyth, case);
                }
                Err(e) => suite.record_error("orthogonality", INVARIANT_TOL, &e, case),
            }
        }
        Err(e) => {
            let deviation = match e {
                CoreError::NotASupermartingale { deviation, .. } => deviation,
                _ => f64::INFINITY,
            };
            suite.record_with("mertens_reconstruction", EXACT_TOL, deviation, false, case);
        }
    }
}

/// The obstacle the value process dominates: under the `(Omega, T)` terminal
/// the reward at the horizon is the pre-value.
fn effective_obstacle(problem: &Problem) -> LadlagProcess {
    let (space, xi) = (&problem.space, &problem.xi);
    match problem.scenario.terminal.h_t {
        TerminalChoice::Empty => xi.clone(),
        TerminalChoice::Omega => {
            let at = (0..space.node_count())
                .map(|n| {
                    if space.is_leaf(n) {
                        xi.pre(n)
                    } else {
                        xi.at(n)
                    }
                })
                .collect();
            make_process(space, xi.pre_values().to_vec(), at).expect("same pre-channel")
        }
    }
}

/// Martingale property of the value process between `theta` and the first time
/// `lambda v <= xi`, for the nonnegative part of the obstacle.
fn check_lambda(problem: &Problem, suite: &mut SuiteReport, case: &str) {
    let Problem {
        space,
        xi,
        terminal,
        ..
    } = problem;
    let positive = xi.map(|x| x.max(0.0));
    let vp = match snell_backward(space, &positive, terminal) {
        Ok(vp) => vp,
        Err(e) => return suite.record_error("lambda_interval", INVARIANT_TOL, &e, case),
    };
    let mut worst = 0.0f64;
    for t in 0..=space.steps() {
        let theta = StoppingTime::constant(space, t);
        for lambda in LAMBDAS {
            match martingale_interval_check(space, &vp, &positive, &theta, lambda) {
                Ok(r) => worst = worst.max(r.max_deviation),
                Err(e) => return suite.record_error("lambda_interval", INVARIANT_TOL, &e, case),
            }
        }
    }
    suite.record("lambda_interval", INVARIANT_TOL, worst, case);
}

fn check_rbsde_solution(
    problem: &Problem,
    sol: &RbsdeSolution,
    suite: &mut SuiteReport,
    case: &str,
) {
    match check_rbsde(&problem.space, &problem.xi, &problem.terminal, sol) {
        Ok(r) => {
            for (name, v) in [
                ("rbsde_residual", r.residual),
                ("rbsde_floor", r.floor),
                ("rbsde_identity", r.identity),
                ("rbsde_skorokhod", r.skorokhod),
                ("rbsde_nondecreasing", r.negativity),
            ] {
                suite.record(name, INVARIANT_TOL, v, case);
            }
        }
        Err(e) => suite.record_error("rbsde_residual", INVARIANT_TOL, &e, case),
    }
}

fn check_drbsde_solution(
    problem: &Problem,
    pair: &AdmissiblePair,
    sol: &DrbsdeSolution,
    suite: &mut SuiteReport,
    case: &str,
) {
    let space = &problem.space;
    match tilde_obstacles(space, pair, &sol.driver) {
        Ok(tilde) => {
            let tol = INVARIANT_TOL.max(problem.params.coupled.tol);
            for (name, v) in check_drbsde(space, pair, &tilde, sol).named() {
                suite.record(&format!("drbsde_{name}"), tol, v, case);
            }
        }
        Err(e) => suite.record_error("drbsde_residual", INVARIANT_TOL, &e, case),
    }
}

/// Parameters of the `n`-th random scenario drawn from `seed`.
pub fn random_cases(n: usize, seed: u64) -> Vec<GenParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| GenParams {
            steps: rng.gen_range(1..=3),
            branching: rng.gen_range(1..=3),
            seed: rng.gen(),
        })
        .collect()
}

/// Generate and check `n` random scenarios.
pub fn check_random(n: usize, seed: u64, cap: u128) -> CliResult<SuiteReport> {
    let mut suite = SuiteReport::default();
    for (i, p) in random_cases(n, seed).into_iter().enumerate() {
        let problem = generate(p)?.validate()?;
        let case = format!(
            "random #{i} (steps {}, branching {}, seed {})",
            p.steps, p.branching, p.seed
        );
        check_problem(&problem, &mut suite, &case, cap);
    }
    Ok(suite)
}
