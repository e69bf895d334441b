//! The `run` command: solve one scenario and emit its reports.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use snellforge_core::drbsde::{
    check_drbsde, solve_drbsde, tilde_obstacles, DrbsdeReport, DrbsdeSolution,
};
use snellforge_core::laglad::{eval_at_split, make_process};
use snellforge_core::probspace::FiniteFilteredSpace;
use snellforge_core::rbsde::{
    check_rbsde, driver_integral, solve_lipschitz, PicardTrace, RbsdeReport, RbsdeSolution,
    BETA_SCHEDULE,
};
use snellforge_core::snell::{mertens_decompose, skorokhod_report, snell_backward, ValueProcesses};
use snellforge_core::splitstop::{count_split_times, enumerate, EnumConstraint, DEFAULT_ENUM_CAP};
use snellforge_core::LadlagProcess;

use crate::error::{CliError, CliResult};
use crate::scenario::{Problem, Scenario, TerminalChoice};

/// Environment variable overriding the enumeration cap.
pub const ENUM_CAP_VAR: &str = "SNELLFORGE_ENUM_CAP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Snell,
    Rbsde,
    Drbsde,
    Enumerate,
}

/// Enumeration cap from [`ENUM_CAP_VAR`], or the default.
pub fn enum_cap() -> CliResult<u128> {
    match std::env::var(ENUM_CAP_VAR) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Invalid(format!(
                "{ENUM_CAP_VAR}={v:?} is not a non-negative integer"
            ))
        }),
        Err(_) => Ok(DEFAULT_ENUM_CAP),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub task: Task,
    pub steps: usize,
    pub dt: f64,
    pub nodes: usize,
    pub leaves: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub detail: Detail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Detail {
    Snell(SnellSummary),
    Enumerate(EnumerateSummary),
    Rbsde(RbsdeSummary),
    Drbsde(DrbsdeSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnellSummary {
    pub terminal: TerminalChoice,
    pub v0: f64,
    pub v0_plus: f64,
    /// Value over ordinary stopping times, for the `(empty, T)` terminal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0_stopping_times: Option<f64>,
    pub mertens_reconstruction: f64,
    pub skorokhod: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnumerateSummary {
    pub terminal: TerminalChoice,
    pub count: usize,
    pub count_all: u128,
    pub cap: u128,
    pub best_payoff: f64,
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaRatios {
    pub beta: f64,
    pub max_ratio: f64,
    pub measured: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub beta: f64,
    pub distances: Vec<f64>,
    pub sup_increments: Vec<f64>,
    pub schedule: Vec<BetaRatios>,
    pub contraction_beta: Option<f64>,
}

impl TraceSummary {
    pub fn new(space: &FiniteFilteredSpace, trace: &PicardTrace) -> Self {
        Self {
            beta: trace.beta,
            distances: trace.distances.clone(),
            sup_increments: trace.sup_increments.clone(),
            schedule: BETA_SCHEDULE
                .iter()
                .map(|&beta| {
                    let r = trace.ratios(space, beta);
                    BetaRatios {
                        beta,
                        max_ratio: r.iter().copied().fold(0.0, f64::max),
                        measured: r.len(),
                    }
                })
                .collect(),
            contraction_beta: trace
                .contraction_beta(space, &BETA_SCHEDULE)
                .map(|(b, _)| b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RbsdeSummary {
    pub terminal: TerminalChoice,
    pub y0: f64,
    pub y0_plus: f64,
    pub iterations: usize,
    pub lipschitz: f64,
    pub picard: TraceSummary,
    pub report: RbsdeReportOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RbsdeReportOut {
    pub residual: f64,
    pub floor: f64,
    pub identity: f64,
    pub skorokhod: f64,
    pub nondecreasing: f64,
}

impl From<RbsdeReport> for RbsdeReportOut {
    fn from(r: RbsdeReport) -> Self {
        Self {
            residual: r.residual,
            floor: r.floor,
            identity: r.identity,
            skorokhod: r.skorokhod,
            nondecreasing: r.negativity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrbsdeSummary {
    pub y0: f64,
    pub y0_plus: f64,
    pub iterations: usize,
    pub coupled_iterations: usize,
    pub coupled_residual: f64,
    pub lipschitz: f64,
    pub picard: TraceSummary,
    pub report: Vec<NamedDeviation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedDeviation {
    pub name: String,
    pub max_deviation: f64,
}

/// Everything needed to replay a computed solution through `check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub scenario: Scenario,
    pub solution: SolutionDump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase", deny_unknown_fields)]
pub enum SolutionDump {
    Snell {
        v_pre: Vec<f64>,
        v_at: Vec<f64>,
        v_plus: Vec<f64>,
    },
    Rbsde {
        y_pre: Vec<f64>,
        y_at: Vec<f64>,
        y_plus: Vec<f64>,
        z: Vec<f64>,
        ortho: Vec<f64>,
        m: Vec<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
        driver: Vec<f64>,
    },
    Drbsde {
        y_pre: Vec<f64>,
        y_at: Vec<f64>,
        y_plus: Vec<f64>,
        z: Vec<f64>,
        ortho: Vec<f64>,
        m: Vec<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
        a_prime: Vec<f64>,
        b_prime: Vec<f64>,
        j_pre: Vec<f64>,
        j_at: Vec<f64>,
        jbar_pre: Vec<f64>,
        jbar_at: Vec<f64>,
        driver: Vec<f64>,
        coupled_iterations: usize,
        coupled_residual: f64,
    },
}

impl SolutionDump {
    pub fn from_value(vp: &ValueProcesses) -> Self {
        SolutionDump::Snell {
            v_pre: vp.v.pre_values().to_vec(),
            v_at: vp.v.at_values().to_vec(),
            v_plus: vp.vplus.clone(),
        }
    }

    pub fn from_rbsde(s: &RbsdeSolution) -> Self {
        SolutionDump::Rbsde {
            y_pre: s.y.pre_values().to_vec(),
            y_at: s.y.at_values().to_vec(),
            y_plus: s.yplus.clone(),
            z: s.z.clone(),
            ortho: s.ortho.clone(),
            m: s.m.clone(),
            a: s.a.clone(),
            b: s.b.clone(),
            driver: s.driver.clone(),
        }
    }

    pub fn from_drbsde(s: &DrbsdeSolution) -> Self {
        SolutionDump::Drbsde {
            y_pre: s.y.pre_values().to_vec(),
            y_at: s.y.at_values().to_vec(),
            y_plus: s.yplus.clone(),
            z: s.z.clone(),
            ortho: s.ortho.clone(),
            m: s.m.clone(),
            a: s.a.clone(),
            b: s.b.clone(),
            a_prime: s.a_prime.clone(),
            b_prime: s.b_prime.clone(),
            j_pre: s.j.pre_values().to_vec(),
            j_at: s.j.at_values().to_vec(),
            jbar_pre: s.jbar.pre_values().to_vec(),
            jbar_at: s.jbar.at_values().to_vec(),
            driver: s.driver.clone(),
            coupled_iterations: s.iterations,
            coupled_residual: s.residual,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            SolutionDump::Snell { .. } => Task::Snell,
            SolutionDump::Rbsde { .. } => Task::Rbsde,
            SolutionDump::Drbsde { .. } => Task::Drbsde,
        }
    }
}

/// Rebuild solver objects from a dump. Shapes are validated against `space`.
pub enum Replayed {
    Snell(ValueProcesses),
    Rbsde(RbsdeSolution),
    Drbsde(DrbsdeSolution),
}

impl Replayed {
    pub fn from_dump(space: &FiniteFilteredSpace, dump: &SolutionDump) -> CliResult<Self> {
        let nn = space.node_count();
        let len = |v: &Vec<f64>, what: &str| -> CliResult<Vec<f64>> {
            if v.len() == nn {
                Ok(v.clone())
            } else {
                Err(CliError::Invalid(format!(
                    "{what}: expected {nn} values, got {}",
                    v.len()
                )))
            }
        };
        let proc = |pre: &Vec<f64>, at: &Vec<f64>, what: &str| -> CliResult<LadlagProcess> {
            Ok(make_process(space, len(pre, what)?, len(at, what)?)?)
        };
        Ok(match dump {
            SolutionDump::Snell {
                v_pre,
                v_at,
                v_plus,
            } => Replayed::Snell(ValueProcesses {
                v: proc(v_pre, v_at, "v")?,
                vplus: len(v_plus, "v_plus")?,
            }),
            SolutionDump::Rbsde {
                y_pre,
                y_at,
                y_plus,
                z,
                ortho,
                m,
                a,
                b,
                driver,
            } => Replayed::Rbsde(RbsdeSolution {
                y: proc(y_pre, y_at, "y")?,
                yplus: len(y_plus, "y_plus")?,
                z: len(z, "z")?,
                ortho: len(ortho, "ortho")?,
                m: len(m, "m")?,
                a: len(a, "a")?,
                b: len(b, "b")?,
                integral: driver_integral(space, &len(driver, "driver")?),
                driver: driver.clone(),
            }),
            SolutionDump::Drbsde {
                y_pre,
                y_at,
                y_plus,
                z,
                ortho,
                m,
                a,
                b,
                a_prime,
                b_prime,
                j_pre,
                j_at,
                jbar_pre,
                jbar_at,
                driver,
                coupled_iterations,
                coupled_residual,
            } => Replayed::Drbsde(DrbsdeSolution {
                y: proc(y_pre, y_at, "y")?,
                yplus: len(y_plus, "y_plus")?,
                z: len(z, "z")?,
                ortho: len(ortho, "ortho")?,
                m: len(m, "m")?,
                a: len(a, "a")?,
                b: len(b, "b")?,
                a_prime: len(a_prime, "a_prime")?,
                b_prime: len(b_prime, "b_prime")?,
                j: proc(j_pre, j_at, "j")?,
                jbar: proc(jbar_pre, jbar_at, "jbar")?,
                iterations: *coupled_iterations,
                residual: *coupled_residual,
                integral: driver_integral(space, &len(driver, "driver")?),
                driver: driver.clone(),
            }),
        })
    }
}

/// Files produced by one run, as `(file name, contents)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: Summary,
    pub files: Vec<(String, String)>,
}

impl RunOutput {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Shortest round-trip representation, with an exponent for very small or large values.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 table")
}

fn node_prefix(space: &FiniteFilteredSpace, n: usize) -> Vec<String> {
    vec![
        n.to_string(),
        space.time(n).to_string(),
        space.parent(n).map_or(String::new(), |p| p.to_string()),
        fmt_f64(space.prob(n)),
        fmt_f64(space.dw(n)),
    ]
}

const NODE_COLUMNS: [&str; 5] = ["node", "time", "parent", "prob", "dw"];

fn header(extra: &[&'static str]) -> Vec<&'static str> {
    NODE_COLUMNS.iter().chain(extra).copied().collect()
}

/// Value over ordinary stopping times: stopping only on the at-channel.
fn stopping_time_value(space: &FiniteFilteredSpace, xi: &LadlagProcess) -> f64 {
    let mut u = xi.at_values().to_vec();
    for t in (0..space.steps()).rev() {
        for n in space.nodes_at(t) {
            u[n] = u[n].max(space.cond_exp_at(n, &u));
        }
    }
    u[0]
}

pub fn run(problem: &Problem, task: Task) -> CliResult<RunOutput> {
    let Problem {
        scenario,
        space,
        xi,
        terminal,
        ..
    } = problem;
    let choice = scenario.terminal.h_t;
    let mut files = Vec::new();
    let detail = match task {
        Task::Snell => {
            let vp = snell_backward(space, xi, terminal)?;
            let dec = mertens_decompose(space, &vp.v)?;
            let rec = dec.reconstruct(space, vp.v.at(0)).sup_distance(&vp.v);
            let sk = skorokhod_report(space, &vp.v, xi, &dec);
            let rows = (0..space.node_count()).map(|n| {
                let mut r = node_prefix(space, n);
                r.extend(
                    [
                        xi.pre(n),
                        xi.at(n),
                        vp.v.pre(n),
                        vp.v.at(n),
                        vp.vplus[n],
                        dec.m[n],
                        dec.a[n],
                        dec.b[n],
                    ]
                    .map(fmt_f64),
                );
                r
            });
            files.push((
                "nodes.csv".into(),
                csv_table(
                    &header(&["xi_pre", "xi_at", "v_pre", "v_at", "v_plus", "M", "A", "B"]),
                    rows,
                ),
            ));
            files.push((
                "solution.json".into(),
                solution_json(scenario, SolutionDump::from_value(&vp)),
            ));
            Detail::Snell(SnellSummary {
                terminal: choice,
                v0: vp.v.at(0),
                v0_plus: vp.vplus[0],
                v0_stopping_times: (choice == TerminalChoice::Empty)
                    .then(|| stopping_time_value(space, xi)),
                mertens_reconstruction: rec,
                skorokhod: sk.max(),
            })
        }
        Task::Enumerate => {
            let cap = enum_cap()?;
            let count_all = count_split_times(space);
            if count_all > cap {
                return Err(CliError::CapExceeded {
                    what: format!(
                        "{count_all} split stopping times, cap {cap} (set {ENUM_CAP_VAR})"
                    ),
                });
            }
            let family = enumerate(space, terminal, EnumConstraint::All, cap)?;
            let mut best = f64::NEG_INFINITY;
            let mut rows = Vec::with_capacity(family.len());
            for (i, rho) in family.iter().enumerate() {
                let payoff = space.expectation(&eval_at_split(space, xi, rho)?);
                best = best.max(payoff);
                let list = |mask: &[bool]| {
                    mask.iter()
                        .enumerate()
                        .filter(|(_, &m)| m)
                        .map(|(n, _)| n.to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                rows.push(vec![
                    i.to_string(),
                    list(rho.stop_set()),
                    list(rho.pre_set()),
                    fmt_f64(payoff),
                ]);
            }
            files.push((
                "split_times.csv".into(),
                csv_table(
                    &["index", "stop_nodes", "pre_nodes", "expected_payoff"],
                    rows,
                ),
            ));
            files.push(("nodes.csv".into(), obstacle_table(problem)));
            Detail::Enumerate(EnumerateSummary {
                terminal: choice,
                count: family.len(),
                count_all,
                cap,
                best_payoff: best,
                v0: snell_backward(space, xi, terminal)?.v.at(0),
            })
        }
        Task::Rbsde => {
            let lip = solve_lipschitz(
                space,
                xi,
                &problem.driver,
                terminal,
                &problem.params.picard,
                None,
            )?;
            let sol = &lip.solution;
            let report = check_rbsde(space, xi, terminal, sol)?;
            let rows = (0..space.node_count()).map(|n| {
                let mut r = node_prefix(space, n);
                r.extend(
                    [
                        xi.pre(n),
                        xi.at(n),
                        sol.y.pre(n),
                        sol.y.at(n),
                        sol.yplus[n],
                        sol.z[n],
                        sol.ortho[n],
                        sol.a[n],
                        sol.b[n],
                        sol.driver[n],
                    ]
                    .map(fmt_f64),
                );
                r
            });
            files.push((
                "nodes.csv".into(),
                csv_table(
                    &header(&[
                        "xi_pre", "xi_at", "Y_pre", "Y_at", "Y_plus", "Z", "ortho", "A", "B", "g",
                    ]),
                    rows,
                ),
            ));
            files.push((
                "solution.json".into(),
                solution_json(scenario, SolutionDump::from_rbsde(sol)),
            ));
            Detail::Rbsde(RbsdeSummary {
                terminal: choice,
                y0: sol.y.at(0),
                y0_plus: sol.yplus[0],
                iterations: lip.iterations,
                lipschitz: lip.lipschitz,
                picard: TraceSummary::new(space, &lip.trace),
                report: report.into(),
            })
        }
        Task::Drbsde => {
            let pair = problem
                .pair
                .as_ref()
                .ok_or_else(|| CliError::Invalid("task drbsde needs obstacles.zeta".into()))?;
            let lip = solve_drbsde(space, pair, &problem.driver, &problem.params, None)?;
            let sol = &lip.solution;
            let tilde = tilde_obstacles(space, pair, &sol.driver)?;
            let report: DrbsdeReport = check_drbsde(space, pair, &tilde, sol);
            let zeta = pair.zeta();
            let rows = (0..space.node_count()).map(|n| {
                let mut r = node_prefix(space, n);
                r.extend(
                    [
                        xi.pre(n),
                        xi.at(n),
                        zeta.pre(n),
                        zeta.at(n),
                        sol.y.pre(n),
                        sol.y.at(n),
                        sol.yplus[n],
                        sol.z[n],
                        sol.ortho[n],
                        sol.a[n],
                        sol.b[n],
                        sol.a_prime[n],
                        sol.b_prime[n],
                        sol.j.at(n),
                        sol.jbar.at(n),
                    ]
                    .map(fmt_f64),
                );
                r
            });
            files.push((
                "nodes.csv".into(),
                csv_table(
                    &header(&[
                        "xi_pre", "xi_at", "zeta_pre", "zeta_at", "Y_pre", "Y_at", "Y_plus", "Z",
                        "ortho", "A", "B", "A'", "B'", "J", "Jbar",
                    ]),
                    rows,
                ),
            ));
            files.push((
                "solution.json".into(),
                solution_json(scenario, SolutionDump::from_drbsde(sol)),
            ));
            Detail::Drbsde(DrbsdeSummary {
                y0: sol.y.at(0),
                y0_plus: sol.yplus[0],
                iterations: lip.iterations,
                coupled_iterations: sol.iterations,
                coupled_residual: sol.residual,
                lipschitz: lip.lipschitz,
                picard: TraceSummary::new(space, &lip.trace),
                report: report
                    .named()
                    .iter()
                    .map(|(k, v)| NamedDeviation {
                        name: k.to_string(),
                        max_deviation: *v,
                    })
                    .collect(),
            })
        }
    };
    let summary = Summary {
        task,
        steps: space.steps(),
        dt: space.dt(),
        nodes: space.node_count(),
        leaves: space.leaf_count(),
        seed: scenario.seed,
        detail,
    };
    files.insert(0, ("summary.json".into(), to_json(&summary)));
    Ok(RunOutput { summary, files })
}

fn solution_json(scenario: &Scenario, solution: SolutionDump) -> String {
    to_json(&SolutionFile {
        scenario: scenario.clone(),
        solution,
    })
}

fn obstacle_table(problem: &Problem) -> String {
    let (space, xi) = (&problem.space, &problem.xi);
    let rows = (0..space.node_count()).map(|n| {
        let mut r = node_prefix(space, n);
        r.extend([xi.pre(n), xi.at(n)].map(fmt_f64));
        r
    });
    csv_table(&header(&["xi_pre", "xi_at"]), rows)
}
