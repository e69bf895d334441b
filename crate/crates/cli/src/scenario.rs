//! Scenario files: the JSON schema and its translation into core objects.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use snellforge_core::drbsde::{AdmissiblePair, CoupledParams, DrbsdeParams};
use snellforge_core::laglad::make_process;
use snellforge_core::probspace::{build_space, FiniteFilteredSpace, Transition, TreeSpec};
use snellforge_core::rbsde::{Affine, Driver, PicardParams};
use snellforge_core::{LadlagProcess, SplitStoppingTime};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid: Grid,
    pub tree: TreeDef,
    /// Noise increments per branch. Required unless the tree is binomial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseDef>,
    pub obstacles: Obstacles,
    #[serde(default)]
    pub terminal: Terminal,
    /// Defaults to the zero driver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverDef>,
    #[serde(default)]
    pub solver: SolverDef,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub steps: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TreeDef {
    /// Two branches of probability 1/2; noise defaults to `+-sqrt(dt)`.
    Binomial,
    /// The same branch probabilities out of every node.
    Uniform { probabilities: Vec<f64> },
    /// Branch probabilities per non-terminal node, breadth-first.
    Explicit { probabilities: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseDef {
    PerBranch(Vec<f64>),
    PerNode(Vec<Vec<f64>>),
}

/// Node-indexed values, either dense or keyed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Channel {
    Dense(Vec<f64>),
    Sparse(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDef {
    pub pre: Channel,
    pub at: Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacles {
    pub xi: ProcessDef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<ProcessDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalChoice {
    #[default]
    Empty,
    Omega,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Terminal {
    #[serde(rename = "H_T")]
    pub h_t: TerminalChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineDef {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub c: f64,
}

impl From<AffineDef> for Affine {
    fn from(d: AffineDef) -> Self {
        Affine {
            a: d.a,
            b: d.b,
            c: d.c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DriverDef {
    /// `g` given directly, one value per node.
    Process { values: Channel },
    Affine {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz_bound: Option<f64>,
    },
    /// `default` everywhere except at the listed node ids.
    Table {
        #[serde(default)]
        default: AffineDef,
        #[serde(default)]
        overrides: BTreeMap<String, AffineDef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz_bound: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub coupled_tol: f64,
    #[serde(default = "default_coupled_max_iter")]
    pub coupled_max_iter: usize,
}

fn default_tol() -> f64 {
    1e-12
}

fn default_max_iter() -> usize {
    200
}

fn default_coupled_max_iter() -> usize {
    10_000
}

impl Default for SolverDef {
    fn default() -> Self {
        Self {
            beta: None,
            tol: default_tol(),
            max_iter: default_max_iter(),
            coupled_tol: default_tol(),
            coupled_max_iter: default_coupled_max_iter(),
        }
    }
}

impl SolverDef {
    pub fn params(&self) -> DrbsdeParams {
        DrbsdeParams {
            picard: PicardParams {
                beta: self.beta,
                tol: self.tol,
                max_iter: self.max_iter,
            },
            coupled: CoupledParams {
                tol: self.coupled_tol,
                max_iter: self.coupled_max_iter,
            },
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub space: FiniteFilteredSpace,
    pub xi: LadlagProcess,
    pub pair: Option<AdmissiblePair>,
    pub terminal: SplitStoppingTime,
    pub driver: Driver,
    pub params: DrbsdeParams,
}

impl Scenario {
    pub fn from_json(text: &str) -> CliResult<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> CliResult<Problem> {
        let space = build_space(self.grid.steps, self.grid.dt, &self.tree_spec()?)?;
        let xi = process(&space, &self.obstacles.xi, "xi")?;
        let pair = match &self.obstacles.zeta {
            Some(z) => Some(AdmissiblePair::new(
                &space,
                xi.clone(),
                process(&space, z, "zeta")?,
            )?),
            None => None,
        };
        let terminal = match self.terminal.h_t {
            TerminalChoice::Empty => SplitStoppingTime::terminal_empty(&space),
            TerminalChoice::Omega => SplitStoppingTime::terminal_omega(&space),
        };
        let driver = self.driver(&space)?;
        driver.validate(&space)?;
        Ok(Problem {
            scenario: self.clone(),
            space,
            xi,
            pair,
            terminal,
            driver,
            params: self.solver.params(),
        })
    }

    fn tree_spec(&self) -> CliResult<TreeSpec> {
        let zip = |p: &[f64], w: &[f64], at: &str| -> CliResult<Vec<Transition>> {
            if p.len() != w.len() {
                return Err(CliError::Invalid(format!(
                    "{at}: {} probabilities but {} noise values",
                    p.len(),
                    w.len()
                )));
            }
            Ok(p.iter()
                .zip(w)
                .map(|(&p, &w)| Transition::new(p, w))
                .collect())
        };
        match (&self.tree, &self.noise) {
            (TreeDef::Binomial, None) => Ok(TreeSpec::Binomial),
            (TreeDef::Binomial, Some(NoiseDef::PerBranch(w))) => {
                Ok(TreeSpec::Uniform(zip(&[0.5, 0.5], w, "tree")?))
            }
            (TreeDef::Uniform { probabilities }, Some(NoiseDef::PerBranch(w))) => {
                Ok(TreeSpec::Uniform(zip(probabilities, w, "tree")?))
            }
            (TreeDef::Explicit { probabilities }, Some(NoiseDef::PerNode(w))) => {
                if probabilities.len() != w.len() {
                    return Err(CliError::Invalid(format!(
                        "{} branchings but {} noise lists",
                        probabilities.len(),
                        w.len()
                    )));
                }
                let entries = probabilities
                    .iter()
                    .zip(w)
                    .enumerate()
                    .map(|(i, (p, w))| zip(p, w, &format!("branching {i}")))
                    .collect::<CliResult<_>>()?;
                Ok(TreeSpec::Explicit(entries))
            }
            (_, None) => Err(CliError::Invalid("noise is required for this tree".into())),
            _ => Err(CliError::Invalid(
                "noise shape does not match the tree".into(),
            )),
        }
    }

    fn driver(&self, space: &FiniteFilteredSpace) -> CliResult<Driver> {
        let nn = space.node_count();
        Ok(match &self.driver {
            None => Driver::Process(vec![0.0; nn]),
            Some(DriverDef::Process { values }) => {
                Driver::Process(dense(values, nn, "driver", None)?)
            }
            Some(DriverDef::Affine {
                a,
                b,
                c,
                lipschitz_bound,
            }) => Driver::Affine {
                coeffs: Affine {
                    a: *a,
                    b: *b,
                    c: *c,
                },
                lipschitz_bound: *lipschitz_bound,
            },
            Some(DriverDef::Table {
                default,
                overrides,
                lipschitz_bound,
            }) => {
                let mut coeffs = vec![Affine::from(*default); nn];
                for (key, c) in overrides {
                    coeffs[node_id(key, nn, "driver")?] = (*c).into();
                }
                Driver::Table {
                    coeffs,
                    lipschitz_bound: *lipschitz_bound,
                }
            }
        })
    }
}

fn node_id(key: &str, nn: usize, what: &str) -> CliResult<usize> {
    match key.parse::<usize>() {
        Ok(n) if n < nn => Ok(n),
        _ => Err(CliError::Invalid(format!(
            "{what}: unknown node id {key:?}"
        ))),
    }
}

/// Expand a channel to one value per node. Sparse channels must name every
/// node, except that `fallback` fills the ones it returns a value for.
fn dense(
    ch: &Channel,
    nn: usize,
    what: &str,
    fallback: Option<&dyn Fn(usize) -> Option<f64>>,
) -> CliResult<Vec<f64>> {
    match ch {
        Channel::Dense(v) if v.len() == nn => Ok(v.clone()),
        Channel::Dense(v) => Err(CliError::Invalid(format!(
            "{what}: expected {nn} values, got {}",
            v.len()
        ))),
        Channel::Sparse(map) => {
            let mut out = vec![None; nn];
            for (key, &v) in map {
                out[node_id(key, nn, what)?] = Some(v);
            }
            out.into_iter()
                .enumerate()
                .map(|(n, v)| {
                    v.or_else(|| fallback.and_then(|f| f(n))).ok_or_else(|| {
                        CliError::Invalid(format!("{what}: missing value for node {n}"))
                    })
                })
                .collect()
        }
    }
}

fn process(space: &FiniteFilteredSpace, def: &ProcessDef, name: &str) -> CliResult<LadlagProcess> {
    let nn = space.node_count();
    let at = dense(&def.at, nn, &format!("{name}.at"), None)?;
    let root = at[0];
    let pre = dense(
        &def.pre,
        nn,
        &format!("{name}.pre"),
        Some(&|n| (n == 0).then_some(root)),
    )?;
    Ok(make_process(space, pre, at)?)
}
