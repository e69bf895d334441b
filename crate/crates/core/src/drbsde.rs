//! Doubly reflected BSDEs between a lower obstacle `xi` and an upper obstacle
//! `zeta`, solved through a coupled pair of reflected problems.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::laglad::LadlagProcess;
use crate::martrep::{orthogonal_decompose, MartingaleRepresentation};
use crate::probspace::{FiniteFilteredSpace, NodeId};
use crate::rbsde::{
    backward_residual, check_params, driver_integral, Driver, PicardParams, PicardStart,
    PicardTrace, RbsdeSolution,
};
use crate::snell::{
    mertens_decompose, snell_backward_kind, MertensDecomposition, TerminalKind, ValueProcesses,
};

/// Tolerance used when asserting the solution invariants.
pub const INVARIANT_TOL: f64 = 1e-10;

/// Lower and upper obstacles with `xi <= zeta` on both channels and equal
/// terminal values.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissiblePair {
    xi: LadlagProcess,
    zeta: LadlagProcess,
}

impl AdmissiblePair {
    pub fn new(
        space: &FiniteFilteredSpace,
        xi: LadlagProcess,
        zeta: LadlagProcess,
    ) -> Result<Self> {
        xi.ensure_on(space)?;
        zeta.ensure_on(space)?;
        for n in 0..space.node_count() {
            if xi.at(n) > zeta.at(n) || xi.pre(n) > zeta.pre(n) {
                return Err(Error::NotAdmissible(format!(
                    "lower obstacle exceeds upper obstacle at node {n}"
                )));
            }
        }
        for l in space.leaves() {
            if xi.at(l) != zeta.at(l) {
                return Err(Error::NotAdmissible(format!(
                    "terminal values differ at node {l}"
                )));
            }
        }
        Ok(Self { xi, zeta })
    }

    pub fn xi(&self) -> &LadlagProcess {
        &self.xi
    }

    pub fn zeta(&self) -> &LadlagProcess {
        &self.zeta
    }
}

/// Obstacles shifted by the conditional expected remaining payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeObstacles {
    pub xi: LadlagProcess,
    pub zeta: LadlagProcess,
    /// `E_t = E[xi_T + int_t^T g | F_t]`, with `E[E_t | F_{t-1}]` on the pre-channel.
    pub expected: LadlagProcess,
}

pub fn tilde_obstacles(
    space: &FiniteFilteredSpace,
    pair: &AdmissiblePair,
    g: &[f64],
) -> Result<TildeObstacles> {
    pair.xi.ensure_on(space)?;
    space.check_len(g.len())?;
    let nn = space.node_count();
    let mut at = vec![0.0; nn];
    for l in space.leaves() {
        at[l] = pair.xi.at(l);
    }
    for t in (0..space.steps()).rev() {
        for n in space.nodes_at(t) {
            at[n] = g[n] * space.dt() + space.cond_exp_at(n, &at);
        }
    }
    let pre = (0..nn)
        .map(|n| match space.parent(n) {
            Some(p) => at[p] - g[p] * space.dt(),
            None => at[n],
        })
        .collect();
    let expected = LadlagProcess::from_parts(pre, at);
    Ok(TildeObstacles {
        xi: pair.xi.sub(&expected),
        zeta: pair.zeta.sub(&expected),
        expected,
    })
}

/// Parameters of the coupled iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CoupledParams {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

/// Limits of the coupled iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledResult {
    pub j: ValueProcesses,
    pub jbar: ValueProcesses,
    pub iterations: usize,
    /// Sup-norm increment of `(J, Jbar)` at every iteration.
    pub increments: Vec<f64>,
    /// Largest decrease seen between successive iterates, as a positive number.
    pub monotonicity_defect: f64,
}

/// `X` with the at-values at the horizon set to zero. The pre-values at the
/// horizon are kept, so the lower barrier still binds just before `T`.
fn cut_terminal(space: &FiniteFilteredSpace, x: &LadlagProcess) -> LadlagProcess {
    let mut at = x.at_values().to_vec();
    for l in space.leaves() {
        at[l] = 0.0;
    }
    LadlagProcess::from_parts(x.pre_values().to_vec(), at)
}

fn reflect(space: &FiniteFilteredSpace, x: &LadlagProcess) -> ValueProcesses {
    snell_backward_kind(space, &cut_terminal(space, x), TerminalKind::Empty)
}

fn lower_barrier(
    space: &FiniteFilteredSpace,
    tilde: &TildeObstacles,
    jbar: &LadlagProcess,
) -> ValueProcesses {
    reflect(space, &jbar.add(&tilde.xi))
}

fn upper_barrier(
    space: &FiniteFilteredSpace,
    tilde: &TildeObstacles,
    j: &LadlagProcess,
) -> ValueProcesses {
    reflect(space, &j.sub(&tilde.zeta))
}

fn decrease(new: &LadlagProcess, old: &LadlagProcess) -> f64 {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| y - x).fold(0.0, f64::max);
    d(new.at_values(), old.at_values()).max(d(new.pre_values(), old.pre_values()))
}

/// Jacobi iteration `J <- Ref[(Jbar + xi~) 1_{[0,T)}]`, `Jbar <- Ref[(J - zeta~) 1_{[0,T)}]`
/// from zero. Stops when the increment vanishes, or stays below `tol` for two
/// consecutive iterations.
pub fn coupled_iterate(
    space: &FiniteFilteredSpace,
    tilde: &TildeObstacles,
    params: &CoupledParams,
) -> Result<CoupledResult> {
    tilde.xi.ensure_on(space)?;
    if !(params.tol > 0.0) || params.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "coupled iteration needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    let zero = ValueProcesses {
        v: LadlagProcess::constant(space, 0.0),
        vplus: vec![0.0; space.node_count()],
    };
    let (mut j, mut jbar) = (zero.clone(), zero);
    let mut increments = Vec::new();
    let mut defect = 0.0f64;
    for n in 1..=params.max_iter {
        let j_next = lower_barrier(space, tilde, &jbar.v);
        let jbar_next = upper_barrier(space, tilde, &j.v);
        let inc = j_next
            .v
            .sup_distance(&j.v)
            .max(jbar_next.v.sup_distance(&jbar.v));
        defect = defect
            .max(decrease(&j_next.v, &j.v))
            .max(decrease(&jbar_next.v, &jbar.v));
        j = j_next;
        jbar = jbar_next;
        let settled = inc == 0.0
            || (inc < params.tol && increments.last().is_some_and(|&p: &f64| p < params.tol));
        increments.push(inc);
        if settled {
            return Ok(CoupledResult {
                j,
                jbar,
                iterations: n,
                increments,
                monotonicity_defect: defect,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: params.max_iter,
        last_increment: increments.last().copied().unwrap_or(f64::NAN),
    })
}

/// Verdict of [`mokobodzki_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct MokobodzkiVerdict {
    /// `false` only means the coupled iteration was truncated before settling;
    /// on a finite tree with bounded obstacles the condition always holds.
    pub holds_at_tolerance: bool,
    /// Nonnegative strong supermartingales `(H, Hbar)` with
    /// `xi~ <= H - Hbar <= zeta~`.
    pub witness: Option<(LadlagProcess, LadlagProcess)>,
}

pub fn mokobodzki_probe(
    space: &FiniteFilteredSpace,
    pair: &AdmissiblePair,
    g: &[f64],
    params: &CoupledParams,
) -> Result<MokobodzkiVerdict> {
    let tilde = tilde_obstacles(space, pair, g)?;
    let coupled = match coupled_iterate(space, &tilde, params) {
        Ok(c) => c,
        Err(Error::NoConvergence { .. }) => {
            return Ok(MokobodzkiVerdict {
                holds_at_tolerance: false,
                witness: None,
            })
        }
        Err(e) => return Err(e),
    };
    let (h, hbar) = (coupled.j.v, coupled.jbar.v);
    let diff = h.sub(&hbar);
    let mut ok = h.min_value() >= -INVARIANT_TOL && hbar.min_value() >= -INVARIANT_TOL;
    ok &= mertens_decompose(space, &h).is_ok() && mertens_decompose(space, &hbar).is_ok();
    for n in 0..space.node_count() {
        ok &= diff.at(n) >= tilde.xi.at(n) - INVARIANT_TOL
            && diff.at(n) <= tilde.zeta.at(n) + INVARIANT_TOL;
        ok &= diff.pre(n) >= tilde.xi.pre(n) - INVARIANT_TOL
            && diff.pre(n) <= tilde.zeta.pre(n) + INVARIANT_TOL;
    }
    Ok(MokobodzkiVerdict {
        holds_at_tolerance: ok,
        witness: ok.then_some((h, hbar)),
    })
}

/// Solution of a doubly reflected BSDE.
#[derive(Debug, Clone, PartialEq)]
pub struct DrbsdeSolution {
    pub y: LadlagProcess,
    /// Right limits `Y_t^+`.
    pub yplus: Vec<f64>,
    pub z: Vec<f64>,
    pub ortho: Vec<f64>,
    /// Cumulative net martingale part.
    pub m: Vec<f64>,
    /// Cumulative predictable push from below.
    pub a: Vec<f64>,
    /// Cumulative right-jump push from below.
    pub b: Vec<f64>,
    /// Cumulative predictable push from above.
    pub a_prime: Vec<f64>,
    /// Cumulative right-jump push from above.
    pub b_prime: Vec<f64>,
    pub j: LadlagProcess,
    pub jbar: LadlagProcess,
    /// Coupled iterations used.
    pub iterations: usize,
    /// Coupled fixed-point residual.
    pub residual: f64,
    pub driver: Vec<f64>,
    pub integral: Vec<f64>,
}

fn delta(space: &FiniteFilteredSpace, x: &[f64], n: NodeId) -> f64 {
    space.parent(n).map_or(x[n], |p| x[n] - x[p])
}

impl DrbsdeSolution {
    pub fn delta_a(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        if n == 0 {
            0.0
        } else {
            delta(space, &self.a, n)
        }
    }

    pub fn delta_a_prime(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        if n == 0 {
            0.0
        } else {
            delta(space, &self.a_prime, n)
        }
    }

    pub fn delta_b(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        delta(space, &self.b, n)
    }

    pub fn delta_b_prime(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        delta(space, &self.b_prime, n)
    }

    /// View as a singly reflected solution with net reflections, for residuals.
    fn net_view(&self) -> RbsdeSolution {
        let net = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a - b).collect();
        RbsdeSolution {
            y: self.y.clone(),
            yplus: self.yplus.clone(),
            z: self.z.clone(),
            ortho: self.ortho.clone(),
            m: self.m.clone(),
            a: net(&self.a, &self.a_prime),
            b: net(&self.b, &self.b_prime),
            driver: self.driver.clone(),
            integral: self.integral.clone(),
        }
    }
}

/// Largest violations of the defining properties of a doubly reflected solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DrbsdeReport {
    /// Pathwise residual of the backward equation.
    pub residual: f64,
    /// Coupled fixed-point residual.
    pub coupled_residual: f64,
    pub sandwich: f64,
    /// `|Y - ((Y^+ v xi) ^ zeta)|`.
    pub identity: f64,
    pub skorokhod: f64,
    /// `max min(dA, dA')` and `max min(dB, dB')`.
    pub singularity: f64,
    /// Defects of `dB = (Y^+ - Y)^-` and `dB' = (Y^+ - Y)^+`.
    pub jumps: f64,
    pub negativity: f64,
}

impl DrbsdeReport {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("residual", self.residual),
            ("coupled_residual", self.coupled_residual),
            ("sandwich", self.sandwich),
            ("identity", self.identity),
            ("skorokhod", self.skorokhod),
            ("singularity", self.singularity),
            ("jump_identities", self.jumps),
            ("nondecreasing", self.negativity),
        ]
    }

    pub fn max(&self) -> f64 {
        self.named().iter().map(|(_, v)| *v).fold(0.0, f64::max)
    }

    pub fn first_violation(&self, tol: f64) -> Option<(&'static str, f64)> {
        self.named().into_iter().find(|(_, v)| !(*v <= tol))
    }
}

pub fn check_drbsde(
    space: &FiniteFilteredSpace,
    pair: &AdmissiblePair,
    tilde: &TildeObstacles,
    sol: &DrbsdeSolution,
) -> DrbsdeReport {
    let (xi, zeta, y) = (&pair.xi, &pair.zeta, &sol.y);
    let mut r = DrbsdeReport::default();
    for n in 0..space.node_count() {
        for (lo, v, hi) in [
            (xi.at(n), y.at(n), zeta.at(n)),
            (xi.pre(n), y.pre(n), zeta.pre(n)),
        ] {
            r.sandwich = r.sandwich.max(lo - v).max(v - hi);
        }
        let target = sol.yplus[n].max(xi.at(n)).min(zeta.at(n));
        r.identity = r.identity.max((y.at(n) - target).abs());

        let (da, dap) = (sol.delta_a(space, n), sol.delta_a_prime(space, n));
        let (db, dbp) = (sol.delta_b(space, n), sol.delta_b_prime(space, n));
        r.skorokhod = r
            .skorokhod
            .max(((y.pre(n) - xi.pre(n)) * da).abs())
            .max(((zeta.pre(n) - y.pre(n)) * dap).abs())
            .max(((y.at(n) - xi.at(n)) * db).abs())
            .max(((zeta.at(n) - y.at(n)) * dbp).abs());
        r.singularity = r.singularity.max(da.min(dap)).max(db.min(dbp));
        let jump = sol.yplus[n] - y.at(n);
        r.jumps = r
            .jumps
            .max((db - (-jump).max(0.0)).abs())
            .max((dbp - jump.max(0.0)).abs());
        r.negativity = r.negativity.max(-da).max(-dap).max(-db).max(-dbp);
    }
    r.residual = backward_residual(space, &sol.net_view(), |l| xi.at(l));
    let lower = lower_barrier(space, tilde, &sol.jbar);
    let upper = upper_barrier(space, tilde, &sol.j);
    r.coupled_residual = lower
        .v
        .sup_distance(&sol.j)
        .max(upper.v.sup_distance(&sol.jbar));
    r
}

/// Build `(Y, Z, N, A, B, A', B')` from the limits of the coupled iteration.
pub fn assemble_solution(
    space: &FiniteFilteredSpace,
    pair: &AdmissiblePair,
    tilde: &TildeObstacles,
    coupled: &CoupledResult,
    g: &[f64],
    residual_tol: f64,
) -> Result<DrbsdeSolution> {
    let (j, jbar, e) = (&coupled.j, &coupled.jbar, &tilde.expected);
    let lower = lower_barrier(space, tilde, &jbar.v);
    let upper = upper_barrier(space, tilde, &j.v);
    let residual = lower
        .v
        .sup_distance(&j.v)
        .max(upper.v.sup_distance(&jbar.v));
    if !(residual <= residual_tol) {
        return Err(Error::CoupledResidualTooLarge {
            residual,
            tol: residual_tol,
        });
    }
    let d1: MertensDecomposition = mertens_decompose(space, &j.v)?;
    let d2: MertensDecomposition = mertens_decompose(space, &jbar.v)?;
    let nn = space.node_count();
    let (mut a, mut ap, mut b, mut bp, mut m) = (
        vec![0.0; nn],
        vec![0.0; nn],
        vec![0.0; nn],
        vec![0.0; nn],
        vec![0.0; nn],
    );
    let db0 = d1.delta_b(space, 0) - d2.delta_b(space, 0);
    b[0] = db0.max(0.0);
    bp[0] = (-db0).max(0.0);
    for n in 1..nn {
        let p = space.parent(n).expect("non-root");
        let da = d1.delta_a(space, n) - d2.delta_a(space, n);
        let db = d1.delta_b(space, n) - d2.delta_b(space, n);
        let dme = e.at(n) - e.pre(n);
        a[n] = a[p] + da.max(0.0);
        ap[n] = ap[p] + (-da).max(0.0);
        b[n] = b[p] + db.max(0.0);
        bp[n] = bp[p] + (-db).max(0.0);
        m[n] = m[p] + d1.delta_m(space, n) - d2.delta_m(space, n) + dme;
    }
    let MartingaleRepresentation { z, ortho } = orthogonal_decompose(space, &m)?;
    let y = j.v.sub(&jbar.v).add(e);
    let yplus = (0..nn)
        .map(|n| j.vplus[n] - jbar.vplus[n] + e.at(n))
        .collect();
    let sol = DrbsdeSolution {
        y,
        yplus,
        z,
        ortho,
        m,
        a,
        b,
        a_prime: ap,
        b_prime: bp,
        j: j.v.clone(),
        jbar: jbar.v.clone(),
        iterations: coupled.iterations,
        residual,
        driver: g.to_vec(),
        integral: driver_integral(space, g),
    };
    let report = check_drbsde(space, pair, tilde, &sol);
    if let Some((name, deviation)) = report.first_violation(INVARIANT_TOL.max(residual_tol)) {
        return Err(Error::InvariantViolation { name, deviation });
    }
    Ok(sol)
}

/// Doubly reflected BSDE with a driver that does not depend on the solution.
pub fn solve_drbsde_process(
    space: &FiniteFilteredSpace,
    pair: &AdmissiblePair,
    g: &[f64],
    params: &CoupledParams,
) -> Result<DrbsdeSolution> {
    let tilde = tilde_obstacles(space, pair, g)?;
    let coupled = match coupled_iterate(space, &tilde, params) {
        Ok(c) => c,
        Err(Error::NoConvergence { .. }) => return Err(Error::MokobodzkiFailed),
        Err(e) => return Err(e),
    };
    assemble_solution(
        space,
        pair,
        &tilde,
        &coupled,
        g,
        params.tol.max(INVARIANT_TOL),
    )
}

/// Parameters for [`solve_drbsde`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DrbsdeParams {
    pub picard: PicardParams,
    pub coupled: CoupledParams,
}

/// Result of a Picard solve of the doubly reflected problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DrbsdeLipschitzSolution {
    pub solution: DrbsdeSolution,
    pub trace: PicardTrace,
    pub iterations: usize,
    pub lipschitz: f64,
}

/// Doubly reflected BSDE with a Lipschitz driver, by Picard iteration on the
/// frozen driver.
pub fn solve_drbsde(
    space: &FiniteFilteredSpace,
    pair: &AdmissiblePair,
    driver: &Driver,
    params: &DrbsdeParams,
    start: Option<&PicardStart>,
) -> Result<DrbsdeLipschitzSolution> {
    let lipschitz = driver.validate(space)?;
    check_params(&params.picard)?;
    let zero = PicardStart::zero(space);
    let start = start.unwrap_or(&zero);
    space.check_len(start.y.len())?;
    space.check_len(start.z.len())?;
    let mut trace = PicardTrace::new(params.picard.beta_for(lipschitz));
    let (mut y, mut z) = (start.y.clone(), start.z.clone());
    let mut last = f64::INFINITY;
    for k in 1..=params.picard.max_iter {
        let g = driver.values(&y, &z);
        let sol = solve_drbsde_process(space, pair, &g, &params.coupled)?;
        let sup = trace.record(space, sol.y.at_values(), &y, &sol.z, &z);
        y = sol.y.at_values().to_vec();
        z = sol.z.clone();
        last = sup;
        if sup < params.picard.tol || !driver.depends_on_solution() {
            return Ok(DrbsdeLipschitzSolution {
                solution: sol,
                trace,
                iterations: k,
                lipschitz,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: params.picard.max_iter,
        last_increment: last,
    })
}
