//! Reflected BSDEs with a lower obstacle, driven by the noise of the tree.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::laglad::{weighted_norm_shifted, LadlagProcess, NormKind};
use crate::martrep::{orthogonal_decompose, MartingaleRepresentation};
use crate::probspace::{FiniteFilteredSpace, NodeId};
use crate::snell::{mertens_decompose, snell_backward_kind, terminal_kind, TerminalKind};
use crate::splitstop::SplitStoppingTime;

/// Coefficients of `g(y, z) = a + b y + c z`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Affine {
    pub fn eval(&self, y: f64, z: f64) -> f64 {
        self.a + self.b * y + self.c * z
    }

    fn lipschitz(&self) -> f64 {
        self.b.abs().max(self.c.abs())
    }
}

/// Generator of a BSDE, evaluated at node `n` with the current `(Y_t, Z_t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Driver {
    /// A given process `g_t(omega)`, one value per node.
    Process(Vec<f64>),
    /// The same affine map at every node.
    Affine {
        coeffs: Affine,
        lipschitz_bound: Option<f64>,
    },
    /// An affine map per node.
    Table {
        coeffs: Vec<Affine>,
        lipschitz_bound: Option<f64>,
    },
}

impl Driver {
    /// Check shape and declared Lipschitz bound; returns the bound in force.
    pub fn validate(&self, space: &FiniteFilteredSpace) -> Result<f64> {
        let (required, declared) = match self {
            Driver::Process(v) => {
                space.check_len(v.len())?;
                if let Some(n) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { node: n });
                }
                return Ok(0.0);
            }
            Driver::Affine {
                coeffs,
                lipschitz_bound,
            } => (coeffs.lipschitz(), *lipschitz_bound),
            Driver::Table {
                coeffs,
                lipschitz_bound,
            } => {
                space.check_len(coeffs.len())?;
                (
                    coeffs.iter().map(Affine::lipschitz).fold(0.0, f64::max),
                    *lipschitz_bound,
                )
            }
        };
        let declared = declared.ok_or(Error::MissingLipschitzBound)?;
        if !(declared >= required) || !declared.is_finite() {
            return Err(Error::LipschitzBoundViolated { declared, required });
        }
        Ok(declared)
    }

    pub fn eval(&self, n: NodeId, y: f64, z: f64) -> f64 {
        match self {
            Driver::Process(v) => v[n],
            Driver::Affine { coeffs, .. } => coeffs.eval(y, z),
            Driver::Table { coeffs, .. } => coeffs[n].eval(y, z),
        }
    }

    /// Whether the driver reads `(y, z)` at all.
    pub fn depends_on_solution(&self) -> bool {
        match self {
            Driver::Process(_) => false,
            Driver::Affine { coeffs, .. } => coeffs.b != 0.0 || coeffs.c != 0.0,
            Driver::Table { coeffs, .. } => coeffs.iter().any(|c| c.b != 0.0 || c.c != 0.0),
        }
    }

    /// Driver values along given at-values of `Y` and `Z`.
    pub fn values(&self, y: &[f64], z: &[f64]) -> Vec<f64> {
        (0..y.len()).map(|n| self.eval(n, y[n], z[n])).collect()
    }
}

/// Solution `(Y, Z, N, A, B)` of a reflected BSDE.
#[derive(Debug, Clone, PartialEq)]
pub struct RbsdeSolution {
    pub y: LadlagProcess,
    /// Right limits `Y_t^+`.
    pub yplus: Vec<f64>,
    pub z: Vec<f64>,
    /// Cumulative orthogonal martingale.
    pub ortho: Vec<f64>,
    /// Cumulative martingale part `M = int Z dW + N`.
    pub m: Vec<f64>,
    /// Cumulative predictable reflection.
    pub a: Vec<f64>,
    /// Cumulative right-jump reflection, including the jump at the node.
    pub b: Vec<f64>,
    /// Driver values used, one per node.
    pub driver: Vec<f64>,
    /// `I_t = sum_{s<t} g_s dt`.
    pub integral: Vec<f64>,
}

impl RbsdeSolution {
    pub fn delta_a(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        space.parent(n).map_or(0.0, |p| self.a[n] - self.a[p])
    }

    pub fn b_before(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        space.parent(n).map_or(0.0, |p| self.b[p])
    }

    pub fn delta_b(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        self.b[n] - self.b_before(space, n)
    }

    pub fn delta_ortho(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        space
            .parent(n)
            .map_or(0.0, |p| self.ortho[n] - self.ortho[p])
    }
}

/// `I_t = sum_{s<t} g_s dt` at every node.
pub fn driver_integral(space: &FiniteFilteredSpace, g: &[f64]) -> Vec<f64> {
    let mut i = vec![0.0; space.node_count()];
    for n in 1..space.node_count() {
        let p = space.parent(n).expect("non-root");
        i[n] = i[p] + g[p] * space.dt();
    }
    i
}

/// Reflected BSDE with a driver that does not depend on the solution.
pub fn solve_with_driver_process(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    g: &[f64],
    terminal: &SplitStoppingTime,
) -> Result<RbsdeSolution> {
    xi.ensure_on(space)?;
    space.check_len(g.len())?;
    let kind = terminal_kind(space, terminal)?;
    solve_process_kind(space, xi, g, kind)
}

pub(crate) fn solve_process_kind(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    g: &[f64],
    kind: TerminalKind,
) -> Result<RbsdeSolution> {
    let integral = driver_integral(space, g);
    let shift = LadlagProcess::from_parts(integral.clone(), integral.clone());
    let vp = snell_backward_kind(space, &xi.add(&shift), kind);
    let dec = mertens_decompose(space, &vp.v)?;
    let MartingaleRepresentation { z, ortho } = orthogonal_decompose(space, &dec.m)?;
    // Y_T is the terminal value itself; subtracting the integral back out
    // would leave rounding noise there.
    let mut at = vp.v.sub(&shift).at_values().to_vec();
    for leaf in space.leaves() {
        at[leaf] = match kind {
            TerminalKind::Empty => xi.at(leaf),
            TerminalKind::Omega => xi.pre(leaf),
        };
    }
    let y = LadlagProcess::from_parts(vp.v.sub(&shift).pre_values().to_vec(), at);
    let yplus = vp.vplus.iter().zip(&integral).map(|(v, i)| v - i).collect();
    Ok(RbsdeSolution {
        y,
        yplus,
        z,
        ortho,
        m: dec.m,
        a: dec.a,
        b: dec.b,
        driver: g.to_vec(),
        integral,
    })
}

/// `Y = Ref[xi]`: the reflected solution with zero driver.
pub fn ref_operator(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    terminal: &SplitStoppingTime,
) -> Result<LadlagProcess> {
    xi.ensure_on(space)?;
    let kind = terminal_kind(space, terminal)?;
    Ok(snell_backward_kind(space, xi, kind).v)
}

/// Largest violations of the defining properties of a reflected solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RbsdeReport {
    /// Pathwise residual of the backward equation on both channels.
    pub residual: f64,
    /// Largest `(xi - Y)^+` over both channels.
    pub floor: f64,
    /// Largest `|Y - max(xi, Y^+)|`.
    pub identity: f64,
    /// Largest Skorokhod product.
    pub skorokhod: f64,
    /// Most negative compensator increment, as a positive number.
    pub negativity: f64,
}

impl RbsdeReport {
    pub fn max(&self) -> f64 {
        [
            self.residual,
            self.floor,
            self.identity,
            self.skorokhod,
            self.negativity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Check a solution against its obstacle and terminal split time. Under
/// `(Omega, T)` the terminal at-value is not part of the problem and is skipped.
pub fn check_rbsde(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    terminal: &SplitStoppingTime,
    sol: &RbsdeSolution,
) -> Result<RbsdeReport> {
    let kind = terminal_kind(space, terminal)?;
    let mut r = RbsdeReport::default();
    let horizon = space.steps();
    for n in 0..space.node_count() {
        let skip_at = kind == TerminalKind::Omega && space.time(n) == horizon;
        if !skip_at {
            r.floor = r.floor.max(xi.at(n) - sol.y.at(n));
            r.identity = r
                .identity
                .max((sol.y.at(n) - xi.at(n).max(sol.yplus[n])).abs());
            r.skorokhod = r
                .skorokhod
                .max(((sol.y.at(n) - xi.at(n)) * sol.delta_b(space, n)).abs());
        }
        r.floor = r.floor.max(xi.pre(n) - sol.y.pre(n));
        r.skorokhod = r
            .skorokhod
            .max(((sol.y.pre(n) - xi.pre(n)) * sol.delta_a(space, n)).abs());
        r.negativity = r
            .negativity
            .max(-sol.delta_a(space, n))
            .max(-sol.delta_b(space, n));
    }
    r.residual = backward_residual(space, sol, |l| match kind {
        TerminalKind::Empty => xi.at(l),
        TerminalKind::Omega => xi.pre(l),
    });
    Ok(r)
}

/// Pathwise residual of
/// `Y_t = xi + int_t^T g - int_t^T Z dW - (N_T - N_t) + (A_T - A_t) + (B_{T-} - B_{t-})`
/// and its pre-channel analogue, given the terminal value on each leaf.
pub fn backward_residual(
    space: &FiniteFilteredSpace,
    sol: &RbsdeSolution,
    terminal_value: impl Fn(NodeId) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for leaf in space.leaves() {
        let path = space.path_to(leaf);
        let xi_t = terminal_value(leaf);
        let (i_t, a_t, b_tm) = (sol.integral[leaf], sol.a[leaf], sol.b_before(space, leaf));
        // stoch[k] = sum_{s >= k} (Z_s dW_{s+1} + dN_{s+1}) along the path
        let mut stoch = vec![0.0; path.len()];
        for k in (0..path.len() - 1).rev() {
            let next = path[k + 1];
            stoch[k] =
                stoch[k + 1] + sol.z[path[k]] * space.dw(next) + sol.delta_ortho(space, next);
        }
        for (k, &n) in path.iter().enumerate() {
            let rhs = xi_t + (i_t - sol.integral[n]) - stoch[k]
                + (a_t - sol.a[n])
                + (b_tm - sol.b_before(space, n));
            worst = worst.max((sol.y.at(n) - rhs).abs());
            if k >= 1 {
                let p = path[k - 1];
                let rhs = xi_t + (i_t - sol.integral[n]) - stoch[k - 1]
                    + (a_t - sol.a[p])
                    + (b_tm - sol.b[p]);
                worst = worst.max((sol.y.pre(n) - rhs).abs());
            }
        }
    }
    worst
}

/// Parameters of the Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardParams {
    /// Weight in the `K^2_beta` distance; `None` means `100 (1 + K^2)`.
    pub beta: Option<f64>,
    /// Stop once the increment of `(Y, Z)`, measured by [`relative_gap`], falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardParams {
    fn default() -> Self {
        Self {
            beta: None,
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

impl PicardParams {
    pub fn beta_for(&self, lipschitz: f64) -> f64 {
        self.beta.unwrap_or(100.0 * (1.0 + lipschitz * lipschitz))
    }
}

/// Weights tried in turn when measuring contraction of the Picard map.
pub const BETA_SCHEDULE: [f64; 3] = [10.0, 100.0, 1000.0];

/// Root-mean-square weighted difference below which a Picard step is treated
/// as unresolved rounding noise when measuring contraction ratios.
pub const RATIO_FLOOR: f64 = 1e-10;

/// History of successive differences of the Picard iterates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PicardTrace {
    /// `beta` used for [`Self::distances`].
    pub beta: f64,
    /// `K^2_beta` distance between successive iterates, multiplied by
    /// `e^{-beta (T - dt)}`.
    pub distances: Vec<f64>,
    /// Increments of `(Y, Z)` measured by [`relative_gap`].
    pub sup_increments: Vec<f64>,
    diffs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl PicardTrace {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    /// Record the step from `(y_old, z_old)` to `(y_new, z_new)`; returns its
    /// increment as measured by [`relative_gap`].
    pub fn record(
        &mut self,
        space: &FiniteFilteredSpace,
        y_new: &[f64],
        y_old: &[f64],
        z_new: &[f64],
        z_old: &[f64],
    ) -> f64 {
        let dy: Vec<f64> = y_new.iter().zip(y_old).map(|(a, b)| a - b).collect();
        let dz: Vec<f64> = z_new.iter().zip(z_old).map(|(a, b)| a - b).collect();
        let sup = relative_gap(y_new, y_old).max(relative_gap(z_new, z_old));
        self.distances.push(k2_distance(space, &dy, &dz, self.beta));
        self.sup_increments.push(sup);
        self.diffs.push((dy, dz));
        sup
    }

    /// Normalised `K^2_beta` distances recomputed for another `beta`.
    pub fn distances_for(&self, space: &FiniteFilteredSpace, beta: f64) -> Vec<f64> {
        self.diffs
            .iter()
            .map(|(dy, dz)| k2_distance(space, dy, dz, beta))
            .collect()
    }

    /// Ratios `d_{k+1} / d_k` of the (unsquared) distances, over pairs where
    /// both distances exceed the rounding floor: a difference of
    /// [`RATIO_FLOOR`] at every non-terminal node.
    pub fn ratios(&self, space: &FiniteFilteredSpace, beta: f64) -> Vec<f64> {
        let d = self.distances_for(space, beta);
        let unit: Vec<f64> = (0..space.node_count())
            .map(|n| if space.is_leaf(n) { 0.0 } else { RATIO_FLOOR })
            .collect();
        let floor = k2_distance(space, &unit, &unit, beta);
        (1..d.len())
            .filter(|&k| d[k - 1] > floor && d[k] > floor)
            .map(|k| libm::sqrt(d[k] / d[k - 1]))
            .collect()
    }

    pub fn max_ratio(&self, space: &FiniteFilteredSpace, beta: f64) -> f64 {
        self.ratios(space, beta).into_iter().fold(0.0, f64::max)
    }

    /// First `beta` in `schedule` under which every measured ratio is below one.
    pub fn contraction_beta(
        &self,
        space: &FiniteFilteredSpace,
        schedule: &[f64],
    ) -> Option<(f64, f64)> {
        schedule
            .iter()
            .map(|&b| (b, self.max_ratio(space, b)))
            .find(|&(_, r)| r < 1.0)
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// `|||dY|||^2_beta + ||dZ||^2_beta` scaled by `e^{-beta (T - dt)}`.
pub fn k2_distance(space: &FiniteFilteredSpace, dy: &[f64], dz: &[f64], beta: f64) -> f64 {
    let shift = space.horizon() - space.dt();
    weighted_norm_shifted(space, dy, NormKind::S2, beta, shift)
        + weighted_norm_shifted(space, dz, NormKind::H2, beta, shift)
}

/// `max_i |a_i - b_i| / (1 + |a_i|)`: absolute for small entries, relative for
/// large ones, so that rounding in large `Z` values cannot stall a solve.
pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs()))
        .fold(0.0, f64::max)
}

/// Starting point of the Picard iteration: at-values of `Y` and `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardStart {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl PicardStart {
    pub fn zero(space: &FiniteFilteredSpace) -> Self {
        Self {
            y: vec![0.0; space.node_count()],
            z: vec![0.0; space.node_count()],
        }
    }
}

/// Result of a Picard solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzSolution {
    pub solution: RbsdeSolution,
    pub trace: PicardTrace,
    pub iterations: usize,
    pub lipschitz: f64,
}

/// Reflected BSDE with a Lipschitz driver, by Picard iteration on the frozen
/// driver `g(t, Y^k_t, Z^k_t)`.
pub fn solve_lipschitz(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    driver: &Driver,
    terminal: &SplitStoppingTime,
    params: &PicardParams,
    start: Option<&PicardStart>,
) -> Result<LipschitzSolution> {
    xi.ensure_on(space)?;
    let lipschitz = driver.validate(space)?;
    let kind = terminal_kind(space, terminal)?;
    check_params(params)?;
    let beta = params.beta_for(lipschitz);
    let zero = PicardStart::zero(space);
    let start = start.unwrap_or(&zero);
    space.check_len(start.y.len())?;
    space.check_len(start.z.len())?;

    let mut trace = PicardTrace::new(beta);
    let (mut y, mut z) = (start.y.clone(), start.z.clone());
    let mut last = f64::INFINITY;
    for k in 1..=params.max_iter {
        let g = driver.values(&y, &z);
        let sol = solve_process_kind(space, xi, &g, kind)?;
        let sup = trace.record(space, sol.y.at_values(), &y, &sol.z, &z);
        y = sol.y.at_values().to_vec();
        z = sol.z.clone();
        last = sup;
        if sup < params.tol || !driver.depends_on_solution() {
            return Ok(LipschitzSolution {
                solution: sol,
                trace,
                iterations: k,
                lipschitz,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: params.max_iter,
        last_increment: last,
    })
}

pub(crate) fn check_params(params: &PicardParams) -> Result<()> {
    if !(params.tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    if params.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "max_iter must be at least 1".into(),
        ));
    }
    if let Some(b) = params.beta {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter("beta must be positive".into()));
        }
    }
    Ok(())
}

/// Ratios from the a priori estimate for two solutions with different drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriReport {
    /// `(||dZ||^2_beta + ||dN||^2_beta) / ||dg||^2_beta`.
    pub r1: f64,
    /// `|||dY|||^2_beta / ||dg||^2_beta`.
    pub r2: f64,
    /// Whether `beta >= 1 / eps^2`.
    pub beta_large_enough: bool,
    /// Whether `r1 <= eps^2`.
    pub r1_within_bound: bool,
}

pub fn apriori_diagnostic(
    space: &FiniteFilteredSpace,
    sol_a: &RbsdeSolution,
    sol_b: &RbsdeSolution,
    beta: f64,
    eps: f64,
) -> Result<AprioriReport> {
    if !(beta > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidParameter(
            "beta and eps must be positive".into(),
        ));
    }
    let shift = space.horizon() - space.dt();
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let norm = |v: &[f64], k| weighted_norm_shifted(space, v, k, beta, shift);
    let dg = norm(&diff(&sol_a.driver, &sol_b.driver), NormKind::H2);
    if !(dg > 0.0) {
        return Err(Error::InvalidParameter("drivers coincide".into()));
    }
    let dz = norm(&diff(&sol_a.z, &sol_b.z), NormKind::H2);
    let dn = norm(&diff(&sol_a.ortho, &sol_b.ortho), NormKind::M2);
    let dy = norm(
        &diff(sol_a.y.at_values(), sol_b.y.at_values()),
        NormKind::S2,
    );
    let r1 = (dz + dn) / dg;
    Ok(AprioriReport {
        r1,
        r2: dy / dg,
        beta_large_enough: beta * eps * eps >= 1.0,
        r1_within_bound: r1 <= eps * eps,
    })
}
