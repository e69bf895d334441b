//! Value families over split stopping times, their aggregation by backward
//! recursion, the Mertens decomposition and related checks.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::laglad::{eval_at_split, LadlagProcess};
use crate::probspace::{FiniteFilteredSpace, NodeId};
use crate::splitstop::{enumerate, Atom, EnumConstraint, SplitStoppingTime, StoppingTime};

/// Slack allowed for negative compensator increments caused by rounding.
pub const SUPERMARTINGALE_TOL: f64 = 1e-9;

/// The aggregated value process and its right limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueProcesses {
    /// `v_t` on the at-channel and `v_{t-}` on the pre-channel.
    pub v: LadlagProcess,
    /// `v_t^+`, the value when stopping strictly after `t`.
    pub vplus: Vec<f64>,
}

/// Which of the two supported terminal split times is in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalKind {
    Empty,
    Omega,
}

/// Classify a terminal split time; anything other than `(empty, T)` or
/// `(Omega, T)` is unsupported by the recursion.
pub fn terminal_kind(
    space: &FiniteFilteredSpace,
    terminal: &SplitStoppingTime,
) -> Result<TerminalKind> {
    terminal.ensure_on(space)?;
    if space.leaves().any(|l| terminal.stop_node(space, l) != l) {
        return Err(Error::UnsupportedTerminal);
    }
    let pre: Vec<bool> = space.leaves().map(|l| terminal.is_pre(l)).collect();
    if pre.iter().all(|&p| !p) {
        Ok(TerminalKind::Empty)
    } else if pre.iter().all(|&p| p) {
        Ok(TerminalKind::Omega)
    } else {
        Err(Error::UnsupportedTerminal)
    }
}

/// Backward recursion for the value process of `xi`.
pub fn snell_backward(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    terminal: &SplitStoppingTime,
) -> Result<ValueProcesses> {
    xi.ensure_on(space)?;
    let kind = terminal_kind(space, terminal)?;
    Ok(snell_backward_kind(space, xi, kind))
}

pub(crate) fn snell_backward_kind(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    kind: TerminalKind,
) -> ValueProcesses {
    let nn = space.node_count();
    let mut at = vec![0.0; nn];
    let mut pre = vec![0.0; nn];
    let mut vplus = vec![0.0; nn];
    for l in space.leaves() {
        at[l] = match kind {
            TerminalKind::Empty => xi.at(l),
            TerminalKind::Omega => xi.pre(l),
        };
        vplus[l] = at[l];
    }
    for t in (0..space.steps()).rev() {
        for n in space.nodes_at(t) {
            let kids = space.children(n);
            let ce: f64 = kids.clone().map(|c| space.prob(c) * at[c]).sum();
            let vm = xi.pre(kids.start).max(ce);
            for c in kids {
                pre[c] = vm;
            }
            vplus[n] = vm;
            at[n] = xi.at(n).max(vm);
        }
    }
    pre[0] = at[0];
    ValueProcesses {
        v: LadlagProcess::from_parts(pre, at),
        vplus,
    }
}

impl ValueProcesses {
    /// `v(delta)` atom by atom: the pre-value on `G`, the at-value elsewhere.
    pub fn value_at(
        &self,
        space: &FiniteFilteredSpace,
        delta: &SplitStoppingTime,
    ) -> Vec<(Atom, f64)> {
        delta
            .atoms(space)
            .into_iter()
            .map(|a| {
                let x = match a {
                    Atom::At(n) => self.v.at(n),
                    Atom::Pre(n) => self.v.pre(n),
                };
                (a, x)
            })
            .collect()
    }

    /// Strict value `v^+(delta)` atom by atom.
    ///
    /// Off `G` this is `v^+` at the stop node. On a block of `G` strictly before
    /// the horizon it is the conditional mean of `v^+` over the block; on a
    /// terminal block it is `v_{T-}`.
    pub fn strict_value_at(
        &self,
        space: &FiniteFilteredSpace,
        delta: &SplitStoppingTime,
    ) -> Vec<(Atom, f64)> {
        delta
            .atoms(space)
            .into_iter()
            .map(|a| {
                let x = match a {
                    Atom::At(n) => self.vplus[n],
                    Atom::Pre(n) => match space.parent(n) {
                        None => self.vplus[n],
                        Some(_) if space.time(n) == space.steps() => self.v.pre(n),
                        Some(p) => space.cond_exp_at(p, &self.vplus),
                    },
                };
                (a, x)
            })
            .collect()
    }
}

fn atom_mean(space: &FiniteFilteredSpace, atom: Atom, payoff: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for l in atom.leaves(space) {
        let p = space.path_prob(l);
        num += p * payoff[space.leaf_index(l)];
        den += p;
    }
    num / den
}

/// Value of `xi` at `delta` by exhaustive search over `S_delta`: for every atom
/// of `F_delta`, the largest conditional mean of `X_rho` over `rho >= delta`.
pub fn value_brute(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    delta: &SplitStoppingTime,
    terminal: &SplitStoppingTime,
    cap: u128,
) -> Result<Vec<(Atom, f64)>> {
    brute_over(
        space,
        xi,
        delta,
        terminal,
        EnumConstraint::AtLeast(delta),
        cap,
    )
}

/// Strict value of `xi` at `delta` by exhaustive search over `rho > delta`.
pub fn strict_value_brute(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    delta: &SplitStoppingTime,
    terminal: &SplitStoppingTime,
    cap: u128,
) -> Result<Vec<(Atom, f64)>> {
    brute_over(
        space,
        xi,
        delta,
        terminal,
        EnumConstraint::After(delta),
        cap,
    )
}

fn brute_over(
    space: &FiniteFilteredSpace,
    xi: &LadlagProcess,
    delta: &SplitStoppingTime,
    terminal: &SplitStoppingTime,
    constraint: EnumConstraint<'_>,
    cap: u128,
) -> Result<Vec<(Atom, f64)>> {
    xi.ensure_on(space)?;
    delta.ensure_on(space)?;
    let family = enumerate(space, terminal, constraint, cap)?;
    let atoms = delta.atoms(space);
    let mut best = vec![f64::NEG_INFINITY; atoms.len()];
    for rho in &family {
        let payoff = eval_at_split(space, xi, rho)?;
        for (i, &a) in atoms.iter().enumerate() {
            best[i] = best[i].max(atom_mean(space, a, &payoff));
        }
    }
    Ok(atoms.into_iter().zip(best).collect())
}

/// Exhaustive-search values with per-atom caching, for sweeping many `delta`.
///
/// Both the ordering constraints and the conditional means are local to an atom
/// of `F_delta`, and admissible choices on different atoms can be glued, so the
/// value on an atom only depends on the atom and whether `delta` reads the pre
/// or the at value there. The maxima are still taken over the full enumeration.
pub struct BruteForceOracle<'a> {
    space: &'a FiniteFilteredSpace,
    family: Vec<SplitStoppingTime>,
    payoffs: Vec<Vec<f64>>,
    cache: BTreeMap<(Atom, bool), f64>,
}

impl<'a> BruteForceOracle<'a> {
    pub fn new(
        space: &'a FiniteFilteredSpace,
        xi: &LadlagProcess,
        terminal: &SplitStoppingTime,
        cap: u128,
    ) -> Result<Self> {
        xi.ensure_on(space)?;
        let family = enumerate(space, terminal, EnumConstraint::All, cap)?;
        let payoffs = family
            .iter()
            .map(|rho| eval_at_split(space, xi, rho))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space,
            family,
            payoffs,
            cache: BTreeMap::new(),
        })
    }

    /// The enumerated admissible family in enumeration order.
    pub fn family(&self) -> &[SplitStoppingTime] {
        &self.family
    }

    pub fn payoff(&self, i: usize) -> &[f64] {
        &self.payoffs[i]
    }

    pub fn value(&mut self, delta: &SplitStoppingTime) -> Vec<(Atom, f64)> {
        self.values(delta, false)
    }

    pub fn strict_value(&mut self, delta: &SplitStoppingTime) -> Vec<(Atom, f64)> {
        self.values(delta, true)
    }

    fn values(&mut self, delta: &SplitStoppingTime, strict: bool) -> Vec<(Atom, f64)> {
        delta
            .atoms(self.space)
            .into_iter()
            .map(|a| (a, self.atom_value(a, strict)))
            .collect()
    }

    fn atom_value(&mut self, atom: Atom, strict: bool) -> f64 {
        if let Some(&v) = self.cache.get(&(atom, strict)) {
            return v;
        }
        let space = self.space;
        let t = atom.time(space);
        let horizon = space.steps();
        let mut best = f64::NEG_INFINITY;
        for (rho, payoff) in self.family.iter().zip(&self.payoffs) {
            let admissible = atom.leaves(space).all(|l| {
                let s = rho.stop_node(space, l);
                let ts = space.time(s);
                match atom {
                    Atom::At(n) => {
                        if strict && t < horizon {
                            ts > t
                        } else {
                            ts >= t && (s != n || !rho.is_pre(s))
                        }
                    }
                    Atom::Pre(_) => {
                        if strict && t < horizon {
                            ts > t
                        } else {
                            ts >= t
                        }
                    }
                }
            });
            if admissible {
                best = best.max(atom_mean(space, atom, payoff));
            }
        }
        self.cache.insert((atom, strict), best);
        best
    }

    /// Earliest split time in enumeration order that attains the value at
    /// `(empty, 0)` within `tol`.
    pub fn optimal_from_root(&mut self, tol: f64) -> Option<&SplitStoppingTime> {
        let target = self.atom_value(Atom::At(0), false);
        let space = self.space;
        self.family
            .iter()
            .zip(&self.payoffs)
            .find(|(rho, payoff)| !rho.is_pre(0) && space.expectation(payoff) >= target - tol)
            .map(|(rho, _)| rho)
    }
}

/// Mertens decomposition `X = X_0 + M - A - B_-` with cumulative values stored
/// per node. `a[n]` includes the predictable jump at the time of `n`; `b[n]`
/// includes the right jump at `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MertensDecomposition {
    pub m: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl MertensDecomposition {
    /// Assemble from increments: `dm` must be conditionally centred, `da` must
    /// agree across siblings, and both compensators must be nonnegative.
    pub fn from_increments(
        space: &FiniteFilteredSpace,
        dm: &[f64],
        da: &[f64],
        db: &[f64],
    ) -> Result<Self> {
        space.check_len(dm.len())?;
        space.check_len(da.len())?;
        space.check_len(db.len())?;
        let nn = space.node_count();
        for n in 0..nn {
            if db[n] < -SUPERMARTINGALE_TOL {
                return Err(Error::NotASupermartingale {
                    node: n,
                    deviation: db[n],
                });
            }
            if n != 0 && da[n] < -SUPERMARTINGALE_TOL {
                return Err(Error::NotASupermartingale {
                    node: n,
                    deviation: da[n],
                });
            }
            if !space.is_leaf(n) {
                let mean = space.cond_exp_at(n, dm);
                if mean.abs() > SUPERMARTINGALE_TOL {
                    return Err(Error::NotAMartingale {
                        node: n,
                        deviation: mean,
                    });
                }
                let first = space.children(n).start;
                if space
                    .children(n)
                    .any(|c| (da[c] - da[first]).abs() > SUPERMARTINGALE_TOL)
                {
                    return Err(Error::PreNotPredictable { parent: n });
                }
            }
        }
        let (mut m, mut a, mut b) = (vec![0.0; nn], vec![0.0; nn], vec![0.0; nn]);
        b[0] = db[0];
        for n in 1..nn {
            let p = space.parent(n).expect("non-root");
            m[n] = m[p] + dm[n];
            a[n] = a[p] + da[n];
            b[n] = b[p] + db[n];
        }
        Ok(Self { m, a, b })
    }

    pub fn delta_m(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        space.parent(n).map_or(0.0, |p| self.m[n] - self.m[p])
    }

    pub fn delta_a(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        space.parent(n).map_or(0.0, |p| self.a[n] - self.a[p])
    }

    pub fn delta_b(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        self.b[n] - self.b_before(space, n)
    }

    /// `B_{t-}`, the right-jump compensator before the time of `n`.
    pub fn b_before(&self, space: &FiniteFilteredSpace, n: NodeId) -> f64 {
        space.parent(n).map_or(0.0, |p| self.b[p])
    }

    /// Rebuild `X` from `X_0` and the decomposition.
    pub fn reconstruct(&self, space: &FiniteFilteredSpace, x0: f64) -> LadlagProcess {
        let at: Vec<f64> = (0..space.node_count())
            .map(|n| x0 + self.m[n] - self.a[n] - self.b_before(space, n))
            .collect();
        let pre = (0..space.node_count())
            .map(|n| match space.parent(n) {
                Some(p) => x0 + self.m[p] - self.a[p] - self.b[p],
                None => at[n],
            })
            .collect();
        LadlagProcess::from_parts(pre, at)
    }
}

/// Right limit of a process on the grid: the pre-value at the next time, or
/// the value itself at the horizon.
pub fn right_limits(space: &FiniteFilteredSpace, x: &LadlagProcess) -> Vec<f64> {
    (0..space.node_count())
        .map(|n| match space.children(n).next() {
            Some(c) => x.pre(c),
            None => x.at(n),
        })
        .collect()
}

/// Mertens decomposition of a strong supermartingale.
pub fn mertens_decompose(
    space: &FiniteFilteredSpace,
    x: &LadlagProcess,
) -> Result<MertensDecomposition> {
    x.ensure_on(space)?;
    let nn = space.node_count();
    let xplus = right_limits(space, x);
    let mut dm = vec![0.0; nn];
    let mut da = vec![0.0; nn];
    let mut db = vec![0.0; nn];
    for n in 0..nn {
        db[n] = x.at(n) - xplus[n];
        if db[n] < -SUPERMARTINGALE_TOL {
            return Err(Error::NotASupermartingale {
                node: n,
                deviation: db[n],
            });
        }
        db[n] = db[n].max(0.0);
        if space.is_leaf(n) {
            continue;
        }
        let ce = space.cond_exp_at(n, x.at_values());
        let jump = xplus[n] - ce;
        if jump < -SUPERMARTINGALE_TOL {
            return Err(Error::NotASupermartingale {
                node: n,
                deviation: jump,
            });
        }
        for c in space.children(n) {
            da[c] = jump.max(0.0);
            dm[c] = x.at(c) - ce;
        }
    }
    let mut dec = MertensDecomposition {
        m: vec![0.0; nn],
        a: vec![0.0; nn],
        b: vec![0.0; nn],
    };
    dec.b[0] = db[0];
    for n in 1..nn {
        let p = space.parent(n).expect("non-root");
        dec.m[n] = dec.m[p] + dm[n];
        dec.a[n] = dec.a[p] + da[n];
        dec.b[n] = dec.b[p] + db[n];
    }
    Ok(dec)
}

/// Largest violations of the minimality conditions on the compensators.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SkorokhodReport {
    /// `max |(X_t - xi_t) dB_t|`.
    pub right_jumps: f64,
    /// `max |(X_{t-} - xi_{t-}) dA_t|`.
    pub predictable_jumps: f64,
}

impl SkorokhodReport {
    pub fn max(&self) -> f64 {
        self.right_jumps.max(self.predictable_jumps)
    }
}

pub fn skorokhod_report(
    space: &FiniteFilteredSpace,
    x: &LadlagProcess,
    xi: &LadlagProcess,
    dec: &MertensDecomposition,
) -> SkorokhodReport {
    let mut r = SkorokhodReport::default();
    for n in 0..space.node_count() {
        let b = ((x.at(n) - xi.at(n)) * dec.delta_b(space, n)).abs();
        r.right_jumps = r.right_jumps.max(b);
        if n != 0 {
            let a = ((x.pre(n) - xi.pre(n)) * dec.delta_a(space, n)).abs();
            r.predictable_jumps = r.predictable_jumps.max(a);
        }
    }
    r
}

/// Outcome of [`martingale_interval_check`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntervalReport {
    /// Largest deviation from the martingale property on the interval.
    pub max_deviation: f64,
    /// Number of grid points where a check was made.
    pub checked: usize,
}

impl IntervalReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_deviation <= tol
    }
}

/// Check that the value process is a martingale between `theta` and the first
/// grid point (pre-points included) at which `lambda * v <= xi`.
pub fn martingale_interval_check(
    space: &FiniteFilteredSpace,
    vp: &ValueProcesses,
    xi: &LadlagProcess,
    theta: &StoppingTime,
    lambda: f64,
) -> Result<IntervalReport> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    xi.ensure_on(space)?;
    vp.v.ensure_on(space)?;
    for n in 0..space.node_count() {
        for value in [xi.pre(n), xi.at(n)] {
            if value < 0.0 {
                return Err(Error::NegativeObstacle { node: n, value });
            }
        }
    }
    let mut report = IntervalReport::default();
    let mut stack: Vec<NodeId> = (0..space.node_count())
        .filter(|&n| theta.is_stop(n))
        .collect();
    while let Some(n) = stack.pop() {
        if lambda * vp.v.at(n) <= xi.at(n) {
            continue;
        }
        report.checked += 1;
        report.max_deviation = report.max_deviation.max((vp.v.at(n) - vp.vplus[n]).abs());
        let mut kids = space.children(n);
        let Some(first) = kids.next() else { continue };
        if lambda * vp.v.pre(first) <= xi.pre(first) {
            continue;
        }
        let ce = space.cond_exp_at(n, vp.v.at_values());
        report.checked += 1;
        report.max_deviation = report.max_deviation.max((ce - vp.v.pre(first)).abs());
        stack.extend(space.children(n));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laglad::make_process;
    use crate::probspace::{build_space, TreeSpec};
    use crate::splitstop::DEFAULT_ENUM_CAP;

    fn worked() -> (FiniteFilteredSpace, LadlagProcess) {
        let s = build_space(2, 1.0, &TreeSpec::Binomial).unwrap();
        let at = vec![1.0, 2.0, 0.0, 3.0, 1.0, 1.0, 0.0];
        let pre = vec![1.0, 5.0, 5.0, 0.0, 0.0, 0.0, 0.0];
        let xi = make_process(&s, pre, at).unwrap();
        (s, xi)
    }

    #[test]
    fn worked_tree_values() {
        let (s, xi) = worked();
        let term = SplitStoppingTime::terminal_empty(&s);
        let vp = snell_backward(&s, &xi, &term).unwrap();
        assert_eq!(vp.v.at(0), 5.0);
        assert_eq!(vp.v.at(1), 2.0);
        assert_eq!(vp.v.at(2), 0.5);
        assert_eq!(vp.v.pre(1), 5.0);
        let mut oracle = BruteForceOracle::new(&s, &xi, &term, DEFAULT_ENUM_CAP).unwrap();
        let best = oracle.optimal_from_root(1e-12).unwrap().clone();
        assert_eq!(best, SplitStoppingTime::constant(&s, 1, true));
    }

    #[test]
    fn oracle_matches_literal_search() {
        let (s, xi) = worked();
        let term = SplitStoppingTime::terminal_empty(&s);
        let mut oracle = BruteForceOracle::new(&s, &xi, &term, DEFAULT_ENUM_CAP).unwrap();
        let family: Vec<_> = oracle.family().to_vec();
        for d in &family {
            let lit = value_brute(&s, &xi, d, &term, DEFAULT_ENUM_CAP).unwrap();
            assert_eq!(oracle.value(d), lit);
            let lit = strict_value_brute(&s, &xi, d, &term, DEFAULT_ENUM_CAP).unwrap();
            assert_eq!(oracle.strict_value(d), lit);
        }
    }

    #[test]
    fn unsupported_terminal() {
        let (s, xi) = worked();
        let pre = vec![false, false, false, true, true, false, false];
        let stop = vec![false, false, false, true, true, true, true];
        let t = crate::splitstop::validate_sst(&s, stop, pre).unwrap();
        assert_eq!(
            snell_backward(&s, &xi, &t).unwrap_err(),
            Error::UnsupportedTerminal
        );
    }

    #[test]
    fn lambda_range() {
        let (s, xi) = worked();
        let vp = snell_backward(&s, &xi, &SplitStoppingTime::terminal_empty(&s)).unwrap();
        let theta = StoppingTime::constant(&s, 0);
        for l in [0.0, 1.0, -0.5, 1.5] {
            assert_eq!(
                martingale_interval_check(&s, &vp, &xi, &theta, l).unwrap_err(),
                Error::LambdaOutOfRange(l)
            );
        }
        assert!(martingale_interval_check(&s, &vp, &xi, &theta, 0.5)
            .unwrap()
            .holds(1e-12));
    }

    #[test]
    fn decomposition_rejects_submartingale() {
        let s = build_space(1, 1.0, &TreeSpec::Binomial).unwrap();
        let x = make_process(&s, vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            mertens_decompose(&s, &x),
            Err(Error::NotASupermartingale { .. })
        ));
    }
}
