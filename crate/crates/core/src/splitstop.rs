//! Stopping times and split stopping times on an event tree.
//!
//! A split stopping time is a stop set that meets every root-to-leaf path
//! exactly once, together with a subset `H` of the stop set on which the payoff
//! is read from the pre-channel. `H` must be predictable: a non-root node can be
//! in `H` only together with all its siblings.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::probspace::{FiniteFilteredSpace, NodeId};

/// Enumeration cap used when the caller does not supply one.
pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;

/// Defects found while certifying a split stopping time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitTimeViolation {
    /// The path to this leaf meets the stop set zero or several times.
    NotAStoppingTime { leaf: NodeId, hits: usize },
    /// `H` contains a node outside the stop set.
    HOutsideStopSet { node: NodeId },
    /// `H` contains a node but not all of its siblings.
    HNotPredictable { node: NodeId },
}

/// A plain stopping time, given by its stop set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingTime {
    stop: Vec<bool>,
    stop_of_leaf: Vec<NodeId>,
}

impl StoppingTime {
    pub fn new(space: &FiniteFilteredSpace, stop: Vec<bool>) -> Result<Self> {
        space.check_len(stop.len())?;
        let (stop_of_leaf, violations) = resolve_stops(space, &stop);
        if violations.is_empty() {
            Ok(Self { stop, stop_of_leaf })
        } else {
            Err(Error::InvalidSplitTime(violations))
        }
    }

    /// The deterministic time `t`.
    pub fn constant(space: &FiniteFilteredSpace, t: usize) -> Self {
        let stop = (0..space.node_count())
            .map(|n| space.time(n) == t)
            .collect();
        Self::new(space, stop).expect("a constant time is a stopping time")
    }

    pub fn is_stop(&self, n: NodeId) -> bool {
        self.stop[n]
    }

    pub fn stop_node(&self, space: &FiniteFilteredSpace, leaf: NodeId) -> NodeId {
        self.stop_of_leaf[space.leaf_index(leaf)]
    }

    pub fn stop_set(&self) -> &[bool] {
        &self.stop
    }
}

fn resolve_stops(
    space: &FiniteFilteredSpace,
    stop: &[bool],
) -> (Vec<NodeId>, Vec<SplitTimeViolation>) {
    let mut out = Vec::with_capacity(space.leaf_count());
    let mut violations = Vec::new();
    for leaf in space.leaves() {
        let path = space.path_to(leaf);
        let hits: Vec<NodeId> = path.into_iter().filter(|&n| stop[n]).collect();
        if hits.len() != 1 {
            violations.push(SplitTimeViolation::NotAStoppingTime {
                leaf,
                hits: hits.len(),
            });
            out.push(leaf);
        } else {
            out.push(hits[0]);
        }
    }
    (out, violations)
}

/// A certified split stopping time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitStoppingTime {
    stop: Vec<bool>,
    pre: Vec<bool>,
    stop_of_leaf: Vec<NodeId>,
}

/// Certify a (stop set, `H`) pair.
pub fn validate_sst(
    space: &FiniteFilteredSpace,
    stop: Vec<bool>,
    pre: Vec<bool>,
) -> Result<SplitStoppingTime> {
    space.check_len(stop.len())?;
    space.check_len(pre.len())?;
    let (stop_of_leaf, mut violations) = resolve_stops(space, &stop);
    for n in 0..space.node_count() {
        if !pre[n] {
            continue;
        }
        if !stop[n] {
            violations.push(SplitTimeViolation::HOutsideStopSet { node: n });
        }
        if space.siblings(n).any(|s| !pre[s]) {
            violations.push(SplitTimeViolation::HNotPredictable { node: n });
        }
    }
    if violations.is_empty() {
        Ok(SplitStoppingTime {
            stop,
            pre,
            stop_of_leaf,
        })
    } else {
        Err(Error::InvalidSplitTime(violations))
    }
}

/// Which half of a plain stopping time to lift to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftMode {
    /// `(Omega, tau)`: read every payoff just before `tau`.
    Before,
    /// `(empty, tau)`: read every payoff at `tau`.
    At,
}

/// Lift a stopping time to a split stopping time. Lifting to `Before` needs a
/// predictable stop set.
pub fn lift(
    space: &FiniteFilteredSpace,
    tau: &StoppingTime,
    mode: LiftMode,
) -> Result<SplitStoppingTime> {
    let pre = match mode {
        LiftMode::Before => tau.stop.clone(),
        LiftMode::At => vec![false; space.node_count()],
    };
    validate_sst(space, tau.stop.clone(), pre)
}

impl SplitStoppingTime {
    /// `(empty, t)` or `(Omega, t)` for a deterministic time.
    pub fn constant(space: &FiniteFilteredSpace, t: usize, before: bool) -> Self {
        let mode = if before {
            LiftMode::Before
        } else {
            LiftMode::At
        };
        lift(space, &StoppingTime::constant(space, t), mode)
            .expect("constant times are predictable")
    }

    /// Terminal split time `(empty, T)`.
    pub fn terminal_empty(space: &FiniteFilteredSpace) -> Self {
        Self::constant(space, space.steps(), false)
    }

    /// Terminal split time `(Omega, T)`.
    pub fn terminal_omega(space: &FiniteFilteredSpace) -> Self {
        Self::constant(space, space.steps(), true)
    }

    pub fn is_stop(&self, n: NodeId) -> bool {
        self.stop[n]
    }

    pub fn is_pre(&self, n: NodeId) -> bool {
        self.pre[n]
    }

    pub fn stop_set(&self) -> &[bool] {
        &self.stop
    }

    pub fn pre_set(&self) -> &[bool] {
        &self.pre
    }

    pub fn stop_node(&self, space: &FiniteFilteredSpace, leaf: NodeId) -> NodeId {
        self.stop_of_leaf[space.leaf_index(leaf)]
    }

    /// Stopping time on the path to `leaf`.
    pub fn time_on(&self, space: &FiniteFilteredSpace, leaf: NodeId) -> usize {
        space.time(self.stop_node(space, leaf))
    }

    pub fn stopping_time(&self) -> StoppingTime {
        StoppingTime {
            stop: self.stop.clone(),
            stop_of_leaf: self.stop_of_leaf.clone(),
        }
    }

    pub fn ensure_on(&self, space: &FiniteFilteredSpace) -> Result<()> {
        if self.stop.len() == space.node_count() {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }

    /// Atom of `F_rho` containing `leaf`.
    pub fn atom_of_leaf(&self, space: &FiniteFilteredSpace, leaf: NodeId) -> Atom {
        let s = self.stop_node(space, leaf);
        if self.pre[s] {
            Atom::Pre(space.siblings(s).start)
        } else {
            Atom::At(s)
        }
    }

    /// Atoms of `F_rho` in leaf order, without repetition.
    pub fn atoms(&self, space: &FiniteFilteredSpace) -> Vec<Atom> {
        let mut out: Vec<Atom> = Vec::new();
        for leaf in space.leaves() {
            let a = self.atom_of_leaf(space, leaf);
            if out.last() != Some(&a) {
                out.push(a);
            }
        }
        out
    }
}

/// An atom of `F_rho`. Off `H` it is the event of passing through the stop
/// node. On `H` it is the event of passing through a sibling block, identified
/// by the block's first node (the root is its own block).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    At(NodeId),
    Pre(NodeId),
}

impl Atom {
    pub fn node(&self) -> NodeId {
        match *self {
            Atom::At(n) | Atom::Pre(n) => n,
        }
    }

    /// Leaves making up the atom; contiguous because of BFS numbering.
    pub fn leaves(&self, space: &FiniteFilteredSpace) -> core::ops::Range<NodeId> {
        match *self {
            Atom::At(n) => space.leaves_under(n),
            Atom::Pre(n) => match space.parent(n) {
                Some(p) => space.leaves_under(p),
                None => space.leaves(),
            },
        }
    }

    pub fn time(&self, space: &FiniteFilteredSpace) -> usize {
        space.time(self.node())
    }
}

/// `a >= b`: later pathwise, and where both stop together `H_a` is inside `H_b`.
pub fn geq(space: &FiniteFilteredSpace, a: &SplitStoppingTime, b: &SplitStoppingTime) -> bool {
    space.leaves().all(|l| {
        let (sa, sb) = (a.stop_node(space, l), b.stop_node(space, l));
        let (ta, tb) = (space.time(sa), space.time(sb));
        ta > tb || (ta == tb && (!a.pre[sa] || b.pre[sb]))
    })
}

/// `a > b`: strictly later where `b` stops before the horizon, equal where it
/// stops at the horizon, and `H_a` inside `H_b` where they coincide.
pub fn gt(space: &FiniteFilteredSpace, a: &SplitStoppingTime, b: &SplitStoppingTime) -> bool {
    let horizon = space.steps();
    space.leaves().all(|l| {
        let (sa, sb) = (a.stop_node(space, l), b.stop_node(space, l));
        let (ta, tb) = (space.time(sa), space.time(sb));
        if tb < horizon {
            ta > tb
        } else {
            ta == tb && (!a.pre[sa] || b.pre[sb])
        }
    })
}

/// Relation of the first argument to the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitOrder {
    Equal,
    Greater,
    GreaterEqual,
    Less,
    LessEqual,
    Incomparable,
}

pub fn compare(
    space: &FiniteFilteredSpace,
    a: &SplitStoppingTime,
    b: &SplitStoppingTime,
) -> SplitOrder {
    let (ab, ba) = (geq(space, a, b), geq(space, b, a));
    if ab && ba {
        SplitOrder::Equal
    } else if gt(space, a, b) {
        SplitOrder::Greater
    } else if ab {
        SplitOrder::GreaterEqual
    } else if gt(space, b, a) {
        SplitOrder::Less
    } else if ba {
        SplitOrder::LessEqual
    } else {
        SplitOrder::Incomparable
    }
}

/// Whether a leaf-indexed event is a union of atoms of `F_delta`.
pub fn is_measurable(
    space: &FiniteFilteredSpace,
    delta: &SplitStoppingTime,
    event: &[bool],
) -> bool {
    delta.atoms(space).into_iter().all(|a| {
        let mut leaves = a.leaves(space).map(|l| event[space.leaf_index(l)]);
        let first = leaves.next().unwrap_or(false);
        leaves.all(|x| x == first)
    })
}

/// `rho1` on `event`, `rho2` off it. Both must be at least `delta` and the event
/// must be `F_delta`-measurable.
pub fn glue(
    space: &FiniteFilteredSpace,
    delta: &SplitStoppingTime,
    rho1: &SplitStoppingTime,
    rho2: &SplitStoppingTime,
    event: &[bool],
) -> Result<SplitStoppingTime> {
    if event.len() != space.leaf_count() {
        return Err(Error::LengthMismatch {
            expected: space.leaf_count(),
            got: event.len(),
        });
    }
    if !is_measurable(space, delta, event) {
        return Err(Error::NotMeasurable);
    }
    if !geq(space, rho1, delta) || !geq(space, rho2, delta) {
        return Err(Error::NotOrdered);
    }
    let mut stop = vec![false; space.node_count()];
    let mut pre = vec![false; space.node_count()];
    for leaf in space.leaves() {
        let src = if event[space.leaf_index(leaf)] {
            rho1
        } else {
            rho2
        };
        let s = src.stop_node(space, leaf);
        stop[s] = true;
        pre[s] = src.pre[s];
    }
    validate_sst(space, stop, pre)
}

/// Which split stopping times to enumerate.
#[derive(Debug, Clone, Copy)]
pub enum EnumConstraint<'a> {
    /// Everything below the terminal split time.
    All,
    /// Those `>= delta`.
    AtLeast(&'a SplitStoppingTime),
    /// Those `> delta`.
    After(&'a SplitStoppingTime),
}

/// Upper bound on the number of split stopping times (ignoring the terminal
/// constraint), saturating.
pub fn count_split_times(space: &FiniteFilteredSpace) -> u128 {
    let mut cont = vec![0u128; space.node_count()];
    for n in (0..space.node_count()).rev() {
        if !space.is_leaf(n) {
            let prod = space
                .children(n)
                .fold(1u128, |acc, c| acc.saturating_mul(1 + cont[c]));
            cont[n] = prod.saturating_add(1);
        }
    }
    cont[0].saturating_add(2)
}

/// Whether `rho <= terminal`, i.e. `rho` belongs to the admissible family.
pub fn below_terminal(
    space: &FiniteFilteredSpace,
    rho: &SplitStoppingTime,
    terminal: &SplitStoppingTime,
) -> bool {
    geq(space, terminal, rho)
}

/// All split stopping times `<= terminal` satisfying `constraint`, ordered
/// lexicographically by (stop-set bitmask, `H` bitmask), node `i` being bit `i`.
pub fn enumerate(
    space: &FiniteFilteredSpace,
    terminal: &SplitStoppingTime,
    constraint: EnumConstraint<'_>,
    cap: u128,
) -> Result<Vec<SplitStoppingTime>> {
    terminal.ensure_on(space)?;
    if space.leaves().any(|l| terminal.stop_node(space, l) != l) {
        return Err(Error::InvalidParameter(
            "terminal split time must stop at the horizon".into(),
        ));
    }
    let count = count_split_times(space);
    if count > cap {
        return Err(Error::EnumerationCapExceeded { count, cap });
    }
    let mut stop_sets: Vec<Vec<bool>> = Vec::new();
    let mut current = vec![false; space.node_count()];
    stop_sets_rec(space, &[0], 0, &mut current, &mut stop_sets);

    let mut out = Vec::new();
    for stop in stop_sets {
        let mut blocks: Vec<NodeId> = Vec::new();
        for n in 0..space.node_count() {
            if stop[n] {
                let block = space.siblings(n);
                if block.start == n && block.clone().all(|s| stop[s]) {
                    blocks.push(n);
                }
            }
        }
        if blocks.len() >= 64 {
            return Err(Error::EnumerationCapExceeded { count, cap });
        }
        for mask in 0u64..(1u64 << blocks.len()) {
            let mut pre = vec![false; space.node_count()];
            for (i, &b) in blocks.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    for s in space.siblings(b) {
                        pre[s] = true;
                    }
                }
            }
            let rho = validate_sst(space, stop.clone(), pre)?;
            if !below_terminal(space, &rho, terminal) {
                continue;
            }
            let keep = match constraint {
                EnumConstraint::All => true,
                EnumConstraint::AtLeast(d) => geq(space, &rho, d),
                EnumConstraint::After(d) => gt(space, &rho, d),
            };
            if keep {
                out.push(rho);
            }
        }
    }
    out.sort_by(|a, b| cmp_mask(&a.stop, &b.stop).then_with(|| cmp_mask(&a.pre, &b.pre)));
    Ok(out)
}

/// Every way of placing stops in the subtrees rooted at `frontier[i..]`.
fn stop_sets_rec(
    space: &FiniteFilteredSpace,
    frontier: &[NodeId],
    i: usize,
    current: &mut Vec<bool>,
    out: &mut Vec<Vec<bool>>,
) {
    if i == frontier.len() {
        out.push(current.clone());
        return;
    }
    let n = frontier[i];
    current[n] = true;
    stop_sets_rec(space, frontier, i + 1, current, out);
    current[n] = false;
    if !space.is_leaf(n) {
        // Continue past n: its children join the frontier.
        let mut extended: Vec<NodeId> = frontier[i + 1..].to_vec();
        extended.extend(space.children(n));
        stop_sets_rec(space, &extended, 0, current, out);
    }
}

fn cmp_mask(a: &[bool], b: &[bool]) -> Ordering {
    for i in (0..a.len()).rev() {
        match a[i].cmp(&b[i]) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probspace::{build_space, TreeSpec};

    fn binomial(n: usize) -> FiniteFilteredSpace {
        build_space(n, 1.0, &TreeSpec::Binomial).unwrap()
    }

    #[test]
    fn four_split_times_on_one_step() {
        let s = binomial(1);
        let t = SplitStoppingTime::terminal_empty(&s);
        let all = enumerate(&s, &t, EnumConstraint::All, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(count_split_times(&s), 4);
        let omega = SplitStoppingTime::terminal_omega(&s);
        assert_eq!(
            enumerate(&s, &omega, EnumConstraint::All, DEFAULT_ENUM_CAP)
                .unwrap()
                .len(),
            3
        );
        // ordering: root stop first, then the time-one stops
        assert!(all[0].is_stop(0) && !all[0].is_pre(0));
        assert!(all[1].is_stop(0) && all[1].is_pre(0));
        assert!(all[2].is_stop(1) && !all[2].is_pre(1));
        assert!(all[3].is_stop(1) && all[3].is_pre(1));
    }

    #[test]
    fn counts_match_enumeration() {
        for n in 1..=3 {
            let s = binomial(n);
            let t = SplitStoppingTime::terminal_empty(&s);
            let all = enumerate(&s, &t, EnumConstraint::All, DEFAULT_ENUM_CAP).unwrap();
            assert_eq!(all.len() as u128, count_split_times(&s));
        }
    }

    #[test]
    fn cap_is_enforced() {
        let s = binomial(3);
        let t = SplitStoppingTime::terminal_empty(&s);
        assert!(matches!(
            enumerate(&s, &t, EnumConstraint::All, 10),
            Err(Error::EnumerationCapExceeded { .. })
        ));
    }

    #[test]
    fn comparisons() {
        let s = binomial(1);
        let d0 = SplitStoppingTime::constant(&s, 0, false);
        let e1 = SplitStoppingTime::constant(&s, 1, false);
        let o1 = SplitStoppingTime::constant(&s, 1, true);
        assert_eq!(compare(&s, &e1, &d0), SplitOrder::Greater);
        assert_eq!(compare(&s, &d0, &e1), SplitOrder::Less);
        assert_eq!(compare(&s, &e1, &o1), SplitOrder::Greater);
        assert_eq!(compare(&s, &o1, &e1), SplitOrder::Less);
        assert!(geq(&s, &e1, &o1));
        assert!(!geq(&s, &o1, &e1));
        assert_eq!(compare(&s, &e1, &e1), SplitOrder::Equal);
    }

    #[test]
    fn invalid_split_times() {
        let s = binomial(1);
        let err = validate_sst(&s, vec![true, true, false], vec![false; 3]).unwrap_err();
        assert!(
            matches!(err, Error::InvalidSplitTime(v) if matches!(v[0], SplitTimeViolation::NotAStoppingTime { .. }))
        );
        let err = validate_sst(&s, vec![false, true, true], vec![false, true, false]).unwrap_err();
        assert!(
            matches!(err, Error::InvalidSplitTime(v) if v.contains(&SplitTimeViolation::HNotPredictable { node: 1 }))
        );
        let err = validate_sst(&s, vec![true, false, false], vec![false, true, true]).unwrap_err();
        assert!(
            matches!(err, Error::InvalidSplitTime(v) if v.contains(&SplitTimeViolation::HOutsideStopSet { node: 1 }))
        );
        let tau = StoppingTime::new(&s, vec![false, true, true]).unwrap();
        assert!(lift(&s, &tau, LiftMode::Before).is_ok());
    }

    #[test]
    fn atoms_of_split_times() {
        let s = binomial(2);
        let o1 = SplitStoppingTime::constant(&s, 1, true);
        assert_eq!(o1.atoms(&s), vec![Atom::Pre(1)]);
        let e1 = SplitStoppingTime::constant(&s, 1, false);
        assert_eq!(e1.atoms(&s), vec![Atom::At(1), Atom::At(2)]);
        let r = SplitStoppingTime::constant(&s, 0, true);
        assert_eq!(r.atoms(&s), vec![Atom::Pre(0)]);
        assert_eq!(Atom::Pre(3).leaves(&s), 3..5);
    }

    #[test]
    fn glue_rejects_unmeasurable_events() {
        let s = binomial(1);
        let d = SplitStoppingTime::constant(&s, 0, false);
        let e1 = SplitStoppingTime::constant(&s, 1, false);
        let o1 = SplitStoppingTime::constant(&s, 1, true);
        assert_eq!(
            glue(&s, &d, &e1, &o1, &[true, false]).unwrap_err(),
            Error::NotMeasurable
        );
        let d1 = SplitStoppingTime::constant(&s, 1, false);
        let g = glue(&s, &d1, &e1, &e1, &[true, false]).unwrap();
        assert_eq!(g, e1);
    }
}
