//! Finite filtered probability spaces represented as event trees.
//!
//! Nodes are numbered in breadth-first order, so the nodes at time `t` form a
//! contiguous range and so do the descendants of any node at any later time.
//! The atoms of `F_t` are the nodes at time `t`; a random variable on `Omega`
//! is a vector indexed by leaf.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Above this many nodes the tree is rejected instead of allocated.
pub const MAX_NODES: usize = 10_000_000;

/// Absolute tolerance used when validating probabilities and noise.
pub const SPACE_TOL: f64 = 1e-12;

/// One branch out of a node: transition probability and noise increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub probability: f64,
    pub noise: f64,
}

impl Transition {
    pub fn new(probability: f64, noise: f64) -> Self {
        Self { probability, noise }
    }
}

/// How to grow the tree.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeSpec {
    /// Two equally likely branches with noise `+sqrt(dt)` and `-sqrt(dt)`.
    Binomial,
    /// The same transitions out of every non-terminal node. Noise is taken literally.
    Uniform(Vec<Transition>),
    /// One transition list per non-terminal node, in breadth-first order.
    Explicit(Vec<Vec<Transition>>),
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    time: usize,
    parent: Option<NodeId>,
    first_child: NodeId,
    child_count: usize,
    prob: f64,
    dw: f64,
    path_prob: f64,
}

/// Defects found by [`validate_space`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceViolation {
    #[error("node {node} has non-positive transition probability {probability}")]
    NonPositiveProbability { node: NodeId, probability: f64 },
    #[error("children of node {node} have probabilities summing to {sum}")]
    ProbabilitySumMismatch { node: NodeId, sum: f64 },
    #[error("noise out of node {node} has conditional mean {mean}")]
    NoiseNotCentered { node: NodeId, mean: f64 },
    #[error("node {node} is a leaf before the horizon")]
    EarlyLeaf { node: NodeId },
}

/// Result of [`validate_space`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpaceReport {
    pub violations: Vec<SpaceViolation>,
}

impl SpaceReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A finite event tree with transition probabilities and a scalar noise increment
/// on every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteFilteredSpace {
    steps: usize,
    dt: f64,
    nodes: Vec<Node>,
    level_start: Vec<usize>,
}

/// Build and validate a space.
pub fn build_space(steps: usize, dt: f64, tree: &TreeSpec) -> Result<FiniteFilteredSpace> {
    let space = build_space_unchecked(steps, dt, tree)?;
    let report = validate_space(&space);
    match report.violations.into_iter().next() {
        Some(v) => Err(Error::Space(v)),
        None => Ok(space),
    }
}

/// Build a space without checking probabilities or noise. Structural problems
/// (wrong number of explicit entries, empty branch lists) are still errors.
pub fn build_space_unchecked(
    steps: usize,
    dt: f64,
    tree: &TreeSpec,
) -> Result<FiniteFilteredSpace> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidTimeStep(dt));
    }
    let sqrt_dt = libm::sqrt(dt);
    let binomial = [
        Transition::new(0.5, sqrt_dt),
        Transition::new(0.5, -sqrt_dt),
    ];

    let mut nodes = alloc::vec![Node {
        time: 0,
        parent: None,
        first_child: 0,
        child_count: 0,
        prob: 1.0,
        dw: 0.0,
        path_prob: 1.0,
    }];
    let mut level_start = alloc::vec![0usize, 1];
    let mut explicit_used = 0usize;

    for t in 0..steps {
        let (lo, hi) = (level_start[t], level_start[t + 1]);
        for parent in lo..hi {
            let branches: &[Transition] = match tree {
                TreeSpec::Binomial => &binomial,
                TreeSpec::Uniform(list) => list,
                TreeSpec::Explicit(all) => {
                    let entry = all.get(explicit_used).ok_or_else(|| {
                        Error::MalformedTree(format!(
                            "explicit tree lists {} branchings but node {parent} needs one",
                            all.len()
                        ))
                    })?;
                    explicit_used += 1;
                    entry
                }
            };
            if branches.is_empty() {
                return Err(Error::MalformedTree(format!(
                    "node {parent} has no children"
                )));
            }
            if nodes.len() + branches.len() > MAX_NODES {
                return Err(Error::MalformedTree(format!(
                    "tree exceeds {MAX_NODES} nodes"
                )));
            }
            let first = nodes.len();
            let parent_path = nodes[parent].path_prob;
            nodes[parent].first_child = first;
            nodes[parent].child_count = branches.len();
            for b in branches {
                nodes.push(Node {
                    time: t + 1,
                    parent: Some(parent),
                    first_child: 0,
                    child_count: 0,
                    prob: b.probability,
                    dw: b.noise,
                    path_prob: parent_path * b.probability,
                });
            }
        }
        level_start.push(nodes.len());
    }
    if let TreeSpec::Explicit(all) = tree {
        if explicit_used != all.len() {
            return Err(Error::MalformedTree(format!(
                "explicit tree lists {} branchings, expected {explicit_used}",
                all.len()
            )));
        }
    }
    Ok(FiniteFilteredSpace {
        steps,
        dt,
        nodes,
        level_start,
    })
}

/// Check positivity, normalisation and centring of every transition.
pub fn validate_space(space: &FiniteFilteredSpace) -> SpaceReport {
    let mut violations = Vec::new();
    for n in 0..space.node_count() {
        if n != 0 {
            let p = space.nodes[n].prob;
            if !(p > 0.0 && p.is_finite()) {
                violations.push(SpaceViolation::NonPositiveProbability {
                    node: n,
                    probability: p,
                });
            }
        }
        if space.is_leaf(n) {
            if space.time(n) != space.steps {
                violations.push(SpaceViolation::EarlyLeaf { node: n });
            }
            continue;
        }
        let sum: f64 = space.children(n).map(|c| space.nodes[c].prob).sum();
        if !((sum - 1.0).abs() <= SPACE_TOL) {
            violations.push(SpaceViolation::ProbabilitySumMismatch { node: n, sum });
        }
        let mean: f64 = space
            .children(n)
            .map(|c| space.nodes[c].prob * space.nodes[c].dw)
            .sum();
        if !(mean.abs() <= SPACE_TOL) {
            violations.push(SpaceViolation::NoiseNotCentered { node: n, mean });
        }
    }
    SpaceReport { violations }
}

impl FiniteFilteredSpace {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Physical horizon `steps * dt`.
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    /// Nodes at time `t`, i.e. the atoms of `F_t`.
    pub fn nodes_at(&self, t: usize) -> Range<NodeId> {
        self.level_start[t]..self.level_start[t + 1]
    }

    pub fn leaves(&self) -> Range<NodeId> {
        self.nodes_at(self.steps)
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    /// Position of a leaf inside [`Self::leaves`].
    pub fn leaf_index(&self, leaf: NodeId) -> usize {
        leaf - self.level_start[self.steps]
    }

    pub fn time(&self, n: NodeId) -> usize {
        self.nodes[n].time
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.nodes[n].parent
    }

    pub fn children(&self, n: NodeId) -> Range<NodeId> {
        let node = &self.nodes[n];
        node.first_child..node.first_child + node.child_count
    }

    /// Siblings of `n`, including `n` itself. The root is its own block.
    pub fn siblings(&self, n: NodeId) -> Range<NodeId> {
        match self.parent(n) {
            Some(p) => self.children(p),
            None => n..n + 1,
        }
    }

    pub fn is_leaf(&self, n: NodeId) -> bool {
        self.nodes[n].child_count == 0
    }

    /// Transition probability from the parent (1 at the root).
    pub fn prob(&self, n: NodeId) -> f64 {
        self.nodes[n].prob
    }

    /// Noise increment on the edge into `n` (0 at the root).
    pub fn dw(&self, n: NodeId) -> f64 {
        self.nodes[n].dw
    }

    /// Unconditional probability of reaching `n`.
    pub fn path_prob(&self, n: NodeId) -> f64 {
        self.nodes[n].path_prob
    }

    /// Ancestor of `n` at time `t <= time(n)`.
    pub fn ancestor_at(&self, mut n: NodeId, t: usize) -> NodeId {
        while self.time(n) > t {
            n = self.nodes[n].parent.expect("non-root node has a parent");
        }
        n
    }

    pub fn is_ancestor_or_self(&self, anc: NodeId, n: NodeId) -> bool {
        self.time(anc) <= self.time(n) && self.ancestor_at(n, self.time(anc)) == anc
    }

    /// Descendants of `n` at time `t >= time(n)`; contiguous thanks to BFS numbering.
    pub fn descendants_at(&self, n: NodeId, t: usize) -> Range<NodeId> {
        let (mut lo, mut hi) = (n, n + 1);
        for _ in self.time(n)..t {
            let first = self.nodes[lo].first_child;
            let last = &self.nodes[hi - 1];
            lo = first;
            hi = last.first_child + last.child_count;
        }
        lo..hi
    }

    pub fn leaves_under(&self, n: NodeId) -> Range<NodeId> {
        self.descendants_at(n, self.steps)
    }

    /// Nodes on the path from the root to `n`, root first.
    pub fn path_to(&self, n: NodeId) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.time(n) + 1);
        let mut cur = Some(n);
        while let Some(c) = cur {
            path.push(c);
            cur = self.parent(c);
        }
        path.reverse();
        path
    }

    /// `E[X_{t+1} | F_t]` at a non-leaf node; the value itself at a leaf.
    pub fn cond_exp_at(&self, n: NodeId, values: &[f64]) -> f64 {
        if self.is_leaf(n) {
            return values[n];
        }
        self.children(n)
            .map(|c| self.nodes[c].prob * values[c])
            .sum()
    }

    /// One-step conditional expectation of a node-indexed process.
    pub fn cond_exp_one_step(&self, values: &[f64]) -> Vec<f64> {
        (0..self.node_count())
            .map(|n| self.cond_exp_at(n, values))
            .collect()
    }

    /// `E[ X | node ]` for a leaf-indexed random variable.
    pub fn cond_exp_leaves(&self, n: NodeId, leaf_values: &[f64]) -> f64 {
        let leaves = self.leaves_under(n);
        let offset = self.level_start[self.steps];
        let mut num = 0.0;
        let mut den = 0.0;
        for l in leaves {
            let p = self.nodes[l].path_prob;
            num += p * leaf_values[l - offset];
            den += p;
        }
        num / den
    }

    /// `E[X]` for a leaf-indexed random variable.
    pub fn expectation(&self, leaf_values: &[f64]) -> f64 {
        self.leaves()
            .zip(leaf_values)
            .map(|(l, v)| self.nodes[l].path_prob * v)
            .sum()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len == self.node_count() {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                expected: self.node_count(),
                got: len,
            })
        }
    }
}
