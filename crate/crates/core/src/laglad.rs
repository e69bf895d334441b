//! Processes with a left value and a current value at every time.
//!
//! `pre[n]` is the value just before the time of node `n` and must agree across
//! siblings; `at[n]` is the value at that time. At the root both coincide.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::probspace::{FiniteFilteredSpace, NodeId};
use crate::splitstop::SplitStoppingTime;

/// Tolerance for sibling agreement of the pre-channel.
pub const PREDICTABLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LadlagProcess {
    pre: Vec<f64>,
    at: Vec<f64>,
}

/// Validate and wrap node-indexed pre and at channels.
pub fn make_process(
    space: &FiniteFilteredSpace,
    pre: Vec<f64>,
    at: Vec<f64>,
) -> Result<LadlagProcess> {
    space.check_len(pre.len())?;
    space.check_len(at.len())?;
    for n in 0..space.node_count() {
        if !pre[n].is_finite() || !at[n].is_finite() {
            return Err(Error::NonFinite { node: n });
        }
    }
    if !close(pre[0], at[0]) {
        return Err(Error::Pre0Mismatch);
    }
    for p in 0..space.node_count() {
        let mut kids = space.children(p);
        if let Some(first) = kids.next() {
            if kids.any(|c| !close(pre[c], pre[first])) {
                return Err(Error::PreNotPredictable { parent: p });
            }
        }
    }
    Ok(LadlagProcess { pre, at })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= PREDICTABLE_TOL * (1.0 + a.abs().max(b.abs()))
}

impl LadlagProcess {
    /// Build from a function of the parent for the pre-channel and a function of
    /// the node for the at-channel. The root's pre-value is its at-value.
    pub fn from_fns(
        space: &FiniteFilteredSpace,
        mut pre_of_parent: impl FnMut(NodeId) -> f64,
        mut at: impl FnMut(NodeId) -> f64,
    ) -> Self {
        let at: Vec<f64> = (0..space.node_count()).map(&mut at).collect();
        let pre = (0..space.node_count())
            .map(|n| match space.parent(n) {
                Some(p) => pre_of_parent(p),
                None => at[n],
            })
            .collect();
        Self { pre, at }
    }

    pub fn constant(space: &FiniteFilteredSpace, c: f64) -> Self {
        let n = space.node_count();
        Self {
            pre: alloc::vec![c; n],
            at: alloc::vec![c; n],
        }
    }

    /// Internal constructor for values already known to be consistent.
    pub(crate) fn from_parts(pre: Vec<f64>, at: Vec<f64>) -> Self {
        Self { pre, at }
    }

    pub fn pre(&self, n: NodeId) -> f64 {
        self.pre[n]
    }

    pub fn at(&self, n: NodeId) -> f64 {
        self.at[n]
    }

    pub fn pre_values(&self) -> &[f64] {
        &self.pre
    }

    pub fn at_values(&self) -> &[f64] {
        &self.at
    }

    pub fn len(&self) -> usize {
        self.at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.at.is_empty()
    }

    pub fn ensure_on(&self, space: &FiniteFilteredSpace) -> Result<()> {
        if self.at.len() == space.node_count() {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }

    /// Elementwise combination of two processes on the same space.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            pre: self
                .pre
                .iter()
                .zip(&other.pre)
                .map(|(a, b)| f(*a, *b))
                .collect(),
            at: self
                .at
                .iter()
                .zip(&other.at)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            pre: self.pre.iter().map(|a| f(*a)).collect(),
            at: self.at.iter().map(|a| f(*a)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    /// Largest absolute difference over both channels.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        let d = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        d(&self.pre, &other.pre).max(d(&self.at, &other.at))
    }

    pub fn min_value(&self) -> f64 {
        self.pre
            .iter()
            .chain(&self.at)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Payoff `X_rho` as a leaf-indexed random variable: the pre-value on `H`, the
/// at-value elsewhere.
pub fn eval_at_split(
    space: &FiniteFilteredSpace,
    x: &LadlagProcess,
    rho: &SplitStoppingTime,
) -> Result<Vec<f64>> {
    x.ensure_on(space)?;
    rho.ensure_on(space)?;
    Ok(space
        .leaves()
        .map(|l| {
            let s = rho.stop_node(space, l);
            if rho.is_pre(s) {
                x.pre(s)
            } else {
                x.at(s)
            }
        })
        .collect())
}

/// Which weighted norm to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// `E[ max_t e^{beta t} X_t^2 ]` over the at-channel.
    S2,
    /// `E[ sum_{t<T} e^{beta t} X_t^2 dt ]`.
    H2,
    /// `E[ sum_{t>=1} e^{beta t} (X_t - X_{t-1})^2 ]` for a martingale given by its values.
    M2,
}

/// Weighted norm of node-indexed at-values (physical time `t * dt`).
pub fn weighted_norm(
    space: &FiniteFilteredSpace,
    values: &[f64],
    kind: NormKind,
    beta: f64,
) -> f64 {
    weighted_norm_shifted(space, values, kind, beta, 0.0)
}

/// Same as [`weighted_norm`] multiplied by `e^{-beta * shift}`, computed with
/// weights `e^{beta (t - shift)}` so that large `beta` does not overflow.
pub fn weighted_norm_shifted(
    space: &FiniteFilteredSpace,
    values: &[f64],
    kind: NormKind,
    beta: f64,
    shift: f64,
) -> f64 {
    let dt = space.dt();
    let weight = |t: usize| libm::exp(beta * (t as f64 * dt - shift));
    let weights: Vec<f64> = (0..=space.steps()).map(weight).collect();
    let mut total = 0.0;
    for leaf in space.leaves() {
        let path = space.path_to(leaf);
        let acc = match kind {
            NormKind::S2 => path
                .iter()
                .map(|&n| weights[space.time(n)] * values[n] * values[n])
                .fold(0.0, f64::max),
            NormKind::H2 => path[..path.len() - 1]
                .iter()
                .map(|&n| weights[space.time(n)] * values[n] * values[n] * dt)
                .sum(),
            NormKind::M2 => path
                .windows(2)
                .map(|w| {
                    let d = values[w[1]] - values[w[0]];
                    weights[space.time(w[1])] * d * d
                })
                .sum(),
        };
        total += space.path_prob(leaf) * acc;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probspace::{build_space, TreeSpec};
    use alloc::vec;

    fn space() -> FiniteFilteredSpace {
        build_space(1, 1.0, &TreeSpec::Binomial).unwrap()
    }

    #[test]
    fn rejects_unpredictable_pre() {
        let s = space();
        let err = make_process(&s, vec![1.0, 2.0, 3.0], vec![1.0, 0.0, 0.0]).unwrap_err();
        assert_eq!(err, Error::PreNotPredictable { parent: 0 });
    }

    #[test]
    fn rejects_root_mismatch_and_lengths() {
        let s = space();
        assert_eq!(
            make_process(&s, vec![0.0, 2.0, 2.0], vec![1.0, 0.0, 0.0]).unwrap_err(),
            Error::Pre0Mismatch
        );
        assert!(matches!(
            make_process(&s, vec![1.0, 2.0], vec![1.0, 0.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn norms_on_binomial() {
        let s = space();
        let x = [1.0, 2.0, 0.0];
        assert!((weighted_norm(&s, &x, NormKind::S2, 0.0) - 2.5).abs() < 1e-15);
        assert!((weighted_norm(&s, &x, NormKind::H2, 0.0) - 1.0).abs() < 1e-15);
        assert!((weighted_norm(&s, &x, NormKind::M2, 0.0) - 1.0).abs() < 1e-15);
        let e = libm::exp(1.0);
        assert!((weighted_norm(&s, &x, NormKind::M2, 1.0) - e).abs() < 1e-14);
        let shifted = weighted_norm_shifted(&s, &x, NormKind::M2, 1.0, 1.0);
        assert!((shifted - 1.0).abs() < 1e-15);
    }
}
