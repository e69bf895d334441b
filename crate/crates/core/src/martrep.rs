//! Orthogonal decomposition of a martingale against the driving noise.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::probspace::FiniteFilteredSpace;

/// Slack allowed in the martingale property of the input.
pub const MARTINGALE_TOL: f64 = 1e-9;

/// `M = M_0 + sum Z dW + N` with `N` a martingale orthogonal to `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleRepresentation {
    /// `Z_t` at every non-terminal node, 0 at leaves.
    pub z: Vec<f64>,
    /// Cumulative orthogonal martingale `N_t`, 0 at the root.
    pub ortho: Vec<f64>,
}

impl MartingaleRepresentation {
    pub fn delta_ortho(&self, space: &FiniteFilteredSpace, n: usize) -> f64 {
        space
            .parent(n)
            .map_or(0.0, |p| self.ortho[n] - self.ortho[p])
    }
}

/// Increments `M_t - M_{t-1}` of node values (0 at the root).
pub fn increments(space: &FiniteFilteredSpace, m: &[f64]) -> Vec<f64> {
    (0..space.node_count())
        .map(|n| space.parent(n).map_or(0.0, |p| m[n] - m[p]))
        .collect()
}

/// Decompose a martingale given by its values at every node.
#[allow(clippy::needless_range_loop)]
pub fn orthogonal_decompose(
    space: &FiniteFilteredSpace,
    m: &[f64],
) -> Result<MartingaleRepresentation> {
    space.check_len(m.len())?;
    let dm = increments(space, m);
    let nn = space.node_count();
    let mut z = vec![0.0; nn];
    let mut dn = vec![0.0; nn];
    for n in 0..nn {
        if space.is_leaf(n) {
            continue;
        }
        let scale = space.children(n).map(|c| dm[c].abs()).fold(1.0, f64::max);
        let mean = space.cond_exp_at(n, &dm);
        if mean.abs() > MARTINGALE_TOL * scale {
            return Err(Error::NotAMartingale {
                node: n,
                deviation: mean,
            });
        }
        let (mut num, mut den) = (0.0, 0.0);
        for c in space.children(n) {
            let (p, w) = (space.prob(c), space.dw(c));
            num += p * dm[c] * w;
            den += p * w * w;
        }
        z[n] = if den > 0.0 { num / den } else { 0.0 };
        // Two branches with centred, non-degenerate noise span every centred
        // increment, so the orthogonal part vanishes.
        if space.children(n).len() == 2 && den > 0.0 {
            continue;
        }
        for c in space.children(n) {
            dn[c] = dm[c] - z[n] * space.dw(c);
        }
    }
    let mut ortho = vec![0.0; nn];
    for n in 1..nn {
        let p = space.parent(n).expect("non-root");
        ortho[n] = ortho[p] + dn[n];
    }
    Ok(MartingaleRepresentation { z, ortho })
}

/// Largest `|E[dN dW | F_t]|` and largest defect of
/// `E[dM^2|F_t] = Z^2 E[dW^2|F_t] + E[dN^2|F_t]` over all non-terminal nodes.
pub fn orthogonality_defects(
    space: &FiniteFilteredSpace,
    m: &[f64],
    rep: &MartingaleRepresentation,
) -> (f64, f64) {
    let dm = increments(space, m);
    let (mut ortho, mut pyth) = (0.0f64, 0.0f64);
    for n in 0..space.node_count() {
        if space.is_leaf(n) {
            continue;
        }
        let (mut cross, mut m2, mut w2, mut n2) = (0.0, 0.0, 0.0, 0.0);
        for c in space.children(n) {
            let (p, w, d) = (space.prob(c), space.dw(c), rep.delta_ortho(space, c));
            cross += p * d * w;
            m2 += p * dm[c] * dm[c];
            w2 += p * w * w;
            n2 += p * d * d;
        }
        ortho = ortho.max(cross.abs());
        pyth = pyth.max((m2 - rep.z[n] * rep.z[n] * w2 - n2).abs());
    }
    (ortho, pyth)
}
