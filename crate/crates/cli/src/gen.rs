//! Seeded random scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};
use crate::scenario::{
    Channel, DriverDef, Grid, NoiseDef, Obstacles, ProcessDef, Scenario, SolverDef, Terminal,
    TerminalChoice, TreeDef,
};

/// Largest horizon accepted by [`generate`].
pub const MAX_GEN_STEPS: usize = 5;
/// Largest branching accepted by [`generate`].
pub const MAX_GEN_BRANCHING: usize = 3;

/// Obstacles are drawn from `[-OBSTACLE_RANGE, OBSTACLE_RANGE]`.
const OBSTACLE_RANGE: f64 = 5.0;
const MAX_GAP: f64 = 3.0;
/// Chance that the two obstacles touch at a given point.
const TOUCH_PROB: f64 = 0.25;
const MAX_SLOPE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub steps: usize,
    pub branching: usize,
    pub seed: u64,
}

/// Random admissible scenario: `steps` steps with `branching` children per
/// node, random probabilities, centred noise of variance `dt`, obstacles
/// `xi <= zeta` with equal terminal values and an affine driver.
pub fn generate(p: GenParams) -> CliResult<Scenario> {
    if p.steps == 0 || p.branching == 0 {
        return Err(CliError::Invalid(
            "steps and branching must be at least 1".into(),
        ));
    }
    if p.steps > MAX_GEN_STEPS || p.branching > MAX_GEN_BRANCHING {
        return Err(CliError::CapExceeded {
            what: format!(
                "generation is limited to steps <= {MAX_GEN_STEPS} and branching <= {MAX_GEN_BRANCHING}, got {} and {}",
                p.steps, p.branching
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let dt = 1.0 / p.steps as f64;
    let b = p.branching;

    let internal: usize = (0..p.steps).map(|t| b.pow(t as u32)).sum();
    let mut probabilities = Vec::with_capacity(internal);
    let mut noise = Vec::with_capacity(internal);
    for _ in 0..internal {
        let (pr, w) = branching(&mut rng, b, dt);
        probabilities.push(pr);
        noise.push(w);
    }

    let nodes = internal + b.pow(p.steps as u32);
    let leaves = internal..nodes;
    let parent = |n: usize| (n - 1) / b;
    let draw = |rng: &mut ChaCha8Rng| rng.gen_range(-OBSTACLE_RANGE..=OBSTACLE_RANGE);
    let gap = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(TOUCH_PROB) {
            0.0
        } else {
            rng.gen_range(0.0..MAX_GAP)
        }
    };

    let xi_at: Vec<f64> = (0..nodes).map(|_| draw(&mut rng)).collect();
    let block: Vec<f64> = (0..internal).map(|_| draw(&mut rng)).collect();
    let xi_pre: Vec<f64> = (0..nodes)
        .map(|n| if n == 0 { xi_at[0] } else { block[parent(n)] })
        .collect();

    let at_gap: Vec<f64> = (0..nodes)
        .map(|n| {
            if leaves.contains(&n) {
                0.0
            } else {
                gap(&mut rng)
            }
        })
        .collect();
    let block_gap: Vec<f64> = (0..internal).map(|_| gap(&mut rng)).collect();
    let zeta_at: Vec<f64> = xi_at.iter().zip(&at_gap).map(|(x, g)| x + g).collect();
    let zeta_pre: Vec<f64> = (0..nodes)
        .map(|n| {
            if n == 0 {
                zeta_at[0]
            } else {
                xi_pre[n] + block_gap[parent(n)]
            }
        })
        .collect();

    let terminal = if rng.gen_bool(0.5) {
        TerminalChoice::Empty
    } else {
        TerminalChoice::Omega
    };
    let (slope_y, slope_z) = (
        rng.gen_range(-MAX_SLOPE..MAX_SLOPE),
        rng.gen_range(-MAX_SLOPE..MAX_SLOPE),
    );
    let driver = DriverDef::Affine {
        a: rng.gen_range(-1.0..1.0),
        b: slope_y,
        c: slope_z,
        lipschitz_bound: Some(slope_y.abs().max(slope_z.abs())),
    };

    Ok(Scenario {
        grid: Grid { steps: p.steps, dt },
        tree: TreeDef::Explicit { probabilities },
        noise: Some(NoiseDef::PerNode(noise)),
        obstacles: Obstacles {
            xi: ProcessDef {
                pre: Channel::Dense(xi_pre),
                at: Channel::Dense(xi_at),
            },
            zeta: Some(ProcessDef {
                pre: Channel::Dense(zeta_pre),
                at: Channel::Dense(zeta_at),
            }),
        },
        terminal: Terminal { h_t: terminal },
        driver: Some(driver),
        solver: SolverDef::default(),
        seed: p.seed,
    })
}

/// Probabilities and centred noise with conditional variance `dt` for one node.
fn branching(rng: &mut ChaCha8Rng, b: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
    if b == 1 {
        return (vec![1.0], vec![0.0]);
    }
    let w: Vec<f64> = (0..b).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|x| x / total).collect();
    let raw: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean: f64 = p.iter().zip(&raw).map(|(p, x)| p * x).sum();
    let var: f64 = p
        .iter()
        .zip(&raw)
        .map(|(p, x)| p * (x - mean).powi(2))
        .sum();
    let scale = (dt / var).sqrt();
    let noise = raw.iter().map(|x| (x - mean) * scale).collect();
    (p, noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_centred_with_variance_dt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for b in 2..=3 {
            let (p, w) = branching(&mut rng, b, 0.25);
            let mean: f64 = p.iter().zip(&w).map(|(p, w)| p * w).sum();
            let var: f64 = p.iter().zip(&w).map(|(p, w)| p * w * w).sum();
            assert!(mean.abs() < 1e-15);
            assert!((var - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn limits() {
        let p = |steps, branching| GenParams {
            steps,
            branching,
            seed: 0,
        };
        assert!(matches!(generate(p(0, 2)), Err(CliError::Invalid(_))));
        assert!(matches!(
            generate(p(6, 2)),
            Err(CliError::CapExceeded { .. })
        ));
        assert!(generate(p(5, 3)).unwrap().validate().is_ok());
    }
}
