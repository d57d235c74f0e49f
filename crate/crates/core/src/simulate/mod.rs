//! Euler simulation of the degenerate system and a kernel density estimate
//! of the terminal law, used as an independent density oracle.

mod kde;

pub use kde::{
    kde_at, kde_difference, kde_estimate, mc_density, mc_density_with, Bandwidth, DensityGrid, KdeEstimate, McConfig,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoefficientField, PhasePoint};

/// One simulated trajectory on a uniform time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    pub n_steps: usize,
    pub dt: f64,
    pub states: Vec<PhasePoint>,
    pub seed: u64,
}

fn check_inputs(field: &CoefficientField, initial: &PhasePoint, t: f64, n_steps: usize) -> Result<()> {
    field.check_dim(initial)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", format!("must be positive and finite, got {t}")));
    }
    if n_steps == 0 {
        return Err(Error::invalid("n_steps", "must be at least 1"));
    }
    Ok(())
}

/// RNG for path `index`: one ChaCha stream per path.
pub(crate) fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Euler step for `X` and trapezoidal transport for `Y`. `visit` sees every
/// state after the initial one.
fn euler(
    field: &CoefficientField,
    initial: &PhasePoint,
    t: f64,
    n_steps: usize,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(&[f64], &[f64]),
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = field.dim();
    let dt = t / n_steps as f64;
    let sq = dt.sqrt();
    let mut x = initial.x().to_vec();
    let mut y = initial.y().to_vec();
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut xi = vec![0.0; d];
    let mut next = vec![0.0; d];
    for step in 0..n_steps {
        field.drift_into(&x, &y, &mut b);
        field.sigma_into(&x, &y, &mut sigma);
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for i in 0..d {
            let mut noise = 0.0;
            for j in 0..d {
                noise += sigma[i * d + j] * xi[j];
            }
            next[i] = x[i] + b[i] * dt + noise * sq;
        }
        for i in 0..d {
            y[i] += 0.5 * (x[i] + next[i]) * dt;
        }
        x.copy_from_slice(&next);
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: step + 1 });
        }
        visit(&x, &y);
    }
    Ok((x, y))
}

pub fn simulate_path(
    field: &CoefficientField,
    initial: &PhasePoint,
    t: f64,
    n_steps: usize,
    seed: u64,
) -> Result<PathGrid> {
    check_inputs(field, initial, t, n_steps)?;
    let mut raw = Vec::with_capacity(n_steps);
    let mut rng = path_rng(seed, 0);
    euler(field, initial, t, n_steps, &mut rng, |x, y| {
        raw.push((x.to_vec(), y.to_vec()))
    })?;
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(initial.clone());
    for (x, y) in raw {
        states.push(PhasePoint::new(x, y)?);
    }
    Ok(PathGrid {
        n_steps,
        dt: t / n_steps as f64,
        states,
        seed,
    })
}

/// Terminal states of `n_paths` independent paths, stacked `(x, y)` per path.
/// Path `i` uses stream `i` of `seed`, so two fields simulated with the same
/// seed share their Gaussian increments.
pub fn simulate_terminals(
    field: &CoefficientField,
    initial: &PhasePoint,
    t: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(field, initial, t, n_steps)?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "must be at least 1"));
    }
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let (mut x, y) = euler(field, initial, t, n_steps, &mut rng, |_, _| {})?;
            x.extend_from_slice(&y);
            Ok(x)
        })
        .collect()
}
