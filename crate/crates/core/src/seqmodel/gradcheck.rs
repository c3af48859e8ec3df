//! Central-difference gradient checking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::objective::{loss_grad, objective_loss, SequenceObjective};
use super::params::ModelParams;
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub index: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
    pub max_rel_error: f64,
}

/// Smallest analytic gradient magnitude worth probing; relative error is
/// meaningless below it.
pub const MIN_PROBE_GRAD: f64 = 1e-6;

pub fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Compares `analytic[i]` with `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`
/// for every index in `coords`.
pub fn check_coordinates<F>(x: &mut [f64], analytic: &[f64], coords: &[usize], eps: f64, mut f: F) -> Result<Vec<(usize, f64, f64)>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(x)?;
        x[i] = orig - eps;
        let down = f(x)?;
        x[i] = orig;
        out.push((i, analytic[i], (up - down) / (2.0 * eps)));
    }
    Ok(out)
}

/// Checks the gradient of `objective` on `items` at up to `n_probes`
/// coordinates, sampled with `seed` among those whose analytic gradient
/// has magnitude at least [`MIN_PROBE_GRAD`].
pub fn check_model_gradient<O: SequenceObjective>(
    params: &ModelParams,
    items: &[O::Item],
    objective: &O,
    n_probes: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let lg = loss_grad(params, items, objective, None)?;
    let mut candidates: Vec<usize> = (0..lg.grad.len()).filter(|&i| lg.grad[i].abs() >= MIN_PROBE_GRAD).collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    candidates.truncate(n_probes);
    candidates.sort_unstable();

    let mut work = params.clone();
    let mut x = params.data().to_vec();
    let triples = check_coordinates(&mut x, &lg.grad, &candidates, eps, |xs| {
        work.data_mut().copy_from_slice(xs);
        objective_loss(&work, items, objective)
    })?;
    let probes: Vec<ProbeResult> = triples
        .into_iter()
        .map(|(index, analytic, numeric)| ProbeResult {
            index,
            name: params.coordinate_name(index),
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        })
        .collect();
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { probes, max_rel_error })
}
