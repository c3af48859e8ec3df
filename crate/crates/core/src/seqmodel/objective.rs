//! Generic sequence-level objectives and their sharded gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::forward;
use super::params::ModelParams;
use crate::codec::TokenId;
use crate::error::{GramError, Result};

/// Number of gradient shards; fixed so results do not depend on the
/// thread pool size.
pub const GRAD_SHARDS: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct SequenceRef<'a> {
    pub prompt: &'a [TokenId],
    pub target: &'a [TokenId],
}

/// A loss built from the per-token log-probabilities of a fixed set of
/// sequences per item.
pub trait SequenceObjective: Sync {
    type Item: Sync;

    fn sequences<'a>(&self, item: &'a Self::Item) -> Vec<SequenceRef<'a>>;

    /// Returns the item's loss contribution and the derivative of that
    /// contribution with respect to every token log-probability.
    fn evaluate(&self, item: &Self::Item, logprobs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub p: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn shard_bounds(n: usize) -> Vec<(usize, usize)> {
    (0..GRAD_SHARDS)
        .map(|s| (s * n / GRAD_SHARDS, (s + 1) * n / GRAD_SHARDS))
        .collect()
}

fn item_loss_grad<O: SequenceObjective>(
    params: &ModelParams,
    objective: &O,
    item: &O::Item,
    index: usize,
    dropout: Option<DropoutSpec>,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let seqs = objective.sequences(item);
    let mut rng = dropout.map(|d| item_rng(d.seed, index));
    let mut tapes = Vec::with_capacity(seqs.len());
    let mut logprobs = Vec::with_capacity(seqs.len());
    for s in &seqs {
        let drop = match (dropout, rng.as_mut()) {
            (Some(d), Some(r)) if d.p > 0.0 => Some((d.p, r)),
            _ => None,
        };
        let (tape, out) = forward(params, s.prompt, s.target, drop)?;
        logprobs.push(tape.value(out).to_vec());
        tapes.push((tape, out));
    }
    let (loss, seeds) = objective.evaluate(item, &logprobs);
    if let Some(grad) = grad {
        for ((tape, out), seed) in tapes.iter().zip(&seeds) {
            if seed.iter().any(|g| *g != 0.0) {
                tape.backward(*out, seed, grad);
            }
        }
    }
    Ok(loss)
}

/// Sum of item losses and its gradient with respect to all parameters.
///
/// Items are split into [`GRAD_SHARDS`] contiguous shards evaluated in
/// parallel and reduced in shard order. With dropout, each item draws its
/// masks from a stream keyed by `(seed, index)`.
pub fn loss_grad<O: SequenceObjective>(
    params: &ModelParams,
    items: &[O::Item],
    objective: &O,
    dropout: Option<DropoutSpec>,
) -> Result<LossGrad> {
    if items.is_empty() {
        return Err(GramError::EmptyBatch);
    }
    let n_params = params.len();
    let parts: Vec<Result<(f64, Vec<f64>)>> = shard_bounds(items.len())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for i in lo..hi {
                loss += item_loss_grad(params, objective, &items[i], i, dropout, Some(&mut grad))?;
            }
            Ok((loss, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(LossGrad { loss, grad })
}

/// Forward-only version of [`loss_grad`], without dropout.
pub fn objective_loss<O: SequenceObjective>(params: &ModelParams, items: &[O::Item], objective: &O) -> Result<f64> {
    let parts: Vec<Result<f64>> = shard_bounds(items.len())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut loss = 0.0;
            for i in lo..hi {
                loss += item_loss_grad(params, objective, &items[i], i, None, None)?;
            }
            Ok(loss)
        })
        .collect();
    parts.into_iter().sum()
}
