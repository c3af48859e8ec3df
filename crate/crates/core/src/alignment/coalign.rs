use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::LN_2;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::AlignmentConfig;
use super::dataset::PreferencePair;
use crate::codec::{encode_code, encode_prompt, Side, TokenId, Vocabulary};
use crate::corpus::{rng_for, ProductId, QueryId};
use crate::error::{GramError, Result};
use crate::seqmodel::{
    loss_grad, objective_loss, sequence_logprob, AdamW, DropoutSpec, ModelParams, SequenceObjective, SequenceRef,
};

const SHUFFLE_STREAM: u64 = 21;
const HOLDOUT_STREAM: u64 = 22;

/// `ln((e^a + e^b) / 2)`, computed without overflow.
pub fn averaged_logprob(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln() - LN_2
}

/// Mean of the code's sequence probabilities under the query prompt and
/// under the product prompt.
pub fn averaged_prob(
    params: &ModelParams,
    query_prompt: &[TokenId],
    product_prompt: &[TokenId],
    code: &[TokenId],
) -> Result<f64> {
    let a = sequence_logprob(params, query_prompt, code)?;
    let b = sequence_logprob(params, product_prompt, code)?;
    Ok(averaged_logprob(a, b).exp())
}

/// A preference pair in token form with its reference log-probabilities.
#[derive(Debug, Clone)]
pub struct EncodedPair {
    pub query: QueryId,
    pub query_prompt: Vec<TokenId>,
    pub product_prompt: Vec<TokenId>,
    pub positive: Vec<TokenId>,
    pub negative: Vec<TokenId>,
    pub ref_positive: f64,
    pub ref_negative: f64,
    pub repetitions: u32,
}

fn pair_sequences(p: &EncodedPair) -> Vec<SequenceRef<'_>> {
    vec![
        SequenceRef { prompt: &p.query_prompt, target: &p.positive },
        SequenceRef { prompt: &p.product_prompt, target: &p.positive },
        SequenceRef { prompt: &p.query_prompt, target: &p.negative },
        SequenceRef { prompt: &p.product_prompt, target: &p.negative },
    ]
}

/// Averaged log-probability of a code and its derivatives with respect to
/// the two underlying sequence log-probabilities.
fn averaged_with_grad(lq: f64, lt: f64) -> (f64, f64, f64) {
    let a = averaged_logprob(lq, lt);
    let wq = (lq - LN_2 - a).exp();
    let wt = (lt - LN_2 - a).exp();
    (a, wq, wt)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `-scale * log sigmoid(beta_w (A_w - R_w) - beta_l (A_l - R_l))`.
pub(crate) struct CoAlignObjective {
    pub beta_w: f64,
    pub beta_l: f64,
    pub scale: f64,
}

impl SequenceObjective for CoAlignObjective {
    type Item = EncodedPair;

    fn sequences<'a>(&self, item: &'a EncodedPair) -> Vec<SequenceRef<'a>> {
        pair_sequences(item)
    }

    fn evaluate(&self, item: &EncodedPair, lp: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let s: Vec<f64> = lp.iter().map(|v| v.iter().sum()).collect();
        let (aw, wq, wt) = averaged_with_grad(s[0], s[1]);
        let (al, lq, lt) = averaged_with_grad(s[2], s[3]);
        let z = self.beta_w * (aw - item.ref_positive) - self.beta_l * (al - item.ref_negative);
        let loss = self.scale * softplus(-z);
        let dz = -self.scale * sigmoid(-z);
        let per_seq = [dz * self.beta_w * wq, dz * self.beta_w * wt, -dz * self.beta_l * lq, -dz * self.beta_l * lt];
        let seeds = lp.iter().zip(per_seq).map(|(v, g)| vec![g; v.len()]).collect();
        (loss, seeds)
    }
}

/// `A_w - A_l` under the current parameters.
struct MarginObjective;

impl SequenceObjective for MarginObjective {
    type Item = EncodedPair;

    fn sequences<'a>(&self, item: &'a EncodedPair) -> Vec<SequenceRef<'a>> {
        pair_sequences(item)
    }

    fn evaluate(&self, _item: &EncodedPair, lp: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let s: Vec<f64> = lp.iter().map(|v| v.iter().sum()).collect();
        let m = averaged_logprob(s[0], s[1]) - averaged_logprob(s[2], s[3]);
        (m, lp.iter().map(|v| vec![0.0; v.len()]).collect())
    }
}

/// Encodes pairs and scores them under the frozen reference model.
pub fn encode_pairs(
    reference: &ModelParams,
    vocab: &Vocabulary,
    max_prompt: usize,
    pairs: &[PreferencePair],
    query_text: &BTreeMap<QueryId, String>,
    product_title: &BTreeMap<ProductId, String>,
) -> Result<Vec<EncodedPair>> {
    use rayon::prelude::*;
    pairs
        .par_iter()
        .map(|p| {
            let q = query_text
                .get(&p.query)
                .ok_or_else(|| GramError::Data(format!("no text for query {}", p.query)))?;
            let t = product_title
                .get(&p.product)
                .ok_or_else(|| GramError::Data(format!("no title for product {}", p.product)))?;
            let query_prompt = encode_prompt(vocab, Side::Query, q, max_prompt).0;
            let product_prompt = encode_prompt(vocab, Side::Product, t, max_prompt).0;
            let positive = encode_code(vocab, &p.positive)?;
            let negative = encode_code(vocab, &p.negative)?;
            let ref_positive = averaged_logprob(
                sequence_logprob(reference, &query_prompt, &positive)?,
                sequence_logprob(reference, &product_prompt, &positive)?,
            );
            let ref_negative = averaged_logprob(
                sequence_logprob(reference, &query_prompt, &negative)?,
                sequence_logprob(reference, &product_prompt, &negative)?,
            );
            Ok(EncodedPair {
                query: p.query,
                query_prompt,
                product_prompt,
                positive,
                negative,
                ref_positive,
                ref_negative,
                repetitions: p.repetitions,
            })
        })
        .collect()
}

/// Mean co-alignment loss over `batch`.
pub fn ca_loss(params: &ModelParams, batch: &[EncodedPair], cfg: &AlignmentConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(GramError::EmptyBatch);
    }
    let obj = CoAlignObjective {
        beta_w: cfg.beta_w,
        beta_l: cfg.beta_l,
        scale: 1.0 / batch.len() as f64,
    };
    objective_loss(params, batch, &obj)
}

/// Mean of `log pi(c_w|q,t) - log pi(c_l|q,t)` over `items`.
pub fn mean_margin(params: &ModelParams, items: &[EncodedPair]) -> Result<f64> {
    if items.is_empty() {
        return Err(GramError::EmptyBatch);
    }
    Ok(objective_loss(params, items, &MarginObjective)? / items.len() as f64)
}

/// Splits pairs into (train, held-out) by a seeded fraction of queries.
pub fn split_pairs_by_query(pairs: Vec<EncodedPair>, fraction: f64, seed: u64) -> (Vec<EncodedPair>, Vec<EncodedPair>) {
    let mut queries: Vec<QueryId> = pairs.iter().map(|p| p.query).collect::<BTreeSet<_>>().into_iter().collect();
    queries.shuffle(&mut rng_for(seed, HOLDOUT_STREAM));
    let n_hold = (queries.len() as f64 * fraction).round() as usize;
    let held: BTreeSet<QueryId> = queries.into_iter().take(n_hold).collect();
    pairs.into_iter().partition(|p| !held.contains(&p.query))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignLogRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub heldout_margin: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub params: ModelParams,
    pub log: Vec<AlignLogRow>,
    pub initial_margin: Option<f64>,
    pub final_margin: Option<f64>,
}

/// Optimizes the co-alignment loss starting from the reference model.
/// Each pair appears `repetitions` times per epoch.
pub fn train_co_alignment(
    reference: &ModelParams,
    train: &[EncodedPair],
    heldout: &[EncodedPair],
    cfg: &AlignmentConfig,
) -> Result<AlignOutcome> {
    cfg.validate()?;
    let mut params = reference.clone();
    let margin = |p: &ModelParams| -> Result<Option<f64>> {
        if heldout.is_empty() {
            Ok(None)
        } else {
            mean_margin(p, heldout).map(Some)
        }
    };
    let initial = margin(&params)?;
    let mut log = Vec::new();
    if train.is_empty() {
        return Ok(AlignOutcome {
            params,
            log,
            initial_margin: initial,
            final_margin: initial,
        });
    }
    let expanded: Vec<usize> = train
        .iter()
        .enumerate()
        .flat_map(|(i, p)| std::iter::repeat_n(i, p.repetitions as usize))
        .collect();
    let mut opt = AdamW::new(params.len(), cfg.optimizer.clone())?;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order = expanded.clone();
        order.shuffle(&mut rng_for(cfg.seed ^ ((epoch as u64) << 32), SHUFFLE_STREAM));
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<EncodedPair> = chunk.iter().map(|&i| train[i].clone()).collect();
            let obj = CoAlignObjective {
                beta_w: cfg.beta_w,
                beta_l: cfg.beta_l,
                scale: 1.0 / batch.len() as f64,
            };
            let dropout = (cfg.dropout > 0.0).then(|| DropoutSpec {
                p: cfg.dropout,
                seed: cfg.seed.wrapping_add(step as u64).wrapping_mul(0x2545_f491_4f6c_dd1d),
            });
            let lg = loss_grad(&params, &batch, &obj, dropout)?;
            if !lg.loss.is_finite() || lg.grad.iter().any(|g| !g.is_finite()) {
                return Err(GramError::NonFiniteLoss {
                    step,
                    batch: b,
                    last_good: Some(Box::new(params)),
                });
            }
            opt.step(params.data_mut(), &lg.grad)?;
            epoch_loss += lg.loss;
            n_batches += 1;
            step += 1;
        }
        let m = margin(&params)?;
        log.push(AlignLogRow {
            epoch,
            step,
            loss: epoch_loss / n_batches.max(1) as f64,
            heldout_margin: m,
        });
        log::info!("alignment epoch {epoch}: loss {:.5}, held-out margin {m:?}", epoch_loss / n_batches.max(1) as f64);
    }
    let final_margin = log.last().and_then(|r| r.heldout_margin).or(initial);
    Ok(AlignOutcome {
        params,
        log,
        initial_margin: initial,
        final_margin,
    })
}
