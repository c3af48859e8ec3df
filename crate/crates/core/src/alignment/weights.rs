use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::WeightConfig;
use super::relevance::CodeWeights;
use crate::corpus::{rng_for, ProductId, QueryId};
use crate::error::{GramError, Result};
use crate::seqmodel::{AdamW, AdamWConfig};

const NEGATIVE_STREAM: u64 = 30;
const SHUFFLE_STREAM: u64 = 31;
const HOLDOUT_STREAM: u64 = 32;

/// A retrieved product with its relevance label and the divergence of
/// every code it matched.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub product: ProductId,
    pub relevance: f64,
    pub divergences: Vec<(String, f64)>,
}

/// Sparse `(code index, divergence)` list.
pub type Features = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub query: QueryId,
    pub positive: Features,
    pub negative: Features,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightDataset {
    pub codes: Vec<String>,
    pub triples: Vec<Triple>,
    pub queries_without_positive: usize,
    pub queries_without_negative: usize,
}

/// Builds (query, positive, negative) triples. Positives are the `top_k`
/// candidates of highest relevance at or above the threshold; negatives
/// are sampled among candidates below it.
pub fn build_weight_triples(candidates: &BTreeMap<QueryId, Vec<Candidate>>, cfg: &WeightConfig) -> WeightDataset {
    let codes: Vec<String> = candidates
        .values()
        .flatten()
        .flat_map(|c| c.divergences.iter().map(|(s, _)| s.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let feats = |c: &Candidate| -> Features { c.divergences.iter().map(|(s, j)| (index[s.as_str()], *j)).collect() };

    let mut ds = WeightDataset::default();
    for (qid, cands) in candidates {
        let mut ranked: Vec<&Candidate> = cands.iter().collect();
        ranked.sort_by(|a, b| b.relevance.total_cmp(&a.relevance).then(a.product.cmp(&b.product)));
        let positives: Vec<&Candidate> = ranked
            .iter()
            .copied()
            .filter(|c| c.relevance >= cfg.relevance_threshold)
            .take(cfg.top_k)
            .collect();
        let negatives: Vec<&Candidate> = ranked.iter().copied().filter(|c| c.relevance < cfg.relevance_threshold).collect();
        if positives.is_empty() {
            ds.queries_without_positive += 1;
            continue;
        }
        if negatives.is_empty() {
            ds.queries_without_negative += 1;
            continue;
        }
        let mut rng = rng_for(cfg.seed ^ (u64::from(qid.0) << 24), NEGATIVE_STREAM);
        for pos in positives {
            for neg in negatives.choose_multiple(&mut rng, cfg.negatives_per_positive.min(negatives.len())) {
                ds.triples.push(Triple {
                    query: *qid,
                    positive: feats(pos),
                    negative: feats(neg),
                });
            }
        }
    }
    ds.codes = codes;
    ds
}

pub fn pair_score(features: &Features, weights: &[f64]) -> f64 {
    features.iter().map(|&(i, j)| weights[i] * j).sum()
}

/// `max(0, S(neg) - S(pos) + mu)`.
pub fn weight_pairwise_loss(t: &Triple, weights: &[f64], mu: f64) -> f64 {
    (pair_score(&t.negative, weights) - pair_score(&t.positive, weights) + mu).max(0.0)
}

/// Mean hinge over `triples` and its gradient with respect to the weights.
pub fn weight_loss_grad(triples: &[&Triple], weights: &[f64], mu: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    let scale = 1.0 / triples.len().max(1) as f64;
    for t in triples {
        let l = weight_pairwise_loss(t, weights, mu);
        if l > 0.0 {
            loss += l;
            for &(i, j) in &t.negative {
                grad[i] += scale * j;
            }
            for &(i, j) in &t.positive {
                grad[i] -= scale * j;
            }
        }
    }
    (loss * scale, grad)
}

/// Fraction of triples whose positive outscores the negative.
pub fn pairwise_accuracy(triples: &[&Triple], weights: &[f64]) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let ok = triples
        .iter()
        .filter(|t| pair_score(&t.positive, weights) > pair_score(&t.negative, weights))
        .count();
    ok as f64 / triples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTrainingStats {
    pub train_triples: usize,
    pub heldout_triples: usize,
    pub initial_hinge: f64,
    pub final_hinge: f64,
    pub initial_heldout_accuracy: f64,
    pub final_heldout_accuracy: f64,
}

/// Learns per-code weights with the pairwise hinge, starting from
/// `initial`. Only codes that occur in the triples change.
pub fn train_code_weights(initial: &CodeWeights, ds: &WeightDataset, cfg: &WeightConfig) -> Result<(CodeWeights, WeightTrainingStats)> {
    cfg.validate()?;
    let mut w: Vec<f64> = ds.codes.iter().map(|c| initial.get(c)).collect();

    let mut queries: Vec<QueryId> = ds.triples.iter().map(|t| t.query).collect::<BTreeSet<_>>().into_iter().collect();
    queries.shuffle(&mut rng_for(cfg.seed, HOLDOUT_STREAM));
    let n_hold = (queries.len() as f64 * cfg.heldout_fraction).round() as usize;
    let held: BTreeSet<QueryId> = queries.into_iter().take(n_hold).collect();
    let (heldout, train): (Vec<&Triple>, Vec<&Triple>) = ds.triples.iter().partition(|t| held.contains(&t.query));

    let initial_hinge = weight_loss_grad(&train, &w, cfg.mu).0;
    let initial_acc = pairwise_accuracy(&heldout, &w);
    if !train.is_empty() {
        let mut opt = AdamW::new(
            w.len(),
            AdamWConfig {
                lr: cfg.lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng_for(cfg.seed ^ ((epoch as u64) << 32), SHUFFLE_STREAM));
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Triple> = chunk.iter().map(|&i| train[i]).collect();
                let (loss, grad) = weight_loss_grad(&batch, &w, cfg.mu);
                if !loss.is_finite() {
                    return Err(GramError::Data("non-finite weight loss".into()));
                }
                if loss > 0.0 {
                    opt.step(&mut w, &grad)?;
                }
            }
        }
    }
    let stats = WeightTrainingStats {
        train_triples: train.len(),
        heldout_triples: heldout.len(),
        initial_hinge,
        final_hinge: weight_loss_grad(&train, &w, cfg.mu).0,
        initial_heldout_accuracy: initial_acc,
        final_heldout_accuracy: pairwise_accuracy(&heldout, &w),
    };
    let mut out = initial.clone();
    for (c, v) in ds.codes.iter().zip(w) {
        out.set(c.clone(), v);
    }
    Ok((out, stats))
}
