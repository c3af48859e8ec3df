use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_example, Code, Side, TokenId, Vocabulary};
use crate::corpus::rng_for;
use crate::error::{GramError, Result};
use crate::seqmodel::{
    loss_grad, objective_loss, AdamW, AdamWConfig, DropoutSpec, ModelParams, SequenceObjective, SequenceRef,
};

const SHUFFLE_STREAM: u64 = 10;
const HOLDOUT_STREAM: u64 = 11;

/// One supervised (input text, code) pair for either generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub side: Side,
    pub input: String,
    pub code: Code,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl SftExample {
    pub fn new(side: Side, input: impl Into<String>, code: Code) -> Self {
        Self {
            side,
            input: input.into(),
            code,
            weight: 1.0,
        }
    }

    /// Identity used for deduplication.
    pub fn key(&self) -> (Side, &str, &Code) {
        (self.side, &self.input, &self.code)
    }
}

/// How batches are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Every batch holds one side only, so each step minimizes either the
    /// query-side or the product-side loss.
    PerSide,
    /// Batches interleave both sides at the dataset ratio and each step
    /// minimizes `L_q + lambda * L_t`.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub dropout: f64,
    /// Fraction of distinct query inputs held out from training.
    pub heldout_fraction: f64,
    /// Evaluate held-out NLL every this many steps (0: only at the ends).
    pub eval_every: usize,
    pub batch_mode: BatchMode,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epochs: 6,
            batch_size: 32,
            optimizer: AdamWConfig {
                lr: 2e-3,
                weight_decay: 0.01,
                ..Default::default()
            },
            dropout: 0.05,
            heldout_fraction: 0.05,
            eval_every: 0,
            batch_mode: BatchMode::PerSide,
            seed: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(GramError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(GramError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GramError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(GramError::Config(format!("heldout_fraction {} not in [0, 1)", self.heldout_fraction)));
        }
        Ok(())
    }
}

/// An example in token form.
#[derive(Debug, Clone)]
pub struct EncodedSft {
    pub side: Side,
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub weight: f64,
}

pub fn encode_sft(vocab: &Vocabulary, max_len: usize, examples: &[SftExample]) -> Result<Vec<EncodedSft>> {
    examples
        .iter()
        .map(|e| {
            let enc = encode_example(vocab, e.side, &e.input, &e.code, max_len)?;
            Ok(EncodedSft {
                side: e.side,
                prompt: enc.prompt,
                target: enc.target,
                weight: e.weight,
            })
        })
        .collect()
}

/// Weighted negative log-likelihood, each side scaled separately.
pub(crate) struct SftObjective {
    pub query_scale: f64,
    pub product_scale: f64,
}

impl SftObjective {
    fn scale(&self, side: Side) -> f64 {
        match side {
            Side::Query => self.query_scale,
            Side::Product => self.product_scale,
        }
    }
}

impl SequenceObjective for SftObjective {
    type Item = EncodedSft;

    fn sequences<'a>(&self, item: &'a EncodedSft) -> Vec<SequenceRef<'a>> {
        vec![SequenceRef {
            prompt: &item.prompt,
            target: &item.target,
        }]
    }

    fn evaluate(&self, item: &EncodedSft, lp: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let c = self.scale(item.side) * item.weight;
        let loss = -c * lp[0].iter().sum::<f64>();
        (loss, vec![vec![-c; lp[0].len()]])
    }
}

fn side_count(batch: &[EncodedSft], side: Side) -> usize {
    batch.iter().filter(|e| e.side == side).count()
}

fn objective_for(batch: &[EncodedSft], lambda: f64) -> SftObjective {
    let nq = side_count(batch, Side::Query);
    let nt = side_count(batch, Side::Product);
    SftObjective {
        query_scale: if nq > 0 { 1.0 / nq as f64 } else { 0.0 },
        product_scale: if nt > 0 { lambda / nt as f64 } else { 0.0 },
    }
}

/// Mean weighted negative sequence log-likelihood of the examples on
/// `side` (all examples when `side` is `None`).
pub fn sft_loss(params: &ModelParams, batch: &[EncodedSft], side: Option<Side>) -> Result<f64> {
    let items: Vec<EncodedSft> = batch
        .iter()
        .filter(|e| side.is_none_or(|s| e.side == s))
        .cloned()
        .collect();
    if items.is_empty() {
        return Err(GramError::EmptyBatch);
    }
    let obj = SftObjective {
        query_scale: 1.0 / items.len() as f64,
        product_scale: 1.0 / items.len() as f64,
    };
    objective_loss(params, &items, &obj)
}

/// `L_q + lambda * L_t` over the two sub-batches. A missing side
/// contributes zero.
pub fn co_training_loss(params: &ModelParams, batch: &[EncodedSft], lambda: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(GramError::EmptyBatch);
    }
    let mut total = 0.0;
    for (side, scale) in [(Side::Query, 1.0), (Side::Product, lambda)] {
        if side_count(batch, side) == 0 {
            log::warn!("co-training batch has no {side:?} examples");
            continue;
        }
        total += scale * sft_loss(params, batch, Some(side))?;
    }
    Ok(total)
}

/// Mean per-token negative log-likelihood.
pub fn per_token_nll(params: &ModelParams, items: &[EncodedSft]) -> Result<f64> {
    if items.is_empty() {
        return Err(GramError::EmptyBatch);
    }
    let tokens: usize = items.iter().map(|e| e.target.len()).sum();
    let obj = SftObjective {
        query_scale: 1.0,
        product_scale: 1.0,
    };
    let unweighted: Vec<EncodedSft> = items.iter().map(|e| EncodedSft { weight: 1.0, ..e.clone() }).collect();
    Ok(objective_loss(params, &unweighted, &obj)? / tokens as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Only filled at evaluation steps.
    pub heldout_nll: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<TrainLogRow>,
    pub initial_heldout_nll: Option<f64>,
    pub final_heldout_nll: Option<f64>,
}

pub fn train_log_csv(rows: &[TrainLogRow]) -> String {
    let mut s = String::from("step,epoch,loss,heldout_nll\n");
    for r in rows {
        let h = r.heldout_nll.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, r.loss, h));
    }
    s
}

/// Splits examples into (train, held-out) by holding out a seeded fraction
/// of distinct query inputs. Product-side examples always train.
pub fn split_heldout(examples: &[EncodedSft], raw: &[SftExample], fraction: f64, seed: u64) -> (Vec<EncodedSft>, Vec<EncodedSft>) {
    let mut inputs: Vec<&str> = raw
        .iter()
        .filter(|e| e.side == Side::Query)
        .map(|e| e.input.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    inputs.shuffle(&mut rng_for(seed, HOLDOUT_STREAM));
    let n_hold = (inputs.len() as f64 * fraction).round() as usize;
    let held: BTreeSet<&str> = inputs.into_iter().take(n_hold).collect();
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (enc, ex) in examples.iter().zip(raw) {
        if ex.side == Side::Query && held.contains(ex.input.as_str()) {
            heldout.push(enc.clone());
        } else {
            train.push(enc.clone());
        }
    }
    (train, heldout)
}

fn make_batches(train: &[EncodedSft], cfg: &TrainingConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = rng_for(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), SHUFFLE_STREAM);
    match cfg.batch_mode {
        BatchMode::Mixed => {
            let mut idx: Vec<usize> = (0..train.len()).collect();
            idx.shuffle(&mut rng);
            idx.chunks(cfg.batch_size).map(|c| c.to_vec()).collect()
        }
        BatchMode::PerSide => {
            let mut batches = Vec::new();
            for side in [Side::Query, Side::Product] {
                let mut idx: Vec<usize> = (0..train.len()).filter(|&i| train[i].side == side).collect();
                idx.shuffle(&mut rng);
                batches.extend(idx.chunks(cfg.batch_size).map(|c| c.to_vec()));
            }
            batches.shuffle(&mut rng);
            batches
        }
    }
}

/// Trains `init` on `train`, tracking per-token NLL on `heldout`.
///
/// A non-finite loss or gradient aborts with the parameters of the last
/// good step.
pub fn train_sft(init: ModelParams, train: &[EncodedSft], heldout: &[EncodedSft], cfg: &TrainingConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(GramError::EmptyBatch);
    }
    let mut params = init;
    let mut opt = AdamW::new(params.len(), cfg.optimizer.clone())?;
    let eval = |p: &ModelParams| -> Result<Option<f64>> {
        if heldout.is_empty() {
            Ok(None)
        } else {
            per_token_nll(p, heldout).map(Some)
        }
    };
    let initial = eval(&params)?;
    let mut log = vec![TrainLogRow {
        step: 0,
        epoch: 0,
        loss: f64::NAN,
        heldout_nll: initial,
    }];
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for (b, batch_idx) in make_batches(train, cfg, epoch).into_iter().enumerate() {
            let batch: Vec<EncodedSft> = batch_idx.iter().map(|&i| train[i].clone()).collect();
            let obj = objective_for(&batch, cfg.lambda);
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
            step += 1;
            let heldout_nll = if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                eval(&params)?
            } else {
                None
            };
            log.push(TrainLogRow {
                step,
                epoch,
                loss: lg.loss,
                heldout_nll,
            });
        }
        log::info!("epoch {epoch}: {step} steps");
    }
    let final_nll = eval(&params)?;
    if let Some(last) = log.last_mut() {
        if last.heldout_nll.is_none() {
            last.heldout_nll = final_nll;
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        initial_heldout_nll: initial,
        final_heldout_nll: final_nll,
    })
}
