//! Finite-difference checks of every trainable objective on a small model.

use rand::Rng;
use serde::Serialize;

use crate::alignment::{averaged_logprob, weight_loss_grad, CoAlignObjective, EncodedPair, Triple};
use crate::codec::{Side, TokenId, EOS, PROMPT_PRODUCT, PROMPT_QUERY, SEP};
use crate::corpus::{rng_for, QueryId};
use crate::error::Result;
use crate::seqmodel::{
    check_coordinates, check_model_gradient, relative_error, sequence_logprob, ModelConfig, ModelParams, ProbeResult,
};
use crate::training::{EncodedSft, SftObjective};

/// Tolerance for the smooth model objectives.
pub const SMOOTH_TOLERANCE: f64 = 1e-4;
/// Tolerance for the piecewise-linear weight hinge.
pub const HINGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveCheck {
    pub objective: String,
    pub probes: Vec<ProbeResult>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl ObjectiveCheck {
    pub fn passed(&self, min_probes: usize) -> bool {
        self.probes.len() >= min_probes && self.max_rel_error <= self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct GradSuiteConfig {
    pub width: usize,
    pub probes: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        Self {
            width: 16,
            probes: 24,
            eps: 1e-4,
            seed: 0,
        }
    }
}

const VOCAB: usize = 16;

fn random_tokens(rng: &mut impl rand::Rng, n: usize) -> Vec<TokenId> {
    (0..n).map(|_| rng.gen_range(6..VOCAB as TokenId)).collect()
}

fn random_code(rng: &mut impl rand::Rng) -> Vec<TokenId> {
    let n = rng.gen_range(1..=3);
    let mut out = Vec::new();
    for i in 0..n {
        if i > 0 {
            out.push(SEP);
        }
        out.push(rng.gen_range(6..VOCAB as TokenId));
    }
    out.push(EOS);
    out
}

fn prompt(side: Side, body: Vec<TokenId>) -> Vec<TokenId> {
    let head = match side {
        Side::Query => PROMPT_QUERY,
        Side::Product => PROMPT_PRODUCT,
    };
    std::iter::once(head).chain(body).collect()
}

fn sft_items(rng: &mut impl rand::Rng, n: usize) -> Vec<EncodedSft> {
    (0..n)
        .map(|i| {
            let side = if i % 2 == 0 { Side::Query } else { Side::Product };
            let len = rng.gen_range(1..=4);
            EncodedSft {
                side,
                prompt: prompt(side, random_tokens(rng, len)),
                target: random_code(rng),
                weight: rng.gen_range(0.5..1.5),
            }
        })
        .collect()
}

fn pair_items(rng: &mut impl rand::Rng, reference: &ModelParams, n: usize) -> Result<Vec<EncodedPair>> {
    (0..n)
        .map(|i| {
            let (lq, lt) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let query_prompt = prompt(Side::Query, random_tokens(rng, lq));
            let product_prompt = prompt(Side::Product, random_tokens(rng, lt));
            let positive = random_code(rng);
            let negative = random_code(rng);
            let avg = |code: &[TokenId]| -> Result<f64> {
                Ok(averaged_logprob(
                    sequence_logprob(reference, &query_prompt, code)?,
                    sequence_logprob(reference, &product_prompt, code)?,
                ))
            };
            Ok(EncodedPair {
                query: QueryId(i as u32),
                ref_positive: avg(&positive)?,
                ref_negative: avg(&negative)?,
                query_prompt,
                product_prompt,
                positive,
                negative,
                repetitions: 1,
            })
        })
        .collect()
}

fn model(width: usize, seed: u64) -> Result<ModelParams> {
    ModelParams::init(
        ModelConfig {
            vocab_size: VOCAB,
            max_len: 12,
            d_model: width,
            n_heads: 2,
            n_layers: 2,
            d_ff: 2 * width,
            init_std: 0.3,
        },
        seed,
    )
}

fn from_report(objective: &str, r: crate::seqmodel::GradCheckReport, tolerance: f64) -> ObjectiveCheck {
    ObjectiveCheck {
        objective: objective.to_string(),
        probes: r.probes,
        max_rel_error: r.max_rel_error,
        tolerance,
    }
}

/// Checks the query-side and product-side supervised losses, the joint
/// co-training loss, the co-alignment loss and the weight hinge.
pub fn gradient_suite(cfg: &GradSuiteConfig) -> Result<Vec<ObjectiveCheck>> {
    let mut rng = rng_for(cfg.seed, 90);
    let params = model(cfg.width, cfg.seed)?;
    let items = sft_items(&mut rng, 8);
    let nq = items.iter().filter(|e| e.side == Side::Query).count() as f64;
    let nt = items.len() as f64 - nq;
    let lambda = 0.7;
    let mut out = Vec::new();
    for (name, query_scale, product_scale) in [
        ("query_sft", 1.0 / nq, 0.0),
        ("product_sft", 0.0, 1.0 / nt),
        ("co_training", 1.0 / nq, lambda / nt),
    ] {
        let obj = SftObjective {
            query_scale,
            product_scale,
        };
        let r = check_model_gradient(&params, &items, &obj, cfg.probes, cfg.eps, cfg.seed)?;
        out.push(from_report(name, r, SMOOTH_TOLERANCE));
    }

    // Away from the reference so the sigmoid is not at its symmetric point.
    let reference = model(cfg.width, cfg.seed + 1)?;
    let pairs = pair_items(&mut rng, &reference, 6)?;
    let mut moved = reference.clone();
    for v in moved.data_mut() {
        *v += rng.gen_range(-0.05..0.05);
    }
    let obj = CoAlignObjective {
        beta_w: 0.5,
        beta_l: 0.3,
        scale: 1.0 / pairs.len() as f64,
    };
    let r = check_model_gradient(&moved, &pairs, &obj, cfg.probes, cfg.eps, cfg.seed)?;
    out.push(from_report("co_alignment", r, SMOOTH_TOLERANCE));

    out.push(hinge_check(&mut rng, cfg.probes)?);
    Ok(out)
}

/// The hinge is piecewise linear; with random weights a step of `eps`
/// crosses a kink with negligible probability.
fn hinge_check(rng: &mut impl rand::Rng, n_probes: usize) -> Result<ObjectiveCheck> {
    const CODES: usize = 40;
    const MU: f64 = 0.5;
    let eps = 1e-6;
    fn feats(rng: &mut impl rand::Rng) -> Vec<(usize, f64)> {
        let n = rng.gen_range(1..=3);
        (0..n).map(|_| (rng.gen_range(0..CODES), rng.gen_range(0.0..1.0))).collect()
    }
    let triples: Vec<Triple> = (0..60)
        .map(|i| Triple {
            query: QueryId(i),
            positive: feats(rng),
            negative: feats(rng),
        })
        .collect();
    let refs: Vec<&Triple> = triples.iter().collect();
    let mut w: Vec<f64> = (0..CODES).map(|_| rng.gen_range(0.2..2.0)).collect();
    let (_, grad) = weight_loss_grad(&refs, &w, MU);
    let mut coords: Vec<usize> = (0..CODES).filter(|&i| grad[i].abs() > 1e-9).collect();
    coords.truncate(n_probes);
    let res = check_coordinates(&mut w, &grad, &coords, eps, |x| Ok(weight_loss_grad(&refs, x, MU).0))?;
    let probes: Vec<ProbeResult> = res
        .into_iter()
        .map(|(index, analytic, numeric)| ProbeResult {
            index,
            name: format!("w[{index}]"),
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        })
        .collect();
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(ObjectiveCheck {
        objective: "weight_hinge".into(),
        probes,
        max_rel_error,
        tolerance: HINGE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_objective_passes() {
        let checks = gradient_suite(&GradSuiteConfig::default()).unwrap();
        assert_eq!(checks.len(), 5);
        for c in &checks {
            assert!(c.passed(20), "{} {} ({} probes)", c.objective, c.max_rel_error, c.probes.len());
        }
    }
}
