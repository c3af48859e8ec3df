use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::codec::{Code, Side};
use crate::error::{GramError, Result};
use crate::generator::CodeGenerator;

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

static CLAMPED: AtomicU64 = AtomicU64::new(0);

/// Number of probabilities clamped to [`PROB_FLOOR`] so far in this process.
pub fn clamped_probability_count() -> u64 {
    CLAMPED.load(Ordering::Relaxed)
}

fn clamp(p: f64) -> f64 {
    if p > PROB_FLOOR {
        p
    } else {
        CLAMPED.fetch_add(1, Ordering::Relaxed);
        PROB_FLOOR
    }
}

/// `p ln(2p/(p+q)) + q ln(2q/(p+q))`.
pub fn jsd_term(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp(p), clamp(q));
    let s = p + q;
    let v = p * (2.0 * p / s).ln() + q * (2.0 * q / s).ln();
    v.max(0.0)
}

/// Unweighted divergence of a code: the sum of [`jsd_term`] over its
/// tokens under the two prompts.
pub fn code_divergence(query_probs: &[f64], product_probs: &[f64]) -> Result<f64> {
    if query_probs.len() != product_probs.len() {
        return Err(GramError::Shape(format!(
            "token profiles of length {} and {}",
            query_probs.len(),
            product_probs.len()
        )));
    }
    Ok(query_probs.iter().zip(product_probs).map(|(&p, &q)| jsd_term(p, q)).sum())
}

/// Score of a query-product pair under one shared code.
pub fn s_rele(query_probs: &[f64], product_probs: &[f64], weight: f64) -> Result<f64> {
    Ok(weight * code_divergence(query_probs, product_probs)?)
}

/// Sum of [`s_rele`] over `(weight, query probs, product probs)` of every
/// matched code. `None` when nothing matched.
pub fn aggregate_relevance<'a>(matched: impl IntoIterator<Item = (f64, &'a [f64], &'a [f64])>) -> Result<Option<f64>> {
    let mut total = None;
    for (w, q, t) in matched {
        *total.get_or_insert(0.0) += s_rele(q, t, w)?;
    }
    Ok(total)
}

/// Teacher-forced score of one code for a query text and product title.
pub fn s_rele_model(gen: &CodeGenerator<'_>, query: &str, title: &str, code: &Code, weight: f64) -> Result<f64> {
    let q: Vec<f64> = gen.score(Side::Query, query, code)?.iter().map(|l| l.exp()).collect();
    let t: Vec<f64> = gen.score(Side::Product, title, code)?.iter().map(|l| l.exp()).collect();
    s_rele(&q, &t, weight)
}

/// One weight per code string; codes without an entry weigh 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CodeWeights {
    weights: BTreeMap<String, f64>,
}

impl CodeWeights {
    pub const DEFAULT: f64 = 1.0;

    pub fn uniform<'a>(codes: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            weights: codes.into_iter().map(|c| (c.to_string(), Self::DEFAULT)).collect(),
        }
    }

    pub fn get(&self, code: &str) -> f64 {
        self.weights.get(code).copied().unwrap_or(Self::DEFAULT)
    }

    pub fn set(&mut self, code: impl Into<String>, w: f64) {
        self.weights.insert(code.into(), w);
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
