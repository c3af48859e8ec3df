use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::store::CodeIndex;
use crate::alignment::{s_rele, CodeWeights};
use crate::corpus::ProductId;
use crate::error::Result;
use crate::generator::GeneratedCode;

/// Default result list length.
pub const DEFAULT_TOP_N: usize = 300;

/// A query-side code with its token probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCode {
    pub code: String,
    pub token_probs: Vec<f64>,
}

impl From<&GeneratedCode> for QueryCode {
    fn from(g: &GeneratedCode) -> Self {
        Self {
            code: g.code.canonical_string(),
            token_probs: g.token_probs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedProduct {
    pub id: ProductId,
    pub score: f64,
    /// Matched codes, in query-code order.
    pub codes: Vec<String>,
}

/// Unions the postings of `codes`, scores each candidate by summing the
/// weighted divergence of every matched code, and returns the best `n`
/// (score descending, then product id ascending).
pub fn retrieve_with_codes(
    index: &CodeIndex,
    codes: &[QueryCode],
    weights: &CodeWeights,
    n: usize,
) -> Result<Vec<RetrievedProduct>> {
    let mut cands: BTreeMap<ProductId, RetrievedProduct> = BTreeMap::new();
    for qc in codes {
        let w = weights.get(&qc.code);
        for &pid in index.postings(&qc.code) {
            let Some(pc) = index.product_codes(pid).iter().find(|c| c.code == qc.code) else {
                continue;
            };
            let s = s_rele(&qc.token_probs, &pc.token_probs, w)?;
            let e = cands.entry(pid).or_insert_with(|| RetrievedProduct {
                id: pid,
                score: 0.0,
                codes: Vec::new(),
            });
            e.score += s;
            e.codes.push(qc.code.clone());
        }
    }
    let mut out: Vec<RetrievedProduct> = cands.into_values().collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    out.truncate(n);
    Ok(out)
}
