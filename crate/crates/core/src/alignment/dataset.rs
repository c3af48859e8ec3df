use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::AlignmentConfig;
use crate::codec::Code;
use crate::corpus::{rng_for, ClickEvent, CodeTables, ProductId, QueryId};
use crate::error::{GramError, Result};

const NEGATIVE_STREAM: u64 = 20;

/// A (query, product, preferred code, dispreferred code) sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    #[serde(rename = "q")]
    pub query: QueryId,
    #[serde(rename = "t")]
    pub product: ProductId,
    #[serde(rename = "c_w")]
    pub positive: Code,
    #[serde(rename = "c_l")]
    pub negative: Code,
    #[serde(rename = "n")]
    pub repetitions: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentDataset {
    pub pairs: Vec<PreferencePair>,
    /// Summed click count of the pairs for which each code is positive.
    pub support: BTreeMap<Code, u64>,
    pub skipped_no_positive: usize,
    pub skipped_no_negative: usize,
}

/// Crosses, for every click, the codes shared by the query and product
/// tables with up to `negatives_per_positive` codes found in exactly one
/// of them. Repetitions are left at 1; see [`resample_positives`].
pub fn build_alignment_dataset(clicks: &[ClickEvent], tables: &CodeTables, cfg: &AlignmentConfig) -> AlignmentDataset {
    let mut clicks: Vec<&ClickEvent> = clicks.iter().collect();
    clicks.sort_by_key(|c| (c.query_id, c.product_id));
    let mut ds = AlignmentDataset::default();
    for (i, c) in clicks.iter().enumerate() {
        let qc: BTreeSet<&Code> = tables.query(c.query_id).iter().collect();
        let tc: BTreeSet<&Code> = tables.product(c.product_id).iter().collect();
        let positives: Vec<&Code> = qc.intersection(&tc).copied().collect();
        if positives.is_empty() {
            ds.skipped_no_positive += 1;
            continue;
        }
        for pos in &positives {
            *ds.support.entry((*pos).clone()).or_default() += u64::from(c.count);
        }
        let negatives: Vec<&Code> = qc.symmetric_difference(&tc).copied().collect();
        if negatives.is_empty() {
            ds.skipped_no_negative += 1;
            continue;
        }
        let mut rng = rng_for(cfg.seed ^ ((i as u64) << 20), NEGATIVE_STREAM);
        for pos in positives {
            let picked: Vec<&&Code> = negatives
                .choose_multiple(&mut rng, cfg.negatives_per_positive.min(negatives.len()))
                .collect();
            for neg in picked {
                ds.pairs.push(PreferencePair {
                    query: c.query_id,
                    product: c.product_id,
                    positive: pos.clone(),
                    negative: (*neg).clone(),
                    repetitions: 1,
                });
            }
        }
    }
    ds
}

/// `max(1, round(sqrt(k) * code_l / max_code_l))`.
pub fn repetitions(k: u64, code_l: usize, max_code_l: usize) -> Result<u32> {
    if k == 0 {
        return Err(GramError::Data("click support k must be positive".into()));
    }
    if max_code_l == 0 {
        return Err(GramError::Config("max_code_l must be positive".into()));
    }
    let alpha = code_l as f64 / max_code_l as f64;
    let n = ((k as f64).sqrt() * alpha).round();
    Ok((n as u32).max(1))
}

/// Sets every pair's repetition count from its positive code's click
/// support and length.
pub fn resample_positives(
    pairs: &[PreferencePair],
    support: &BTreeMap<Code, u64>,
    cfg: &AlignmentConfig,
) -> Result<Vec<PreferencePair>> {
    pairs
        .iter()
        .map(|p| {
            let k = support.get(&p.positive).copied().unwrap_or(0);
            let n = repetitions(k, p.positive.len(), cfg.max_code_l)?;
            Ok(PreferencePair {
                repetitions: n,
                ..p.clone()
            })
        })
        .collect()
}
