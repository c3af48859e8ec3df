use std::collections::BTreeMap;

use rand::Rng;

use super::attributes::{AttributeType, AttributeValue};
use super::generate::rng_for;
use super::records::{ProductId, ProductRecord, QueryId, QueryRecord};
use super::spec::NoiseSpec;

const STREAM_EXTRACT_QUERY: u64 = 5 << 32;
const STREAM_EXTRACT_PRODUCT: u64 = 6 << 32;

/// Attribute extraction stand-in: each ground-truth attribute is dropped
/// independently with probability `p_drop`. If everything is dropped the
/// category attribute (or, lacking one, the first attribute) is kept.
pub fn extract_attributes<R: Rng + ?Sized>(
    ground_truth: &[AttributeValue],
    noise: &NoiseSpec,
    rng: &mut R,
) -> Vec<AttributeValue> {
    let mut kept: Vec<AttributeValue> = ground_truth
        .iter()
        .filter(|_| !rng.gen_bool(noise.p_drop.clamp(0.0, 1.0)))
        .cloned()
        .collect();
    if kept.is_empty() {
        let fallback = ground_truth
            .iter()
            .find(|a| a.ty == AttributeType::Category)
            .or_else(|| ground_truth.first());
        kept.extend(fallback.cloned());
    }
    kept.sort();
    kept
}

/// Extracts attributes for every query, each from its own seeded stream.
pub fn extract_query_attributes(
    queries: &[QueryRecord],
    noise: &NoiseSpec,
    seed: u64,
) -> BTreeMap<QueryId, Vec<AttributeValue>> {
    queries
        .iter()
        .map(|q| {
            let mut rng = rng_for(seed, STREAM_EXTRACT_QUERY | q.query_id.0 as u64);
            (q.query_id, extract_attributes(&q.attributes, noise, &mut rng))
        })
        .collect()
}

pub fn extract_product_attributes(
    products: &[ProductRecord],
    noise: &NoiseSpec,
    seed: u64,
) -> BTreeMap<ProductId, Vec<AttributeValue>> {
    products
        .iter()
        .map(|p| {
            let mut rng = rng_for(seed, STREAM_EXTRACT_PRODUCT | p.product_id.0 as u64);
            (p.product_id, extract_attributes(&p.attributes, noise, &mut rng))
        })
        .collect()
}
