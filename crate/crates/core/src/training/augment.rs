use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::sft::SftExample;
use crate::codec::{Code, Side};
use crate::corpus::{category_of, AttributeValue, ClickEvent, ProductId, ProductRecord, QueryRecord};
use crate::error::Result;
use crate::generator::CodeGenerator;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Augmentation {
    /// Existing examples followed by the new ones.
    pub examples: Vec<SftExample>,
    pub added: usize,
    pub generated_query_codes: usize,
    pub kept_query_codes: usize,
    pub generated_product_codes: usize,
    pub kept_product_codes: usize,
}

fn same_category(code: &Code, attrs: &[AttributeValue]) -> bool {
    matches!((code.category(), category_of(attrs)), (Some(a), Some(b)) if a == b)
}

/// Product-side filter: the code describes the product and names its
/// category.
pub fn product_code_relevant(code: &Code, product: &ProductRecord) -> bool {
    same_category(code, &product.attributes) && code.is_subset_of(&product.attributes)
}

/// Query-side filter: the code names the query's category and only uses
/// attributes of the query or of its clicked products.
pub fn query_code_relevant(code: &Code, query: &QueryRecord, clicked: &[&ProductRecord]) -> bool {
    same_category(code, &query.attributes)
        && code
            .attributes()
            .iter()
            .all(|a| query.attributes.contains(a) || clicked.iter().any(|p| p.attributes.contains(a)))
}

/// Generates new codes with the current generators and keeps those that
/// pass both relevance filters.
///
/// Each clicked product is re-coded by the product generator; each query
/// with clicks gets `n_return` beam-searched codes. A query code is kept
/// when it passes the query-side filter and at least one clicked product
/// contains it; it is then added for the query and for every clicked
/// product containing it. Existing examples are never removed.
pub fn augment_codes(
    gen: &CodeGenerator<'_>,
    products: &[ProductRecord],
    queries: &[QueryRecord],
    clicks: &[ClickEvent],
    existing: &[SftExample],
) -> Result<Augmentation> {
    let by_id: BTreeMap<ProductId, &ProductRecord> = products.iter().map(|p| (p.product_id, p)).collect();
    let mut clicked: BTreeMap<_, Vec<&ProductRecord>> = BTreeMap::new();
    for c in clicks {
        if let Some(p) = by_id.get(&c.product_id) {
            clicked.entry(c.query_id).or_default().push(*p);
        }
    }
    let active: Vec<&ProductRecord> = clicked
        .values()
        .flatten()
        .map(|p| p.product_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|id| by_id[&id])
        .collect();

    let product_new: Vec<Result<(usize, Vec<SftExample>)>> = active
        .par_iter()
        .map(|p| {
            let g = gen.generate(Side::Product, &p.title)?;
            let n = g.codes.len();
            let kept = g
                .codes
                .into_iter()
                .filter(|c| product_code_relevant(&c.code, p))
                .map(|c| SftExample::new(Side::Product, p.title.clone(), c.code))
                .collect();
            Ok((n, kept))
        })
        .collect();

    let with_clicks: Vec<(&QueryRecord, &Vec<&ProductRecord>)> = queries
        .iter()
        .filter_map(|q| clicked.get(&q.query_id).map(|ps| (q, ps)))
        .collect();
    let query_new: Vec<Result<(usize, usize, Vec<SftExample>)>> = with_clicks
        .par_iter()
        .map(|(q, ps)| {
            let g = gen.generate(Side::Query, &q.text)?;
            let n = g.codes.len();
            let mut kept = 0;
            let mut out = Vec::new();
            for c in g.codes {
                if !query_code_relevant(&c.code, q, ps) {
                    continue;
                }
                let hosts: Vec<&&ProductRecord> = ps.iter().filter(|p| c.code.is_subset_of(&p.attributes)).collect();
                if hosts.is_empty() {
                    continue;
                }
                kept += 1;
                out.push(SftExample::new(Side::Query, q.text.clone(), c.code.clone()));
                for p in hosts {
                    out.push(SftExample::new(Side::Product, p.title.clone(), c.code.clone()));
                }
            }
            Ok((n, kept, out))
        })
        .collect();

    let mut aug = Augmentation {
        examples: existing.to_vec(),
        ..Default::default()
    };
    let mut seen: BTreeSet<(Side, String, Code)> = existing
        .iter()
        .map(|e| (e.side, e.input.clone(), e.code.clone()))
        .collect();
    let mut push = |aug: &mut Augmentation, e: SftExample| {
        if seen.insert((e.side, e.input.clone(), e.code.clone())) {
            aug.examples.push(e);
            aug.added += 1;
        }
    };
    for r in query_new {
        let (n, kept, out) = r?;
        aug.generated_query_codes += n;
        aug.kept_query_codes += kept;
        for e in out {
            push(&mut aug, e);
        }
    }
    for r in product_new {
        let (n, out) = r?;
        aug.generated_product_codes += n;
        aug.kept_product_codes += out.len();
        for e in out {
            push(&mut aug, e);
        }
    }
    Ok(aug)
}

/// Number of distinct codes in a dataset.
pub fn unique_codes(examples: &[SftExample]) -> usize {
    examples.iter().map(|e| &e.code).collect::<BTreeSet<_>>().len()
}
