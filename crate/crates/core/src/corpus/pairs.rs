use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::attributes::AttributeValue;
use super::records::{ClickEvent, ProductId, QueryId};
use crate::codec::{Code, MAX_CODE_ATTRIBUTES};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    /// Click count at which a query-product pair counts as high-frequency.
    pub min_clicks: u32,
    pub max_codes: usize,
    pub max_attributes: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            min_clicks: 2,
            max_codes: 10,
            max_attributes: MAX_CODE_ATTRIBUTES,
        }
    }
}

/// Initial codes per query and per product.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodeTables {
    pub query_codes: BTreeMap<QueryId, Vec<Code>>,
    pub product_codes: BTreeMap<ProductId, Vec<Code>>,
}

impl CodeTables {
    pub fn query(&self, id: QueryId) -> &[Code] {
        self.query_codes.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn product(&self, id: ProductId) -> &[Code] {
        self.product_codes.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn code_of(attrs: impl IntoIterator<Item = AttributeValue>, cfg: &PairConfig) -> Option<Code> {
    let mut attrs: Vec<AttributeValue> = attrs.into_iter().collect();
    attrs.sort();
    attrs.truncate(cfg.max_attributes.min(MAX_CODE_ATTRIBUTES));
    Code::truncated(attrs).ok()
}

fn push_unique(list: &mut Vec<Code>, code: Option<Code>, cap: usize) {
    if let Some(c) = code {
        if list.len() < cap && !list.contains(&c) {
            list.push(c);
        }
    }
}

/// Builds the initial query-code and product-code tables from high-frequency
/// clicks.
///
/// A query's codes are its own attribute combination followed by, for each
/// high-frequency clicked product, that product's attributes restricted to
/// the query's attribute set. A product's codes are its own combination
/// followed by the attribute combinations of the queries that clicked it.
/// Lists are deduplicated and capped at `max_codes`; associations are visited
/// by descending click count, then id.
pub fn build_initial_code_pairs(
    clicks: &[ClickEvent],
    query_attrs: &BTreeMap<QueryId, Vec<AttributeValue>>,
    product_attrs: &BTreeMap<ProductId, Vec<AttributeValue>>,
    cfg: &PairConfig,
) -> Result<CodeTables> {
    let mut frequent: Vec<&ClickEvent> = clicks
        .iter()
        .filter(|c| {
            c.count >= cfg.min_clicks
                && query_attrs.contains_key(&c.query_id)
                && product_attrs.contains_key(&c.product_id)
        })
        .collect();
    frequent.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.query_id.cmp(&b.query_id))
            .then(a.product_id.cmp(&b.product_id))
    });

    let mut tables = CodeTables::default();
    for (qid, attrs) in query_attrs {
        let mut list = Vec::new();
        push_unique(&mut list, code_of(attrs.iter().cloned(), cfg), cfg.max_codes);
        tables.query_codes.insert(*qid, list);
    }
    for (pid, attrs) in product_attrs {
        let mut list = Vec::new();
        push_unique(&mut list, code_of(attrs.iter().cloned(), cfg), cfg.max_codes);
        tables.product_codes.insert(*pid, list);
    }

    for c in frequent {
        let q_attrs = &query_attrs[&c.query_id];
        let p_attrs = &product_attrs[&c.product_id];
        let q_set: BTreeSet<&AttributeValue> = q_attrs.iter().collect();
        let restricted = p_attrs.iter().filter(|a| q_set.contains(a)).cloned();
        push_unique(
            tables.query_codes.get_mut(&c.query_id).unwrap(),
            code_of(restricted, cfg),
            cfg.max_codes,
        );
        push_unique(
            tables.product_codes.get_mut(&c.product_id).unwrap(),
            code_of(q_attrs.iter().cloned(), cfg),
            cfg.max_codes,
        );
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AttributeType::*;

    fn av(ty: crate::corpus::AttributeType, v: &str) -> AttributeValue {
        AttributeValue::new(ty, v)
    }

    #[test]
    fn clicked_product_restricted_to_query_set() {
        let q = vec![av(Category, "a"), av(Brand, "b")];
        let p = vec![av(Category, "a"), av(Brand, "b"), av(Color, "c")];
        let qa: BTreeMap<_, _> = [(QueryId(0), q)].into_iter().collect();
        let pa: BTreeMap<_, _> = [(ProductId(0), p)].into_iter().collect();
        let clicks = [ClickEvent {
            query_id: QueryId(0),
            product_id: ProductId(0),
            count: 3,
        }];
        let t = build_initial_code_pairs(&clicks, &qa, &pa, &PairConfig::default()).unwrap();
        let qs: Vec<String> = t.query(QueryId(0)).iter().map(|c| c.canonical_string()).collect();
        assert_eq!(qs, vec!["a,b"]);
        let ps: Vec<String> = t.product(ProductId(0)).iter().map(|c| c.canonical_string()).collect();
        assert_eq!(ps, vec!["a,b,c", "a,b"]);
    }

    #[test]
    fn low_frequency_and_unassociated() {
        let q = vec![av(Category, "a"), av(Brand, "b")];
        let p = vec![av(Category, "a"), av(Color, "c")];
        let qa: BTreeMap<_, _> = [(QueryId(0), q)].into_iter().collect();
        let pa: BTreeMap<_, _> = [(ProductId(0), p.clone()), (ProductId(1), p)].into_iter().collect();
        let clicks = [ClickEvent {
            query_id: QueryId(0),
            product_id: ProductId(0),
            count: 1,
        }];
        let t = build_initial_code_pairs(&clicks, &qa, &pa, &PairConfig::default()).unwrap();
        assert_eq!(t.query(QueryId(0)).len(), 1);
        assert_eq!(t.product(ProductId(1)).len(), 1);
        assert_eq!(t.product(ProductId(1))[0].canonical_string(), "a,c");
    }

    #[test]
    fn caps_code_count() {
        let q = vec![av(Category, "a"), av(Brand, "b"), av(Color, "c"), av(Style, "d")];
        let qa: BTreeMap<_, _> = [(QueryId(0), q.clone())].into_iter().collect();
        let mut pa = BTreeMap::new();
        let mut clicks = Vec::new();
        // Every non-empty subset containing the category gives a distinct code.
        for mask in 0u32..8 {
            let mut attrs = vec![av(Category, "a")];
            for (i, a) in q[1..].iter().enumerate() {
                if mask & (1 << i) != 0 {
                    attrs.push(a.clone());
                }
            }
            attrs.push(av(Material, &format!("m{mask}")));
            pa.insert(ProductId(mask), attrs);
            clicks.push(ClickEvent {
                query_id: QueryId(0),
                product_id: ProductId(mask),
                count: 2,
            });
        }
        let cfg = PairConfig {
            max_codes: 5,
            ..PairConfig::default()
        };
        let t = build_initial_code_pairs(&clicks, &qa, &pa, &cfg).unwrap();
        assert_eq!(t.query(QueryId(0)).len(), 5);
    }
}
