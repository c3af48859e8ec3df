use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{ProductId, QueryId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub value: f64,
    pub evaluated: usize,
    /// Queries skipped because they have no expected products.
    pub excluded: usize,
}

/// Mean over queries of the fraction of expected (clicked) products found
/// in the first `k` results. Queries with nothing expected are excluded;
/// queries without results count as zero.
pub fn recall_at_k(
    results: &BTreeMap<QueryId, Vec<ProductId>>,
    expected: &BTreeMap<QueryId, BTreeSet<ProductId>>,
    k: usize,
) -> RecallReport {
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for (q, rel) in expected {
        if rel.is_empty() {
            excluded += 1;
            continue;
        }
        let got = results
            .get(q)
            .map(|r| r.iter().take(k).filter(|p| rel.contains(p)).count())
            .unwrap_or(0);
        sum += got as f64 / rel.len() as f64;
        evaluated += 1;
    }
    RecallReport {
        value: if evaluated > 0 { sum / evaluated as f64 } else { 0.0 },
        evaluated,
        excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub value: f64,
    pub queries: usize,
    /// Queries with an empty result list; they contribute 0.
    pub empty: usize,
}

/// Mean over queries of the fraction of results whose relevance is at
/// least `threshold`.
pub fn relevance_ratio(
    results: &BTreeMap<QueryId, Vec<ProductId>>,
    relevance: impl Fn(QueryId, ProductId) -> f64,
    threshold: f64,
) -> RelevanceReport {
    let mut sum = 0.0;
    let mut empty = 0;
    for (q, list) in results {
        if list.is_empty() {
            empty += 1;
            continue;
        }
        let ok = list.iter().filter(|&&p| relevance(*q, p) >= threshold).count();
        sum += ok as f64 / list.len() as f64;
    }
    RelevanceReport {
        value: if results.is_empty() { 0.0 } else { sum / results.len() as f64 },
        queries: results.len(),
        empty,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<ProductId> {
        v.iter().map(|&i| ProductId(i)).collect()
    }

    #[test]
    fn worked_example() {
        let results = BTreeMap::from([(QueryId(1), ids(&[1, 9])), (QueryId(2), ids(&[3]))]);
        let expected = BTreeMap::from([
            (QueryId(1), ids(&[1, 2]).into_iter().collect()),
            (QueryId(2), ids(&[3]).into_iter().collect()),
        ]);
        assert_eq!(recall_at_k(&results, &expected, 10).value, 0.75);
    }

    #[test]
    fn cutoff_applies() {
        let results = BTreeMap::from([(QueryId(1), ids(&[5, 1]))]);
        let expected = BTreeMap::from([(QueryId(1), ids(&[1]).into_iter().collect())]);
        assert_eq!(recall_at_k(&results, &expected, 1).value, 0.0);
        assert_eq!(recall_at_k(&results, &expected, 2).value, 1.0);
    }

    #[test]
    fn empty_expectation_excluded() {
        let results = BTreeMap::new();
        let expected = BTreeMap::from([(QueryId(1), BTreeSet::new()), (QueryId(2), ids(&[1]).into_iter().collect())]);
        let r = recall_at_k(&results, &expected, 5);
        assert_eq!((r.value, r.evaluated, r.excluded), (0.0, 1, 1));
    }

    #[test]
    fn relevance_ratio_half() {
        let results = BTreeMap::from([(QueryId(1), ids(&[1, 2])), (QueryId(2), ids(&[3, 4]))]);
        let r = relevance_ratio(&results, |_, p| if p.0 % 2 == 1 { 1.0 } else { 0.0 }, 0.5);
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn empty_result_counts_zero() {
        let results = BTreeMap::from([(QueryId(1), ids(&[1])), (QueryId(2), vec![])]);
        let r = relevance_ratio(&results, |_, _| 1.0, 0.5);
        assert_eq!((r.value, r.empty), (0.5, 1));
    }
}
