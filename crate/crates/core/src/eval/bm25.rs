use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{ProductId, ProductRecord};

/// Okapi BM25 over whitespace-tokenized titles:
///
/// `score(q, d) = sum over distinct query terms t of
///   idf(t) * tf(t, d) (k1 + 1) / (tf(t, d) + k1 (1 - b + b |d| / avgdl))`
/// with `idf(t) = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))`.
#[derive(Debug, Clone)]
pub struct Bm25 {
    k1: f64,
    b: f64,
    docs: Vec<(ProductId, BTreeMap<String, u32>, usize)>,
    df: BTreeMap<String, usize>,
    avgdl: f64,
}

impl Bm25 {
    pub const K1: f64 = 1.2;
    pub const B: f64 = 0.75;

    pub fn new(products: &[ProductRecord]) -> Self {
        Self::with_params(products, Self::K1, Self::B)
    }

    pub fn with_params(products: &[ProductRecord], k1: f64, b: f64) -> Self {
        let mut docs = Vec::with_capacity(products.len());
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut total = 0usize;
        for p in products {
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            let mut len = 0;
            for w in p.title.split_whitespace() {
                *tf.entry(w.to_string()).or_default() += 1;
                len += 1;
            }
            for t in tf.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            total += len;
            docs.push((p.product_id, tf, len));
        }
        let avgdl = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Self { k1, b, docs, df, avgdl }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn score_doc(&self, terms: &BTreeSet<&str>, doc: usize) -> f64 {
        let (_, tf, len) = &self.docs[doc];
        let norm = self.k1 * (1.0 - self.b + self.b * *len as f64 / self.avgdl.max(f64::MIN_POSITIVE));
        terms
            .iter()
            .filter_map(|t| tf.get(*t).map(|&f| (t, f as f64)))
            .map(|(t, f)| self.idf(t) * f * (self.k1 + 1.0) / (f + norm))
            .sum()
    }

    /// Products with positive score, best first (ties by ascending id),
    /// at most `k`.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<(ProductId, f64)> {
        let terms: BTreeSet<&str> = query.split_whitespace().collect();
        let mut out: Vec<(ProductId, f64)> = (0..self.docs.len())
            .map(|i| (self.docs[i].0, self.score_doc(&terms, i)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.truncate(k);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prod(id: u32, title: &str) -> ProductRecord {
        ProductRecord {
            product_id: ProductId(id),
            title: title.into(),
            attributes: vec![],
        }
    }

    #[test]
    fn absent_term_gives_nothing() {
        let bm = Bm25::new(&[prod(1, "red shoe"), prod(2, "blue hat")]);
        assert!(bm.retrieve("green", 10).is_empty());
    }

    #[test]
    fn exact_title_ranks_first() {
        let bm = Bm25::new(&[prod(1, "red shoe"), prod(2, "blue hat"), prod(3, "red hat")]);
        let r = bm.retrieve("blue hat", 10);
        assert_eq!(r[0].0, ProductId(2));
    }

    #[test]
    fn single_term_matches_formula() {
        let bm = Bm25::new(&[prod(1, "a b"), prod(2, "c d e f")]);
        let idf = (1.0f64 + (2.0 - 1.0 + 0.5) / 1.5).ln();
        let avgdl = 3.0;
        let expect = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / avgdl));
        let r = bm.retrieve("a", 5);
        assert!((r[0].1 - expect).abs() < 1e-12);
    }
}
