use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Code, Side};
use crate::corpus::{category_of, ProductId, ProductRecord};
use crate::error::Result;
use crate::generator::CodeGenerator;

/// A code attached to a product, with the product-side probability of
/// each of its tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedCode {
    pub code: String,
    pub token_probs: Vec<f64>,
}

/// Inverted index from canonical code strings to products.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodeIndex {
    pub(crate) postings: BTreeMap<String, Vec<ProductId>>,
    pub(crate) products: BTreeMap<ProductId, Vec<IndexedCode>>,
    pub(crate) version: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub products: usize,
    /// Products indexed under their category code because generation
    /// produced nothing usable.
    pub fallbacks: usize,
}

impl CodeIndex {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn postings(&self, code: &str) -> &[ProductId] {
        self.postings.get(code).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn product_codes(&self, id: ProductId) -> &[IndexedCode] {
        self.products.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn products(&self) -> impl Iterator<Item = (ProductId, &[IndexedCode])> {
        self.products.iter().map(|(id, c)| (*id, c.as_slice()))
    }

    pub fn n_codes(&self) -> usize {
        self.postings.len()
    }

    pub fn n_products(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    fn remove_postings(&mut self, id: ProductId) {
        if let Some(old) = self.products.remove(&id) {
            for c in old {
                if let Some(list) = self.postings.get_mut(&c.code) {
                    list.retain(|p| *p != id);
                    if list.is_empty() {
                        self.postings.remove(&c.code);
                    }
                }
            }
        }
    }

    fn insert_product(&mut self, id: ProductId, codes: Vec<IndexedCode>) {
        self.remove_postings(id);
        for c in &codes {
            let list = self.postings.entry(c.code.clone()).or_default();
            if let Err(pos) = list.binary_search(&id) {
                list.insert(pos, id);
            }
        }
        self.products.insert(id, codes);
    }

    /// Copy with `id` re-coded and the version bumped.
    pub fn with_product(&self, id: ProductId, codes: Vec<IndexedCode>) -> Self {
        let mut next = self.clone();
        next.insert_product(id, codes);
        next.version += 1;
        next
    }

    /// Copy without `id` and with the version bumped.
    pub fn without_product(&self, id: ProductId) -> Self {
        let mut next = self.clone();
        next.remove_postings(id);
        next.version += 1;
        next
    }

    /// Assembles an index from per-product code lists.
    pub fn from_products(products: impl IntoIterator<Item = (ProductId, Vec<IndexedCode>)>, version: u64) -> Self {
        let mut idx = CodeIndex {
            version,
            ..Default::default()
        };
        for (id, codes) in products {
            idx.insert_product(id, codes);
        }
        idx
    }
}

/// Codes for one product: the generator's output, or the category code
/// when generation yields nothing. The flag reports the fallback.
pub fn code_product(gen: &CodeGenerator<'_>, product: &ProductRecord) -> Result<(Vec<IndexedCode>, bool)> {
    let generated = gen.generate(Side::Product, &product.title);
    let mut codes: Vec<IndexedCode> = match generated {
        Ok(g) => g
            .codes
            .iter()
            .map(|c| IndexedCode {
                code: c.code.canonical_string(),
                token_probs: c.token_probs(),
            })
            .collect(),
        Err(e) => {
            log::warn!("code generation failed for {}: {e}", product.product_id);
            Vec::new()
        }
    };
    if !codes.is_empty() {
        return Ok((codes, false));
    }
    if let Some(cat) = category_of(&product.attributes) {
        let code = Code::new([cat.clone()])?;
        let probs = gen.score(Side::Product, &product.title, &code)?.iter().map(|l| l.exp()).collect();
        codes.push(IndexedCode {
            code: code.canonical_string(),
            token_probs: probs,
        });
    }
    Ok((codes, true))
}

/// Codes every product with the product generator and builds the index.
pub fn build_index(gen: &CodeGenerator<'_>, products: &[ProductRecord]) -> Result<(CodeIndex, BuildStats)> {
    let coded: Vec<Result<(ProductId, Vec<IndexedCode>, bool)>> = products
        .par_iter()
        .map(|p| code_product(gen, p).map(|(c, f)| (p.product_id, c, f)))
        .collect();
    let mut stats = BuildStats::default();
    let mut lists = Vec::with_capacity(coded.len());
    for r in coded {
        let (id, codes, fallback) = r?;
        stats.products += 1;
        stats.fallbacks += usize::from(fallback);
        lists.push((id, codes));
    }
    Ok((CodeIndex::from_products(lists, 0), stats))
}
