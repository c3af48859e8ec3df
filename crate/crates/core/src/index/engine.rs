use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use lru::LruCache;
use serde::{Deserialize, Serialize};

use super::retrieve::{retrieve_with_codes, QueryCode, RetrievedProduct};
use super::store::{code_product, CodeIndex};
use crate::alignment::CodeWeights;
use crate::codec::{Side, Vocabulary};
use crate::corpus::{Lexicon, ProductId, ProductRecord};
use crate::error::{GramError, Result};
use crate::generator::CodeGenerator;
use crate::seqmodel::{CodeTrie, GenerationConfig, ModelParams};

/// Atomically replaceable index snapshot.
pub struct IndexHandle {
    current: ArcSwap<CodeIndex>,
    writer: Mutex<()>,
}

impl IndexHandle {
    pub fn new(index: CodeIndex) -> Self {
        Self {
            current: ArcSwap::from_pointee(index),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<CodeIndex> {
        self.current.load_full()
    }

    /// Applies `f` to the current snapshot and publishes the result.
    /// Writers are serialized; readers keep whatever snapshot they loaded.
    pub fn update(&self, f: impl FnOnce(&CodeIndex) -> CodeIndex) -> u64 {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let next = f(&self.current.load());
        let v = next.version();
        self.current.store(Arc::new(next));
        v
    }
}

/// LRU map from query text to generated codes, tagged with the index
/// version they were produced under.
pub struct QueryCache {
    inner: Option<Mutex<LruCache<String, (u64, Arc<Vec<QueryCode>>)>>>,
}

impl QueryCache {
    /// Capacity 0 disables caching.
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: NonZeroUsize::new(capacity).map(|c| Mutex::new(LruCache::new(c))),
        }
    }

    pub fn get(&self, query: &str, version: u64) -> Option<Arc<Vec<QueryCode>>> {
        let mut cache = self.inner.as_ref()?.lock().unwrap_or_else(|e| e.into_inner());
        match cache.get(query) {
            Some((v, codes)) if *v == version => Some(codes.clone()),
            Some(_) => {
                cache.pop(query);
                None
            }
            None => None,
        }
    }

    pub fn put(&self, query: &str, version: u64, codes: Arc<Vec<QueryCode>>) {
        if let Some(m) = &self.inner {
            m.lock().unwrap_or_else(|e| e.into_inner()).put(query.to_string(), (version, codes));
        }
    }

    pub fn len(&self) -> usize {
        self.inner.as_ref().map_or(0, |m| m.lock().unwrap_or_else(|e| e.into_inner()).len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub generation: GenerationConfig,
    pub top_n: usize,
    pub cache_capacity: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            top_n: super::retrieve::DEFAULT_TOP_N,
            cache_capacity: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub products: Vec<RetrievedProduct>,
    pub index_version: u64,
}

/// Online retrieval plus nearline product re-coding over a shared index.
pub struct RetrievalEngine {
    params: Arc<ModelParams>,
    vocab: Arc<Vocabulary>,
    lexicon: Arc<Lexicon>,
    weights: Arc<CodeWeights>,
    trie: Option<Arc<CodeTrie>>,
    config: EngineConfig,
    index: IndexHandle,
    cache: QueryCache,
}

impl RetrievalEngine {
    pub fn new(
        params: Arc<ModelParams>,
        vocab: Arc<Vocabulary>,
        lexicon: Arc<Lexicon>,
        weights: Arc<CodeWeights>,
        trie: Option<Arc<CodeTrie>>,
        index: CodeIndex,
        config: EngineConfig,
    ) -> Result<Self> {
        config.generation.validate()?;
        if config.top_n == 0 {
            return Err(GramError::Config("top_n must be positive".into()));
        }
        if params.config().vocab_size != vocab.len() {
            return Err(GramError::Config(format!(
                "checkpoint vocabulary size {} does not match vocabulary of {} tokens",
                params.config().vocab_size,
                vocab.len()
            )));
        }
        Ok(Self {
            params,
            vocab,
            lexicon,
            weights,
            trie,
            cache: QueryCache::new(config.cache_capacity),
            config,
            index: IndexHandle::new(index),
        })
    }

    pub fn generator(&self) -> CodeGenerator<'_> {
        CodeGenerator {
            params: &self.params,
            vocab: &self.vocab,
            lexicon: &self.lexicon,
            config: &self.config.generation,
            trie: self.trie.as_deref(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Arc<CodeIndex> {
        self.index.snapshot()
    }

    pub fn cache(&self) -> &QueryCache {
        &self.cache
    }

    /// Query codes for `query` under the given index version, from the
    /// cache when possible.
    pub fn query_codes(&self, query: &str, version: u64) -> Result<Arc<Vec<QueryCode>>> {
        if let Some(c) = self.cache.get(query, version) {
            return Ok(c);
        }
        let g = self.generator().generate(Side::Query, query)?;
        let codes: Arc<Vec<QueryCode>> = Arc::new(g.codes.iter().map(QueryCode::from).collect());
        self.cache.put(query, version, codes.clone());
        Ok(codes)
    }

    /// Retrieves at most `min(k, top_n)` products against one snapshot.
    pub fn retrieve(&self, query: &str, k: Option<usize>) -> Result<RetrievalResult> {
        if query.trim().is_empty() {
            return Err(GramError::Data("empty query".into()));
        }
        let snap = self.index.snapshot();
        let n = k.unwrap_or(self.config.top_n).min(self.config.top_n);
        let codes = self.query_codes(query, snap.version())?;
        let products = retrieve_with_codes(&snap, &codes, &self.weights, n)?;
        Ok(RetrievalResult {
            query: query.to_string(),
            products,
            index_version: snap.version(),
        })
    }

    /// Re-codes `product` and publishes a new index version.
    pub fn upsert(&self, product: &ProductRecord) -> Result<u64> {
        let (codes, _) = code_product(&self.generator(), product)?;
        Ok(self.index.update(|cur| cur.with_product(product.product_id, codes)))
    }

    pub fn delete(&self, id: ProductId) -> u64 {
        self.index.update(|cur| cur.without_product(id))
    }
}
