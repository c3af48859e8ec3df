//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use gram_core::alignment::CodeWeights;
use gram_core::index::{CodeIndex, EngineConfig, RetrievalEngine};
use gram_core::pipeline::{generator, init_model, stage_data, stage_index, DataStage, PipelineConfig};
use gram_core::{ModelParams, Side, TokenId};

pub struct Fixture {
    pub cfg: PipelineConfig,
    pub data: DataStage,
    pub params: ModelParams,
    pub index: CodeIndex,
}

/// Default-sized model (untrained) over a reduced catalog.
pub fn fixture(n_products: usize) -> Fixture {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.n_products = n_products;
    cfg.corpus.n_queries = 200;
    cfg.split.train_queries = 150;
    cfg.split.test_queries = 50;
    let data = stage_data(&cfg).expect("corpus");
    let params = init_model(&cfg, &data.vocab).expect("model");
    let (index, _) = stage_index(&cfg, &data, &params).expect("index");
    Fixture {
        cfg,
        data,
        params,
        index,
    }
}

impl Fixture {
    pub fn query_prompt(&self, i: usize) -> Vec<TokenId> {
        let q = &self.data.test_queries[i % self.data.test_queries.len()];
        generator(&self.cfg, &self.data, &self.params, None).prompt(Side::Query, &q.text)
    }

    pub fn engine(&self, cache_capacity: usize) -> RetrievalEngine {
        RetrievalEngine::new(
            Arc::new(self.params.clone()),
            Arc::new(self.data.vocab.clone()),
            Arc::new(self.data.world.catalog.lexicon.clone()),
            Arc::new(CodeWeights::default()),
            None,
            self.index.clone(),
            EngineConfig {
                cache_capacity,
                ..self.cfg.engine.clone()
            },
        )
        .expect("engine")
    }
}
