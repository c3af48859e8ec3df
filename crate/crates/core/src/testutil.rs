//! Small fixtures shared by unit tests.

use crate::pipeline::{stage_data, DataStage, PipelineConfig};
use crate::seqmodel::ModelConfig;

/// A pipeline small enough to run every stage in a few seconds.
pub(crate) fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.n_products = 120;
    cfg.corpus.n_queries = 60;
    cfg.split.train_queries = 40;
    cfg.split.test_queries = 15;
    cfg.model = ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        ..ModelConfig::default()
    };
    cfg.sft.epochs = 1;
    cfg.co_training.epochs = 1;
    cfg.alignment.epochs = 1;
    cfg.weights.epochs = 2;
    cfg.engine.generation.beam_size = 4;
    cfg.engine.generation.n_return = 4;
    cfg
}

pub(crate) fn small_data() -> (PipelineConfig, DataStage) {
    let cfg = small_config();
    let data = stage_data(&cfg).unwrap();
    (cfg, data)
}
