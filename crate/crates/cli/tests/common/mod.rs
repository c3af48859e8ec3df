#![allow(dead_code)]

use std::path::Path;
use std::sync::OnceLock;

use gram_cli::{Stage, Store};
use gram_core::pipeline::PipelineConfig;
use gram_core::ModelConfig;

/// A configuration that trains in about a second but still retrieves.
pub fn small_config(out_dir: &Path) -> PipelineConfig {
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
    cfg.sft.epochs = 40;
    cfg.co_training.epochs = 1;
    cfg.alignment.epochs = 1;
    cfg.weights.epochs = 2;
    cfg.engine.generation.beam_size = 4;
    cfg.engine.generation.n_return = 4;
    cfg.engine.generation.constrained = true;
    cfg.out_dir = out_dir.to_path_buf();
    cfg
}

pub fn write_config(cfg: &PipelineConfig, path: &Path) {
    std::fs::write(path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
}

pub struct Built {
    pub dir: tempfile::TempDir,
    pub cfg: PipelineConfig,
    pub store: Store,
}

/// One completed run shared by every test of a binary.
pub fn built() -> &'static Built {
    static RUN: OnceLock<Built> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let store = Store::for_config(&cfg);
        gram_cli::run_stages(&cfg, &store, &Stage::ALL).unwrap();
        Built { dir, cfg, store }
    })
}
