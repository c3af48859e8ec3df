//! One function per pipeline stage: check dependencies, load the inputs
//! from the store, run the core stage, persist the outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gram_core::alignment::CodeWeights;
use gram_core::index::{read_index, write_index, CodeIndex};
use gram_core::pipeline::{self, DataStage, PipelineConfig};
use gram_core::training::{train_log_csv, TrainOutcome};
use gram_core::ModelParams;
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{sha256_hex, Stage, Store, StoreError};

pub const MODEL: &str = "model.json";
pub const INDEX: &str = "index.bin";
pub const WEIGHTS: &str = "weights.json";
pub const VOCAB: &str = "vocab.json";
pub const LEXICON: &str = "lexicon.json";
pub const SFT_EXAMPLES: &str = "sft_examples.jsonl";
pub const PRODUCTS: &str = "products.jsonl";
pub const QUERIES: &str = "queries.jsonl";
pub const SPLIT: &str = "split.json";
pub const REPORT_JSON: &str = "report.json";

/// Reads a JSON config (or the defaults) and applies a seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str::<PipelineConfig>(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn pretty<T: Serialize + ?Sized>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("value serializes");
    b.push(b'\n');
    b
}

fn corpus_files(data: &DataStage) -> Vec<(String, Vec<u8>)> {
    let split = json!({
        "train": data.train_queries.iter().map(|q| q.query_id).collect::<Vec<_>>(),
        "test": data.test_queries.iter().map(|q| q.query_id).collect::<Vec<_>>(),
    });
    vec![
        (PRODUCTS.into(), jsonl(data.products())),
        (QUERIES.into(), jsonl(&data.world.queries)),
        ("clicks.jsonl".into(), jsonl(&data.world.clicks)),
        (SPLIT.into(), pretty(&split)),
        (LEXICON.into(), pretty(&data.world.catalog.lexicon)),
        (VOCAB.into(), pretty(&data.vocab)),
        (SFT_EXAMPLES.into(), jsonl(&data.sft_examples)),
    ]
}

/// Regenerates the corpus from the config and checks it against the
/// stored `gen-data` artifacts.
pub fn load_data(cfg: &PipelineConfig, store: &Store) -> Result<DataStage> {
    let manifest = store.manifest(Stage::GenData)?;
    let data = pipeline::stage_data(cfg)?;
    for (name, bytes) in corpus_files(&data) {
        store.read(Stage::GenData, &name)?;
        if manifest.files.get(&name) != Some(&sha256_hex(&bytes)) {
            return Err(StoreError::Corrupt {
                path: store.path(Stage::GenData, &name),
                reason: "does not match the corpus generated from this config; rerun `gram gen-data`".into(),
            }
            .into());
        }
    }
    Ok(data)
}

pub fn load_model(store: &Store, stage: Stage) -> Result<ModelParams> {
    Ok(ModelParams::from_json_bytes(&store.read(stage, MODEL)?)?)
}

pub fn load_index(store: &Store) -> Result<CodeIndex> {
    let bytes = store.read(Stage::BuildIndex, INDEX)?;
    Ok(read_index(&mut bytes.as_slice())?)
}

pub fn load_weights(store: &Store) -> Result<CodeWeights> {
    Ok(serde_json::from_slice(&store.read(Stage::TrainWeights, WEIGHTS)?)?)
}

fn training_files(out: &TrainOutcome) -> Vec<(String, Vec<u8>)> {
    vec![
        (MODEL.into(), out.params.to_json_bytes()),
        ("train_log.csv".into(), train_log_csv(&out.log).into_bytes()),
    ]
}

/// Runs one stage and writes its artifacts.
pub fn run_stage(cfg: &PipelineConfig, store: &Store, stage: Stage) -> Result<()> {
    store.check_dependencies(stage)?;
    store.write_config(cfg)?;
    let start = Instant::now();
    let files = match stage {
        Stage::GenData => corpus_files(&pipeline::stage_data(cfg)?),
        Stage::TrainSft => {
            let data = load_data(cfg, store)?;
            let out = pipeline::stage_sft(cfg, &data)?;
            let mut files = training_files(&out);
            files.push((
                "summary.json".into(),
                pretty(&json!({
                    "initial_heldout_nll": out.initial_heldout_nll,
                    "final_heldout_nll": out.final_heldout_nll,
                })),
            ));
            files
        }
        Stage::Augment => {
            let data = load_data(cfg, store)?;
            let sft = load_model(store, Stage::TrainSft)?;
            let aug = pipeline::stage_augment(cfg, &data, &sft)?;
            let out = pipeline::stage_co_train(cfg, &data, &sft, &aug.examples)?;
            let mut files = training_files(&out);
            files.push(("examples.jsonl".into(), jsonl(&aug.examples)));
            files.push((
                "summary.json".into(),
                pretty(&json!({
                    "added": aug.added,
                    "generated_query_codes": aug.generated_query_codes,
                    "kept_query_codes": aug.kept_query_codes,
                    "generated_product_codes": aug.generated_product_codes,
                    "kept_product_codes": aug.kept_product_codes,
                    "initial_heldout_nll": out.initial_heldout_nll,
                    "final_heldout_nll": out.final_heldout_nll,
                })),
            ));
            files
        }
        Stage::Align => {
            let data = load_data(cfg, store)?;
            let reference = load_model(store, Stage::Augment)?;
            let (ds, pairs) = pipeline::stage_alignment_pairs(cfg, &data)?;
            let out = pipeline::stage_align(cfg, &data, &reference, &pairs)?;
            vec![
                (MODEL.into(), out.params.to_json_bytes()),
                ("pairs.jsonl".into(), jsonl(&pairs)),
                (
                    "summary.json".into(),
                    pretty(&json!({
                        "pairs": ds.pairs.len(),
                        "resampled_pairs": pairs.len(),
                        "skipped_no_positive": ds.skipped_no_positive,
                        "skipped_no_negative": ds.skipped_no_negative,
                        "initial_margin": out.initial_margin,
                        "final_margin": out.final_margin,
                        "log": out.log,
                    })),
                ),
            ]
        }
        Stage::BuildIndex => {
            let data = load_data(cfg, store)?;
            let params = load_model(store, Stage::Align)?;
            let (index, stats) = pipeline::stage_index(cfg, &data, &params)?;
            let mut bytes = Vec::new();
            write_index(&index, &mut bytes)?;
            vec![
                (INDEX.into(), bytes),
                (
                    "summary.json".into(),
                    pretty(&json!({
                        "products": stats.products,
                        "fallbacks": stats.fallbacks,
                        "codes": index.n_codes(),
                    })),
                ),
            ]
        }
        Stage::TrainWeights => {
            let data = load_data(cfg, store)?;
            let params = load_model(store, Stage::Align)?;
            let before = params.fingerprint();
            let index = load_index(store)?;
            let (weights, stats) = pipeline::stage_weights(cfg, &data, &params, &index)?;
            if params.fingerprint() != before {
                bail!("weight training modified the frozen checkpoint");
            }
            vec![(WEIGHTS.into(), pretty(&weights)), ("summary.json".into(), pretty(&stats))]
        }
        Stage::Eval => {
            let data = load_data(cfg, store)?;
            let sft = load_model(store, Stage::TrainSft)?;
            let co = load_model(store, Stage::Augment)?;
            let aligned = load_model(store, Stage::Align)?;
            let index = load_index(store)?;
            let weights = load_weights(store)?;
            let out = pipeline::stage_eval(cfg, &data, &sft, &co, &aligned, index, &weights);
            let results: BTreeMap<&str, _> = out.results.iter().map(|(k, v)| (k.as_str(), v)).collect();
            vec![
                (REPORT_JSON.into(), pretty(&out.report)),
                ("report.csv".into(), out.report.to_csv().into_bytes()),
                ("report.md".into(), out.report.to_markdown().into_bytes()),
                ("results.json".into(), serde_json::to_vec(&results)?),
            ]
        }
    };
    store.write_stage(stage, &files)?;
    log::info!("{stage}: {:.1}s -> {}", start.elapsed().as_secs_f64(), store.dir(stage).display());
    Ok(())
}

/// Runs `stages` in pipeline order.
pub fn run_stages(cfg: &PipelineConfig, store: &Store, stages: &[Stage]) -> Result<()> {
    let mut ordered = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    for s in ordered {
        run_stage(cfg, store, s).with_context(|| format!("stage {s}"))?;
    }
    Ok(())
}
