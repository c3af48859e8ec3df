//! In-memory stage functions shared by the command-line tool and the
//! end-to-end tests. Each stage takes the outputs of earlier stages
//! explicitly, so callers may persist and reload them in between.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    build_alignment_dataset, build_weight_triples, code_divergence, encode_pairs, resample_positives,
    split_pairs_by_query, train_code_weights, train_co_alignment, AlignOutcome, AlignmentConfig, AlignmentDataset,
    Candidate, CodeWeights, PreferencePair, WeightConfig, WeightTrainingStats,
};
use crate::codec::{Code, Side, Vocabulary};
use crate::corpus::{
    build_initial_code_pairs, extract_product_attributes, extract_query_attributes, generate_world, relevance_oracle,
    rng_for, AttributeValue, CatalogSpec, ClickEvent, CodeTables, PairConfig, ProductId, ProductRecord, QueryId,
    QueryRecord, World, FILLER_WORDS,
};
use crate::error::{GramError, Result};
use crate::eval::{recall_at_k, relevance_ratio, Bm25, EvalReport, MethodRow, RECALL_CUTOFFS};
use crate::generator::{build_code_trie, CodeGenerator};
use crate::index::{build_index, retrieve_with_codes, BuildStats, CodeIndex, EngineConfig, QueryCode};
use crate::seqmodel::{CodeTrie, ModelConfig, ModelParams};
use crate::training::{
    augment_codes, encode_sft, split_heldout, train_sft, Augmentation, BatchMode, SftExample, TrainOutcome,
    TrainingConfig,
};

pub const METHOD_GRAM: &str = "GRAM";
pub const METHOD_NO_CA: &str = "w/o CA";
pub const METHOD_NO_CT_CA: &str = "w/o CT&CA";
pub const METHOD_BM25: &str = "BM25";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_queries: usize,
    pub test_queries: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_queries: 500,
            test_queries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub relevance_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            relevance_threshold: 0.5,
        }
    }
}

/// Every knob of the pipeline. Stage seeds are derived from `seed`, so the
/// per-section `seed` fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: CatalogSpec,
    pub split: SplitConfig,
    pub pairs: PairConfig,
    /// `vocab_size` is set from the data.
    pub model: ModelConfig,
    pub sft: TrainingConfig,
    pub co_training: TrainingConfig,
    pub alignment: AlignmentConfig,
    pub weights: WeightConfig,
    pub engine: EngineConfig,
    pub eval: EvalConfig,
    /// Root of the artifact store; not part of the config hash.
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: CatalogSpec::default(),
            split: SplitConfig::default(),
            pairs: PairConfig::default(),
            model: ModelConfig::default(),
            sft: TrainingConfig::default(),
            co_training: TrainingConfig {
                epochs: 3,
                batch_mode: BatchMode::Mixed,
                ..TrainingConfig::default()
            },
            alignment: AlignmentConfig::default(),
            weights: WeightConfig::default(),
            engine: EngineConfig::default(),
            eval: EvalConfig::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = rng_for(seed, 0x5eed_0000 + tag);
    rand::RngCore::next_u64(&mut rng)
}

impl PipelineConfig {
    /// Copy with every stage seed derived from the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.corpus.seed = derive_seed(self.seed, 1);
        c.sft.seed = derive_seed(self.seed, 2);
        c.co_training.seed = derive_seed(self.seed, 3);
        c.alignment.seed = derive_seed(self.seed, 4);
        c.weights.seed = derive_seed(self.seed, 5);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.sft.validate()?;
        self.co_training.validate()?;
        self.alignment.validate()?;
        self.weights.validate()?;
        self.engine.generation.validate()?;
        if self.split.train_queries + self.split.test_queries > self.corpus.n_queries {
            return Err(GramError::Config(format!(
                "split of {} + {} queries exceeds the {} generated",
                self.split.train_queries, self.split.test_queries, self.corpus.n_queries
            )));
        }
        if self.split.train_queries == 0 || self.split.test_queries == 0 {
            return Err(GramError::Config("both query splits must be non-empty".into()));
        }
        if self.engine.top_n < *RECALL_CUTOFFS.iter().max().unwrap() {
            return Err(GramError::Config(format!("engine.top_n must be at least {}", RECALL_CUTOFFS[2])));
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut c = self.resolved();
        c.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Corpus, splits, extracted attributes, initial code tables, vocabulary
/// and the initial supervised dataset.
#[derive(Debug, Clone)]
pub struct DataStage {
    pub world: World,
    pub train_queries: Vec<QueryRecord>,
    pub test_queries: Vec<QueryRecord>,
    pub train_clicks: Vec<ClickEvent>,
    pub test_clicks: Vec<ClickEvent>,
    pub tables: CodeTables,
    pub vocab: Vocabulary,
    pub sft_examples: Vec<SftExample>,
}

impl DataStage {
    pub fn products(&self) -> &[ProductRecord] {
        &self.world.catalog.products
    }

    pub fn product_titles(&self) -> BTreeMap<ProductId, String> {
        self.products().iter().map(|p| (p.product_id, p.title.clone())).collect()
    }

    pub fn query_texts(&self) -> BTreeMap<QueryId, String> {
        self.world.queries.iter().map(|q| (q.query_id, q.text.clone())).collect()
    }

    pub fn attrs_by_product(&self) -> BTreeMap<ProductId, &[AttributeValue]> {
        self.products().iter().map(|p| (p.product_id, p.attributes.as_slice())).collect()
    }

    /// Clicked products per test query.
    pub fn test_expected(&self) -> BTreeMap<QueryId, BTreeSet<ProductId>> {
        expected_from(&self.test_queries, &self.test_clicks)
    }
}

fn expected_from(queries: &[QueryRecord], clicks: &[ClickEvent]) -> BTreeMap<QueryId, BTreeSet<ProductId>> {
    let mut m: BTreeMap<QueryId, BTreeSet<ProductId>> = queries.iter().map(|q| (q.query_id, BTreeSet::new())).collect();
    for c in clicks {
        if let Some(s) = m.get_mut(&c.query_id) {
            s.insert(c.product_id);
        }
    }
    m
}

/// Initial supervised pairs: each train query with its codes, each product
/// with its codes.
pub fn initial_sft_examples(
    tables: &CodeTables,
    queries: &[QueryRecord],
    products: &[ProductRecord],
) -> Vec<SftExample> {
    let mut out = Vec::new();
    for q in queries {
        for c in tables.query(q.query_id) {
            out.push(SftExample::new(Side::Query, q.text.clone(), c.clone()));
        }
    }
    for p in products {
        for c in tables.product(p.product_id) {
            out.push(SftExample::new(Side::Product, p.title.clone(), c.clone()));
        }
    }
    out
}

/// Vocabulary over titles, train queries, lexicon values and filler words.
pub fn build_vocabulary(world: &World, train_queries: &[QueryRecord]) -> Vocabulary {
    let values: Vec<String> = world.catalog.lexicon.iter().map(|a| a.value).collect();
    let texts = world
        .catalog
        .products
        .iter()
        .map(|p| p.title.as_str())
        .chain(train_queries.iter().map(|q| q.text.as_str()))
        .chain(FILLER_WORDS);
    Vocabulary::from_corpus(texts, values.iter().map(String::as_str))
}

/// Builds the data stage from the corpus section. Queries are split in
/// generation order: the first `train_queries` train, the next
/// `test_queries` test.
pub fn stage_data(cfg: &PipelineConfig) -> Result<DataStage> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let world = generate_world(&cfg.corpus)?;
    let train_queries: Vec<QueryRecord> = world.queries[..cfg.split.train_queries].to_vec();
    let test_queries: Vec<QueryRecord> =
        world.queries[cfg.split.train_queries..cfg.split.train_queries + cfg.split.test_queries].to_vec();
    let train_ids: BTreeSet<QueryId> = train_queries.iter().map(|q| q.query_id).collect();
    let test_ids: BTreeSet<QueryId> = test_queries.iter().map(|q| q.query_id).collect();
    let train_clicks: Vec<ClickEvent> = world.clicks.iter().filter(|c| train_ids.contains(&c.query_id)).cloned().collect();
    let test_clicks: Vec<ClickEvent> = world.clicks.iter().filter(|c| test_ids.contains(&c.query_id)).cloned().collect();

    let query_attrs = extract_query_attributes(&train_queries, &cfg.corpus.extraction, cfg.corpus.seed);
    let product_attrs = extract_product_attributes(&world.catalog.products, &cfg.corpus.extraction, cfg.corpus.seed);
    let tables = build_initial_code_pairs(&train_clicks, &query_attrs, &product_attrs, &cfg.pairs)?;
    let vocab = build_vocabulary(&world, &train_queries);
    let sft_examples = initial_sft_examples(&tables, &train_queries, &world.catalog.products);
    Ok(DataStage {
        world,
        train_queries,
        test_queries,
        train_clicks,
        test_clicks,
        tables,
        vocab,
        sft_examples,
    })
}

/// Fresh parameters sized for `vocab`.
pub fn init_model(cfg: &PipelineConfig, vocab: &Vocabulary) -> Result<ModelParams> {
    let model = ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    };
    ModelParams::init(model, derive_seed(cfg.seed, 6))
}

/// The supervised and co-training stages hold out the same queries.
fn train_on(
    cfg: &PipelineConfig,
    init: ModelParams,
    vocab: &Vocabulary,
    examples: &[SftExample],
    tc: &TrainingConfig,
) -> Result<TrainOutcome> {
    let max_len = init.config().max_len;
    let enc = encode_sft(vocab, max_len, examples)?;
    let (train, heldout) = split_heldout(&enc, examples, tc.heldout_fraction, derive_seed(cfg.seed, 7));
    train_sft(init, &train, &heldout, tc)
}

/// Supervised training of both generators from scratch.
pub fn stage_sft(cfg: &PipelineConfig, data: &DataStage) -> Result<TrainOutcome> {
    let cfg = cfg.resolved();
    let init = init_model(&cfg, &data.vocab)?;
    train_on(&cfg, init, &data.vocab, &data.sft_examples, &cfg.sft)
}

/// Trie over every code seen in training, for constrained decoding.
pub fn registry_trie(data: &DataStage) -> Result<CodeTrie> {
    let codes: BTreeSet<&Code> = data.sft_examples.iter().map(|e| &e.code).collect();
    build_code_trie(&data.vocab, codes)
}

/// Generator view over `params` with the engine's generation settings.
pub fn generator<'a>(
    cfg: &'a PipelineConfig,
    data: &'a DataStage,
    params: &'a ModelParams,
    trie: Option<&'a CodeTrie>,
) -> CodeGenerator<'a> {
    CodeGenerator {
        params,
        vocab: &data.vocab,
        lexicon: &data.world.catalog.lexicon,
        config: &cfg.engine.generation,
        trie,
    }
}

fn maybe_trie(cfg: &PipelineConfig, data: &DataStage) -> Result<Option<CodeTrie>> {
    if cfg.engine.generation.constrained {
        registry_trie(data).map(Some)
    } else {
        Ok(None)
    }
}

/// Generates and filters new codes with the supervised model.
pub fn stage_augment(cfg: &PipelineConfig, data: &DataStage, sft: &ModelParams) -> Result<Augmentation> {
    let trie = maybe_trie(cfg, data)?;
    let gen = generator(cfg, data, sft, trie.as_ref());
    augment_codes(&gen, data.products(), &data.train_queries, &data.train_clicks, &data.sft_examples)
}

/// Joint training on the augmented dataset, continuing from the
/// supervised model.
pub fn stage_co_train(
    cfg: &PipelineConfig,
    data: &DataStage,
    sft: &ModelParams,
    augmented: &[SftExample],
) -> Result<TrainOutcome> {
    let cfg = cfg.resolved();
    train_on(&cfg, sft.clone(), &data.vocab, augmented, &cfg.co_training)
}

/// Preference pairs from the initial code tables, with repetitions set.
pub fn stage_alignment_pairs(cfg: &PipelineConfig, data: &DataStage) -> Result<(AlignmentDataset, Vec<PreferencePair>)> {
    let cfg = cfg.resolved();
    let ds = build_alignment_dataset(&data.train_clicks, &data.tables, &cfg.alignment);
    let pairs = resample_positives(&ds.pairs, &ds.support, &cfg.alignment)?;
    Ok((ds, pairs))
}

/// Co-alignment starting from, and anchored to, `reference`.
pub fn stage_align(
    cfg: &PipelineConfig,
    data: &DataStage,
    reference: &ModelParams,
    pairs: &[PreferencePair],
) -> Result<AlignOutcome> {
    let cfg = cfg.resolved();
    let gen = generator(&cfg, data, reference, None);
    let enc = encode_pairs(
        reference,
        &data.vocab,
        gen.max_prompt(),
        pairs,
        &data.query_texts(),
        &data.product_titles(),
    )?;
    let (train, heldout) = split_pairs_by_query(enc, cfg.alignment.heldout_fraction, cfg.alignment.seed);
    train_co_alignment(reference, &train, &heldout, &cfg.alignment)
}

/// Index of every product coded by `params`.
pub fn stage_index(cfg: &PipelineConfig, data: &DataStage, params: &ModelParams) -> Result<(CodeIndex, BuildStats)> {
    let trie = maybe_trie(cfg, data)?;
    build_index(&generator(cfg, data, params, trie.as_ref()), data.products())
}

/// Generated codes for each query.
pub fn query_codes(
    cfg: &PipelineConfig,
    data: &DataStage,
    params: &ModelParams,
    queries: &[QueryRecord],
) -> Result<BTreeMap<QueryId, Vec<QueryCode>>> {
    let trie = maybe_trie(cfg, data)?;
    let gen = generator(cfg, data, params, trie.as_ref());
    let out: Vec<Result<(QueryId, Vec<QueryCode>)>> = queries
        .par_iter()
        .map(|q| {
            let g = gen.generate(Side::Query, &q.text)?;
            Ok((q.query_id, g.codes.iter().map(QueryCode::from).collect()))
        })
        .collect();
    out.into_iter().collect()
}

/// Retrieved candidates of every train query, labeled with the relevance
/// oracle and the divergence of each matched code.
pub fn weight_candidates(
    cfg: &PipelineConfig,
    data: &DataStage,
    params: &ModelParams,
    index: &CodeIndex,
) -> Result<BTreeMap<QueryId, Vec<Candidate>>> {
    let codes = query_codes(cfg, data, params, &data.train_queries)?;
    let attrs = data.attrs_by_product();
    let uniform = CodeWeights::default();
    let mut out = BTreeMap::new();
    for q in &data.train_queries {
        let qc = &codes[&q.query_id];
        let by_code: BTreeMap<&str, &QueryCode> = qc.iter().map(|c| (c.code.as_str(), c)).collect();
        let hits = retrieve_with_codes(index, qc, &uniform, cfg.engine.top_n)?;
        let mut cands = Vec::with_capacity(hits.len());
        for h in hits {
            let mut divergences = Vec::with_capacity(h.codes.len());
            for code in &h.codes {
                let pc = index
                    .product_codes(h.id)
                    .iter()
                    .find(|c| &c.code == code)
                    .ok_or_else(|| GramError::Data(format!("{} lost code {code}", h.id)))?;
                divergences.push((code.clone(), code_divergence(&by_code[code.as_str()].token_probs, &pc.token_probs)?));
            }
            let relevance = attrs.get(&h.id).map_or(0.0, |a| relevance_oracle(&q.attributes, a));
            cands.push(Candidate {
                product: h.id,
                relevance,
                divergences,
            });
        }
        out.insert(q.query_id, cands);
    }
    Ok(out)
}

/// Learns per-code weights for the codes of `index`; the model is only
/// read.
pub fn stage_weights(
    cfg: &PipelineConfig,
    data: &DataStage,
    params: &ModelParams,
    index: &CodeIndex,
) -> Result<(CodeWeights, WeightTrainingStats)> {
    let cfg = cfg.resolved();
    let cands = weight_candidates(&cfg, data, params, index)?;
    let ds = build_weight_triples(&cands, &cfg.weights);
    let initial = CodeWeights::uniform(index.codes());
    train_code_weights(&initial, &ds, &cfg.weights)
}

/// Result lists of the test queries for one model/index/weights triple.
pub fn retrieve_test(
    cfg: &PipelineConfig,
    data: &DataStage,
    params: &ModelParams,
    index: &CodeIndex,
    weights: &CodeWeights,
) -> Result<BTreeMap<QueryId, Vec<ProductId>>> {
    let codes = query_codes(cfg, data, params, &data.test_queries)?;
    let mut out = BTreeMap::new();
    for (q, qc) in codes {
        let hits = retrieve_with_codes(index, &qc, weights, cfg.engine.top_n)?;
        out.insert(q, hits.into_iter().map(|h| h.id).collect());
    }
    Ok(out)
}

/// BM25 result lists of the test queries.
pub fn retrieve_bm25(cfg: &PipelineConfig, data: &DataStage) -> BTreeMap<QueryId, Vec<ProductId>> {
    let bm = Bm25::new(data.products());
    data.test_queries
        .iter()
        .map(|q| (q.query_id, bm.retrieve(&q.text, cfg.engine.top_n).into_iter().map(|(p, _)| p).collect()))
        .collect()
}

/// `n` distinct products per test query, drawn uniformly with a seeded
/// stream.
pub fn retrieve_random(data: &DataStage, n: usize, seed: u64) -> BTreeMap<QueryId, Vec<ProductId>> {
    let products = data.products();
    data.test_queries
        .iter()
        .map(|q| {
            let mut rng = rng_for(seed ^ u64::from(q.query_id.0), 40);
            let picks = sample(&mut rng, products.len(), n.min(products.len()));
            (q.query_id, picks.into_iter().map(|i| products[i].product_id).collect())
        })
        .collect()
}

/// Recall at every cutoff plus RelR for one method's result lists.
pub fn score_results(
    cfg: &PipelineConfig,
    data: &DataStage,
    method: &str,
    results: &BTreeMap<QueryId, Vec<ProductId>>,
) -> MethodRow {
    let expected = data.test_expected();
    let recall = RECALL_CUTOFFS.map(|k| recall_at_k(results, &expected, k).value);
    MethodRow {
        method: method.to_string(),
        recall: Some(recall),
        relr: Some(relr_at(cfg, data, results, usize::MAX)),
        queries: expected.len(),
        failure: None,
    }
}

/// RelR over the first `k` results of every list.
pub fn relr_at(cfg: &PipelineConfig, data: &DataStage, results: &BTreeMap<QueryId, Vec<ProductId>>, k: usize) -> f64 {
    let qattrs: BTreeMap<QueryId, &[AttributeValue]> =
        data.test_queries.iter().map(|q| (q.query_id, q.attributes.as_slice())).collect();
    let pattrs = data.attrs_by_product();
    let cut: BTreeMap<QueryId, Vec<ProductId>> =
        results.iter().map(|(q, v)| (*q, v[..v.len().min(k)].to_vec())).collect();
    relevance_ratio(
        &cut,
        |q, p| match (qattrs.get(&q), pattrs.get(&p)) {
            (Some(a), Some(b)) => relevance_oracle(a, b),
            _ => 0.0,
        },
        cfg.eval.relevance_threshold,
    )
    .value
}

pub fn failed_row(method: &str, err: &GramError) -> MethodRow {
    MethodRow {
        method: method.to_string(),
        recall: None,
        relr: None,
        queries: 0,
        failure: Some(err.to_string()),
    }
}

/// Everything produced by a full run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub data: DataStage,
    pub sft: TrainOutcome,
    pub augmentation: Augmentation,
    pub co_trained: TrainOutcome,
    pub alignment_data: AlignmentDataset,
    pub aligned: AlignOutcome,
    pub weights: CodeWeights,
    pub weight_stats: WeightTrainingStats,
    pub indexes: BTreeMap<String, CodeIndex>,
    /// Test-query result lists per method.
    pub results: BTreeMap<String, BTreeMap<QueryId, Vec<ProductId>>>,
    pub report: EvalReport,
    pub timings: Vec<(String, f64)>,
}

impl PipelineRun {
    /// Model evaluated under each method name.
    pub fn model(&self, method: &str) -> Option<&ModelParams> {
        match method {
            METHOD_GRAM => Some(&self.aligned.params),
            METHOD_NO_CA => Some(&self.co_trained.params),
            METHOD_NO_CT_CA => Some(&self.sft.params),
            _ => None,
        }
    }
}

/// Indexes, test result lists and the report of the four methods.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub indexes: BTreeMap<String, CodeIndex>,
    pub results: BTreeMap<String, BTreeMap<QueryId, Vec<ProductId>>>,
    pub report: EvalReport,
}

/// Scores the aligned model with learned weights, the co-trained and the
/// supervised models with uniform weights, and BM25. A method that fails
/// yields a failure row instead of aborting.
pub fn stage_eval(
    cfg: &PipelineConfig,
    data: &DataStage,
    sft: &ModelParams,
    co_trained: &ModelParams,
    aligned: &ModelParams,
    gram_index: CodeIndex,
    weights: &CodeWeights,
) -> EvalOutcome {
    let mut indexes = BTreeMap::new();
    indexes.insert(METHOD_GRAM.to_string(), gram_index);
    let mut rows = Vec::new();
    let mut results = BTreeMap::new();
    let uniform = CodeWeights::default();
    for (method, params, w) in [
        (METHOD_GRAM, aligned, weights),
        (METHOD_NO_CA, co_trained, &uniform),
        (METHOD_NO_CT_CA, sft, &uniform),
    ] {
        let row = (|| {
            if !indexes.contains_key(method) {
                let (idx, _) = stage_index(cfg, data, params)?;
                indexes.insert(method.to_string(), idx);
            }
            let lists = retrieve_test(cfg, data, params, &indexes[method], w)?;
            let row = score_results(cfg, data, method, &lists);
            results.insert(method.to_string(), lists);
            Ok::<_, GramError>(row)
        })();
        rows.push(row.unwrap_or_else(|e| failed_row(method, &e)));
    }
    let bm25 = retrieve_bm25(cfg, data);
    rows.push(score_results(cfg, data, METHOD_BM25, &bm25));
    results.insert(METHOD_BM25.to_string(), bm25);
    EvalOutcome {
        indexes,
        results,
        report: EvalReport { rows },
    }
}

struct Timer(Vec<(String, f64)>, Instant);

impl Timer {
    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        let secs = (now - self.1).as_secs_f64();
        log::info!("stage {name}: {secs:.1}s");
        self.0.push((name.to_string(), secs));
        self.1 = now;
    }
}

/// Runs every stage in memory and evaluates the four methods.
pub fn run_all(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let mut t = Timer(Vec::new(), Instant::now());
    let data = stage_data(cfg)?;
    t.lap("gen-data");
    let sft = stage_sft(cfg, &data)?;
    t.lap("train-sft");
    let augmentation = stage_augment(cfg, &data, &sft.params)?;
    t.lap("augment");
    let co_trained = stage_co_train(cfg, &data, &sft.params, &augmentation.examples)?;
    t.lap("co-train");
    let (alignment_data, pairs) = stage_alignment_pairs(cfg, &data)?;
    let aligned = stage_align(cfg, &data, &co_trained.params, &pairs)?;
    t.lap("align");
    let (gram_index, _) = stage_index(cfg, &data, &aligned.params)?;
    t.lap("build-index");
    let (weights, weight_stats) = stage_weights(cfg, &data, &aligned.params, &gram_index)?;
    t.lap("train-weights");

    let eval = stage_eval(cfg, &data, &sft.params, &co_trained.params, &aligned.params, gram_index, &weights);
    t.lap("eval");
    Ok(PipelineRun {
        data,
        sft,
        augmentation,
        co_trained,
        alignment_data,
        aligned,
        weights,
        weight_stats,
        indexes: eval.indexes,
        results: eval.results,
        report: eval.report,
        timings: t.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::small_config;

    #[test]
    fn config_hash_tracks_content() {
        let a = PipelineConfig::default();
        assert_eq!(a.hash(), PipelineConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
        let b = PipelineConfig { seed: 2, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        // stage seeds are derived, so per-section seeds do not matter
        let mut c = a.clone();
        c.sft.seed = 99;
        c.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn config_round_trips_through_json() {
        let a = small_config();
        let s = serde_json::to_string(&a).unwrap();
        let back: PipelineConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(a, back);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_splits_are_rejected() {
        let mut cfg = small_config();
        cfg.split.train_queries = 1000;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.split.test_queries = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.engine.top_n = 100;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn data_stage_splits_queries_and_clicks() {
        let cfg = small_config();
        let data = stage_data(&cfg).unwrap();
        assert_eq!(data.train_queries.len(), 40);
        assert_eq!(data.test_queries.len(), 15);
        let train: BTreeSet<QueryId> = data.train_queries.iter().map(|q| q.query_id).collect();
        assert!(data.train_clicks.iter().all(|c| train.contains(&c.query_id)));
        assert!(data.test_clicks.iter().all(|c| !train.contains(&c.query_id)));
        assert!(data.products().iter().all(|p| !data.tables.product(p.product_id).is_empty()));
    }

    #[test]
    fn small_pipeline_is_deterministic_and_weights_leave_model_untouched() {
        let cfg = small_config();
        let a = run_all(&cfg).unwrap();
        let b = run_all(&cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.rows.len(), 4);
        assert!(a.report.rows.iter().all(|r| r.failure.is_none()));

        let before = a.aligned.params.to_json_bytes();
        let index = &a.indexes[METHOD_GRAM];
        stage_weights(&cfg, &a.data, &a.aligned.params, index).unwrap();
        assert_eq!(before, a.aligned.params.to_json_bytes());

        let random = retrieve_random(&a.data, 50, 1);
        assert!(random.values().all(|v| v.len() == 50));
        let row = score_results(&cfg, &a.data, "random", &random);
        assert!(row.relr.unwrap() <= 1.0);
        assert_eq!(relr_at(&cfg, &a.data, &a.results[METHOD_GRAM], usize::MAX), a.report.rows[0].relr.unwrap());
    }
}
