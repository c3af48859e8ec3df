//! JSON-over-HTTP retrieval service.
//!
//! `POST /retrieve` reads the current index snapshot; `POST /upsert` hands
//! the product to a single nearline worker thread that re-codes it and
//! publishes the next snapshot; `GET /health` reports readiness.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gram_core::alignment::CodeWeights;
use gram_core::corpus::ProductRecord;
use gram_core::generator::build_code_trie;
use gram_core::index::{read_index, EngineConfig, RetrievalEngine, RetrievedProduct};
use gram_core::seqmodel::GenerationConfig;
use gram_core::training::SftExample;
use gram_core::{Code, GramError, Lexicon, ModelParams, Vocabulary};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

use crate::artifacts::{Stage, Store};
use crate::stages::{INDEX, LEXICON, MODEL, SFT_EXAMPLES, VOCAB, WEIGHTS};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const LISTEN_ENV: &str = "GRAM_LISTEN";

/// Where the service reads its artifacts and how it generates codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub checkpoint: PathBuf,
    pub index: PathBuf,
    /// Learned code weights; uniform when absent.
    pub weights: Option<PathBuf>,
    /// Directory holding the vocabulary, lexicon and training codes.
    pub corpus: PathBuf,
    pub cache_capacity: usize,
    /// Largest number of products returned.
    pub top_n: usize,
    pub generation: GenerationConfig,
}

impl ServiceConfig {
    /// Artifacts of a completed run: aligned checkpoint, its index and the
    /// learned weights.
    pub fn from_store(cfg: &gram_core::pipeline::PipelineConfig, store: &Store) -> Result<Self> {
        store.check_dependencies(Stage::Eval)?;
        Ok(Self {
            listen: DEFAULT_LISTEN.to_string(),
            checkpoint: store.path(Stage::Align, MODEL),
            index: store.path(Stage::BuildIndex, INDEX),
            weights: Some(store.path(Stage::TrainWeights, WEIGHTS)),
            corpus: store.dir(Stage::GenData),
            cache_capacity: cfg.engine.cache_capacity,
            top_n: cfg.engine.top_n,
            generation: cfg.engine.generation.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut paths: Vec<&Path> = vec![&self.checkpoint, &self.index, &self.corpus];
        paths.extend(self.weights.as_deref());
        for p in paths {
            if !p.exists() {
                bail!("service artifact {} does not exist", p.display());
            }
        }
        if self.top_n == 0 {
            bail!("top_n must be positive");
        }
        Ok(())
    }

    pub fn load_engine(&self) -> Result<RetrievalEngine> {
        self.validate()?;
        let read = |p: &Path| std::fs::read(p).with_context(|| format!("reading {}", p.display()));
        let params = ModelParams::from_json_bytes(&read(&self.checkpoint)?)?;
        let vocab: Vocabulary = serde_json::from_slice(&read(&self.corpus.join(VOCAB))?)?;
        let lexicon: Lexicon = serde_json::from_slice(&read(&self.corpus.join(LEXICON))?)?;
        let weights: CodeWeights = match &self.weights {
            Some(p) => serde_json::from_slice(&read(p)?)?,
            None => CodeWeights::default(),
        };
        let index = read_index(&mut read(&self.index)?.as_slice())?;
        let trie = if self.generation.constrained {
            let text = String::from_utf8(read(&self.corpus.join(SFT_EXAMPLES))?)?;
            let mut codes = BTreeSet::<Code>::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                codes.insert(serde_json::from_str::<SftExample>(line)?.code);
            }
            Some(Arc::new(build_code_trie(&vocab, &codes)?))
        } else {
            None
        };
        Ok(RetrievalEngine::new(
            Arc::new(params),
            Arc::new(vocab),
            Arc::new(lexicon),
            Arc::new(weights),
            trie,
            index,
            EngineConfig {
                generation: self.generation.clone(),
                top_n: self.top_n,
                cache_capacity: self.cache_capacity,
            },
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub query: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub products: Vec<RetrievedProduct>,
    pub index_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsertResponse {
    pub new_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn from_core(e: GramError) -> ApiError {
    match e {
        GramError::Data(_)
        | GramError::InvalidCode(_)
        | GramError::CodeParse { .. }
        | GramError::UnknownToken(_)
        | GramError::SequenceTooLong { .. } => bad_request(e.to_string()),
        other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    }
}

fn validate(req: &RetrieveRequest) -> std::result::Result<(), ApiError> {
    if req.query.trim().is_empty() {
        return Err(bad_request("query must not be empty"));
    }
    if req.k == Some(0) {
        return Err(bad_request("k must be positive"));
    }
    Ok(())
}

/// Retrieval through the same path the HTTP handler uses.
pub fn retrieve(engine: &RetrievalEngine, req: &RetrieveRequest) -> std::result::Result<RetrieveResponse, ApiError> {
    validate(req)?;
    let r = engine.retrieve(&req.query, req.k).map_err(from_core)?;
    Ok(RetrieveResponse {
        products: r.products,
        index_version: r.index_version,
    })
}

type UpsertJob = (ProductRecord, oneshot::Sender<gram_core::Result<u64>>);

/// Sending half of the nearline queue.
#[derive(Clone)]
pub struct Nearline {
    tx: mpsc::Sender<UpsertJob>,
}

impl Nearline {
    /// Starts the worker thread; it exits once every sender is dropped.
    pub fn spawn(engine: Arc<RetrievalEngine>, queue: usize) -> Self {
        let (tx, mut rx) = mpsc::channel::<UpsertJob>(queue.max(1));
        std::thread::Builder::new()
            .name("nearline".into())
            .spawn(move || {
                while let Some((product, reply)) = rx.blocking_recv() {
                    let id = product.product_id;
                    let res = engine.upsert(&product);
                    match &res {
                        Ok(v) => log::info!("re-coded {id}, index version {v}"),
                        Err(e) => log::warn!("re-coding {id} failed: {e}"),
                    }
                    let _ = reply.send(res);
                }
            })
            .expect("spawn nearline worker");
        Self { tx }
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Option<Arc<RetrievalEngine>>,
    nearline: Option<Nearline>,
}

impl AppState {
    pub fn new(engine: Arc<RetrievalEngine>) -> Self {
        Self {
            nearline: Some(Nearline::spawn(engine.clone(), 64)),
            engine: Some(engine),
        }
    }

    /// A service with no index loaded; retrieval and upserts answer 503.
    pub fn uninitialized() -> Self {
        Self {
            engine: None,
            nearline: None,
        }
    }

    fn engine(&self) -> std::result::Result<Arc<RetrievalEngine>, ApiError> {
        self.engine
            .clone()
            .ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "index not initialized".into()))
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("malformed request body: {e}")))
}

async fn handle_retrieve(
    State(state): State<AppState>,
    body: Bytes,
) -> std::result::Result<Json<RetrieveResponse>, ApiError> {
    let req: RetrieveRequest = parse(&body)?;
    validate(&req)?;
    let engine = state.engine()?;
    tokio::task::spawn_blocking(move || retrieve(&engine, &req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
}

async fn handle_upsert(
    State(state): State<AppState>,
    body: Bytes,
) -> std::result::Result<Json<UpsertResponse>, ApiError> {
    let product: ProductRecord = parse(&body)?;
    if product.title.trim().is_empty() {
        return Err(bad_request("product title must not be empty"));
    }
    state.engine()?;
    let nearline = state.nearline.as_ref().expect("initialized state has a worker");
    let (tx, rx) = oneshot::channel();
    let gone = || ApiError(StatusCode::SERVICE_UNAVAILABLE, "nearline worker stopped".into());
    nearline.tx.send((product, tx)).await.map_err(|_| gone())?;
    let v = rx.await.map_err(|_| gone())?.map_err(from_core)?;
    Ok(Json(UpsertResponse { new_version: v }))
}

async fn handle_health(State(state): State<AppState>) -> Response {
    match &state.engine {
        Some(e) => Json(serde_json::json!({"status": "ok", "index_version": e.snapshot().version()})).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({"status": "uninitialized"})),
        )
            .into_response(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/retrieve", post(handle_retrieve))
        .route("/upsert", post(handle_upsert))
        .route("/health", get(handle_health))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(config: &ServiceConfig) -> Result<()> {
    let engine = Arc::new(config.load_engine()?);
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(engine))).await?;
    Ok(())
}
