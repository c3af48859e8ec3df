//! Stage runner over a content-addressed artifact store, and the HTTP
//! retrieval service.

pub mod artifacts;
pub mod service;
pub mod stages;

pub use artifacts::{Stage, Store, StoreError};
pub use service::{router, AppState, RetrieveRequest, RetrieveResponse, ServiceConfig};
pub use stages::{load_config, run_stage, run_stages};
