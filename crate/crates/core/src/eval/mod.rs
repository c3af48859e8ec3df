//! Offline metrics, the lexical baseline and the method comparison report.

mod bm25;
mod metrics;
mod report;

pub use bm25::Bm25;
pub use metrics::{recall_at_k, relevance_ratio, RecallReport, RelevanceReport};
pub use report::{EvalReport, MethodRow, RECALL_CUTOFFS};
