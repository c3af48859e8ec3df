//! Code inverted index, retrieval and nearline updates.

mod engine;
mod format;
mod retrieve;
mod store;

pub use engine::{EngineConfig, IndexHandle, QueryCache, RetrievalEngine, RetrievalResult};
pub use format::{read_index, write_index, INDEX_FORMAT, INDEX_MAGIC};
pub use retrieve::{retrieve_with_codes, QueryCode, RetrievedProduct, DEFAULT_TOP_N};
pub use store::{build_index, code_product, BuildStats, CodeIndex, IndexedCode};
