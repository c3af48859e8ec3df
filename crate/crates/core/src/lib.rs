//! Generative retrieval over attribute codes: synthetic corpus, code
//! encoding, a small transformer code generator, training and alignment
//! procedures, the inverted code index and offline evaluation.

pub mod codec;
pub mod alignment;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod generator;
pub mod index;
pub mod pipeline;
pub mod seqmodel;
pub mod training;
pub mod verify;
#[cfg(test)]
mod testutil;

pub use codec::{Code, Side, TokenId, Vocabulary};
pub use corpus::{AttributeType, AttributeValue, Lexicon, ProductId, QueryId};
pub use error::{GramError, Result};
pub use seqmodel::{ModelConfig, ModelParams};
