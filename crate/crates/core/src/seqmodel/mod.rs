//! Small decoder-only transformer with reverse-mode autodiff, incremental
//! decoding and beam search.

mod decode;
mod gradcheck;
pub(crate) mod kernels;
mod model;
mod objective;
mod optim;
mod params;
mod tape;

#[cfg(test)]
mod tests;

pub use decode::{beam_search, code_trie, generatable_tokens, hypothesis_text, BeamOutput, CodeTrie, GenerationConfig, Hypothesis};
pub use gradcheck::{check_coordinates, check_model_gradient, relative_error, GradCheckReport, ProbeResult, MIN_PROBE_GRAD};
pub use model::{sequence_logprob, token_logprobs};
pub use objective::{loss_grad, objective_loss, DropoutSpec, LossGrad, SequenceObjective, SequenceRef, GRAD_SHARDS};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ModelConfig, ModelParams, ParamId, TensorSpec};
