//! Supervised training of the code generators, joint co-training and the
//! generate-and-filter augmentation loop.

mod augment;
mod sft;

pub use augment::{augment_codes, product_code_relevant, query_code_relevant, unique_codes, Augmentation};
pub use sft::{
    co_training_loss, encode_sft, per_token_nll, sft_loss, split_heldout, train_log_csv, train_sft, BatchMode,
    EncodedSft, SftExample, TrainLogRow, TrainOutcome, TrainingConfig,
};
pub(crate) use sft::SftObjective;
