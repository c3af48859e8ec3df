//! Preference alignment of the two generators and learning of per-code
//! relevance weights.

mod coalign;
mod config;
mod dataset;
mod relevance;
mod weights;

pub use coalign::{
    averaged_logprob, averaged_prob, ca_loss, encode_pairs, mean_margin, split_pairs_by_query, train_co_alignment,
    AlignLogRow, AlignOutcome, EncodedPair,
};
pub(crate) use coalign::CoAlignObjective;
pub use config::{AlignmentConfig, WeightConfig};
pub use dataset::{build_alignment_dataset, repetitions, resample_positives, AlignmentDataset, PreferencePair};
pub use relevance::{
    aggregate_relevance, clamped_probability_count, code_divergence, jsd_term, s_rele, s_rele_model, CodeWeights,
    PROB_FLOOR,
};
pub use weights::{
    build_weight_triples, pair_score, pairwise_accuracy, train_code_weights, weight_loss_grad, weight_pairwise_loss,
    Candidate, Features, Triple, WeightDataset, WeightTrainingStats,
};
