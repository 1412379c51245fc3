//! Ranking metrics, attention-entropy diagnostics and representation
//! similarity analyses.

mod entropy;
mod metrics;
mod similarity;
pub mod trace_io;

pub use entropy::{
    average_entropy, entropy_report, row_entropy, uniform_baseline_entropy, BlockEntropy, EntropyReport,
    UserMaps,
};
pub use metrics::{
    evaluate, evaluate_static, model_ranks, popularity_scores, rank_excluding, rank_of_target, recall_ndcg,
    summarize, CutoffMetrics, EvalOptions, EvalReport,
};
pub use similarity::{
    block_similarity, block_states, sample_other_user, similarity_from_states, user_similarity_histogram,
    BlockSimilarity, Histogram, SimilarityReport, DEFAULT_BIN_WIDTH,
};
