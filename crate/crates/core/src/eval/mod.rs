//! Retrieval metrics and ablation drivers.

mod ablation;
mod metrics;

pub use ablation::{
    ablate_data_size, ablate_subject_token, ArmSummary, DataSizeAblation, DataSizeRun, TokenAblation, TokenRun,
};
pub use metrics::{
    cosine, evaluate, evaluate_samples, retrieval_top1, token_cosine, two_way_identification, MetricsReport, Scoring,
};
