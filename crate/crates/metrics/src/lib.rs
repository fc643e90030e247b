//! Classification scoring: confusion matrices, per-class one-vs-rest
//! metrics, support-weighted summaries, normalized matrices, and scoring of
//! external prediction files.

pub mod confusion;
pub mod error;
pub mod predictions;
pub mod summary;

pub use confusion::ConfusionMatrix;
pub use error::{MetricsError, Result};
pub use predictions::{join_predictions, read_predictions};
pub use summary::{
    per_class_metrics, score, support_weights, weighted_average, ClassMetrics, MetricsReport,
    WeightedSummary,
};
