//! Evaluation protocol: grid campaigns, correlation statistics and
//! cross-model feature similarity.

mod features;
mod grid;
mod protocol;
mod stats;
mod table;

pub use features::{adaptive_avg_pool, align, feature_correlation_matrix, iqa_clip_features, FeatureMatrix, IqaTap};
pub use grid::{run_grid, AttackPlan, CellOutcome, GridOptions, VqaFactory};
pub use protocol::{
    correlation_protocol, iteration_curve, summarize_all, Aggregate, CorrelationSummary, CurvePoint, ProtocolOptions,
    SweepAxis,
};
pub use stats::{average_ranks, linspace_decreasing, mean_of, median, pearson, spearman};
pub use table::{fmt_sig, CellKey, EvaluationTable, Journal, Record};
