//! Regression and classification metrics, best-pose aggregation and
//! method-comparison reports.

mod aggregate;
mod classify;
mod regression;
mod report;
mod stat;

pub use aggregate::{aggregate_best_pose, filter_by_rmsd, BestPose, Direction, PoseRmsd, PoseScore, MAX_POSES};
pub use classify::{binarize, cohen_kappa, confusion, pr_curve, Binarized, ConfusionSummary, PrCurve, PrPoint, ThresholdRule};
pub use regression::{pearson, ranks, regression_metrics, spearman, RegressionReport};
pub use report::{
    method_comparison_report, read_experimental, write_experimental, ComparisonReport, ExperimentalRow, ExperimentalTable, MethodScores, MethodTargetRow,
    ReportConfig, ValueKind,
};
pub use stat::Stat;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("need at least {need} items, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("both classes required, got {positives} positive and {negatives} negative")]
    SingleClass { positives: usize, negatives: usize },
    #[error("invalid threshold rule: {0}")]
    InvalidRule(String),
    #[error("{group}: {reason}")]
    InvalidGroup { group: String, reason: String },
    #[error("key mismatch: {0}")]
    KeyMismatch(String),
    #[error("table: {0}")]
    Table(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
