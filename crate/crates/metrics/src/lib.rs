//! Classification metrics, ROC analysis and cross-validation plumbing.

mod auc;
mod confusion;
mod cv;
mod error;
mod export;
mod folds;
mod leak;
mod report;

pub use auc::{roc_auc, roc_curve, RocPoint};
pub use confusion::ConfusionMatrix;
pub use cv::{cross_validate, CrossValidation, CvSummary, FoldOutcome, MeanStd};
pub use error::{MetricsError, Result};
pub use export::{write_channel_scores_csv, write_confusion_csv, write_report_csv, write_roc_csv};
pub use folds::{FoldPlan, DEFAULT_FOLDS};
pub use leak::{find_leaks, fingerprint};
pub use report::{
    argmax, check_probabilities, compute_metrics, harmonic, ratio, ClassMetrics, MetricsReport,
    Rates, ROW_SUM_TOL,
};
