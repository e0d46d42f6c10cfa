//! Classification metrics, k-fold cross-validation and the λ sweep.

mod cv;
mod metrics;

pub use cv::{
    best_lambda, cross_validate, cross_validate_prepared, fold_seed, lambda_sweep, lambda_sweep_prepared,
    prepare_cv, sample_std, train_fold, write_sweep_csv, CvConfig, CvData, CvResult, PreparedFold, SweepRow,
};
pub use metrics::{
    classification_metrics, confusion, evaluate_scores, per_class, pr_auc, ClassMetrics, Confusion, MeanMetrics,
    MetricsReport, DEFAULT_THRESHOLD,
};
