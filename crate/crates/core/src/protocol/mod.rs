//! Evaluation protocols and metrics.
//!
//! Two split generators ([`stratified_kfold_repeated`] and
//! [`leave_one_subject_out`]) and two aggregation modes: per-fold mean and
//! standard deviation for k-fold, pooled predictions for LOSO, where a
//! held-out subject may contribute a single class.

mod metrics;
mod splits;

pub use metrics::{
    aggregate_mean_std, aggregate_pooled, compute_metrics, predict_label, roc_auc, Aggregation,
    FoldMetrics, FoldResult, MetricReport, MetricSet, DEFAULT_THRESHOLD,
};
pub use splits::{leave_one_subject_out, stratified_kfold_repeated, Fold, Protocol, SplitPlan};
