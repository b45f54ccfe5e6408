//! Out-of-distribution detection from a network's output trace.

pub mod detector;
pub mod features;
pub mod roc;

pub use detector::{
    evaluate_representation, metacog_report, metrics_json, train_metacog, MetaCogConfig,
    MetaCogMetrics, MetaCogModel, OodSplit,
};
pub use features::{build_trace_features, FeatureMatrix, Representation, Scope, TraceFeatures};
pub use roc::{auroc, fpr_at_tpr};

use crate::data::{Dataset, SyntheticSpec};
use crate::error::Result;

/// Out-of-distribution training and test sets from the family related to
/// `spec`, sized per class like the in-distribution sets they face.
pub fn synthetic_ood_sets(
    spec: &SyntheticSpec,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    SyntheticSpec {
        per_class: train_per_class,
        test_per_class,
        ..spec.ood_family()
    }
    .generate(seed)
}
