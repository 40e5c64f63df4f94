//! Cost census and evaluation metrics.

mod cost;
mod metrics;

pub use cost::{
    cloud_comparison, comparison_csv, count_flops, count_params, ComparisonRow, CostEntry,
    CostReport, CostTarget, LayerKind, Part, ReportError, Resolution,
};
pub use metrics::{cross_entropy, miou, rd_loss, ConfusionMatrix, RDConfig};
