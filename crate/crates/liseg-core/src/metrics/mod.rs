//! Segmentation evaluation: Dice, exact Hausdorff distance, and
//! dataset-level reporting.

pub mod dice;
pub mod edt;
pub mod hausdorff;
pub mod oracle;
pub mod report;

pub use dice::dice;
pub use edt::distance_transform;
pub use hausdorff::{hausdorff, HdMode, Hausdorff};
pub use report::{
    aggregate, argmax_mask, evaluate_dataset, evaluate_logits, evaluate_masks, predict_volume,
    window_origins, Aggregates, CaseMetrics, EvalOptions, MetricReport, ReportMeta,
};
