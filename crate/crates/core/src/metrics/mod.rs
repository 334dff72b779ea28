//! Evaluation-side metrics: LRP and optimal LRP, interpolated AP, mean AP,
//! reference classification/regression losses and ranking correlation.

mod ap;
mod correlation;
mod lrp;
mod matching;
mod reference;

pub use ap::{ap_at_iou, ap_at_iou_scenario, mean_ap, mean_ap_scenario, pr_curve, PrCurve, COCO_RECALL_POINTS};
pub use correlation::{average_ranks, pearson, ranking_bound_transform, ranking_correlation, BoundMode};
pub use lrp::{lrp_at, lrp_at_scenario, olrp, olrp_scenario, LrpResult, OlrpResult};
pub use matching::{match_detections, match_scenario, Detection, EvalInput, GroundTruth, RankedDetection};
pub use reference::{reference_losses, ReferenceLosses};

use crate::scalar::Real;

/// `n` evenly spaced recall points `1/n, 2/n, ..., 1`.
pub fn recall_points<T: Real>(n: usize) -> Vec<T> {
    let d = T::from_usize(n).unwrap();
    (1..=n).map(|i| T::from_usize(i).unwrap() / d).collect()
}
