//! Ranking-based losses for object detection: AP, aLRP and NDCG losses with
//! error-driven score gradients, localisation-aware box gradients, a fast aLRP
//! evaluator, detection metrics and a small synthetic training loop.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! cover the common case.

pub mod error;
pub mod fast;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod ranking;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use fast::{complexity_probe, fast_alrp, FastConfig, ProbeRow};
pub use geometry::{giou, iou, loc_error, loc_error_grad, BBox, LocErrorKind, LocGrad};
pub use losses::{
    alrp_loss, alrp_soft_weights, ap_loss, lrp_per_positive, ndcg_loss, self_balance_update, wrong_target_alrp,
    LossBreakdown, SelfBalancer,
};
pub use metrics::{
    ap_at_iou, lrp_at, mean_ap, olrp, ranking_bound_transform, ranking_correlation, reference_losses, BoundMode,
    Detection, EvalInput, GroundTruth, LrpResult, OlrpResult, ReferenceLosses,
};
pub use ranking::{
    assemble_gradients, diff_transform, primary_term_sum, rank_stats, step, AnchorRecord, GradReport, Label,
    RankStats, RankingContext, RankingLoss, Scenario, StepKind,
};
pub use scalar::Real;

pub type BBox64 = BBox<f64>;
pub type BBox32 = BBox<f32>;
pub type Scenario64 = Scenario<f64>;
pub type Scenario32 = Scenario<f32>;
pub type LossBreakdown64 = LossBreakdown<f64>;
pub type LossBreakdown32 = LossBreakdown<f32>;
pub type StepKind64 = StepKind<f64>;
pub type SelfBalancer64 = SelfBalancer<f64>;
