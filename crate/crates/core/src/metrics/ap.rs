use crate::error::{Error, Result};
use crate::ranking::Scenario;
use crate::scalar::Real;

use super::matching::{match_detections, match_scenario, EvalInput, RankedDetection};

/// Recall sampling of the 101-point COCO evaluator.
pub const COCO_RECALL_POINTS: usize = 101;

/// Interpolated precision-recall curve of one class at one overlap threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve<T> {
    pub recall_points: Vec<T>,
    /// Highest precision reached at recall at least the matching point.
    pub precisions: Vec<T>,
    /// Cumulative counts after each detection in score order.
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

impl<T: Real> PrCurve<T> {
    pub fn ap(&self) -> T {
        if self.precisions.is_empty() {
            return T::zero();
        }
        self.precisions.iter().copied().sum::<T>() / T::from_usize(self.precisions.len()).unwrap()
    }
}

/// Builds the interpolated curve from detections already in score order.
pub fn pr_curve<T: Real>(ranked: &[RankedDetection<T>], n_gt: usize, recall_points: &[T]) -> PrCurve<T> {
    let (mut tp, mut fp) = (Vec::with_capacity(ranked.len()), Vec::with_capacity(ranked.len()));
    let (mut t, mut f) = (0usize, 0usize);
    for d in ranked {
        if d.tp_iou.is_some() {
            t += 1;
        } else {
            f += 1;
        }
        tp.push(t);
        fp.push(f);
    }
    let fn_ = tp.iter().map(|&t| n_gt - t).collect();

    let n = T::from_usize(n_gt.max(1)).unwrap();
    let recall: Vec<T> = tp.iter().map(|&t| T::from_usize(t).unwrap() / n).collect();
    let mut precision: Vec<T> =
        tp.iter().zip(&fp).map(|(&t, &f)| T::from_usize(t).unwrap() / T::from_usize(t + f).unwrap()).collect();
    // make precision non-increasing in recall
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }

    let precisions = recall_points
        .iter()
        .map(|&r| {
            if n_gt == 0 {
                return T::zero();
            }
            recall.iter().position(|&rc| rc >= r).map_or(T::zero(), |k| precision[k])
        })
        .collect();
    PrCurve { recall_points: recall_points.to_vec(), precisions, tp, fp, fn_ }
}

/// AP at overlap threshold `tau`, averaged over classes with ground truths.
pub fn ap_at_iou<T: Real>(input: &EvalInput<T>, tau: T, recall_points: &[T]) -> Result<T> {
    let classes = input.gt_classes();
    if classes.is_empty() {
        return Err(Error::NoGroundTruths);
    }
    let mut sum = T::zero();
    for &c in &classes {
        let (ranked, n_gt) = match_detections(input, c, tau)?;
        sum = sum + pr_curve(&ranked, n_gt, recall_points).ap();
    }
    Ok(sum / T::from_usize(classes.len()).unwrap())
}

/// Mean of [`ap_at_iou`] over the overlap thresholds.
pub fn mean_ap<T: Real>(input: &EvalInput<T>, taus: &[T], recall_points: &[T]) -> Result<T> {
    mean_over(taus, |t| ap_at_iou(input, t, recall_points))
}

/// AP of a labelled scenario read as a single-class detection set.
pub fn ap_at_iou_scenario<T: Real>(scenario: &Scenario<T>, tau: T, recall_points: &[T]) -> Result<T> {
    let (ranked, n_gt) = match_scenario(scenario, tau)?;
    if n_gt == 0 {
        return Err(Error::NoGroundTruths);
    }
    Ok(pr_curve(&ranked, n_gt, recall_points).ap())
}

pub fn mean_ap_scenario<T: Real>(scenario: &Scenario<T>, taus: &[T], recall_points: &[T]) -> Result<T> {
    mean_over(taus, |t| ap_at_iou_scenario(scenario, t, recall_points))
}

fn mean_over<T: Real>(taus: &[T], f: impl Fn(T) -> Result<T>) -> Result<T> {
    if taus.is_empty() {
        return Err(Error::param("taus", "at least one threshold is required"));
    }
    let mut sum = T::zero();
    for &t in taus {
        if !(t > T::zero() && t <= T::one()) {
            return Err(Error::param("taus", format!("threshold {t} outside (0, 1]")));
        }
        sum = sum + f(t)?;
    }
    Ok(sum / T::from_usize(taus.len()).unwrap())
}
