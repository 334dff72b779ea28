use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::ranking::Scenario;
use crate::scalar::Real;

use super::matching::{match_detections, match_scenario, EvalInput, RankedDetection};

/// LRP of a thresholded detection set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrpResult<T> {
    pub total: T,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    pub loc_error_sum: T,
}

impl<T: Real> LrpResult<T> {
    fn from_counts(n_tp: usize, n_fp: usize, n_fn: usize, loc_error_sum: T) -> Result<Self> {
        let denom = n_tp + n_fp + n_fn;
        if denom == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let num = T::from_usize(n_fp + n_fn).unwrap() + loc_error_sum;
        Ok(LrpResult { total: num / T::from_usize(denom).unwrap(), n_tp, n_fp, n_fn, loc_error_sum })
    }
}

/// Optimal LRP: the minimum over score thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlrpResult<T> {
    pub value: T,
    /// Minimising threshold; `None` when there are no detections.
    pub threshold: Option<T>,
    pub components: LrpResult<T>,
}

fn check_tau<T: Real>(tau: T) -> Result<()> {
    if !(tau > T::zero() && tau < T::one()) {
        return Err(Error::param("tau", format!("must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

// All classes pooled, highest score first.
fn pooled<T: Real>(input: &EvalInput<T>, tau: T) -> Result<(Vec<RankedDetection<T>>, usize)> {
    input.validate()?;
    let mut all = Vec::with_capacity(input.detections.len());
    let mut n_gt = 0;
    for c in input.classes() {
        let (r, n) = match_detections(input, c, tau)?;
        all.extend(r);
        n_gt += n;
    }
    all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    Ok((all, n_gt))
}

fn lrp_of_prefix<T: Real>(ranked: &[RankedDetection<T>], n_gt: usize, threshold: T, tau: T) -> Result<LrpResult<T>> {
    let (mut tp, mut fp, mut loc) = (0, 0, T::zero());
    for d in ranked.iter().filter(|d| d.score >= threshold) {
        match d.tp_iou {
            Some(o) => {
                tp += 1;
                loc = loc + (T::one() - o) / (T::one() - tau);
            }
            None => fp += 1,
        }
    }
    LrpResult::from_counts(tp, fp, n_gt - tp, loc)
}

fn olrp_of<T: Real>(ranked: &[RankedDetection<T>], n_gt: usize, tau: T) -> Result<OlrpResult<T>> {
    if ranked.is_empty() {
        let c = LrpResult::from_counts(0, 0, n_gt, T::zero())?;
        return Ok(OlrpResult { value: c.total, threshold: None, components: c });
    }
    let mut best: Option<OlrpResult<T>> = None;
    let (mut tp, mut fp, mut loc) = (0, 0, T::zero());
    for (k, d) in ranked.iter().enumerate() {
        match d.tp_iou {
            Some(o) => {
                tp += 1;
                loc = loc + (T::one() - o) / (T::one() - tau);
            }
            None => fp += 1,
        }
        // evaluate only once every detection sharing this score is in
        if ranked.get(k + 1).is_some_and(|n| n.score == d.score) {
            continue;
        }
        let c = LrpResult::from_counts(tp, fp, n_gt - tp, loc)?;
        // scanning from the highest threshold down, so strict improvement keeps ties high
        if best.map_or(true, |b| c.total < b.value) {
            best = Some(OlrpResult { value: c.total, threshold: Some(d.score), components: c });
        }
    }
    Ok(best.expect("non-empty ranking"))
}

/// LRP of the detections scoring at least `score_threshold`, matched at `tau`.
pub fn lrp_at<T: Real>(input: &EvalInput<T>, score_threshold: T, tau: T) -> Result<LrpResult<T>> {
    check_tau(tau)?;
    let (ranked, n_gt) = pooled(input, tau)?;
    lrp_of_prefix(&ranked, n_gt, score_threshold, tau)
}

pub fn olrp<T: Real>(input: &EvalInput<T>, tau: T) -> Result<OlrpResult<T>> {
    check_tau(tau)?;
    let (ranked, n_gt) = pooled(input, tau)?;
    olrp_of(&ranked, n_gt, tau)
}

/// [`lrp_at`] on a labelled scenario read as a single-class detection set.
pub fn lrp_at_scenario<T: Real>(scenario: &Scenario<T>, score_threshold: T, tau: T) -> Result<LrpResult<T>> {
    check_tau(tau)?;
    let (ranked, n_gt) = match_scenario(scenario, tau)?;
    lrp_of_prefix(&ranked, n_gt, score_threshold, tau)
}

pub fn olrp_scenario<T: Real>(scenario: &Scenario<T>, tau: T) -> Result<OlrpResult<T>> {
    check_tau(tau)?;
    let (ranked, n_gt) = match_scenario(scenario, tau)?;
    olrp_of(&ranked, n_gt, tau)
}
