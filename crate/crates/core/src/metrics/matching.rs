use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::ranking::{Label, Scenario};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Detection<T> {
    pub score: T,
    #[serde(rename = "box")]
    pub bbox: BBox<T>,
    #[serde(default)]
    pub class: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct GroundTruth<T> {
    #[serde(rename = "box")]
    pub bbox: BBox<T>,
    #[serde(default)]
    pub class: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalInput<T> {
    pub detections: Vec<Detection<T>>,
    pub ground_truths: Vec<GroundTruth<T>>,
}

impl<T: Real> EvalInput<T> {
    pub fn validate(&self) -> Result<()> {
        for (k, d) in self.detections.iter().enumerate() {
            if !d.score.is_finite() {
                return Err(Error::validation(format!("detections[{k}].score"), "score must be finite"));
            }
            d.bbox.validate().map_err(|e| Error::validation(format!("detections[{k}].box"), e.to_string()))?;
        }
        for (k, g) in self.ground_truths.iter().enumerate() {
            g.bbox.validate().map_err(|e| Error::validation(format!("ground_truths[{k}].box"), e.to_string()))?;
        }
        Ok(())
    }

    /// Classes that have at least one ground truth, ascending.
    pub fn gt_classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.ground_truths.iter().map(|g| g.class).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.ground_truths.iter().map(|g| g.class).chain(self.detections.iter().map(|d| d.class)).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// A detection after matching: its score and, for a true positive, the IoU
/// with the ground truth it claimed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedDetection<T> {
    pub score: T,
    pub tp_iou: Option<T>,
}

fn by_score_desc<T: Real>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

/// Greedy matching of one class at overlap threshold `tau`.
///
/// Detections are visited by descending score (ties by input order); each
/// claims the unclaimed ground truth of highest IoU, provided it reaches `tau`.
/// Equal IoUs go to the lower ground-truth index. Returns the detections in
/// visiting order and the number of ground truths of the class.
pub fn match_detections<T: Real>(input: &EvalInput<T>, class: u32, tau: T) -> Result<(Vec<RankedDetection<T>>, usize)> {
    let dets: Vec<&Detection<T>> = input.detections.iter().filter(|d| d.class == class).collect();
    let gts: Vec<&GroundTruth<T>> = input.ground_truths.iter().filter(|g| g.class == class).collect();
    let scores: Vec<T> = dets.iter().map(|d| d.score).collect();
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for k in by_score_desc(&scores) {
        let mut best: Option<(usize, T)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let o = iou(&dets[k].bbox, &gt.bbox).unwrap_or(T::zero());
            if o >= tau && best.map_or(true, |(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        out.push(RankedDetection { score: dets[k].score, tp_iou: best.map(|(_, o)| o) });
    }
    Ok((out, gts.len()))
}

/// Treats a labelled scenario as a single-class detection set.
///
/// Positives and negatives become detections; a positive is a true positive
/// when its IoU reaches `tau` and no higher-scored positive already claimed
/// its ground truth. Every ground truth of the scenario counts, referenced or
/// not.
pub fn match_scenario<T: Real>(scenario: &Scenario<T>, tau: T) -> Result<(Vec<RankedDetection<T>>, usize)> {
    let idx: Vec<usize> = scenario
        .anchors
        .iter()
        .enumerate()
        .filter(|(_, a)| a.label != Label::Ignored)
        .map(|(i, _)| i)
        .collect();
    let scores: Vec<T> = idx.iter().map(|&i| scenario.anchors[i].score).collect();
    let mut taken = vec![false; scenario.gts.len()];
    let mut out = Vec::with_capacity(idx.len());
    for k in by_score_desc(&scores) {
        let a = idx[k];
        let mut tp = None;
        if let Label::Positive(g) = scenario.anchors[a].label {
            let (pred, gt) = scenario.box_pair(a)?;
            let o = iou(&pred, &gt)?;
            if o >= tau && !taken[g] {
                taken[g] = true;
                tp = Some(o);
            }
        }
        out.push(RankedDetection { score: scores[k], tp_iou: tp });
    }
    Ok((out, scenario.gts.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn each_gt_matched_once() {
        let input = EvalInput {
            detections: vec![
                Detection { score: 0.9, bbox: b(0., 0., 1., 1.), class: 0 },
                Detection { score: 0.8, bbox: b(0., 0., 1., 1.), class: 0 },
            ],
            ground_truths: vec![GroundTruth { bbox: b(0., 0., 1., 1.), class: 0 }],
        };
        let (m, n) = match_detections(&input, 0, 0.5).unwrap();
        assert_eq!(n, 1);
        assert_eq!(m[0].tp_iou, Some(1.0));
        assert_eq!(m[1].tp_iou, None);
    }

    #[test]
    fn equal_iou_goes_to_lower_gt_index() {
        let input = EvalInput {
            detections: vec![
                Detection { score: 0.9, bbox: b(0., 0., 2., 1.), class: 0 },
                Detection { score: 0.8, bbox: b(1., 0., 2., 1.), class: 0 },
            ],
            ground_truths: vec![
                GroundTruth { bbox: b(0., 0., 1., 1.), class: 0 },
                GroundTruth { bbox: b(1., 0., 2., 1.), class: 0 },
            ],
        };
        let (m, _) = match_detections(&input, 0, 0.5).unwrap();
        assert_eq!(m[0].tp_iou, Some(0.5));
        // the second detection finds its exact ground truth still free
        assert_eq!(m[1].tp_iou, Some(1.0));
    }

    #[test]
    fn classes_do_not_mix() {
        let input = EvalInput {
            detections: vec![Detection { score: 0.9, bbox: b(0., 0., 1., 1.), class: 1 }],
            ground_truths: vec![GroundTruth { bbox: b(0., 0., 1., 1.), class: 0 }],
        };
        let (m, n) = match_detections(&input, 0, 0.5).unwrap();
        assert!(m.is_empty());
        assert_eq!(n, 1);
    }
}
