use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::ranking::Scenario;
use crate::scalar::Real;

/// 1-based ranks in descending order of value; ties share their average rank.
pub fn average_ranks<T: Real>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![T::zero(); values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = T::from_usize(start + 1 + end).unwrap() / T::from_f64(2.0).unwrap();
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DegenerateCorrelation);
    }
    let n = T::from_usize(x.len()).unwrap();
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        sxy = sxy + (a - mx) * (b - my);
        sxx = sxx + (a - mx) * (a - mx);
        syy = syy + (b - my) * (b - my);
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::DegenerateCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).max(-T::one()).min(T::one()))
}

/// Pearson correlation between the score ranking and the IoU ranking of the
/// positives.
pub fn ranking_correlation<T: Real>(scenario: &Scenario<T>) -> Result<T> {
    let positives = scenario.positive_indices();
    if positives.len() < 2 {
        return Err(Error::DegenerateCorrelation);
    }
    let scores: Vec<T> = positives.iter().map(|&a| scenario.anchors[a].score).collect();
    let ious = positive_ious(scenario, &positives)?;
    pearson(&average_ranks(&scores), &average_ranks(&ious))
}

fn positive_ious<T: Real>(scenario: &Scenario<T>, positives: &[usize]) -> Result<Vec<T>> {
    positives
        .iter()
        .map(|&a| {
            let (p, g) = scenario.box_pair(a)?;
            iou(&p, &g)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    /// IoU order follows score order.
    Upper,
    /// IoU order is the reverse of score order.
    Lower,
}

/// Redistributes the positives' IoUs so their ranking agrees with (Upper) or
/// inverts (Lower) the score ranking. Each positive gets a synthetic box: its
/// ground truth shortened vertically to the assigned IoU.
pub fn ranking_bound_transform<T: Real>(scenario: &Scenario<T>, mode: BoundMode) -> Result<Scenario<T>> {
    let positives = scenario.positive_indices();
    let mut ious = positive_ious(scenario, &positives)?;
    ious.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    if mode == BoundMode::Lower {
        ious.reverse();
    }
    let mut by_score = positives.clone();
    by_score.sort_by(|&a, &b| {
        let (sa, sb) = (scenario.anchors[a].score, scenario.anchors[b].score);
        sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });

    let mut out = scenario.clone();
    for (&a, &o) in by_score.iter().zip(&ious) {
        let (_, g) = scenario.box_pair(a)?;
        out.anchors[a].pred_box = Some(BBox { x1: g.x1, y1: g.y1, x2: g.x2, y2: g.y1 + o * g.height() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[0.3, 0.9, 0.3, 0.1]), vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn pearson_against_formula() {
        let x: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 1.0, 4.0, 3.0];
        // sxy = 3, sxx = syy = 5
        assert!((pearson(&x, &y).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(pearson(&x, &[1.0; 4]), Err(Error::DegenerateCorrelation));
    }
}
