use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::ranking::{Label, Scenario};
use crate::scalar::Real;

/// Conventional per-task losses, averaged over their contributors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceLosses<T> {
    /// Binary cross-entropy over positives and negatives, scores read as probabilities.
    pub ce: T,
    /// Summed absolute corner error, averaged over positives.
    pub l1: T,
    /// `1 - IoU`, averaged over positives.
    pub iou_loss: T,
}

pub fn reference_losses<T: Real>(scenario: &Scenario<T>) -> Result<ReferenceLosses<T>> {
    let mut ce = T::zero();
    let mut n_cls = 0usize;
    for (a, rec) in scenario.anchors.iter().enumerate() {
        let s = rec.score;
        if rec.label != Label::Ignored && !(s >= T::zero() && s <= T::one()) {
            return Err(Error::validation(format!("anchors[{a}].score"), "cross-entropy needs a probability in [0, 1]"));
        }
        match rec.label {
            Label::Positive(_) => ce = ce - s.ln(),
            Label::Negative => ce = ce - (T::one() - s).ln(),
            Label::Ignored => continue,
        }
        n_cls += 1;
    }

    let positives = scenario.positive_indices();
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let (mut l1, mut iou_loss) = (T::zero(), T::zero());
    for &a in &positives {
        let (pred, gt) = scenario.box_pair(a)?;
        l1 = l1 + pred.to_array().iter().zip(gt.to_array()).map(|(p, g)| (*p - g).abs()).sum::<T>();
        iou_loss = iou_loss + T::one() - iou(&pred, &gt)?;
    }
    let np = T::from_usize(positives.len()).unwrap();
    Ok(ReferenceLosses { ce: ce / T::from_usize(n_cls).unwrap(), l1: l1 / np, iou_loss: iou_loss / np })
}
