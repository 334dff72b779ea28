use crate::error::Result;
use crate::ranking::{assemble_gradients, LocalError, RankingContext, RankingLoss, Scenario, StepKind};
use crate::scalar::Real;

use super::LossBreakdown;

/// Ideal gain `sum_{r=1}^{n} 1 / log2(1 + r)`.
pub fn ndcg_max_gain<T: Real>(n: usize) -> T {
    (1..=n).map(|r| T::one() / T::from_usize(1 + r).unwrap().log2()).sum()
}

/// NDCG loss `1 - sum_P G(i) / G_max` with `G(i) = 1 / log2(1 + rank(i))` and `Z = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NdcgDef;

impl<T: Real> RankingLoss<T> for NdcgDef {
    fn normalizer(&self, _ctx: &RankingContext<'_, T>) -> T {
        T::one()
    }

    fn local_errors(&self, ctx: &RankingContext<'_, T>) -> Result<Vec<LocalError<T>>> {
        let n = ctx.positives.len();
        let g_max: T = ndcg_max_gain(n);
        let share = g_max / T::from_usize(n).unwrap();
        Ok(ctx
            .stats
            .positives
            .iter()
            .map(|p| {
                let gain = T::one() / (T::one() + p.rank).log2();
                // a positive ranked first has gain 1
                LocalError::with_gap((share - gain) / g_max, (share - T::one()) / g_max, (T::one() - gain) / g_max)
            })
            .collect())
    }
}

pub fn ndcg_loss<T: Real>(scenario: &Scenario<T>, kind: StepKind<T>) -> Result<LossBreakdown<T>> {
    let report = assemble_gradients(scenario, &NdcgDef, kind)?;
    let positives = scenario.positive_indices();
    Ok(LossBreakdown {
        total: report.direct_value,
        cls_component: report.direct_value,
        loc_component: T::zero(),
        score_grads: report.score_grads,
        box_grads: vec![[T::zero(); 4]; positives.len()],
        positives,
        sb_weight_applied: T::one(),
        step: kind,
        primary_sum: report.loss_value,
        target_sum: report.target_value,
        nonsmooth: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, LocErrorKind};
    use crate::ranking::AnchorRecord;

    fn scenario(pos: &[f64], neg: &[f64]) -> Scenario<f64> {
        let unit = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let mut a: Vec<_> = pos.iter().map(|&s| AnchorRecord::positive(0, s, unit)).collect();
        a.extend(neg.iter().map(|&s| AnchorRecord::negative(s)));
        Scenario::new(a, vec![unit], LocErrorKind::iou()).unwrap()
    }

    #[test]
    fn max_gain_reciprocal_form() {
        assert_eq!(ndcg_max_gain::<f64>(1), 1.0);
        let g: f64 = ndcg_max_gain(2);
        assert!((g - (1.0 + 1.0 / 3f64.log2())).abs() < 1e-15);
    }

    #[test]
    fn single_pair_values() {
        let b = ndcg_loss(&scenario(&[0.9], &[0.1]), StepKind::Exact).unwrap();
        assert!(b.total.abs() < 1e-15);
        let b = ndcg_loss(&scenario(&[0.1], &[0.9]), StepKind::Exact).unwrap();
        assert!((b.total - (1.0 - 1.0 / 3f64.log2())).abs() < 1e-15);
        assert!(b.score_grads[0] < 0.0 && b.score_grads[1] > 0.0);
    }

    #[test]
    fn top_ranked_positives_give_zero() {
        let b = ndcg_loss(&scenario(&[0.9, 0.8, 0.7], &[0.1, 0.2]), StepKind::Exact).unwrap();
        assert!(b.total.abs() < 1e-15);
        assert!(b.score_grads.iter().all(|&g| g == 0.0));
    }
}
