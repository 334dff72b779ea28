use crate::error::Result;
use crate::ranking::{assemble_gradients, LocalError, RankingContext, RankingLoss, Scenario, StepKind};
use crate::scalar::Real;

use super::LossBreakdown;

/// Average-precision loss: `l(i) = N_FP(i) / rank(i)`, target 0, `Z = |P|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApDef;

impl<T: Real> RankingLoss<T> for ApDef {
    fn normalizer(&self, ctx: &RankingContext<'_, T>) -> T {
        T::from_usize(ctx.positives.len()).unwrap()
    }

    fn local_errors(&self, ctx: &RankingContext<'_, T>) -> Result<Vec<LocalError<T>>> {
        Ok(ctx.stats.positives.iter().map(|p| LocalError::new(p.n_fp / p.rank, T::zero())).collect())
    }
}

pub fn ap_loss<T: Real>(scenario: &Scenario<T>, kind: StepKind<T>) -> Result<LossBreakdown<T>> {
    let report = assemble_gradients(scenario, &ApDef, kind)?;
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
