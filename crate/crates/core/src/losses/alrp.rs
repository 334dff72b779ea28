use crate::error::Result;
use crate::geometry::{loc_error, loc_error_grad};
use crate::ranking::{
    assemble_gradients, step, LocalError, RankingContext, RankingLoss, Scenario, StepKind, Undistributed,
};
use crate::scalar::Real;

use super::{LossBreakdown, SelfBalancer};

/// Average LRP loss.
///
/// The cumulative localisation error of a positive sums the errors of every
/// positive scored at least as high, always with the exact step function.
/// Rank normalisation follows the selected step kind.
#[derive(Debug, Clone)]
pub struct AlrpDef<T> {
    /// Localisation error of each positive, in anchor order.
    pub loc_errors: Vec<T>,
    /// Treat `L*_ij` as zero, the way an implementation overlooking the
    /// localisation target would.
    pub wrong_target: bool,
}

impl<T: Real> AlrpDef<T> {
    pub fn from_scenario(scenario: &Scenario<T>) -> Result<Self> {
        Ok(AlrpDef { loc_errors: positive_loc_errors(scenario)?, wrong_target: false })
    }

    /// `sum_{k != i} E_loc(k) H(x_ik)` over positives, exact step.
    fn outranking_loc(&self, ctx: &RankingContext<'_, T>, pi: usize) -> T {
        let i = ctx.positives[pi];
        ctx.positives
            .iter()
            .zip(&self.loc_errors)
            .filter(|(&k, _)| k != i)
            .map(|(&k, &e)| e * step(ctx.scenario.anchors[k].score - ctx.scenario.anchors[i].score, StepKind::Exact))
            .sum()
    }
}

impl<T: Real> RankingLoss<T> for AlrpDef<T> {
    fn normalizer(&self, ctx: &RankingContext<'_, T>) -> T {
        T::from_usize(ctx.positives.len()).unwrap()
    }

    fn local_errors(&self, ctx: &RankingContext<'_, T>) -> Result<Vec<LocalError<T>>> {
        Ok(ctx
            .stats
            .positives
            .iter()
            .enumerate()
            .map(|(pi, p)| {
                let others = self.outranking_loc(ctx, pi);
                let own = self.loc_errors[pi];
                let value = (p.n_fp + own + others) / p.rank;
                if self.wrong_target {
                    LocalError::new(value, T::zero())
                } else {
                    LocalError::with_gap(value, own / p.rank, (p.n_fp + others) / p.rank)
                }
            })
            .collect())
    }

    fn undistributed(&self) -> Undistributed {
        if self.wrong_target {
            Undistributed::AssignToPositive
        } else {
            Undistributed::Drop
        }
    }
}

fn positive_loc_errors<T: Real>(scenario: &Scenario<T>) -> Result<Vec<T>> {
    scenario
        .positive_indices()
        .into_iter()
        .map(|a| {
            let (pred, gt) = scenario.box_pair(a)?;
            loc_error(&pred, &gt, scenario.loc_kind)
        })
        .collect()
}

/// `l(i)` per positive, in anchor order.
pub fn lrp_per_positive<T: Real>(scenario: &Scenario<T>, kind: StepKind<T>) -> Result<Vec<T>> {
    let def = AlrpDef::from_scenario(scenario)?;
    let ctx = RankingContext::new(scenario, kind)?;
    Ok(def.local_errors(&ctx)?.into_iter().map(|l| l.value).collect())
}

/// `dL_loc / dE_loc(m)` for each positive `m`: its own term plus one term for
/// every positive it outranks.
pub fn alrp_soft_weights<T: Real>(scenario: &Scenario<T>, kind: StepKind<T>) -> Result<Vec<T>> {
    let ctx = RankingContext::new(scenario, kind)?;
    Ok(soft_weights(&ctx))
}

fn soft_weights<T: Real>(ctx: &RankingContext<'_, T>) -> Vec<T> {
    let n = T::from_usize(ctx.positives.len()).unwrap();
    let anchors = &ctx.scenario.anchors;
    ctx.positives
        .iter()
        .enumerate()
        .map(|(mi, &m)| {
            let mut w = T::one() / ctx.stats.positives[mi].rank;
            for (ii, &i) in ctx.positives.iter().enumerate() {
                if i != m {
                    w = w + step(anchors[m].score - anchors[i].score, StepKind::Exact) / ctx.stats.positives[ii].rank;
                }
            }
            w / n
        })
        .collect()
}

fn alrp_impl<T: Real>(
    scenario: &Scenario<T>,
    kind: StepKind<T>,
    balancer: Option<&SelfBalancer<T>>,
    wrong_target: bool,
) -> Result<LossBreakdown<T>> {
    let mut def = AlrpDef::from_scenario(scenario)?;
    def.wrong_target = wrong_target;
    let report = assemble_gradients(scenario, &def, kind)?;
    let ctx = RankingContext::new(scenario, kind)?;
    let n = T::from_usize(ctx.positives.len()).unwrap();

    let mut cls = T::zero();
    let mut loc = T::zero();
    for (pi, p) in ctx.stats.positives.iter().enumerate() {
        cls = cls + p.n_fp / p.rank;
        loc = loc + (def.loc_errors[pi] + def.outranking_loc(&ctx, pi)) / p.rank;
    }
    let (cls, loc) = (cls / n, loc / n);

    let weight = balancer.map_or(T::one(), |b| b.active_weight);
    let mut nonsmooth = 0;
    let mut box_grads = Vec::with_capacity(ctx.positives.len());
    for (&a, w) in ctx.positives.iter().zip(soft_weights(&ctx)) {
        let (pred, gt) = scenario.box_pair(a)?;
        let g = loc_error_grad(&pred, &gt, scenario.loc_kind)?;
        nonsmooth += usize::from(g.nonsmooth);
        box_grads.push(g.grad.map(|v| weight * w * v));
    }

    Ok(LossBreakdown {
        total: cls + loc,
        cls_component: cls,
        loc_component: loc,
        score_grads: report.score_grads,
        box_grads,
        positives: ctx.positives.clone(),
        sb_weight_applied: weight,
        step: kind,
        primary_sum: report.loss_value,
        target_sum: report.target_value,
        nonsmooth,
    })
}

pub fn alrp_loss<T: Real>(
    scenario: &Scenario<T>,
    kind: StepKind<T>,
    balancer: Option<&SelfBalancer<T>>,
) -> Result<LossBreakdown<T>> {
    alrp_impl(scenario, kind, balancer, false)
}

/// aLRP with every primary-term target set to zero. Positives that no
/// negative outranks still receive their full local error as gradient, which
/// breaks the positive/negative balance.
pub fn wrong_target_alrp<T: Real>(
    scenario: &Scenario<T>,
    kind: StepKind<T>,
    balancer: Option<&SelfBalancer<T>>,
) -> Result<LossBreakdown<T>> {
    alrp_impl(scenario, kind, balancer, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, LocErrorKind};
    use crate::ranking::AnchorRecord;

    // Positives at the given scores with boxes shrunk to the given IoU.
    fn scenario(pos: &[(f64, f64)], neg: &[f64]) -> Scenario<f64> {
        let gt = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let mut a: Vec<_> = pos
            .iter()
            .map(|&(s, iou)| AnchorRecord::positive(0, s, BBox::new(0.0, 0.0, 1.0, iou).unwrap()))
            .collect();
        a.extend(neg.iter().map(|&s| AnchorRecord::negative(s)));
        Scenario::new(a, vec![gt], LocErrorKind::iou()).unwrap()
    }

    const NEG: [f64; 6] = [0.9, 0.7, 0.6, 0.4, 0.3, 0.2];

    #[test]
    fn lrp_values_first_detector() {
        let sc = scenario(&[(1.0, 0.95), (0.8, 0.8), (0.5, 0.65), (0.1, 0.5)], &NEG);
        let l = lrp_per_positive(&sc, StepKind::Exact).unwrap();
        // (N_FP + cumulative E) / rank with E = 0.1, 0.4, 0.7, 1.0
        let oracle = [0.1 / 1.0, (1.0 + 0.5) / 3.0, (3.0 + 1.2) / 6.0, (6.0 + 2.2) / 10.0];
        for (a, b) in l.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let b = alrp_loss(&sc, StepKind::Exact, None).unwrap();
        assert!((b.total - 0.53).abs() < 0.005);
        assert!((b.total - (b.cls_component + b.loc_component)).abs() < 1e-12);
    }

    #[test]
    fn single_clean_positive_is_zero() {
        let sc = scenario(&[(0.5, 1.0)], &[]);
        assert_eq!(lrp_per_positive(&sc, StepKind::Exact).unwrap(), vec![0.0]);
        let w = alrp_soft_weights(&sc, StepKind::Exact).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn soft_weights_reproduce_loc_component() {
        let sc = scenario(&[(1.0, 0.95), (0.8, 0.8), (0.5, 0.65), (0.1, 0.5)], &NEG);
        let w = alrp_soft_weights(&sc, StepKind::Exact).unwrap();
        let e = [0.1, 0.4, 0.7, 1.0];
        let weighted: f64 = w.iter().zip(e).map(|(w, e)| w * e).sum();
        let b = alrp_loss(&sc, StepKind::Exact, None).unwrap();
        assert!((weighted - b.loc_component).abs() < 1e-12);
        let best = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 0);
    }

    #[test]
    fn balancer_scales_box_gradients() {
        let sc = scenario(&[(0.8, 0.8), (0.3, 0.6)], &[0.5]);
        let plain = alrp_loss(&sc, StepKind::Exact, None).unwrap();
        let sb = SelfBalancer::with_weight(3.0);
        let scaled = alrp_loss(&sc, StepKind::Exact, Some(&sb)).unwrap();
        assert_eq!(scaled.sb_weight_applied, 3.0);
        for (a, b) in plain.box_grads.iter().zip(&scaled.box_grads) {
            for c in 0..4 {
                assert!((3.0 * a[c] - b[c]).abs() < 1e-15);
            }
        }
        assert_eq!(plain.score_grads, scaled.score_grads);
    }

    #[test]
    fn wrong_target_breaks_balance() {
        let sc = scenario(&[(0.9, 0.75), (0.8, 0.75)], &[0.1, 0.2]);
        let bad = wrong_target_alrp(&sc, StepKind::Exact, None).unwrap();
        assert!(bad.positive_grad_sum(&sc) > bad.negative_grad_sum(&sc));
        let good = alrp_loss(&sc, StepKind::Exact, None).unwrap();
        assert_eq!(good.positive_grad_sum(&sc), 0.0);
    }

    #[test]
    fn missing_box_is_error() {
        let mut sc = scenario(&[(0.9, 0.9)], &[0.1]);
        sc.anchors[0].pred_box = None;
        assert!(alrp_loss(&sc, StepKind::Exact, None).is_err());
    }
}
