//! Difference transform, step functions, rank statistics and the generic
//! error-driven gradient assembly every ranking loss plugs into.
//!
//! A loss is described by its per-positive local error `l(i)`, the value
//! `l*(i)` that error takes once `i` is ranked above every negative, a
//! normaliser `Z` and a distribution `p(j|i)` over negatives. The primary term
//! is `L_ij = l(i) p(j|i)`, its target `L*_ij = l*(i) p(j|i)` and the update
//! `dx_ij = L*_ij - L_ij`. Score gradients follow as
//!
//! ```text
//! dL/ds_i = (1/Z) sum_j dx_ij      (i positive)
//! dL/ds_j = -(1/Z) sum_i dx_ij     (j negative)
//! ```
//!
//! which makes the summed gradient magnitudes of positives and negatives equal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, LocErrorKind};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    /// Foreground anchor matched to the ground truth with this index.
    Positive(usize),
    Negative,
    /// Excluded from every sum.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorRecord<T> {
    pub label: Label,
    pub score: T,
    pub pred_box: Option<BBox<T>>,
}

impl<T: Real> AnchorRecord<T> {
    pub fn positive(gt: usize, score: T, pred_box: BBox<T>) -> Self {
        AnchorRecord { label: Label::Positive(gt), score, pred_box: Some(pred_box) }
    }

    pub fn negative(score: T) -> Self {
        AnchorRecord { label: Label::Negative, score, pred_box: None }
    }

    pub fn ignored(score: T) -> Self {
        AnchorRecord { label: Label::Ignored, score, pred_box: None }
    }
}

/// A labelled anchor set: the universe every loss and metric is computed over.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub anchors: Vec<AnchorRecord<T>>,
    pub gts: Vec<BBox<T>>,
    pub loc_kind: LocErrorKind<T>,
}

impl<T: Real> Scenario<T> {
    pub fn new(anchors: Vec<AnchorRecord<T>>, gts: Vec<BBox<T>>, loc_kind: LocErrorKind<T>) -> Result<Self> {
        let s = Scenario { anchors, gts, loc_kind };
        s.validate()?;
        Ok(s)
    }

    /// Structural checks: finite scores, valid boxes and ground-truth references.
    pub fn validate(&self) -> Result<()> {
        self.loc_kind.validate()?;
        for (k, g) in self.gts.iter().enumerate() {
            g.validate().map_err(|e| Error::validation(format!("gts[{k}]"), e.to_string()))?;
        }
        for (a, rec) in self.anchors.iter().enumerate() {
            if !rec.score.is_finite() {
                return Err(Error::validation(format!("anchors[{a}].score"), "score must be finite"));
            }
            if let Some(b) = &rec.pred_box {
                b.validate().map_err(|e| Error::validation(format!("anchors[{a}].box"), e.to_string()))?;
            }
            if let Label::Positive(gt) = rec.label {
                if gt >= self.gts.len() {
                    return Err(Error::InvalidGtIndex { anchor: a, gt, n_gts: self.gts.len() });
                }
            }
        }
        Ok(())
    }

    pub fn positive_indices(&self) -> Vec<usize> {
        self.indices_where(|l| matches!(l, Label::Positive(_)))
    }

    pub fn negative_indices(&self) -> Vec<usize> {
        self.indices_where(|l| matches!(l, Label::Negative))
    }

    fn indices_where(&self, f: impl Fn(&Label) -> bool) -> Vec<usize> {
        self.anchors.iter().enumerate().filter(|(_, a)| f(&a.label)).map(|(i, _)| i).collect()
    }

    pub fn scores(&self) -> Vec<T> {
        self.anchors.iter().map(|a| a.score).collect()
    }

    /// Predicted and ground-truth box of a positive anchor.
    pub fn box_pair(&self, anchor: usize) -> Result<(BBox<T>, BBox<T>)> {
        let rec = &self.anchors[anchor];
        let Label::Positive(gt) = rec.label else {
            return Err(Error::validation(format!("anchors[{anchor}]"), "not a positive anchor"));
        };
        let pred = rec.pred_box.ok_or(Error::MissingBox { anchor })?;
        let gt_box = *self.gts.get(gt).ok_or(Error::InvalidGtIndex { anchor, gt, n_gts: self.gts.len() })?;
        Ok((pred, gt_box))
    }
}

/// Step function `H` applied to difference transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StepKind<T> {
    /// `H(x) = 1` for `x >= 0`, else 0.
    Exact,
    /// Piecewise-linear ramp `x / 2 delta + 1/2` clamped to `[0, 1]`.
    Smooth { delta: T },
}

impl<T: Real> StepKind<T> {
    pub fn smooth(delta: T) -> Result<Self> {
        if !(delta > T::zero() && delta.is_finite()) {
            return Err(Error::param("delta", format!("must be positive and finite, got {delta}")));
        }
        Ok(StepKind::Smooth { delta })
    }

    /// Largest `x` at which `H(x)` is still zero.
    pub fn support_lower_bound(&self) -> T {
        match *self {
            StepKind::Exact => T::zero(),
            StepKind::Smooth { delta } => -delta,
        }
    }
}

impl<T: Real> Default for StepKind<T> {
    fn default() -> Self {
        StepKind::Smooth { delta: T::one() }
    }
}

#[inline]
pub fn step<T: Real>(x: T, kind: StepKind<T>) -> T {
    match kind {
        StepKind::Exact => {
            if x >= T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        StepKind::Smooth { delta } => {
            if x < -delta {
                T::zero()
            } else if x > delta {
                T::one()
            } else {
                x / (lit::<T>(2.0) * delta) + lit(0.5)
            }
        }
    }
}

/// `x_ij = s_j - s_i`; positive when `j` outscores `i`.
#[inline]
pub fn diff_transform<T: Real>(scenario: &Scenario<T>, i: usize, j: usize) -> T {
    scenario.anchors[j].score - scenario.anchors[i].score
}

/// Rank statistics of one positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveRank<T> {
    pub anchor: usize,
    pub rank: T,
    pub rank_plus: T,
    pub n_fp: T,
}

/// Rank statistics of every positive, in anchor order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankStats<T> {
    pub positives: Vec<PositiveRank<T>>,
}

pub fn rank_stats<T: Real>(scenario: &Scenario<T>, kind: StepKind<T>) -> RankStats<T> {
    let pos = scenario.positive_indices();
    let neg = scenario.negative_indices();
    let positives = pos
        .iter()
        .map(|&i| {
            let mut rank_plus = T::one();
            for &k in &pos {
                if k != i {
                    rank_plus = rank_plus + step(diff_transform(scenario, i, k), kind);
                }
            }
            let mut n_fp = T::zero();
            for &j in &neg {
                n_fp = n_fp + step(diff_transform(scenario, i, j), kind);
            }
            PositiveRank { anchor: i, rank: rank_plus + n_fp, rank_plus, n_fp }
        })
        .collect();
    RankStats { positives }
}

/// Precomputed index sets and rank statistics handed to loss definitions.
#[derive(Debug, Clone)]
pub struct RankingContext<'a, T> {
    pub scenario: &'a Scenario<T>,
    pub step: StepKind<T>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub stats: RankStats<T>,
}

impl<'a, T: Real> RankingContext<'a, T> {
    pub fn new(scenario: &'a Scenario<T>, step: StepKind<T>) -> Result<Self> {
        let positives = scenario.positive_indices();
        if positives.is_empty() {
            return Err(Error::NoPositives);
        }
        Ok(RankingContext {
            scenario,
            step,
            negatives: scenario.negative_indices(),
            stats: rank_stats(scenario, step),
            positives,
        })
    }

    /// `H(x_ij)` between two anchors.
    #[inline]
    pub fn h(&self, i: usize, j: usize) -> T {
        step(diff_transform(self.scenario, i, j), self.step)
    }
}

/// Local error of one positive and its value under perfect ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalError<T> {
    pub value: T,
    pub target: T,
    /// `value - target`, kept separately so losses can supply it without cancellation.
    pub gap: T,
}

impl<T: Real> LocalError<T> {
    pub fn new(value: T, target: T) -> Self {
        LocalError { value, target, gap: value - target }
    }

    pub fn with_gap(value: T, target: T, gap: T) -> Self {
        LocalError { value, target, gap }
    }
}

/// What to do with a positive's update when no negative outranks it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Undistributed {
    /// `p(j|i) = 0` for all `j`: the positive receives no gradient.
    Drop,
    /// The positive still receives `(l*(i) - l(i)) / Z` with no negative to balance it.
    AssignToPositive,
}

/// A ranking loss expressed through primary terms.
pub trait RankingLoss<T: Real> {
    /// The normalising constant `Z`.
    fn normalizer(&self, ctx: &RankingContext<'_, T>) -> T;

    /// `l(i)` and `l*(i)` for each positive, in `ctx.positives` order.
    fn local_errors(&self, ctx: &RankingContext<'_, T>) -> Result<Vec<LocalError<T>>>;

    /// `p(j|i)` for the `pos`-th positive and `neg`-th negative. Defaults to the
    /// uniform distribution over outranking negatives, `H(x_ij) / N_FP(i)`.
    fn distribution(&self, ctx: &RankingContext<'_, T>, pos: usize, neg: usize) -> T {
        let n_fp = ctx.stats.positives[pos].n_fp;
        if n_fp > T::zero() {
            ctx.h(ctx.positives[pos], ctx.negatives[neg]) / n_fp
        } else {
            T::zero()
        }
    }

    fn undistributed(&self) -> Undistributed {
        Undistributed::Drop
    }
}

/// Output of [`assemble_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport<T> {
    /// `dL/ds` per anchor; exactly zero for ignored anchors.
    pub score_grads: Vec<T>,
    /// `(1/Z) sum_ij L_ij`.
    pub loss_value: T,
    /// `(1/Z) sum_ij L*_ij`.
    pub target_value: T,
    /// `(1/Z) sum_i l(i)`.
    pub direct_value: T,
    /// `|direct_value - loss_value|`: the local error that no negative could absorb.
    pub primary_term_sum_check: T,
    pub normalizer: T,
    /// Raw row sums `sum_j dx_ij` per positive (before `1/Z`), in positive order.
    pub positive_updates: Vec<T>,
}

impl<T: Real> GradReport<T> {
    pub fn positive_grad_sum(&self, scenario: &Scenario<T>) -> T {
        scenario.positive_indices().iter().map(|&i| self.score_grads[i].abs()).sum()
    }

    pub fn negative_grad_sum(&self, scenario: &Scenario<T>) -> T {
        scenario.negative_indices().iter().map(|&j| self.score_grads[j].abs()).sum()
    }
}

// Slack for the `L* <= L` premise, relative to the magnitudes involved.
fn premise_slack<T: Real>(a: T, b: T) -> T {
    T::epsilon() * lit(64.0) * (a.abs() + b.abs() + T::min_positive_value())
}

/// Naive `O(|P| |N|)` error-driven gradient assembly.
///
/// Pairs are visited positive-major in anchor order, so the result is
/// deterministic.
pub fn assemble_gradients<T: Real, L: RankingLoss<T> + ?Sized>(
    scenario: &Scenario<T>,
    loss: &L,
    kind: StepKind<T>,
) -> Result<GradReport<T>> {
    let ctx = RankingContext::new(scenario, kind)?;
    let local = loss.local_errors(&ctx)?;
    let z = loss.normalizer(&ctx);
    let mut grads = vec![T::zero(); scenario.anchors.len()];
    let mut updates = vec![T::zero(); ctx.positives.len()];
    let (mut primary, mut target) = (T::zero(), T::zero());

    for (pi, &i) in ctx.positives.iter().enumerate() {
        let le = local[pi];
        let mut mass = T::zero();
        for (nj, &j) in ctx.negatives.iter().enumerate() {
            let p = loss.distribution(&ctx, pi, nj);
            if p == T::zero() {
                continue;
            }
            mass = mass + p;
            let l_ij = le.value * p;
            let t_ij = le.target * p;
            if -le.gap > premise_slack(le.value, le.target) {
                return Err(Error::TargetExceedsPrimary {
                    positive: i,
                    negative: j,
                    primary: l_ij.as_f64(),
                    target: t_ij.as_f64(),
                });
            }
            let dx = -(le.gap.max(T::zero()) * p);
            primary = primary + l_ij;
            target = target + t_ij;
            updates[pi] = updates[pi] + dx;
            grads[j] = grads[j] - dx / z;
        }
        if mass == T::zero() && loss.undistributed() == Undistributed::AssignToPositive {
            updates[pi] = -le.gap.max(T::zero());
        }
        grads[i] = updates[pi] / z;
    }

    let direct: T = local.iter().map(|l| l.value).sum::<T>() / z;
    let loss_value = primary / z;
    Ok(GradReport {
        score_grads: grads,
        loss_value,
        target_value: target / z,
        direct_value: direct,
        primary_term_sum_check: (direct - loss_value).abs(),
        normalizer: z,
        positive_updates: updates,
    })
}

/// `(1/Z) sum_{i in P} sum_{j in N} L_ij`, streamed without gradient buffers.
pub fn primary_term_sum<T: Real, L: RankingLoss<T> + ?Sized>(
    scenario: &Scenario<T>,
    loss: &L,
    kind: StepKind<T>,
) -> Result<T> {
    let ctx = RankingContext::new(scenario, kind)?;
    let local = loss.local_errors(&ctx)?;
    let z = loss.normalizer(&ctx);
    let mut sum = T::zero();
    for (pi, le) in local.iter().enumerate() {
        for nj in 0..ctx.negatives.len() {
            sum = sum + le.value * loss.distribution(&ctx, pi, nj);
        }
    }
    Ok(sum / z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores_scenario(pos: &[f64], neg: &[f64]) -> Scenario<f64> {
        let unit = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let mut anchors: Vec<_> = pos.iter().map(|&s| AnchorRecord::positive(0, s, unit)).collect();
        anchors.extend(neg.iter().map(|&s| AnchorRecord::negative(s)));
        Scenario::new(anchors, vec![unit], LocErrorKind::iou()).unwrap()
    }

    #[test]
    fn step_examples() {
        assert_eq!(step(0.0, StepKind::Exact), 1.0);
        assert_eq!(step(-1e-12, StepKind::Exact), 0.0);
        let s = StepKind::Smooth { delta: 1.0 };
        assert_eq!(step(0.0, s), 0.5);
        assert_eq!(step(-2.0, s), 0.0);
        assert_eq!(step(2.0, s), 1.0);
        assert_eq!(step(-1.0, s), 0.0);
        assert_eq!(step(1.0, s), 1.0);
        assert!(StepKind::smooth(0.0).is_err());
    }

    #[test]
    fn diff_transform_examples() {
        let sc = scores_scenario(&[1.0], &[0.9]);
        assert!((diff_transform(&sc, 0, 1) + 0.1).abs() < 1e-15);
        assert_eq!(diff_transform(&sc, 0, 0), 0.0);
        assert_eq!(diff_transform(&sc, 0, 1), -diff_transform(&sc, 1, 0));
    }

    #[test]
    fn rank_stats_on_toy_scores() {
        let sc = scores_scenario(&[1.0, 0.8, 0.5, 0.1], &[0.9, 0.7, 0.6, 0.4, 0.3, 0.2]);
        let st = rank_stats(&sc, StepKind::Exact);
        let ranks: Vec<f64> = st.positives.iter().map(|p| p.rank).collect();
        let nfp: Vec<f64> = st.positives.iter().map(|p| p.n_fp).collect();
        assert_eq!(ranks, vec![1.0, 3.0, 6.0, 10.0]);
        assert_eq!(nfp, vec![0.0, 1.0, 3.0, 6.0]);
        for p in &st.positives {
            assert_eq!(p.rank, p.rank_plus + p.n_fp);
        }
    }

    #[test]
    fn rank_stats_edge_cases() {
        let sc = scores_scenario(&[0.3], &[]);
        let st = rank_stats(&sc, StepKind::Exact);
        assert_eq!(st.positives[0].rank, 1.0);
        assert_eq!(st.positives[0].n_fp, 0.0);

        let sc = scores_scenario(&[0.5; 5], &[0.1, 0.2]);
        for p in rank_stats(&sc, StepKind::Exact).positives {
            assert_eq!(p.rank, 5.0);
        }
    }

    #[test]
    fn ignored_anchors_do_not_count() {
        let mut sc = scores_scenario(&[0.5], &[0.6]);
        sc.anchors.push(AnchorRecord::ignored(0.9));
        let st = rank_stats(&sc, StepKind::Exact);
        assert_eq!(st.positives[0].rank, 2.0);
    }

    #[test]
    fn context_requires_positives() {
        let sc = scores_scenario(&[], &[0.1]);
        assert_eq!(RankingContext::new(&sc, StepKind::Exact).unwrap_err(), Error::NoPositives);
    }

    #[test]
    fn invalid_gt_reference_rejected() {
        let unit = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let r = Scenario::new(vec![AnchorRecord::positive(3, 0.5, unit)], vec![unit], LocErrorKind::iou());
        assert!(matches!(r, Err(Error::InvalidGtIndex { gt: 3, .. })));
    }
}
