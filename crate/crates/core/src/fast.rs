//! aLRP loss and gradients in `O(|N| + |P| max(|P|, |N^|))`.
//!
//! Negatives scoring below `min positive score - delta` can never enter a
//! step function's support, so they are dropped up front (`N^` is what is
//! left). Positives are visited in descending score order; cumulative
//! localisation errors and box-gradient weights come from prefix and suffix
//! sums over that order.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{loc_error, loc_error_grad, BBox, LocErrorKind};
use crate::losses::{LossBreakdown, SelfBalancer};
use crate::ranking::{step, AnchorRecord, Scenario, StepKind};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastConfig<T> {
    pub step: StepKind<T>,
    /// Skip negatives that cannot reach any positive's step support.
    pub prune: bool,
}

impl<T: Real> FastConfig<T> {
    /// Smooth step with the given `delta`.
    pub fn new(delta: T, prune: bool) -> Result<Self> {
        Ok(FastConfig { step: StepKind::smooth(delta)?, prune })
    }

    pub fn exact(prune: bool) -> Self {
        FastConfig { step: StepKind::Exact, prune }
    }
}

impl<T: Real> Default for FastConfig<T> {
    fn default() -> Self {
        FastConfig { step: StepKind::default(), prune: true }
    }
}

/// Work done by one [`fast_alrp_counted`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCount {
    pub n_pos: usize,
    pub n_neg: usize,
    /// Negatives that survived pruning.
    pub n_kept: usize,
    /// Inner-loop operations: one per negative screened, per positive pair
    /// visited and per kept-negative visit.
    pub ops: u64,
}

impl OpCount {
    /// `|N| + |P| max(|P|, |N^|)`.
    pub fn bound(&self) -> u64 {
        (self.n_neg + self.n_pos * self.n_pos.max(self.n_kept)) as u64
    }
}

pub fn fast_alrp<T: Real>(
    scenario: &Scenario<T>,
    config: FastConfig<T>,
    balancer: Option<&SelfBalancer<T>>,
) -> Result<LossBreakdown<T>> {
    fast_alrp_counted(scenario, config, balancer).map(|(b, _)| b)
}

/// [`fast_alrp`] that also reports how much work it did.
pub fn fast_alrp_counted<T: Real>(
    scenario: &Scenario<T>,
    config: FastConfig<T>,
    balancer: Option<&SelfBalancer<T>>,
) -> Result<(LossBreakdown<T>, OpCount)> {
    let kind = config.step;
    if let StepKind::Smooth { delta } = kind {
        if !(delta > T::zero()) {
            return Err(Error::param("delta", "must be positive"));
        }
    }
    let anchors = &scenario.anchors;
    let positives = scenario.positive_indices();
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let negatives = scenario.negative_indices();
    let mut count = OpCount { n_pos: positives.len(), n_neg: negatives.len(), ..OpCount::default() };

    let min_pos = positives.iter().map(|&i| anchors[i].score).fold(T::infinity(), T::min);
    let threshold = min_pos + kind.support_lower_bound();
    let kept: Vec<usize> = if config.prune {
        count.ops += negatives.len() as u64;
        negatives.iter().copied().filter(|&j| anchors[j].score >= threshold).collect()
    } else {
        negatives
    };
    count.n_kept = kept.len();

    let errors: Vec<T> = positives
        .iter()
        .map(|&a| {
            let (pred, gt) = scenario.box_pair(a)?;
            loc_error(&pred, &gt, scenario.loc_kind)
        })
        .collect::<Result<_>>()?;

    // Positions into `positives`, highest score first, ties by anchor index.
    let mut order: Vec<usize> = (0..positives.len()).collect();
    order.sort_by(|&a, &b| anchors[positives[b]].score.partial_cmp(&anchors[positives[a]].score).unwrap_or(Ordering::Equal).then(a.cmp(&b)));

    // Tie groups: order[group_start[r]..group_end[r]] share the score of order[r].
    let n = order.len();
    let mut group_start = vec![0; n];
    let mut group_end = vec![n; n];
    for r in 1..n {
        group_start[r] =
            if anchors[positives[order[r]]].score == anchors[positives[order[r - 1]]].score { group_start[r - 1] } else { r };
    }
    for r in (0..n.saturating_sub(1)).rev() {
        group_end[r] = if group_start[r + 1] == group_start[r] { group_end[r + 1] } else { r + 1 };
    }

    // Prefix sums of errors in score order. The cumulative error of a positive
    // covers everything above its tie group plus the rest of the group.
    let mut prefix = vec![T::zero(); n + 1];
    for r in 0..n {
        prefix[r + 1] = prefix[r] + errors[order[r]];
    }

    let z = T::from_usize(n).unwrap();
    let mut grads = vec![T::zero(); anchors.len()];
    let mut ranks = vec![T::zero(); n];
    let (mut cls, mut loc, mut primary, mut target) = (T::zero(), T::zero(), T::zero(), T::zero());
    let mut h_row = vec![T::zero(); kept.len()];

    for r in 0..n {
        let pi = order[r];
        let i = positives[pi];
        let s_i = anchors[i].score;

        let mut rank_plus = T::one();
        for &k in &positives {
            if k != i {
                rank_plus = rank_plus + step(anchors[k].score - s_i, kind);
            }
        }
        count.ops += n as u64;

        let mut n_fp = T::zero();
        for (h, &j) in h_row.iter_mut().zip(&kept) {
            *h = step(anchors[j].score - s_i, kind);
            n_fp = n_fp + *h;
        }
        count.ops += kept.len() as u64;

        let rank = rank_plus + n_fp;
        ranks[pi] = rank;
        let own = errors[pi];
        let mut others = prefix[group_start[r]];
        for &q in &order[group_start[r]..group_end[r]] {
            if q != pi {
                others = others + errors[q];
            }
        }
        let cum = own + others;
        cls = cls + n_fp / rank;
        loc = loc + cum / rank;

        if n_fp > T::zero() {
            let gap = (n_fp + others) / rank;
            primary = primary + (n_fp + cum) / rank;
            target = target + own / rank;
            let mut update = T::zero();
            for (&h, &j) in h_row.iter().zip(&kept) {
                if h > T::zero() {
                    let dx = -(gap * (h / n_fp));
                    update = update + dx;
                    grads[j] = grads[j] - dx / z;
                }
            }
            count.ops += kept.len() as u64;
            grads[i] = update / z;
        }
    }

    // Box-gradient weight of a positive: (1/|P|) sum of 1/rank over positives
    // scored at or below it, read from suffix sums.
    let mut suffix = vec![T::zero(); n + 1];
    for r in (0..n).rev() {
        suffix[r] = suffix[r + 1] + T::one() / ranks[order[r]];
    }
    let weight = balancer.map_or(T::one(), |b| b.active_weight);
    let mut box_grads = vec![[T::zero(); 4]; n];
    let mut nonsmooth = 0;
    for r in 0..n {
        let pi = order[r];
        let w = suffix[group_start[r]] / z;
        let (pred, gt) = scenario.box_pair(positives[pi])?;
        let g = loc_error_grad(&pred, &gt, scenario.loc_kind)?;
        nonsmooth += usize::from(g.nonsmooth);
        box_grads[pi] = g.grad.map(|v| weight * w * v);
    }

    let (cls, loc) = (cls / z, loc / z);
    Ok((
        LossBreakdown {
            total: cls + loc,
            cls_component: cls,
            loc_component: loc,
            score_grads: grads,
            box_grads,
            positives,
            sb_weight_applied: weight,
            step: kind,
            primary_sum: primary / z,
            target_sum: target / z,
            nonsmooth,
        },
        count,
    ))
}

/// One row of [`complexity_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_kept: usize,
    pub ops: u64,
    pub bound: u64,
    /// `ops / bound`.
    pub ratio: f64,
}

/// Synthetic scenario for the probe: positives scored in `[0.5, 1]`, a
/// `prunable` fraction of negatives far below them, the rest interleaved.
pub fn probe_scenario(n_pos: usize, n_neg: usize, prunable: f64, seed: u64) -> Scenario<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = BBox { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 };
    let mut anchors = Vec::with_capacity(n_pos + n_neg);
    for _ in 0..n_pos {
        let iou: f64 = rng.gen_range(0.5..=1.0);
        let pred = BBox { x1: 0.0, y1: 0.0, x2: 1.0, y2: iou };
        anchors.push(AnchorRecord::positive(0, rng.gen_range(0.5..1.0), pred));
    }
    let n_far = (n_neg as f64 * prunable).round() as usize;
    for j in 0..n_neg {
        let s = if j < n_far { rng.gen_range(-5.0..-4.0) } else { rng.gen_range(0.0..1.5) };
        anchors.push(AnchorRecord::negative(s));
    }
    Scenario { anchors, gts: vec![gt], loc_kind: LocErrorKind::iou() }
}

/// Counted operations of [`fast_alrp`] on synthetic scenarios of each size,
/// with the default smooth step.
pub fn complexity_probe(sizes: &[(usize, usize)], prunable: f64, seed: u64) -> Result<Vec<ProbeRow>> {
    sizes
        .iter()
        .map(|&(p, n)| {
            let sc = probe_scenario(p, n, prunable, seed);
            let (_, c) = fast_alrp_counted(&sc, FastConfig::default(), None)?;
            Ok(ProbeRow {
                n_pos: p,
                n_neg: n,
                n_kept: c.n_kept,
                ops: c.ops,
                bound: c.bound(),
                ratio: c.ops as f64 / c.bound().max(1) as f64,
            })
        })
        .collect()
}

/// Probe rows as CSV with header `n_pos,n_neg,n_kept,ops,bound,ratio`.
pub fn probe_csv(rows: &[ProbeRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_pos", "n_neg", "n_kept", "ops", "bound", "ratio"]).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.n_pos.to_string(),
            r.n_neg.to_string(),
            r.n_kept.to_string(),
            r.ops.to_string(),
            r.bound.to_string(),
            format!("{:.4}", r.ratio),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}
