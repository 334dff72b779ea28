//! Desk-scale optimisation harness: a synthetic scenario generator and a
//! direct-parameter model trained by full-batch SGD with momentum.

use std::cmp::Ordering;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fast::{fast_alrp, FastConfig};
use crate::geometry::{iou, BBox, LocErrorKind};
use crate::losses::{alrp_loss, ap_loss, ndcg_loss, self_balance_update, wrong_target_alrp, LossBreakdown, SelfBalancer};
use crate::metrics::ranking_correlation;
use crate::ranking::{AnchorRecord, Label, Scenario, StepKind};

/// How the initial IoUs are assigned to positives relative to their scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouOrder {
    Random,
    /// Highest score gets the highest IoU.
    Aligned,
    /// Highest score gets the lowest IoU.
    Inverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGenSpec {
    pub n_pos: usize,
    pub n_neg: usize,
    /// Standard deviation of the initial logits.
    pub score_noise: f64,
    pub iou_mean: f64,
    /// Initial IoUs are drawn uniformly from `iou_mean +- iou_spread`.
    pub iou_spread: f64,
    pub iou_order: IouOrder,
    /// Unit-square ground truths with centred, scaled-up predictions, so every
    /// box has the same geometry up to its IoU. Otherwise sizes and jitter
    /// directions are random.
    pub uniform_geometry: bool,
    pub seed: u64,
}

impl Default for ScenarioGenSpec {
    fn default() -> Self {
        ScenarioGenSpec {
            n_pos: 20,
            n_neg: 200,
            score_noise: 1.0,
            iou_mean: 0.6,
            iou_spread: 0.02,
            iou_order: IouOrder::Inverse,
            uniform_geometry: true,
            seed: 0,
        }
    }
}

// Smallest initial IoU the generator produces, so every positive stays a true
// positive under the default threshold.
const MIN_IOU: f64 = 0.52;

/// Box reached by moving `gt` along `dir` until the IoU equals `target`.
fn jitter_to_iou(gt: &BBox<f64>, dir: [f64; 4], target: f64) -> BBox<f64> {
    let at = |t: f64| -> BBox<f64> {
        BBox { x1: gt.x1 + t * dir[0], y1: gt.y1 + t * dir[1], x2: gt.x2 + t * dir[2], y2: gt.y2 + t * dir[3] }
    };
    let overlap = |t: f64| {
        let b = at(t);
        if b.validate().is_err() || b.width() <= 0.0 || b.height() <= 0.0 {
            0.0
        } else {
            iou(&b, gt).unwrap_or(0.0)
        }
    };
    let mut hi = 1.0;
    while overlap(hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if overlap(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

/// Reproducible synthetic scenario. Ground truths are laid out along the x
/// axis; each positive's box is a jittered copy of its ground truth.
pub fn generate_scenario(spec: &ScenarioGenSpec) -> Result<Scenario<f64>> {
    if spec.n_pos == 0 {
        return Err(Error::param("n_pos", "at least one positive is required"));
    }
    if !(spec.score_noise >= 0.0 && spec.score_noise.is_finite()) {
        return Err(Error::param("score_noise", "must be non-negative"));
    }
    let lo = spec.iou_mean - spec.iou_spread;
    let hi = spec.iou_mean + spec.iou_spread;
    if !(spec.iou_spread >= 0.0 && lo >= MIN_IOU && hi < 1.0) {
        return Err(Error::param("iou_mean", format!("IoU range [{lo}, {hi}] must lie within [{MIN_IOU}, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.score_noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let unit = Normal::new(0.0, 1.0).expect("valid normal");

    let gts: Vec<BBox<f64>> = (0..spec.n_pos)
        .map(|k| {
            let (w, h) = if spec.uniform_geometry { (1.0, 1.0) } else { (rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0)) };
            let x = 10.0 * k as f64;
            BBox { x1: x, y1: 0.0, x2: x + w, y2: h }
        })
        .collect();
    let pos_scores: Vec<f64> = (0..spec.n_pos).map(|_| noise.sample(&mut rng)).collect();
    let neg_scores: Vec<f64> = (0..spec.n_neg).map(|_| noise.sample(&mut rng)).collect();
    let mut ious: Vec<f64> = (0..spec.n_pos).map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo }).collect();

    if spec.iou_order != IouOrder::Random {
        let mut by_score: Vec<usize> = (0..spec.n_pos).collect();
        by_score.sort_by(|&a, &b| pos_scores[b].partial_cmp(&pos_scores[a]).unwrap_or(Ordering::Equal));
        ious.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
        if spec.iou_order == IouOrder::Inverse {
            ious.reverse();
        }
        let mut assigned = vec![0.0; spec.n_pos];
        for (&k, &o) in by_score.iter().zip(&ious) {
            assigned[k] = o;
        }
        ious = assigned;
    }

    let mut anchors = Vec::with_capacity(spec.n_pos + spec.n_neg);
    for k in 0..spec.n_pos {
        let pred = if spec.uniform_geometry {
            // area ratio 1 / IoU
            let grow = 0.5 * (ious[k].recip().sqrt() - 1.0);
            let g = &gts[k];
            BBox { x1: g.x1 - grow, y1: g.y1 - grow, x2: g.x2 + grow, y2: g.y2 + grow }
        } else {
            let dir: [f64; 4] = std::array::from_fn(|_| unit.sample(&mut rng));
            jitter_to_iou(&gts[k], dir, ious[k])
        };
        anchors.push(AnchorRecord::positive(k, pos_scores[k], pred));
    }
    anchors.extend(neg_scores.into_iter().map(AnchorRecord::negative));
    Scenario::new(anchors, gts, LocErrorKind::iou())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossChoice {
    Ap,
    Alrp,
    Ndcg,
}

impl std::str::FromStr for LossChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ap" => Ok(LossChoice::Ap),
            "alrp" => Ok(LossChoice::Alrp),
            "ndcg" => Ok(LossChoice::Ndcg),
            _ => Err(Error::param("loss", format!("unknown loss `{s}` (expected ap, alrp or ndcg)"))),
        }
    }
}

/// Map from the trained score parameters to the scores the loss ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMap {
    Sigmoid,
    /// Rank raw logits.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossChoice,
    /// Use the pruned single-pass aLRP evaluator.
    pub fast: bool,
    pub epochs: usize,
    pub lr: f64,
    /// Box parameters move with learning rate `lr * box_lr_scale`.
    pub box_lr_scale: f64,
    pub momentum: f64,
    /// Self-balance the box gradients.
    pub sb: bool,
    pub wrong_target: bool,
    pub step: StepKind<f64>,
    pub score_map: ScoreMap,
    /// Multiply the learning rate by `lr_decay.1` at each epoch in `lr_decay.0`.
    pub lr_decay: Option<(Vec<usize>, f64)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossChoice::Alrp,
            fast: false,
            epochs: 500,
            lr: 0.3,
            box_lr_scale: 0.0014,
            momentum: 0.9,
            sb: false,
            wrong_target: false,
            step: StepKind::Smooth { delta: 0.1 },
            score_map: ScoreMap::Sigmoid,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", "must be positive"));
        }
        if !(self.box_lr_scale >= 0.0 && self.box_lr_scale.is_finite()) {
            return Err(Error::param("box_lr_scale", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must lie in [0, 1)"));
        }
        if let StepKind::Smooth { delta } = self.step {
            StepKind::smooth(delta)?;
        }
        if self.fast && (self.loss != LossChoice::Alrp || self.wrong_target) {
            return Err(Error::param("fast", "the fast evaluator covers the aLRP loss only"));
        }
        if self.wrong_target && self.loss != LossChoice::Alrp {
            return Err(Error::param("wrong_target", "only defined for the aLRP loss"));
        }
        Ok(())
    }
}

/// One row of the training log, describing the state at the start of `epoch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub cls: f64,
    pub loc: f64,
    /// `sum_N |dL/ds| / sum_P |dL/ds|`, 1 when both vanish.
    pub ratio: f64,
    pub sb_weight: f64,
    /// NaN when undefined (fewer than two distinct positives).
    pub rho: f64,
    pub mean_iou: f64,
    /// Mean absolute score and box gradient, before the self-balance weight.
    pub score_grad_norm: f64,
    pub box_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Set when training stopped on a numerical failure.
    pub terminal: Option<String>,
    pub final_scenario: Scenario<f64>,
}

impl TrainLog {
    pub const CSV_HEADER: [&'static str; 8] = ["epoch", "total", "cls", "loc", "ratio", "sb_weight", "rho", "mean_iou"];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(Self::CSV_HEADER).map_err(io)?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.total.to_string(),
                r.cls.to_string(),
                r.loc.to_string(),
                r.ratio.to_string(),
                r.sb_weight.to_string(),
                r.rho.to_string(),
                r.mean_iou.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn first(&self) -> &EpochRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("log has at least one record")
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn evaluate(sc: &Scenario<f64>, cfg: &TrainConfig, sb: &SelfBalancer<f64>) -> Result<LossBreakdown<f64>> {
    let bal = Some(sb);
    match cfg.loss {
        LossChoice::Ap => ap_loss(sc, cfg.step),
        LossChoice::Ndcg => ndcg_loss(sc, cfg.step),
        LossChoice::Alrp if cfg.wrong_target => wrong_target_alrp(sc, cfg.step, bal),
        LossChoice::Alrp if cfg.fast => fast_alrp(sc, FastConfig { step: cfg.step, prune: true }, bal),
        LossChoice::Alrp => alrp_loss(sc, cfg.step, bal),
    }
}

fn mean_iou(sc: &Scenario<f64>) -> Result<f64> {
    let pos = sc.positive_indices();
    let mut s = 0.0;
    for &a in &pos {
        let (p, g) = sc.box_pair(a)?;
        s += iou(&p, &g)?;
    }
    Ok(s / pos.len() as f64)
}

fn mean_abs(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x.abs();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Trains score logits and positive boxes of `scenario` directly.
///
/// The scenario's scores are taken as logits. Each epoch is one full-batch
/// step; the self-balance weight is refreshed at epoch ends. A record is
/// written before every step and once more after the last one. Numerical
/// failure (non-finite values, invalid boxes, a positive falling below the
/// overlap threshold) ends training with a terminal message instead of an
/// error.
pub fn train(scenario: &Scenario<f64>, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let positives = scenario.positive_indices();
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut logits: Vec<f64> = scenario.anchors.iter().map(|a| a.score).collect();
    let mut boxes: Vec<[f64; 4]> =
        positives.iter().map(|&a| scenario.box_pair(a).map(|(p, _)| p.to_array())).collect::<Result<_>>()?;
    let mut v_logits = vec![0.0; logits.len()];
    let mut v_boxes = vec![[0.0; 4]; boxes.len()];
    let mut balancer = SelfBalancer::new();
    let mut lr = cfg.lr;
    let mut records = Vec::with_capacity(cfg.epochs + 1);
    let mut terminal = None;

    let mut current = scenario.clone();
    for epoch in 0..=cfg.epochs {
        for (a, rec) in current.anchors.iter_mut().enumerate() {
            rec.score = match cfg.score_map {
                ScoreMap::Sigmoid => sigmoid(logits[a]),
                ScoreMap::Identity => logits[a],
            };
        }
        for (k, &a) in positives.iter().enumerate() {
            current.anchors[a].pred_box = Some(BBox { x1: boxes[k][0], y1: boxes[k][1], x2: boxes[k][2], y2: boxes[k][3] });
        }
        if let Err(e) = current.validate() {
            terminal = Some(format!("epoch {epoch}: {e}"));
            break;
        }
        let report = match evaluate(&current, cfg, &balancer) {
            Ok(r) => r,
            Err(e) => {
                terminal = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        };
        if !report.total.is_finite() || report.score_grads.iter().any(|g| !g.is_finite()) {
            terminal = Some(format!("epoch {epoch}: non-finite loss or gradient"));
            break;
        }
        let w = balancer.active_weight;
        records.push(EpochRecord {
            epoch,
            total: report.total,
            cls: report.cls_component,
            loc: report.loc_component,
            ratio: report.balance_ratio(&current),
            sb_weight: w,
            rho: ranking_correlation(&current).unwrap_or(f64::NAN),
            mean_iou: mean_iou(&current)?,
            score_grad_norm: mean_abs(positives.iter().map(|&a| report.score_grads[a])),
            box_grad_norm: mean_abs(report.box_grads.iter().flatten().map(|g| g / w)),
        });
        if epoch == cfg.epochs {
            break;
        }

        if let Some((milestones, factor)) = &cfg.lr_decay {
            if milestones.contains(&epoch) {
                lr *= factor;
            }
        }
        for (a, rec) in current.anchors.iter().enumerate() {
            if rec.label == Label::Ignored {
                continue;
            }
            let g = match cfg.score_map {
                ScoreMap::Sigmoid => report.score_grads[a] * rec.score * (1.0 - rec.score),
                ScoreMap::Identity => report.score_grads[a],
            };
            v_logits[a] = cfg.momentum * v_logits[a] + g;
            logits[a] -= lr * v_logits[a];
        }
        for k in 0..boxes.len() {
            for c in 0..4 {
                v_boxes[k][c] = cfg.momentum * v_boxes[k][c] + report.box_grads[k][c];
                boxes[k][c] -= lr * cfg.box_lr_scale * v_boxes[k][c];
            }
        }
        if cfg.sb {
            balancer = self_balance_update(&balancer, std::slice::from_ref(&report));
        }
    }
    Ok(TrainLog { records, terminal, final_scenario: current })
}

/// Per-epoch share of the localisation component and the box/score gradient scale.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmupReport {
    /// `loc / total` per epoch (0 when the total is 0).
    pub loc_share: Vec<f64>,
    /// Mean box gradient magnitude (self-balance weight applied) over mean score gradient magnitude.
    pub box_to_score: Vec<f64>,
    pub sb_weights: Vec<f64>,
}

pub fn sb_warmup_report(log: &TrainLog) -> WarmupReport {
    let share = |r: &EpochRecord| if r.total > 0.0 { r.loc / r.total } else { 0.0 };
    let ratio = |r: &EpochRecord| {
        if r.score_grad_norm > 0.0 {
            r.sb_weight * r.box_grad_norm / r.score_grad_norm
        } else {
            f64::INFINITY
        }
    };
    WarmupReport {
        loc_share: log.records.iter().map(share).collect(),
        box_to_score: log.records.iter().map(ratio).collect(),
        sb_weights: log.records.iter().map(|r| r.sb_weight).collect(),
    }
}

/// Worker threads for [`train_many`]: `RANKLOSS_THREADS` if set, else the
/// available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("RANKLOSS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Trains one scenario per seed on up to [`worker_threads`] threads. Results
/// come back in seed order.
pub fn train_many(gen: &ScenarioGenSpec, seeds: &[u64], cfg: &TrainConfig) -> Vec<Result<TrainLog>> {
    let threads = worker_threads().min(seeds.len()).max(1);
    let mut out: Vec<Option<Result<TrainLog>>> = (0..seeds.len()).map(|_| None).collect();
    for (chunk_idx, chunk) in seeds.chunks(threads).enumerate() {
        let results: Vec<Result<TrainLog>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let spec = ScenarioGenSpec { seed, ..gen.clone() };
                    s.spawn(move || generate_scenario(&spec).and_then(|sc| train(&sc, cfg)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        });
        for (k, r) in results.into_iter().enumerate() {
            out[chunk_idx * threads + k] = Some(r);
        }
    }
    out.into_iter().map(|r| r.expect("every seed ran")).collect()
}
