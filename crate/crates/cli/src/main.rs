use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rankloss::fast::{complexity_probe, fast_alrp, probe_scenario, FastConfig};
use rankloss::io::{load_eval, load_scenario};
use rankloss::metrics::{ap_at_iou, lrp_at, mean_ap, olrp, recall_points};
use rankloss::trainer::{
    generate_scenario, train, train_many, IouOrder, LossChoice, ScenarioGenSpec, ScoreMap, TrainConfig, TrainLog,
};
use rankloss::{alrp_loss, ap_loss, ndcg_loss, wrong_target_alrp, Label, LossBreakdown64, Scenario64, SelfBalancer, StepKind};

#[derive(Parser)]
#[command(name = "rankloss", version, args_conflicts_with_subcommands = true, about = "Ranking-based detection losses, metrics and a desk-scale trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a ranking loss and its gradients on a scenario file.
    Loss(LossArgs),
    /// Compute AP, mean AP, LRP or optimal LRP for a detection file.
    Eval(EvalArgs),
    /// Train scores and boxes of a scenario directly and log every epoch.
    Train(TrainArgs),
    /// Count the fast aLRP evaluator's work and time it against the naive one.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LossKind {
    Ap,
    Alrp,
    Ndcg,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    Exact,
    Smooth,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreMapArg {
    Sigmoid,
    Identity,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct LossArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "alrp")]
    loss: LossKind,
    #[arg(long, value_enum, default_value = "smooth")]
    step: StepArg,
    /// Half-width of the smooth step.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Self-balance weight applied to the box gradients (aLRP only).
    #[arg(long)]
    sb_weight: Option<f64>,
    /// Use zero primary-term targets (aLRP only).
    #[arg(long)]
    wrong_target: bool,
    /// Include per-anchor score and box gradients.
    #[arg(long)]
    grads: bool,
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    /// `map`, `olrp` or `lrp@S` for the LRP of detections scoring at least S.
    #[arg(long, default_value = "map")]
    metric: String,
    /// Comma-separated IoU thresholds; the first one is used for LRP.
    #[arg(long, default_value = "0.5,0.55,0.6,0.65,0.7,0.75,0.8,0.85,0.9,0.95")]
    taus: String,
    #[arg(long, default_value_t = 10)]
    recall_points: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct TrainArgs {
    /// Generator settings, e.g. `P=20,N=200,seed=0`. Also accepts iou, spread,
    /// noise, order (inverse|aligned|random) and geometry (uniform|random).
    #[arg(long, conflicts_with = "scenario")]
    gen: Option<String>,
    /// Scenario file whose scores are read as logits.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "alrp")]
    loss: LossKind,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long)]
    lr: Option<f64>,
    /// Box learning rate as a multiple of `--lr`.
    #[arg(long)]
    box_lr_scale: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long, value_enum, default_value = "smooth")]
    step: StepArg,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    score_map: Option<ScoreMapArg>,
    /// Self-balance the box gradients.
    #[arg(long)]
    sb: bool,
    #[arg(long)]
    wrong_target: bool,
    /// Use the pruned single-pass aLRP evaluator.
    #[arg(long)]
    fast: bool,
    /// Train one generated scenario per seed, in parallel (bounded by RANKLOSS_THREADS).
    #[arg(long, requires = "gen")]
    seeds: Option<String>,
    /// CSV output; with several seeds, one file per seed named `<stem>-seed<k>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct BenchArgs {
    /// Comma-separated `PxN` sizes.
    #[arg(long, default_value = "10x100,100x1000,1000x10000")]
    sizes: String,
    /// Fraction of negatives placed far below every positive.
    #[arg(long, default_value_t = 0.0)]
    prunable: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the naive timing above this many pairs.
    #[arg(long, default_value_t = 20_000_000)]
    naive_limit: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Numeric(String),
}

impl From<rankloss::Error> for Failure {
    fn from(e: rankloss::Error) -> Self {
        if e.is_validation() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numeric(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Loss(a) => cmd_loss(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}

fn step_kind(step: StepArg, delta: f64) -> Result<StepKind<f64>, Failure> {
    match step {
        StepArg::Exact => Ok(StepKind::Exact),
        StepArg::Smooth => Ok(StepKind::smooth(delta)?),
    }
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Positive(_) => "pos",
        Label::Negative => "neg",
        Label::Ignored => "ignore",
    }
}

fn cmd_loss(a: LossArgs) -> CliResult {
    let sc = load_scenario(&a.scenario)?;
    let kind = step_kind(a.step, a.delta)?;
    let is_alrp = matches!(a.loss, LossKind::Alrp);
    if !is_alrp && (a.wrong_target || a.sb_weight.is_some()) {
        return Err(Failure::Input("--wrong-target and --sb-weight apply to the aLRP loss only".into()));
    }
    let balancer = match a.sb_weight {
        Some(w) if !(w > 0.0 && w.is_finite()) => return Err(Failure::Input(format!("--sb-weight must be positive, got {w}"))),
        Some(w) => Some(SelfBalancer::with_weight(w)),
        None => None,
    };
    let b = match a.loss {
        LossKind::Ap => ap_loss(&sc, kind)?,
        LossKind::Ndcg => ndcg_loss(&sc, kind)?,
        LossKind::Alrp if a.wrong_target => wrong_target_alrp(&sc, kind, balancer.as_ref())?,
        LossKind::Alrp => alrp_loss(&sc, kind, balancer.as_ref())?,
    };
    if !b.total.is_finite() {
        return Err(Failure::Numeric(format!("loss is {}", b.total)));
    }
    let mut out = io::stdout().lock();
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&loss_json(&sc, &b, a.grads)).expect("json value"))?;
    } else if a.csv {
        write_loss_csv(&mut out, &sc, &b, a.grads)?;
    } else {
        write_loss_text(&mut out, &sc, &b, a.grads)?;
    }
    Ok(())
}

fn loss_json(sc: &Scenario64, b: &LossBreakdown64, grads: bool) -> Value {
    let mut v = json!({
        "total": b.total,
        "cls": b.cls_component,
        "loc": b.loc_component,
        "primary_sum": b.primary_sum,
        "target_sum": b.target_sum,
        "balance_ratio": b.balance_ratio(sc),
        "sb_weight": b.sb_weight_applied,
        "nonsmooth": b.nonsmooth,
    });
    if grads {
        v["score_grads"] = json!(b.score_grads);
        v["box_grads"] =
            b.positives.iter().zip(&b.box_grads).map(|(&a, g)| json!({ "anchor": a, "grad": g })).collect::<Value>();
    }
    v
}

fn write_loss_text(out: &mut impl Write, sc: &Scenario64, b: &LossBreakdown64, grads: bool) -> io::Result<()> {
    writeln!(out, "total          {:.6}", b.total)?;
    writeln!(out, "cls            {:.6}", b.cls_component)?;
    writeln!(out, "loc            {:.6}", b.loc_component)?;
    writeln!(out, "primary_sum    {:.6}", b.primary_sum)?;
    writeln!(out, "target_sum     {:.6}", b.target_sum)?;
    writeln!(out, "balance_ratio  {:.6}", b.balance_ratio(sc))?;
    if grads {
        writeln!(out)?;
        writeln!(out, "anchor  label   score      dL/ds")?;
        for (k, rec) in sc.anchors.iter().enumerate() {
            writeln!(out, "{k:>6}  {:<6}  {:<9.4}  {:+.6e}", label_name(rec.label), rec.score, b.score_grads[k])?;
        }
        writeln!(out)?;
        writeln!(out, "anchor  dL/dB")?;
        for (&a, g) in b.positives.iter().zip(&b.box_grads) {
            writeln!(out, "{a:>6}  [{:+.6e}, {:+.6e}, {:+.6e}, {:+.6e}]", g[0], g[1], g[2], g[3])?;
        }
    }
    Ok(())
}

fn write_loss_csv(out: &mut impl Write, sc: &Scenario64, b: &LossBreakdown64, grads: bool) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(out);
    if grads {
        w.write_record(["anchor", "label", "score", "score_grad", "box_grad_x1", "box_grad_y1", "box_grad_x2", "box_grad_y2"])?;
        for (k, rec) in sc.anchors.iter().enumerate() {
            let bg = b.positives.iter().position(|&p| p == k).map(|i| b.box_grads[i]);
            let mut row = vec![k.to_string(), label_name(rec.label).into(), rec.score.to_string(), b.score_grads[k].to_string()];
            row.extend((0..4).map(|c| bg.map_or(String::new(), |g| g[c].to_string())));
            w.write_record(row)?;
        }
    } else {
        w.write_record(["total", "cls", "loc", "primary_sum", "target_sum", "balance_ratio"])?;
        w.write_record(
            [b.total, b.cls_component, b.loc_component, b.primary_sum, b.target_sum, b.balance_ratio(sc)].map(|x| x.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Failure::Input(format!("{flag}: cannot parse `{s}`"))))
        .collect()
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let input = load_eval(&a.input)?;
    let taus: Vec<f64> = parse_list("--taus", &a.taus)?;
    if taus.is_empty() {
        return Err(Failure::Input("--taus: at least one threshold is required".into()));
    }
    if a.recall_points == 0 {
        return Err(Failure::Input("--recall-points must be positive".into()));
    }
    let rp = recall_points::<f64>(a.recall_points);
    let mut out = io::stdout().lock();
    match a.metric.as_str() {
        "map" => {
            let per: Vec<f64> = taus.iter().map(|&t| ap_at_iou(&input, t, &rp)).collect::<Result<_, _>>()?;
            let m = mean_ap(&input, &taus, &rp)?;
            if a.json {
                let per: Vec<Value> = taus.iter().zip(&per).map(|(t, v)| json!({ "tau": t, "ap": v })).collect();
                writeln!(out, "{}", json!({ "map": m, "per_tau": per }))?;
            } else {
                for (t, v) in taus.iter().zip(&per) {
                    writeln!(out, "AP@{t:<5} {v:.4}")?;
                }
                writeln!(out, "mAP      {m:.4}")?;
            }
        }
        "olrp" => {
            let o = olrp(&input, taus[0])?;
            let c = o.components;
            if a.json {
                let v = json!({
                    "olrp": o.value, "threshold": o.threshold,
                    "tp": c.n_tp, "fp": c.n_fp, "fn": c.n_fn, "loc_error_sum": c.loc_error_sum,
                });
                writeln!(out, "{v}")?;
            } else {
                let thr = o.threshold.map_or("none".to_string(), |t| t.to_string());
                writeln!(out, "oLRP {:.4} at score threshold {thr} (TP {}, FP {}, FN {})", o.value, c.n_tp, c.n_fp, c.n_fn)?;
            }
        }
        m => {
            let s = m
                .strip_prefix("lrp@")
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Failure::Input(format!("--metric: expected map, olrp or lrp@S, got `{m}`")))?;
            let r = lrp_at(&input, s, taus[0])?;
            if a.json {
                let v = json!({ "lrp": r.total, "tp": r.n_tp, "fp": r.n_fp, "fn": r.n_fn, "loc_error_sum": r.loc_error_sum });
                writeln!(out, "{v}")?;
            } else {
                writeln!(out, "LRP {:.4} (TP {}, FP {}, FN {})", r.total, r.n_tp, r.n_fp, r.n_fn)?;
            }
        }
    }
    Ok(())
}

fn parse_gen(text: &str) -> Result<ScenarioGenSpec, Failure> {
    let mut spec = ScenarioGenSpec::default();
    let bad = |k: &str, v: &str| Failure::Input(format!("--gen: bad value `{v}` for `{k}`"));
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| Failure::Input(format!("--gen: expected key=value, got `{part}`")))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "P" => spec.n_pos = v.parse().map_err(|_| bad(k, v))?,
            "N" => spec.n_neg = v.parse().map_err(|_| bad(k, v))?,
            "seed" => spec.seed = v.parse().map_err(|_| bad(k, v))?,
            "iou" => spec.iou_mean = v.parse().map_err(|_| bad(k, v))?,
            "spread" => spec.iou_spread = v.parse().map_err(|_| bad(k, v))?,
            "noise" => spec.score_noise = v.parse().map_err(|_| bad(k, v))?,
            "order" => {
                spec.iou_order = match v {
                    "inverse" => IouOrder::Inverse,
                    "aligned" => IouOrder::Aligned,
                    "random" => IouOrder::Random,
                    _ => return Err(bad(k, v)),
                }
            }
            "geometry" => {
                spec.uniform_geometry = match v {
                    "uniform" => true,
                    "random" => false,
                    _ => return Err(bad(k, v)),
                }
            }
            _ => return Err(Failure::Input(format!("--gen: unknown key `{k}`"))),
        }
    }
    Ok(spec)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let d = TrainConfig::default();
    let delta = match (a.delta, d.step) {
        (Some(x), _) => x,
        (None, StepKind::Smooth { delta }) => delta,
        (None, StepKind::Exact) => 1.0,
    };
    let cfg = TrainConfig {
        loss: match a.loss {
            LossKind::Ap => LossChoice::Ap,
            LossKind::Alrp => LossChoice::Alrp,
            LossKind::Ndcg => LossChoice::Ndcg,
        },
        fast: a.fast,
        epochs: a.epochs,
        lr: a.lr.unwrap_or(d.lr),
        box_lr_scale: a.box_lr_scale.unwrap_or(d.box_lr_scale),
        momentum: a.momentum.unwrap_or(d.momentum),
        sb: a.sb,
        wrong_target: a.wrong_target,
        step: step_kind(a.step, delta)?,
        score_map: match a.score_map {
            Some(ScoreMapArg::Identity) => ScoreMap::Identity,
            Some(ScoreMapArg::Sigmoid) => ScoreMap::Sigmoid,
            None => d.score_map,
        },
        lr_decay: None,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn seed_path(out: &Path, seed: u64) -> PathBuf {
    let stem = out.file_stem().map_or("train".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}-seed{seed}.csv"))
}

fn summarise(label: &str, log: &TrainLog) {
    let (f, l) = (log.first(), log.last());
    eprintln!(
        "{label}: total {:.4} -> {:.4}, rho {:.3} -> {:.3}, mean IoU {:.3} -> {:.3}",
        f.total, l.total, f.rho, l.rho, f.mean_iou, l.mean_iou
    );
}

fn emit_log(log: &TrainLog, out: Option<&Path>) -> CliResult {
    match out {
        Some(p) => log.write_csv(File::create(p)?)?,
        None => log.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let cfg = train_config(&a)?;
    let mut failures = Vec::new();

    if let Some(seeds) = &a.seeds {
        let gen = parse_gen(a.gen.as_deref().unwrap_or_default())?;
        let seeds: Vec<u64> = parse_list("--seeds", seeds)?;
        let out = a.out.as_deref().ok_or_else(|| Failure::Input("--seeds needs --out".into()))?;
        for (seed, log) in seeds.iter().zip(train_many(&gen, &seeds, &cfg)) {
            let log = log?;
            emit_log(&log, Some(&seed_path(out, *seed)))?;
            summarise(&format!("seed {seed}"), &log);
            if let Some(t) = &log.terminal {
                failures.push(format!("seed {seed}: {t}"));
            }
        }
    } else {
        let sc = match (&a.gen, &a.scenario) {
            (_, Some(p)) => load_scenario(p)?,
            (Some(g), None) => generate_scenario(&parse_gen(g)?)?,
            (None, None) => generate_scenario(&ScenarioGenSpec::default())?,
        };
        let log = train(&sc, &cfg)?;
        emit_log(&log, a.out.as_deref())?;
        summarise("run", &log);
        if let Some(t) = &log.terminal {
            failures.push(t.clone());
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(failures.join("; ")))
    }
}

fn parse_sizes(text: &str) -> Result<Vec<(usize, usize)>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (p, n) = s.split_once('x').ok_or_else(|| Failure::Input(format!("--sizes: expected PxN, got `{s}`")))?;
            let p: usize = p.parse().map_err(|_| Failure::Input(format!("--sizes: bad positive count in `{s}`")))?;
            let n: usize = n.parse().map_err(|_| Failure::Input(format!("--sizes: bad negative count in `{s}`")))?;
            if p == 0 {
                return Err(Failure::Input(format!("--sizes: `{s}` has no positives")));
            }
            Ok((p, n))
        })
        .collect()
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    let sizes = parse_sizes(&a.sizes)?;
    if !(0.0..=1.0).contains(&a.prunable) {
        return Err(Failure::Input(format!("--prunable must lie in [0, 1], got {}", a.prunable)));
    }
    let rows = complexity_probe(&sizes, a.prunable, a.seed)?;
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["n_pos", "n_neg", "n_kept", "ops", "bound", "ratio", "fast_ms", "naive_ms"])?;
    for r in rows {
        let sc = probe_scenario(r.n_pos, r.n_neg, a.prunable, a.seed);
        let t = Instant::now();
        fast_alrp(&sc, FastConfig::default(), None)?;
        let fast_ms = t.elapsed().as_secs_f64() * 1e3;
        let naive_ms = if (r.n_pos * r.n_neg) as u64 <= a.naive_limit {
            let t = Instant::now();
            alrp_loss(&sc, StepKind::default(), None)?;
            format!("{:.3}", t.elapsed().as_secs_f64() * 1e3)
        } else {
            String::new()
        };
        w.write_record([
            r.n_pos.to_string(),
            r.n_neg.to_string(),
            r.n_kept.to_string(),
            r.ops.to_string(),
            r.bound.to_string(),
            format!("{:.4}", r.ratio),
            format!("{fast_ms:.3}"),
            naive_ms,
        ])?;
    }
    w.flush()?;
    Ok(())
}
