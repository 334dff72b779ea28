use rankloss::trainer::*;
use rankloss::Scenario64;

fn small() -> Scenario64 {
    generate_scenario(&ScenarioGenSpec { n_pos: 5, n_neg: 20, seed: 3, ..Default::default() }).unwrap()
}

fn default_scenario() -> Scenario64 {
    generate_scenario(&ScenarioGenSpec::default()).unwrap()
}

#[test]
fn small_scenario_converges_and_aligns() {
    let log = train(&small(), &TrainConfig { epochs: 200, ..Default::default() }).unwrap();
    assert!(log.terminal.is_none());
    assert!(log.last().total < 0.1 * log.first().total, "{} -> {}", log.first().total, log.last().total);
    assert!(log.last().rho > log.first().rho);
}

#[test]
fn balance_ratio_is_one_for_every_conforming_loss() {
    let sc = generate_scenario(&ScenarioGenSpec { n_pos: 8, n_neg: 60, seed: 11, ..Default::default() }).unwrap();
    for loss in [LossChoice::Alrp, LossChoice::Ap, LossChoice::Ndcg] {
        for sb in [false, true] {
            let log = train(&sc, &TrainConfig { loss, sb, epochs: 60, ..Default::default() }).unwrap();
            assert!(log.terminal.is_none(), "{loss:?}: {:?}", log.terminal);
            for r in &log.records {
                assert!((r.ratio - 1.0).abs() < 1e-6, "{loss:?} epoch {}: ratio {}", r.epoch, r.ratio);
            }
        }
    }
}

#[test]
fn wrong_target_overweights_positives() {
    let mut sc = default_scenario();
    // start near a converged ranking
    for a in sc.positive_indices() {
        sc.anchors[a].score += 3.0;
    }
    let right = train(&sc, &TrainConfig::default()).unwrap();
    let wrong = train(&sc, &TrainConfig { wrong_target: true, ..Default::default() }).unwrap();
    assert!(wrong.records.iter().any(|r| r.ratio < 0.5), "ratio never left 1");
    assert!(right.records.iter().all(|r| (r.ratio - 1.0).abs() < 1e-6));
    let tail = |log: &TrainLog| log.records[400..].iter().map(|r| r.total).sum::<f64>() / 101.0;
    assert!(tail(&wrong) > tail(&right), "{} vs {}", tail(&wrong), tail(&right));
    assert!(wrong.last().total > right.last().total);
}

#[test]
fn self_balance_warmup() {
    let sc = default_scenario();
    let off = sb_warmup_report(&train(&sc, &TrainConfig { epochs: 5, sb: false, ..Default::default() }).unwrap());
    let on = sb_warmup_report(&train(&sc, &TrainConfig { epochs: 5, sb: true, ..Default::default() }).unwrap());
    for &share in &off.loc_share[..3] {
        assert!(share < 1.0 - share, "loc share {share}");
    }
    assert!(off.box_to_score[1] < 0.5);
    assert!(on.sb_weights.iter().all(|&w| w >= 1.0));
    let expect = on.sb_weights[1] * off.box_to_score[1];
    assert!((on.box_to_score[1] - expect).abs() < 0.05 * expect, "{} vs {expect}", on.box_to_score[1]);
}

fn bits(log: &TrainLog) -> Vec<[u64; 10]> {
    log.records
        .iter()
        .map(|r| {
            [
                r.epoch as u64,
                r.total.to_bits(),
                r.cls.to_bits(),
                r.loc.to_bits(),
                r.ratio.to_bits(),
                r.sb_weight.to_bits(),
                r.rho.to_bits(),
                r.mean_iou.to_bits(),
                r.score_grad_norm.to_bits(),
                r.box_grad_norm.to_bits(),
            ]
        })
        .collect()
}

#[test]
fn training_is_bit_deterministic() {
    let cfg = TrainConfig { epochs: 40, sb: true, ..Default::default() };
    let a = train(&default_scenario(), &cfg).unwrap();
    let b = train(&default_scenario(), &cfg).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.final_scenario, b.final_scenario);
}

#[test]
fn fast_and_naive_logs_agree() {
    let sc = default_scenario();
    for sb in [false, true] {
        let naive = train(&sc, &TrainConfig { epochs: 100, sb, ..Default::default() }).unwrap();
        let fast = train(&sc, &TrainConfig { epochs: 100, sb, fast: true, ..Default::default() }).unwrap();
        assert_eq!(naive.records.len(), fast.records.len());
        for (n, f) in naive.records.iter().zip(&fast.records) {
            for (x, y) in [(n.total, f.total), (n.cls, f.cls), (n.loc, f.loc), (n.ratio, f.ratio), (n.sb_weight, f.sb_weight), (n.mean_iou, f.mean_iou)] {
                assert!((x - y).abs() <= 1e-7 * x.abs().max(1.0), "epoch {}: {x} vs {y}", n.epoch);
            }
        }
    }
}

#[test]
fn parallel_runs_match_serial_runs() {
    let gen = ScenarioGenSpec { n_pos: 6, n_neg: 30, ..Default::default() };
    let cfg = TrainConfig { epochs: 20, ..Default::default() };
    let seeds = [4, 1, 9, 2, 7];
    let many = train_many(&gen, &seeds, &cfg);
    for (&seed, got) in seeds.iter().zip(many) {
        let serial = train(&generate_scenario(&ScenarioGenSpec { seed, ..gen.clone() }).unwrap(), &cfg).unwrap();
        assert_eq!(bits(&got.unwrap()), bits(&serial));
    }
}

#[test]
fn random_geometry_hits_requested_ious() {
    let spec = ScenarioGenSpec { n_pos: 40, n_neg: 0, iou_mean: 0.7, iou_spread: 0.1, uniform_geometry: false, ..Default::default() };
    let sc = generate_scenario(&spec).unwrap();
    let mut sum = 0.0;
    for a in sc.positive_indices() {
        let (p, g) = sc.box_pair(a).unwrap();
        let o = rankloss::iou(&p, &g).unwrap();
        assert!((0.6 - 1e-9..=0.8 + 1e-9).contains(&o), "{o}");
        sum += o;
    }
    assert!((sum / 40.0 - 0.7).abs() < 0.05);
}

#[test]
fn divergence_is_a_terminal_event() {
    let log = train(&small(), &TrainConfig { box_lr_scale: 1.0, lr: 5.0, epochs: 200, ..Default::default() }).unwrap();
    let msg = log.terminal.expect("expected a numerical failure");
    assert!(msg.starts_with("epoch "), "{msg}");
    assert!(log.records.len() <= 201);
}
