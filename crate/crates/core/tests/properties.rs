use proptest::prelude::*;

use rankloss::io::{parse_scenario, scenario_to_json};
use rankloss::metrics::{olrp, pr_curve, recall_points, RankedDetection};
use rankloss::*;

#[derive(Debug, Clone)]
struct Spec {
    pos: Vec<(f64, f64)>,
    neg: Vec<f64>,
    ignored: Vec<f64>,
}

fn quantise(coarse: bool, s: f64) -> f64 {
    if coarse {
        (s * 10.0).round() / 10.0
    } else {
        s
    }
}

// Scores in [0, 1], optionally on a coarse grid so ties are common; each
// positive carries the IoU of its box.
fn spec() -> impl Strategy<Value = Spec> {
    (
        prop::collection::vec((0.0..1.0f64, 0.55..1.0f64), 1..10),
        prop::collection::vec(0.0..1.0f64, 0..30),
        prop::collection::vec(0.0..1.0f64, 0..3),
        any::<bool>(),
    )
        .prop_map(|(pos, neg, ignored, coarse)| Spec {
            pos: pos.into_iter().map(|(s, o)| (quantise(coarse, s), o)).collect(),
            neg: neg.into_iter().map(|s| quantise(coarse, s)).collect(),
            ignored: ignored.into_iter().map(|s| quantise(coarse, s)).collect(),
        })
}

fn unit_gt(k: usize) -> BBox64 {
    BBox { x1: 10.0 * k as f64, y1: 0.0, x2: 10.0 * k as f64 + 1.0, y2: 1.0 }
}

fn build(s: &Spec) -> Scenario64 {
    let gts: Vec<BBox64> = (0..s.pos.len()).map(unit_gt).collect();
    let mut anchors: Vec<_> = s
        .pos
        .iter()
        .enumerate()
        .map(|(k, &(score, o))| AnchorRecord::positive(k, score, BBox { y2: o, ..gts[k] }))
        .collect();
    anchors.extend(s.neg.iter().map(|&x| AnchorRecord::negative(x)));
    anchors.extend(s.ignored.iter().map(|&x| AnchorRecord::ignored(x)));
    Scenario::new(anchors, gts, LocErrorKind::iou()).unwrap()
}

fn step_kind() -> impl Strategy<Value = StepKind64> {
    prop_oneof![Just(StepKind::Exact), (0.05..1.5f64).prop_map(|delta| StepKind::Smooth { delta })]
}

fn all_losses(sc: &Scenario64, kind: StepKind64) -> Vec<(&'static str, LossBreakdown64)> {
    vec![
        ("ap", ap_loss(sc, kind).unwrap()),
        ("alrp", alrp_loss(sc, kind, None).unwrap()),
        ("ndcg", ndcg_loss(sc, kind).unwrap()),
    ]
}

fn distinct(sc: &Scenario64) -> bool {
    let mut s: Vec<f64> = sc.anchors.iter().filter(|a| a.label != Label::Ignored).map(|a| a.score).collect();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[0] != w[1])
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn positive_and_negative_gradients_balance(s in spec(), kind in step_kind()) {
        let sc = build(&s);
        for (name, b) in all_losses(&sc, kind) {
            let (p, n) = (b.positive_grad_sum(&sc), b.negative_grad_sum(&sc));
            prop_assert!(close(p, n, 1e-12), "{}: {} vs {}", name, p, n);
        }
    }

    #[test]
    fn loss_minus_gradients_is_target(s in spec(), kind in step_kind()) {
        let sc = build(&s);
        for (name, b) in all_losses(&sc, kind) {
            let rest = b.primary_sum - b.positive_grad_sum(&sc);
            prop_assert!((rest - b.target_sum).abs() < 1e-12, "{}: {} vs {}", name, rest, b.target_sum);
        }
    }

    #[test]
    fn gradient_signs(s in spec(), kind in step_kind()) {
        let sc = build(&s);
        for (name, b) in all_losses(&sc, kind) {
            for (a, rec) in sc.anchors.iter().enumerate() {
                let g = b.score_grads[a];
                match rec.label {
                    Label::Positive(_) => prop_assert!(g <= 0.0, "{} positive {}: {}", name, a, g),
                    Label::Negative => prop_assert!(g >= 0.0, "{} negative {}: {}", name, a, g),
                    Label::Ignored => prop_assert_eq!(g, 0.0),
                }
            }
        }
    }

    #[test]
    fn ignored_anchors_change_nothing(s in spec(), kind in step_kind()) {
        let with = build(&s);
        let without = build(&Spec { ignored: vec![], ..s.clone() });
        let kept = without.anchors.len();
        for ((_, a), (_, b)) in all_losses(&with, kind).into_iter().zip(all_losses(&without, kind)) {
            prop_assert_eq!(a.total, b.total);
            prop_assert_eq!(&a.score_grads[..kept], &b.score_grads[..]);
            prop_assert_eq!(&a.box_grads, &b.box_grads);
        }
    }

    #[test]
    fn alrp_components_are_bounded(s in spec(), kind in step_kind()) {
        let sc = build(&s);
        let b = alrp_loss(&sc, kind, None).unwrap();
        prop_assert!(b.cls_component >= 0.0 && b.loc_component >= 0.0);
        prop_assert!(b.total <= 1.0 + 1e-12, "{}", b.total);
        let ap = ap_loss(&sc, kind).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap.total));
    }

    #[test]
    fn raising_a_positive_never_hurts_classification(s in spec(), pick in any::<prop::sample::Index>(), lift in 0.0..1.0f64) {
        let sc = build(&s);
        let k = pick.index(s.pos.len());
        let mut raised = s.clone();
        raised.pos[k].0 += lift;
        // the exact step counts tied scores as outranking, so ties are excluded
        prop_assume!(distinct(&sc) && distinct(&build(&raised)));
        let up = build(&raised);
        let before = ap_loss(&sc, StepKind::Exact).unwrap().total;
        let after = ap_loss(&up, StepKind::Exact).unwrap().total;
        prop_assert!(after <= before + 1e-12, "AP loss {} -> {}", before, after);
        let before = alrp_loss(&sc, StepKind::Exact, None).unwrap().cls_component;
        let after = alrp_loss(&up, StepKind::Exact, None).unwrap().cls_component;
        prop_assert!(after <= before + 1e-12, "aLRP cls {} -> {}", before, after);
    }

    #[test]
    fn aligning_ious_with_scores_never_raises_localisation(s in spec(), kind in step_kind()) {
        let sc = build(&s);
        let upper = ranking_bound_transform(&sc, BoundMode::Upper).unwrap();
        let lower = ranking_bound_transform(&sc, BoundMode::Lower).unwrap();
        let loc = |x: &Scenario64| alrp_loss(x, kind, None).unwrap().loc_component;
        prop_assert!(loc(&upper) <= loc(&sc) + 1e-12);
        prop_assert!(loc(&sc) <= loc(&lower) + 1e-12);
    }

    #[test]
    fn soft_weights_reconstruct_localisation(s in spec(), kind in step_kind()) {
        let sc = build(&s);
        let w = alrp_soft_weights(&sc, kind).unwrap();
        let b = alrp_loss(&sc, kind, None).unwrap();
        let mut rebuilt = 0.0;
        for (&a, wm) in sc.positive_indices().iter().zip(&w) {
            prop_assert!(*wm >= 0.0);
            let (p, g) = sc.box_pair(a).unwrap();
            rebuilt += wm * loc_error(&p, &g, sc.loc_kind).unwrap();
        }
        if kind == StepKind::Exact {
            prop_assert!(w.iter().sum::<f64>() <= 1.0 + 1e-12);
        }
        prop_assert!((rebuilt - b.loc_component).abs() < 1e-12);
    }

    #[test]
    fn rank_decomposes(s in spec(), kind in step_kind()) {
        let sc = build(&s);
        for p in rank_stats(&sc, kind).positives {
            prop_assert!(p.rank >= 1.0);
            prop_assert!((p.rank - (p.rank_plus + p.n_fp)).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_matches_naive(s in spec(), delta in 0.05..1.5f64, prune in any::<bool>()) {
        let sc = build(&s);
        let kind = StepKind::Smooth { delta };
        let naive = alrp_loss(&sc, kind, None).unwrap();
        let fast = fast_alrp(&sc, FastConfig { step: kind, prune }, None).unwrap();
        prop_assert!(close(naive.total, fast.total, 1e-12));
        for (a, b) in naive.score_grads.iter().zip(&fast.score_grads) {
            prop_assert!(close(*a, *b, 1e-12), "{} vs {}", a, b);
        }
        for (a, b) in naive.box_grads.iter().zip(&fast.box_grads) {
            for c in 0..4 {
                prop_assert!(close(a[c], b[c], 1e-12));
            }
        }
    }

    #[test]
    fn pruned_negatives_get_no_gradient(s in spec(), delta in 0.05..0.5f64) {
        let sc = build(&s);
        let fast = fast_alrp(&sc, FastConfig { step: StepKind::Smooth { delta }, prune: true }, None).unwrap();
        let floor = s.pos.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - delta;
        for j in sc.negative_indices() {
            if sc.anchors[j].score < floor {
                prop_assert_eq!(fast.score_grads[j], 0.0);
            }
        }
    }

    #[test]
    fn scenario_files_round_trip(s in spec()) {
        let sc = build(&s);
        let text = scenario_to_json(&sc, Some("generated".into())).unwrap();
        prop_assert_eq!(parse_scenario(&text).unwrap(), sc);
    }

    #[test]
    fn smooth_step_is_a_monotone_ramp(x in -3.0..3.0f64, dx in 0.0..1.0f64, delta in 0.01..2.0f64) {
        let kind = StepKind::Smooth { delta };
        let (a, b) = (step(x, kind), step(x + dx, kind));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(a <= b);
        if x.abs() > delta {
            prop_assert_eq!(a, step(x, StepKind::Exact));
        }
    }

    #[test]
    fn overlap_measures(a in box_strategy(), b in box_strategy()) {
        let o = iou(&a, &b).unwrap();
        let g = giou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert!((o - iou(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!(g <= o + 1e-15 && g >= -1.0 - 1e-15);
        prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn interpolated_precision_never_increases(flags in prop::collection::vec(any::<bool>(), 0..40), extra in 0usize..5) {
        let ranked: Vec<_> = flags
            .iter()
            .enumerate()
            .map(|(k, &tp)| RankedDetection { score: 1.0 - k as f64 / 100.0, tp_iou: tp.then_some(0.9) })
            .collect();
        let n_gt = flags.iter().filter(|&&f| f).count() + extra;
        prop_assume!(n_gt > 0);
        let c = pr_curve(&ranked, n_gt, &recall_points(10));
        for w in c.precisions.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn a_lowest_scoring_false_positive_never_helps_olrp(s in spec()) {
        let sc = build(&s);
        let mut input = EvalInput::default();
        for rec in &sc.anchors {
            let bbox = match rec.label {
                Label::Positive(g) => BBox { y2: rec.pred_box.unwrap().y2, ..unit_gt(g) },
                Label::Negative => BBox { x1: 500.0, y1: 500.0, x2: 501.0, y2: 501.0 },
                Label::Ignored => continue,
            };
            input.detections.push(Detection { score: rec.score, bbox, class: 0 });
        }
        input.ground_truths = sc.gts.iter().map(|&bbox| GroundTruth { bbox, class: 0 }).collect();
        let before = olrp(&input, 0.5).unwrap().value;
        input.detections.push(Detection { score: -1.0, bbox: BBox { x1: 900.0, y1: 0.0, x2: 901.0, y2: 1.0 }, class: 0 });
        let after = olrp(&input, 0.5).unwrap().value;
        prop_assert_eq!(before, after);
    }

    #[test]
    fn single_precision_tracks_double(s in spec()) {
        let sc = build(&s);
        let cast = |b: &BBox64| BBox { x1: b.x1 as f32, y1: b.y1 as f32, x2: b.x2 as f32, y2: b.y2 as f32 };
        let sc32 = Scenario32 {
            anchors: sc
                .anchors
                .iter()
                .map(|a| AnchorRecord { label: a.label, score: a.score as f32, pred_box: a.pred_box.as_ref().map(cast) })
                .collect(),
            gts: sc.gts.iter().map(cast).collect(),
            loc_kind: LocErrorKind::iou(),
        };
        let kind = StepKind::Smooth { delta: 0.5 };
        let a = alrp_loss(&sc, kind, None).unwrap().total;
        let b = alrp_loss(&sc32, StepKind::Smooth { delta: 0.5f32 }, None).unwrap().total;
        prop_assert!((a - b as f64).abs() < 1e-4, "{} vs {}", a, b);
    }
}

fn box_strategy() -> impl Strategy<Value = BBox64> {
    (-5.0..5.0f64, -5.0..5.0f64, 0.1..4.0f64, 0.1..4.0f64).prop_map(|(x, y, w, h)| BBox { x1: x, y1: y, x2: x + w, y2: y + h })
}
