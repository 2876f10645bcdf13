use super::*;
use crate::dataset::vocab::PosTag::{Obj, Pred, Subj};
use proptest::prelude::*;

fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox<f64> {
    BoundingBox::new(x, y, w, h)
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn gt(image_id: u64, s: BoundingBox<f64>, o: BoundingBox<f64>, text: &str) -> GroundTruthRelation {
    let tokens = toks(text);
    GroundTruthRelation {
        image_id,
        subject: s,
        object: o,
        pos: vec![Subj; tokens.len()],
        tokens,
    }
}

fn pred(image_id: u64, s: BoundingBox<f64>, o: BoundingBox<f64>, text: &str, confidence: f64) -> ScoredRelation {
    ScoredRelation {
        image_id,
        subject: s,
        object: o,
        tokens: toks(text),
        confidence,
    }
}

fn two_gt() -> Vec<GroundTruthRelation> {
    vec![
        gt(0, b(20.0, 20.0, 10.0, 10.0), b(60.0, 20.0, 10.0, 10.0), "the red square is left of the blue star"),
        gt(0, b(60.0, 20.0, 10.0, 10.0), b(20.0, 20.0, 10.0, 10.0), "the blue star is near the red square"),
    ]
}

#[test]
fn perfect_predictions_score_100() {
    let g = two_gt();
    let p: Vec<ScoredRelation> = g
        .iter()
        .map(|g| ScoredRelation {
            image_id: 0,
            subject: g.subject,
            object: g.object,
            tokens: g.tokens.clone(),
            confidence: 1.0,
        })
        .collect();
    let m = relational_map(&p, &g, &MetricConfig::default()).unwrap();
    assert!((m.map_percent - 100.0).abs() < 1e-12);
    assert_eq!(image_level_recall(&p, &g, &METEOR_THRESHOLDS), 1.0);
    let cfg = MetricConfig::default();
    assert_eq!(vrd_recall_at_k(&p, &g, 2, VrdMode::Phrase, &cfg).unwrap(), 1.0);
    assert_eq!(vrd_recall_at_k(&p, &g, 2, VrdMode::Relationship, &cfg).unwrap(), 1.0);
}

#[test]
fn empty_predictions_and_missing_gt() {
    let g = two_gt();
    let m = relational_map(&[], &g, &MetricConfig::default()).unwrap();
    assert_eq!(m.map_percent, 0.0);
    assert_eq!(image_level_recall(&[], &g, &METEOR_THRESHOLDS), 0.0);
    assert!(relational_map(&[], &[], &MetricConfig::default()).is_err());
}

#[test]
fn average_precision_sweep() {
    // TP, FP, TP with 2 GT: 1/2·1 + 1/2·2/3.
    let ap = average_precision(&[true, false, true], 2);
    assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    assert_eq!(average_precision(&[false, false], 3), 0.0);
}

#[test]
fn duplicate_prediction_is_a_false_positive() {
    let g = vec![two_gt()[0].clone()];
    let p = vec![
        pred(0, g[0].subject, g[0].object, "the red square is left of the blue star", 0.9),
        pred(0, g[0].subject, g[0].object, "the red square is left of the blue star", 0.8),
    ];
    let m = relational_map(&p, &g, &MetricConfig::default()).unwrap();
    assert!((m.map_percent - 100.0).abs() < 1e-12);
    let reversed = vec![p[0].clone(), ScoredRelation { confidence: 0.95, ..pred(0, b(90.0, 90.0, 5.0, 5.0), g[0].object, "x", 0.0) }];
    let m = relational_map(&reversed, &g, &MetricConfig::default()).unwrap();
    assert!((m.map_percent - 50.0).abs() < 1e-12);
}

#[test]
fn image_recall_hand_rule() {
    // One prediction equal to the first GT: t = 0 covers both, t = 0.25
    // covers one.
    let g = vec![
        gt(0, b(10.0, 10.0, 5.0, 5.0), b(30.0, 10.0, 5.0, 5.0), "the red square is left of the blue star"),
        gt(0, b(10.0, 10.0, 5.0, 5.0), b(30.0, 10.0, 5.0, 5.0), "zz yy xx"),
    ];
    let p = vec![pred(0, g[0].subject, g[0].object, "the red square is left of the blue star", 1.0)];
    assert!((image_level_recall(&p, &g, &[0.0, 0.25]) - 0.75).abs() < 1e-15);
}

#[test]
fn phrase_covers_where_relationship_does_not() {
    // GT subject [0,10]x[0,10], object [40,50]x[40,50]; the prediction swaps
    // the two boxes, so the union box is identical while each individual box
    // has IoU 0.
    let s = BoundingBox::from_corners(0.0, 0.0, 10.0, 10.0);
    let o = BoundingBox::from_corners(40.0, 40.0, 50.0, 50.0);
    let g = vec![gt(0, s, o, "the red square is above the blue star")];
    let p = vec![pred(0, o, s, "the red square is above the blue star", 1.0)];
    let cfg = MetricConfig::default();
    assert_eq!(vrd_recall_at_k(&p, &g, 1, VrdMode::Phrase, &cfg).unwrap(), 1.0);
    assert_eq!(vrd_recall_at_k(&p, &g, 1, VrdMode::Relationship, &cfg).unwrap(), 0.0);
    assert!(vrd_recall_at_k(&p, &g, 0, VrdMode::Phrase, &cfg).is_err());
}

#[test]
fn recall_at_k_uses_top_k_only() {
    let g = two_gt();
    let mut p = vec![pred(0, b(90.0, 90.0, 5.0, 5.0), b(90.0, 90.0, 5.0, 5.0), "noise", 0.99)];
    p.push(pred(0, g[0].subject, g[0].object, "the red square is left of the blue star", 0.5));
    let cfg = MetricConfig::default();
    assert_eq!(vrd_recall_at_k(&p, &g, 1, VrdMode::Relationship, &cfg).unwrap(), 0.0);
    assert_eq!(vrd_recall_at_k(&p, &g, 2, VrdMode::Relationship, &cfg).unwrap(), 0.5);
}

#[test]
fn diversity_counts() {
    let p = vec![pred(0, b(1.0, 1.0, 1.0, 1.0), b(2.0, 2.0, 1.0, 1.0), "a b a", 1.0)];
    assert_eq!(diversity_stats(&p).0, 2.0);
    let p = vec![
        pred(0, b(1.0, 1.0, 1.0, 1.0), b(2.0, 2.0, 1.0, 1.0), "a b", 1.0),
        pred(1, b(1.0, 1.0, 1.0, 1.0), b(2.0, 2.0, 1.0, 1.0), "a b c", 1.0),
        pred(1, b(5.0, 1.0, 1.0, 1.0), b(2.0, 2.0, 1.0, 1.0), "c d", 1.0),
    ];
    let (img, per_box) = diversity_stats(&p);
    assert_eq!(img, 3.0);
    assert!((per_box - 7.0 / 3.0).abs() < 1e-15);
}

#[test]
fn pos_accuracy_counts() {
    let r = vec![vec![Subj, Subj, Pred, Obj, Obj], vec![Subj, Pred, Pred, Obj, Obj]];
    assert_eq!(pos_accuracy(&r, &r).unwrap().overall, 1.0);
    let flip = |t: &PosTag| if *t == Subj { Obj } else { Subj };
    let comp: Vec<Vec<PosTag>> = r.iter().map(|s| s.iter().map(flip).collect()).collect();
    assert_eq!(pos_accuracy(&comp, &r).unwrap().overall, 0.0);
    let mut seven = r.clone();
    seven[0][0] = Pred;
    seven[1][1] = Obj;
    seven[1][4] = Pred;
    let a = pos_accuracy(&seven, &r).unwrap();
    assert_eq!((a.correct, a.total), (7, 10));
    assert!((a.overall - 0.7).abs() < 1e-15);
    assert_eq!(a.per_class[0], Some(2.0 / 3.0));
    assert!(pos_accuracy(&r[..1], &r).is_err());
    assert!(pos_accuracy(&[vec![Subj]], &r[..1]).is_err());
}

#[test]
fn report_table_and_ranges() {
    let g = two_gt();
    let p = vec![pred(0, g[0].subject, g[0].object, "the red square is left of the blue star", 0.7)];
    let pos = pos_accuracy(&[vec![Subj, Pred]], &[vec![Subj, Obj]]).unwrap();
    let r = EvalReport::compute(&p, &g, Some(&pos), &MetricConfig::default()).unwrap();
    r.check_ranges().unwrap();
    let table = r.to_table();
    assert!(table.contains("mAP (%)"));
    assert_eq!(r.pos_accuracy_pred, None);
    let widths: BTreeSet<usize> = table.lines().map(str::len).collect();
    assert_eq!(widths.len(), 1, "{table}");
}

fn arb_box() -> impl Strategy<Value = BoundingBox<f64>> {
    (0.0..80.0f64, 0.0..80.0f64, 4.0..20.0f64, 4.0..20.0f64).prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h))
}

fn arb_words() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop::sample::select(vec!["the", "red", "square", "is", "near", "blue"]), 1..5)
        .prop_map(|w| w.join(" "))
}

fn arb_case() -> impl Strategy<Value = (Vec<ScoredRelation>, Vec<GroundTruthRelation>)> {
    let g = proptest::collection::vec((0u64..2, arb_box(), arb_box(), arb_words()), 1..5)
        .prop_map(|v| v.into_iter().map(|(i, s, o, t)| gt(i, s, o, &t)).collect::<Vec<_>>());
    let p = proptest::collection::vec((0u64..2, arb_box(), arb_box(), arb_words(), 0.0..1.0f64), 0..8)
        .prop_map(|v| v.into_iter().map(|(i, s, o, t, c)| pred(i, s, o, &t, c)).collect::<Vec<_>>());
    (p, g)
}

proptest! {
    #[test]
    fn map_depends_on_ranking_only((p, g) in arb_case()) {
        let cfg = MetricConfig::default();
        let a = relational_map(&p, &g, &cfg).unwrap().map_percent;
        let q: Vec<ScoredRelation> = p.iter().map(|x| ScoredRelation { confidence: (3.0 * x.confidence).exp() - 7.0, ..x.clone() }).collect();
        let b = relational_map(&q, &g, &cfg).unwrap().map_percent;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn metrics_monotone_in_thresholds((p, g) in arb_case()) {
        let m = relational_map(&p, &g, &MetricConfig::default()).unwrap();
        for row in &m.ap {
            for w in row.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }
        for i in 0..IOU_THRESHOLDS.len() {
            for k in 1..METEOR_THRESHOLDS.len() {
                prop_assert!(m.ap[k][i] <= m.ap[k - 1][i] + 1e-12);
            }
        }
        for w in METEOR_THRESHOLDS.windows(2) {
            prop_assert!(image_level_recall(&p, &g, &w[1..]) <= image_level_recall(&p, &g, &w[..1]) + 1e-12);
        }
        let cfg = MetricConfig::default();
        let loose = MetricConfig { vrd_iou: 0.3, vrd_meteor: 0.1, ..cfg.clone() };
        for mode in [VrdMode::Phrase, VrdMode::Relationship] {
            prop_assert!(vrd_recall_at_k(&p, &g, 3, mode, &cfg).unwrap() <= vrd_recall_at_k(&p, &g, 3, mode, &loose).unwrap() + 1e-12);
        }
    }

    #[test]
    fn superset_of_gt_recalls_everything((p, g) in arb_case()) {
        let mut all = p.clone();
        all.extend(g.iter().map(|g| ScoredRelation { image_id: g.image_id, subject: g.subject, object: g.object, tokens: g.tokens.clone(), confidence: 0.5 }));
        for &t in &METEOR_THRESHOLDS {
            prop_assert!((image_level_recall(&all, &g, &[t]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn report_fields_in_range((p, g) in arb_case()) {
        let r = EvalReport::compute(&p, &g, None, &MetricConfig::default()).unwrap();
        prop_assert!(r.check_ranges().is_ok());
    }
}
