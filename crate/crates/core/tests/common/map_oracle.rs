//! Exhaustive reference for relational mAP: enumerates every injective
//! assignment of ranked predictions to eligible GTs and keeps the one whose
//! per-rank outcome sequence is lexicographically largest, which is the
//! outcome of greedy matching with the documented preference order.

use std::cmp::Ordering;

use relcap::dataset::record::GroundTruthRelation;
use relcap::geometry::iou;
use relcap::metrics::{meteor_lite, ScoredRelation};

/// (matched, meteor, min IoU, -gt index) for one ranked prediction.
type Outcome = (bool, f64, f64, i64);

fn cmp_outcome(a: &Outcome, b: &Outcome) -> Ordering {
    a.0.cmp(&b.0)
        .then(a.1.partial_cmp(&b.1).unwrap())
        .then(a.2.partial_cmp(&b.2).unwrap())
        .then(a.3.cmp(&b.3))
}

fn cmp_seq(a: &[Outcome], b: &[Outcome]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match cmp_outcome(x, y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

#[allow(clippy::too_many_arguments)]
fn search(
    rank: usize,
    order: &[usize],
    eligible: &[Vec<(usize, f64, f64)>],
    used: &mut Vec<bool>,
    current: &mut Vec<Outcome>,
    best: &mut Option<Vec<Outcome>>,
) {
    if rank == order.len() {
        if best.as_ref().is_none_or(|b| cmp_seq(current, b) == Ordering::Greater) {
            *best = Some(current.clone());
        }
        return;
    }
    current.push((false, 0.0, 0.0, 0));
    search(rank + 1, order, eligible, used, current, best);
    current.pop();
    for &(g, m, u) in &eligible[order[rank]] {
        if !used[g] {
            used[g] = true;
            current.push((true, m, u, -(g as i64)));
            search(rank + 1, order, eligible, used, current, best);
            current.pop();
            used[g] = false;
        }
    }
}

/// AP at one threshold pair as (1 / |GT|) Σ over hits of precision at the hit.
pub fn oracle_ap(preds: &[ScoredRelation], gts: &[GroundTruthRelation], meteor_t: f64, iou_t: f64) -> f64 {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap()
            .then(a.cmp(&b))
    });
    let eligible: Vec<Vec<(usize, f64, f64)>> = preds
        .iter()
        .map(|p| {
            gts.iter()
                .enumerate()
                .filter(|(_, g)| g.image_id == p.image_id)
                .filter_map(|(i, g)| {
                    let m = meteor_lite(&p.tokens, &g.tokens);
                    let (s, o) = (iou(&p.subject, &g.subject), iou(&p.object, &g.object));
                    (m >= meteor_t && s >= iou_t && o >= iou_t).then_some((i, m, s.min(o)))
                })
                .collect()
        })
        .collect();
    let mut best = None;
    search(0, &order, &eligible, &mut vec![false; gts.len()], &mut Vec::new(), &mut best);
    let outcome = best.unwrap_or_default();
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (k, o) in outcome.iter().enumerate() {
        if o.0 {
            hits += 1.0;
            sum += hits / (k + 1) as f64;
        }
    }
    sum / gts.len() as f64
}

pub fn oracle_map(preds: &[ScoredRelation], gts: &[GroundTruthRelation], meteor: &[f64], ious: &[f64]) -> f64 {
    let mut total = 0.0;
    for &m in meteor {
        for &t in ious {
            total += oracle_ap(preds, gts, m, t);
        }
    }
    100.0 * total / (meteor.len() * ious.len()) as f64
}
