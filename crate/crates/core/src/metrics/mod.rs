//! Relational captioning metrics: METEOR, relational mAP over a METEOR × IoU
//! grid, image-level recall, diversity, VRD-style recall and POS accuracy.

pub mod meteor;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::record::{GroundTruthRelation, PredictionRecord};
use crate::dataset::vocab::PosTag;
use crate::error::{Error, Result};
use crate::geometry::{iou, union_box, BoundingBox};

pub use meteor::{meteor_detail, meteor_lite, MeteorDetail};

pub const METEOR_THRESHOLDS: [f64; 6] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25];
pub const IOU_THRESHOLDS: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub meteor_thresholds: Vec<f64>,
    pub iou_thresholds: Vec<f64>,
    pub vrd_iou: f64,
    pub vrd_meteor: f64,
    pub vrd_k: usize,
    pub keep_after_nms: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            meteor_thresholds: METEOR_THRESHOLDS.to_vec(),
            iou_thresholds: IOU_THRESHOLDS.to_vec(),
            vrd_iou: 0.5,
            vrd_meteor: 0.25,
            vrd_k: 50,
            keep_after_nms: 50,
        }
    }
}

/// A predicted relation caption with its two boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRelation {
    pub image_id: u64,
    pub subject: BoundingBox<f64>,
    pub object: BoundingBox<f64>,
    pub tokens: Vec<String>,
    pub confidence: f64,
}

impl From<&PredictionRecord> for ScoredRelation {
    fn from(p: &PredictionRecord) -> Self {
        Self {
            image_id: p.image_id,
            subject: p.subject_box,
            object: p.object_box,
            tokens: p.tokens(),
            confidence: p.confidence,
        }
    }
}

/// Indices sorted by descending confidence; ties keep input order.
pub fn rank_by_confidence(preds: &[ScoredRelation]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

fn gt_by_image(gts: &[GroundTruthRelation]) -> BTreeMap<u64, Vec<usize>> {
    let mut m: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        m.entry(g.image_id).or_default().push(i);
    }
    m
}

/// Language and localization agreement between one prediction and one GT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub gt: usize,
    pub meteor: f64,
    pub iou_subject: f64,
    pub iou_object: f64,
}

impl PairScore {
    pub fn min_iou(&self) -> f64 {
        self.iou_subject.min(self.iou_object)
    }

    pub fn passes(&self, meteor_t: f64, iou_t: f64) -> bool {
        self.meteor >= meteor_t && self.iou_subject >= iou_t && self.iou_object >= iou_t
    }
}

/// For every prediction, its scores against each GT of the same image.
pub fn pair_scores(preds: &[ScoredRelation], gts: &[GroundTruthRelation]) -> Vec<Vec<PairScore>> {
    let by_image = gt_by_image(gts);
    preds
        .iter()
        .map(|p| {
            by_image
                .get(&p.image_id)
                .map(|idx| {
                    idx.iter()
                        .map(|&g| PairScore {
                            gt: g,
                            meteor: meteor_lite(&p.tokens, &gts[g].tokens),
                            iou_subject: iou(&p.subject, &gts[g].subject),
                            iou_object: iou(&p.object, &gts[g].object),
                        })
                        .collect()
                })
                .unwrap_or_default()
        })
        .collect()
}

/// Greedy matching in confidence order at one threshold pair. Among the
/// eligible unmatched GTs a prediction takes the one with the highest METEOR,
/// then the highest min(IoU), then the lowest index. Returns the TP flag of
/// each ranked prediction.
pub fn greedy_match(scores: &[Vec<PairScore>], order: &[usize], n_gt: usize, meteor_t: f64, iou_t: f64) -> Vec<bool> {
    let mut used = vec![false; n_gt];
    order
        .iter()
        .map(|&p| {
            let mut best: Option<&PairScore> = None;
            for s in scores[p].iter().filter(|s| !used[s.gt] && s.passes(meteor_t, iou_t)) {
                let better = match best {
                    None => true,
                    Some(b) => {
                        s.meteor > b.meteor || (s.meteor == b.meteor && s.min_iou() > b.min_iou())
                    }
                };
                if better {
                    best = Some(s);
                }
            }
            match best {
                Some(s) => {
                    used[s.gt] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Every-point AP of a ranked TP/FP sequence: Σ (R_i − R_{i−1}) · P_i.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    let mut hits = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (i, &t) in tp.iter().enumerate() {
        if t {
            hits += 1;
        }
        let recall = hits as f64 / n_gt as f64;
        let precision = hits as f64 / (i + 1) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map_percent: f64,
    /// `ap[m][i]` for METEOR threshold `m` and IoU threshold `i`, in [0, 1].
    pub ap: Vec<Vec<f64>>,
}

/// Mean AP × 100 over all (METEOR, IoU) threshold combinations. A
/// prediction is a true positive when both of its boxes reach the IoU
/// threshold and its caption reaches the METEOR threshold against an
/// unmatched GT of its image.
pub fn relational_map(preds: &[ScoredRelation], gts: &[GroundTruthRelation], cfg: &MetricConfig) -> Result<MapResult> {
    if gts.is_empty() {
        return Err(Error::contract("relational mAP is undefined without ground truth"));
    }
    if cfg.meteor_thresholds.is_empty() || cfg.iou_thresholds.is_empty() {
        return Err(Error::config("empty threshold set"));
    }
    let scores = pair_scores(preds, gts);
    let order = rank_by_confidence(preds);
    let ap: Vec<Vec<f64>> = cfg
        .meteor_thresholds
        .iter()
        .map(|&m| {
            cfg.iou_thresholds
                .iter()
                .map(|&t| average_precision(&greedy_match(&scores, &order, gts.len(), m, t), gts.len()))
                .collect()
        })
        .collect();
    let n = (cfg.meteor_thresholds.len() * cfg.iou_thresholds.len()) as f64;
    let map_percent = 100.0 * ap.iter().flatten().sum::<f64>() / n;
    Ok(MapResult { map_percent, ap })
}

/// Per-image caption bag recall. For each METEOR threshold a GT caption is
/// covered when some prediction of its image reaches the threshold; the
/// covered fraction is averaged over thresholds, then over images with GT.
pub fn image_level_recall(preds: &[ScoredRelation], gts: &[GroundTruthRelation], thresholds: &[f64]) -> f64 {
    let by_image = gt_by_image(gts);
    if by_image.is_empty() || thresholds.is_empty() {
        return 0.0;
    }
    let mut pred_by_image: BTreeMap<u64, Vec<&ScoredRelation>> = BTreeMap::new();
    for p in preds {
        pred_by_image.entry(p.image_id).or_default().push(p);
    }
    let mut total = 0.0;
    for (image, idx) in &by_image {
        let bag = pred_by_image.get(image).map_or(&[][..], Vec::as_slice);
        let best: Vec<Option<f64>> = idx
            .iter()
            .map(|&g| {
                bag.iter()
                    .map(|p| meteor_lite(&p.tokens, &gts[g].tokens))
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            })
            .collect();
        let per_threshold: f64 = thresholds
            .iter()
            .map(|&t| best.iter().filter(|b| b.is_some_and(|v| v >= t)).count() as f64 / idx.len() as f64)
            .sum();
        total += per_threshold / thresholds.len() as f64;
    }
    total / by_image.len() as f64
}

/// Mean over predictions of the METEOR score against the GT of the same
/// image with the best-localized box pair (highest min IoU, lowest index on
/// ties). Predictions in images without GT score 0.
pub fn mean_meteor(preds: &[ScoredRelation], gts: &[GroundTruthRelation]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let scores = pair_scores(preds, gts);
    let sum: f64 = scores
        .iter()
        .map(|row| {
            let mut best: Option<&PairScore> = None;
            for s in row {
                if best.is_none_or(|b| s.min_iou() > b.min_iou()) {
                    best = Some(s);
                }
            }
            best.map_or(0.0, |b| b.meteor)
        })
        .sum();
    sum / preds.len() as f64
}

/// Distinct words per image and per subject box, each averaged over the
/// groups that have at least one prediction.
pub fn diversity_stats(preds: &[ScoredRelation]) -> (f64, f64) {
    fn mean_distinct<K: Ord>(groups: BTreeMap<K, BTreeSet<&str>>) -> f64 {
        if groups.is_empty() {
            return 0.0;
        }
        groups.values().map(|s| s.len() as f64).sum::<f64>() / groups.len() as f64
    }
    let mut per_image: BTreeMap<u64, BTreeSet<&str>> = BTreeMap::new();
    let mut per_box: BTreeMap<(u64, [u64; 4]), BTreeSet<&str>> = BTreeMap::new();
    for p in preds {
        let b = p.subject;
        let key = (p.image_id, [b.x.to_bits(), b.y.to_bits(), b.w.to_bits(), b.h.to_bits()]);
        let words = p.tokens.iter().map(String::as_str);
        per_image.entry(p.image_id).or_default().extend(words.clone());
        per_box.entry(key).or_default().extend(words);
    }
    (mean_distinct(per_image), mean_distinct(per_box))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VrdMode {
    /// One box around both regions.
    Phrase,
    /// Subject and object boxes separately.
    Relationship,
}

/// Fraction of GT relations recovered by each image's `k` most confident
/// predictions, averaged over images with GT.
pub fn vrd_recall_at_k(
    preds: &[ScoredRelation],
    gts: &[GroundTruthRelation],
    k: usize,
    mode: VrdMode,
    cfg: &MetricConfig,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::contract("recall@K needs K > 0"));
    }
    let by_image = gt_by_image(gts);
    if by_image.is_empty() {
        return Ok(0.0);
    }
    let order = rank_by_confidence(preds);
    let mut top: BTreeMap<u64, Vec<&ScoredRelation>> = BTreeMap::new();
    for &i in &order {
        let list = top.entry(preds[i].image_id).or_default();
        if list.len() < k {
            list.push(&preds[i]);
        }
    }
    let located = |p: &ScoredRelation, g: &GroundTruthRelation| match mode {
        VrdMode::Phrase => iou(&union_box(&p.subject, &p.object), &union_box(&g.subject, &g.object)) >= cfg.vrd_iou,
        VrdMode::Relationship => iou(&p.subject, &g.subject) >= cfg.vrd_iou && iou(&p.object, &g.object) >= cfg.vrd_iou,
    };
    let mut total = 0.0;
    for (image, idx) in &by_image {
        let cands = top.get(image).map_or(&[][..], Vec::as_slice);
        let covered = idx
            .iter()
            .filter(|&&g| {
                cands
                    .iter()
                    .any(|p| located(p, &gts[g]) && meteor_lite(&p.tokens, &gts[g].tokens) >= cfg.vrd_meteor)
            })
            .count();
        total += covered as f64 / idx.len() as f64;
    }
    Ok(total / by_image.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosAccuracy {
    pub correct: usize,
    pub total: usize,
    pub overall: f64,
    /// SUBJ, PRED, OBJ accuracy over reference tokens of that class;
    /// `None` when the class never occurs.
    pub per_class: [Option<f64>; 3],
}

/// Token-level accuracy of predicted tags against aligned reference tags.
pub fn pos_accuracy(predicted: &[Vec<PosTag>], reference: &[Vec<PosTag>]) -> Result<PosAccuracy> {
    if predicted.len() != reference.len() {
        return Err(Error::contract(format!(
            "{} predicted tag sequences for {} references",
            predicted.len(),
            reference.len()
        )));
    }
    let mut hit = [0usize; 3];
    let mut count = [0usize; 3];
    for (i, (p, r)) in predicted.iter().zip(reference).enumerate() {
        if p.len() != r.len() {
            return Err(Error::contract(format!(
                "sequence {i}: {} predicted tags for {} reference tags",
                p.len(),
                r.len()
            )));
        }
        for (a, b) in p.iter().zip(r) {
            count[b.index()] += 1;
            if a == b {
                hit[b.index()] += 1;
            }
        }
    }
    let correct: usize = hit.iter().sum();
    let total: usize = count.iter().sum();
    Ok(PosAccuracy {
        correct,
        total,
        overall: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_class: std::array::from_fn(|k| (count[k] > 0).then(|| hit[k] as f64 / count[k] as f64)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_percent: f64,
    pub image_level_recall: f64,
    pub mean_meteor: f64,
    pub words_per_img: f64,
    pub words_per_box: f64,
    pub vrd_k: usize,
    pub vrd_phrase_recall: f64,
    pub vrd_rel_recall: f64,
    pub pos_accuracy: Option<f64>,
    pub pos_accuracy_subj: Option<f64>,
    pub pos_accuracy_pred: Option<f64>,
    pub pos_accuracy_obj: Option<f64>,
    pub images: usize,
    pub predictions: usize,
    pub ground_truth: usize,
    pub ap_grid: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn compute(
        preds: &[ScoredRelation],
        gts: &[GroundTruthRelation],
        pos: Option<&PosAccuracy>,
        cfg: &MetricConfig,
    ) -> Result<Self> {
        let map = relational_map(preds, gts, cfg)?;
        let (words_per_img, words_per_box) = diversity_stats(preds);
        Ok(Self {
            map_percent: map.map_percent,
            image_level_recall: image_level_recall(preds, gts, &cfg.meteor_thresholds),
            mean_meteor: mean_meteor(preds, gts),
            words_per_img,
            words_per_box,
            vrd_k: cfg.vrd_k,
            vrd_phrase_recall: vrd_recall_at_k(preds, gts, cfg.vrd_k, VrdMode::Phrase, cfg)?,
            vrd_rel_recall: vrd_recall_at_k(preds, gts, cfg.vrd_k, VrdMode::Relationship, cfg)?,
            pos_accuracy: pos.map(|p| p.overall),
            pos_accuracy_subj: pos.and_then(|p| p.per_class[0]),
            pos_accuracy_pred: pos.and_then(|p| p.per_class[1]),
            pos_accuracy_obj: pos.and_then(|p| p.per_class[2]),
            images: gt_by_image(gts).len(),
            predictions: preds.len(),
            ground_truth: gts.len(),
            ap_grid: map.ap,
        })
    }

    /// Checks every field against its declared range.
    pub fn check_ranges(&self) -> Result<()> {
        let unit = [
            ("image_level_recall", Some(self.image_level_recall)),
            ("mean_meteor", Some(self.mean_meteor)),
            ("vrd_phrase_recall", Some(self.vrd_phrase_recall)),
            ("vrd_rel_recall", Some(self.vrd_rel_recall)),
            ("pos_accuracy", self.pos_accuracy),
            ("pos_accuracy_subj", self.pos_accuracy_subj),
            ("pos_accuracy_pred", self.pos_accuracy_pred),
            ("pos_accuracy_obj", self.pos_accuracy_obj),
        ];
        for (name, v) in unit {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::contract(format!("{name} = {v} outside [0, 1]")));
                }
            }
        }
        if !(0.0..=100.0).contains(&self.map_percent) {
            return Err(Error::contract(format!("map_percent = {} outside [0, 100]", self.map_percent)));
        }
        if !(self.words_per_img >= 0.0 && self.words_per_box >= 0.0) {
            return Err(Error::contract("negative diversity statistic"));
        }
        Ok(())
    }

    /// Aligned two-column plain-text table.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let rows: Vec<(String, String)> = vec![
            ("mAP (%)".into(), format!("{:.4}", self.map_percent)),
            ("Img-Lv. recall".into(), format!("{:.4}", self.image_level_recall)),
            ("METEOR".into(), format!("{:.4}", self.mean_meteor)),
            ("words/img".into(), format!("{:.4}", self.words_per_img)),
            ("words/box".into(), format!("{:.4}", self.words_per_box)),
            (format!("phrase R@{}", self.vrd_k), format!("{:.4}", self.vrd_phrase_recall)),
            (format!("relationship R@{}", self.vrd_k), format!("{:.4}", self.vrd_rel_recall)),
            ("POS accuracy".into(), opt(self.pos_accuracy)),
            ("POS accuracy SUBJ".into(), opt(self.pos_accuracy_subj)),
            ("POS accuracy PRED".into(), opt(self.pos_accuracy_pred)),
            ("POS accuracy OBJ".into(), opt(self.pos_accuracy_obj)),
            ("images".into(), self.images.to_string()),
            ("predictions".into(), self.predictions.to_string()),
            ("ground truth".into(), self.ground_truth.to_string()),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>12}");
        }
        out
    }
}

#[cfg(test)]
mod tests;
