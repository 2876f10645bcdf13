//! Training, inference and evaluation over relational datasets.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::record::{PredictionRecord, RelationalRecord};
use crate::dataset::toy::{candidate_boxes, CandidateConfig};
use crate::dataset::vocab::{encode_caption, EncodedCaption, Vocabulary};
use crate::dataset::{FeatureProvider, ProviderSpec};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_box_delta, box_delta, combination_layer, geometric_feature, match_to_gt, nms, union_box, BoundingBox,
    MatchLabel, RegionProposal,
};
use crate::metrics::{pos_accuracy, EvalReport, MetricConfig, PosAccuracy, ScoredRelation};
use crate::model::{
    DecodeMode, DetLabel, DetectionExample, Dims, LossReport, LossWeights, Model, ModelConfig, ModelSpec, PairInputs,
    TrainExample, Variant,
};
use crate::optim::{Adam, AdamConfig};
use crate::rng::SplitRng;
use crate::tensor::Tensor;

/// Salt separating candidate-box streams from other per-image streams.
const CANDIDATE_SALT: u64 = 0x0c4d_1da7_e5b0_c5e5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    /// Images whose gradients are accumulated per optimizer step.
    pub batch_images: usize,
    /// Relations sampled per image and epoch; 0 keeps all.
    pub max_pairs: usize,
    pub min_count: usize,
    pub max_len: usize,
    /// Dropout rate on the encoder FCs while training.
    pub dropout: f64,
    pub loss: LossWeights,
    pub dims: Option<Dims>,
    pub candidates: CandidateConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            seed: 7,
            lr: 2e-3,
            batch_images: 1,
            max_pairs: 0,
            min_count: 1,
            max_len: 12,
            dropout: 0.5,
            loss: LossWeights::default(),
            dims: None,
            candidates: CandidateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub candidates: CandidateConfig,
    pub candidate_seed: u64,
    /// Minimum detection probability of a region.
    pub min_detection: f64,
    pub nms_iou: f64,
    pub keep_after_nms: usize,
    /// Cap on ordered pairs per image (highest confidence products); 0 = all.
    pub max_pairs: usize,
    /// Captions below this confidence are dropped.
    pub min_caption_confidence: f64,
    pub refine_boxes: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            candidates: CandidateConfig::default(),
            candidate_seed: 0,
            min_detection: 0.5,
            nms_iou: 0.5,
            keep_after_nms: 50,
            max_pairs: 0,
            min_caption_confidence: 0.0,
            refine_boxes: true,
        }
    }
}

/// Subject and object boxes of every candidate pair with the pair inputs.
pub type CandidatePairs = (Vec<(BoundingBox<f64>, BoundingBox<f64>)>, PairInputs<f64>);

/// Ground-truth regions of an image and, for every relation, the indices of
/// its subject and object among them. For the direct-union variant each
/// relation's union box is one region and the pair points at it twice.
pub fn region_targets(record: &RelationalRecord, direct_union: bool) -> (Vec<BoundingBox<f64>>, Vec<(usize, usize)>) {
    let mut boxes: Vec<BoundingBox<f64>> = Vec::new();
    let mut index = |b: BoundingBox<f64>| match boxes.iter().position(|x| *x == b) {
        Some(i) => i,
        None => {
            boxes.push(b);
            boxes.len() - 1
        }
    };
    let pairs: Vec<(usize, usize)> = record
        .relations
        .iter()
        .map(|r| {
            if direct_union {
                let u = index(union_box(&r.subject.bbox, &r.object.bbox));
                (u, u)
            } else {
                (index(r.subject.bbox), index(r.object.bbox))
            }
        })
        .collect();
    if !direct_union {
        for o in &record.objects {
            index(o.bbox);
        }
    }
    (boxes, pairs)
}

/// Encoder inputs for `pairs` over the regions `boxes` of one image.
pub fn pair_inputs(
    record: &RelationalRecord,
    provider: &ProviderSpec,
    boxes: &[BoundingBox<f64>],
    pairs: &[(usize, usize)],
) -> Result<PairInputs<f64>> {
    let regions: Tensor<f64> = provider.features(record, boxes);
    let unions: Vec<BoundingBox<f64>> = pairs.iter().map(|&(s, o)| union_box(&boxes[s], &boxes[o])).collect();
    let union = provider.features(record, &unions);
    let mut geo = Vec::with_capacity(pairs.len() * 6);
    for &(s, o) in pairs {
        geo.extend_from_slice(geometric_feature(&boxes[s], &boxes[o])?.values());
    }
    PairInputs::new(
        regions,
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1).collect(),
        union,
        Tensor::matrix(pairs.len(), 6, geo)?,
    )
}

/// Encoded captions of every relation of `record`.
pub fn encode_relations(record: &RelationalRecord, vocab: &Vocabulary, max_len: usize) -> Result<Vec<EncodedCaption>> {
    record
        .relations
        .iter()
        .map(|r| encode_caption(&r.segments(), vocab, max_len))
        .collect()
}

/// Model, vocabulary and feature provider: everything inference needs.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model<f64>,
    pub vocab: Vocabulary,
    pub provider: ProviderSpec,
}

impl TrainedModel {
    pub fn is_direct_union(&self) -> bool {
        self.model.config().spec.variant == Variant::DirectUnion
    }

    fn meta(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "vocab": serde_json::to_value(&self.vocab)?,
            "provider": serde_json::to_value(&self.provider)?,
        }))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        self.model.to_checkpoint(self.meta()?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let field = |name: &str| {
            ck.meta
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint has no `{name}`")))
        };
        let vocab: Vocabulary =
            serde_json::from_value(field("vocab")?).map_err(|e| Error::Format(format!("vocabulary: {e}")))?;
        let provider: ProviderSpec =
            serde_json::from_value(field("provider")?).map_err(|e| Error::Format(format!("provider: {e}")))?;
        let model = Model::from_checkpoint(ck)?;
        if model.config().vocab_size != vocab.len() {
            return Err(Error::Format("vocabulary size differs from the model".into()));
        }
        if model.config().dims.input_dim != provider.dim() {
            return Err(Error::Format("feature width differs from the model".into()));
        }
        Ok(Self { model, vocab, provider })
    }

    /// Regions kept after detection, box refinement, the confidence filter
    /// and NMS.
    pub fn detect(&self, record: &RelationalRecord, cfg: &InferenceConfig) -> Result<Vec<RegionProposal<f64>>> {
        let (targets, _) = region_targets(record, self.is_direct_union());
        let candidates = candidate_boxes(
            &targets,
            record.width,
            record.height,
            cfg.candidate_seed ^ CANDIDATE_SALT,
            record.image_id,
            &cfg.candidates,
        );
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let features: Tensor<f64> = self.provider.features(record, &candidates);
        let scored = self.model.detect(&features)?;
        let mut proposals = Vec::new();
        for (i, (b, (prob, delta))) in candidates.iter().zip(scored).enumerate() {
            if prob < cfg.min_detection {
                continue;
            }
            let bbox = if cfg.refine_boxes { clip_to_image(apply_box_delta(b, &delta), record) } else { Some(*b) };
            let Some(bbox) = bbox else { continue };
            let feature = Tensor::row(self.provider.feature(record, &bbox));
            proposals.push(RegionProposal::new(i, bbox, prob, feature)?);
        }
        Ok(nms(&proposals, cfg.nms_iou, cfg.keep_after_nms))
    }

    /// Inputs of every candidate pair of detected regions, with the boxes
    /// each pair refers to.
    pub fn candidate_pairs(
        &self,
        record: &RelationalRecord,
        cfg: &InferenceConfig,
    ) -> Result<Option<CandidatePairs>> {
        let regions = self.detect(record, cfg)?;
        let boxes: Vec<BoundingBox<f64>> = regions.iter().map(|r| r.bbox).collect();
        let index: Vec<(usize, usize)> = if self.is_direct_union() {
            (0..regions.len()).map(|i| (i, i)).collect()
        } else {
            let cap = (cfg.max_pairs > 0).then_some(cfg.max_pairs);
            combination_layer(&regions, cap)?
                .iter()
                .map(|p| (p.subject_index, p.object_index))
                .collect()
        };
        if index.is_empty() {
            return Ok(None);
        }
        let inputs = pair_inputs(record, &self.provider, &boxes, &index)?;
        let pair_boxes = index.iter().map(|&(s, o)| (boxes[s], boxes[o])).collect();
        Ok(Some((pair_boxes, inputs)))
    }

    /// Greedy captions for every candidate pair, most confident first.
    pub fn predict(&self, record: &RelationalRecord, cfg: &InferenceConfig) -> Result<Vec<PredictionRecord>> {
        let Some((boxes, inputs)) = self.candidate_pairs(record, cfg)? else {
            return Ok(Vec::new());
        };
        let max_len = self.model.config().max_len;
        let decoded = self.model.decode(&inputs, DecodeMode::Greedy, &mut SplitRng::new(0), max_len)?;
        let mut out: Vec<PredictionRecord> = decoded
            .into_iter()
            .filter(|c| c.confidence >= cfg.min_caption_confidence)
            .map(|c| {
                let words: Vec<&str> = c.words().iter().map(|&id| self.vocab.word(id).unwrap_or("<unk>")).collect();
                let (s, o) = boxes[c.pair];
                PredictionRecord {
                    image_id: record.image_id,
                    subject_box: s,
                    object_box: o,
                    caption: words.join(" "),
                    pos: c.word_pos().to_vec(),
                    word_probs: c.word_probs.clone(),
                    confidence: c.confidence,
                }
            })
            .collect();
        out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(out)
    }

    /// Teacher-forced POS tags on ground-truth pairs, compared word by word
    /// (the end token is not scored).
    pub fn pos_accuracy(&self, records: &[RelationalRecord]) -> Result<PosAccuracy> {
        let mut predicted = Vec::new();
        let mut reference = Vec::new();
        let max_len = self.model.config().max_len;
        for r in records.iter().filter(|r| !r.relations.is_empty()) {
            let (boxes, pairs) = region_targets(r, self.is_direct_union());
            let inputs = pair_inputs(r, &self.provider, &boxes, &pairs)?;
            let captions = encode_relations(r, &self.vocab, max_len)?;
            let tags = self.model.teacher_forced_pos(&inputs, &captions)?;
            for (c, t) in captions.iter().zip(tags) {
                let n = c.ids.len() - 1;
                predicted.push(t[..n].to_vec());
                reference.push(c.pos[..n].to_vec());
            }
        }
        pos_accuracy(&predicted, &reference)
    }
}

fn clip_to_image(b: BoundingBox<f64>, record: &RelationalRecord) -> Option<BoundingBox<f64>> {
    if !b.is_valid() {
        return None;
    }
    let (x1, y1, x2, y2) = b.corners();
    let c = BoundingBox::from_corners(x1.max(0.0), y1.max(0.0), x2.min(record.width), y2.min(record.height));
    (c.w >= 1.0 && c.h >= 1.0).then_some(c)
}

/// Mean loss components over the images of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub cap: f64,
    pub pos: f64,
    pub det: f64,
    pub bbox: f64,
    pub total: f64,
    pub images: usize,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,l_cap,l_pos,l_det,l_box,total,images";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.10},{:.10},{:.10},{:.10},{:.10},{}",
            self.epoch, self.cap, self.pos, self.det, self.bbox, self.total, self.images
        )
    }
}

/// Optimizer state plus the model being trained.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub trained: TrainedModel,
    pub adam: Adam<f64>,
    pub config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochLog>,
}

impl Trainer {
    /// Fresh model whose vocabulary is built from `records`.
    pub fn new(spec: ModelSpec, records: &[RelationalRecord], provider: ProviderSpec, config: TrainConfig) -> Result<Self> {
        if config.batch_images == 0 {
            return Err(Error::config("batch_images must be at least 1"));
        }
        let texts: Vec<String> = records
            .iter()
            .flat_map(|r| r.relations.iter().map(|x| x.segments().text()))
            .collect();
        let vocab = Vocabulary::build(texts.iter().map(String::as_str), config.min_count)?;
        let dims = config.dims.unwrap_or_else(|| Dims::toy(provider.dim()));
        if dims.input_dim != provider.dim() {
            return Err(Error::config(format!(
                "input_dim {} differs from the provider width {}",
                dims.input_dim,
                provider.dim()
            )));
        }
        let mut mc = ModelConfig::new(spec, dims, vocab.len(), config.max_len)?;
        mc.dropout = config.dropout;
        mc.validate()?;
        let model = Model::new(mc, &mut SplitRng::derive(config.seed, u64::MAX))?;
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            &model.params,
        );
        Ok(Self {
            trained: TrainedModel { model, vocab, provider },
            adam,
            config,
            epoch: 0,
            history: Vec::new(),
        })
    }

    fn example(&self, record: &RelationalRecord, rng: &mut SplitRng) -> Result<Option<TrainExample<f64>>> {
        let t = &self.trained;
        let cfg = &self.config;
        let (targets, pairs) = region_targets(record, t.is_direct_union());
        if targets.is_empty() {
            return Ok(None);
        }
        let stream = rng.below(usize::MAX) as u64;
        let candidates = candidate_boxes(
            &targets,
            record.width,
            record.height,
            cfg.seed ^ CANDIDATE_SALT,
            stream,
            &cfg.candidates,
        );
        let labels = match_to_gt(&candidates, &targets);

        // Each region is seen through one of its positive candidates, so
        // the encoder trains on the same kind of boxes it gets at inference.
        let mut regions = targets.clone();
        for (k, r) in regions.iter_mut().enumerate() {
            let pos: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == MatchLabel::Positive(k))
                .map(|(i, _)| i)
                .collect();
            if !pos.is_empty() {
                *r = candidates[pos[rng.below(pos.len())]];
            }
        }

        let mut chosen: Vec<usize> = (0..pairs.len()).collect();
        if cfg.max_pairs > 0 && chosen.len() > cfg.max_pairs {
            rng.shuffle(&mut chosen);
            chosen.truncate(cfg.max_pairs);
            chosen.sort_unstable();
        }
        let sel: Vec<(usize, usize)> = chosen.iter().map(|&i| pairs[i]).collect();
        let captions = encode_relations(record, &t.vocab, cfg.max_len)?;
        let captions: Vec<EncodedCaption> = chosen.iter().map(|&i| captions[i].clone()).collect();
        let inputs = if sel.is_empty() {
            None
        } else {
            Some(pair_inputs(record, &t.provider, &regions, &sel)?)
        };

        let detection = if candidates.is_empty() {
            None
        } else {
            Some(DetectionExample {
                features: t.provider.features(record, &candidates),
                labels: labels
                    .iter()
                    .zip(&candidates)
                    .map(|(l, c)| match l {
                        MatchLabel::Positive(k) => DetLabel::Positive(box_delta(c, &targets[*k])),
                        MatchLabel::Negative => DetLabel::Negative,
                        MatchLabel::Ignore => DetLabel::Ignore,
                    })
                    .collect(),
            })
        };
        Ok(Some(TrainExample {
            pairs: inputs,
            captions,
            detection,
        }))
    }

    /// One pass over `records` in a seeded random order.
    pub fn train_epoch(&mut self, records: &[RelationalRecord]) -> Result<EpochLog> {
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut rng = SplitRng::derive(self.config.seed, epoch as u64);
        rng.shuffle(&mut order);
        let mut sum = LossReport::default();
        let mut images = 0;
        let mut pending = 0;
        for &i in &order {
            let mut img_rng = rng.split();
            let Some(ex) = self.example(&records[i], &mut img_rng)? else {
                continue;
            };
            let model = &mut self.trained.model;
            let mut g = crate::autodiff::Graph::new();
            let mut drop_rng = img_rng.split();
            let dropout = (model.config().dropout > 0.0).then_some(&mut drop_rng);
            let (loss, report) = model.net.loss(&mut g, &model.params, &ex, self.config.loss, dropout)?;
            if !report.total.is_finite() {
                return Err(Error::contract(format!("non-finite loss at epoch {epoch}")));
            }
            g.backward(loss, &mut model.params)?;
            sum.cap += report.cap;
            sum.pos += report.pos;
            sum.det += report.det;
            sum.bbox += report.bbox;
            sum.total += report.total;
            images += 1;
            pending += 1;
            if pending == self.config.batch_images {
                self.adam.step(&mut model.params);
                pending = 0;
            }
        }
        if pending > 0 {
            self.adam.step(&mut self.trained.model.params);
        }
        let n = images.max(1) as f64;
        let log = EpochLog {
            epoch,
            cap: sum.cap / n,
            pos: sum.pos / n,
            det: sum.det / n,
            bbox: sum.bbox / n,
            total: sum.total / n,
            images,
        };
        self.epoch = epoch;
        self.history.push(log);
        Ok(log)
    }

    /// Model checkpoint extended with optimizer moments and training state.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = self.trained.to_checkpoint()?;
        let obj = ck.meta.as_object_mut().expect("object metadata");
        obj.insert("train".into(), serde_json::to_value(&self.config)?);
        obj.insert("epoch".into(), self.epoch.into());
        obj.insert("adam_step".into(), self.adam.step.into());
        obj.insert("history".into(), serde_json::to_value(&self.history)?);
        for ((_, p), (m, v)) in self
            .trained
            .model
            .params
            .iter()
            .zip(self.adam.first.iter().zip(&self.adam.second))
        {
            ck.push(format!("adam.m.{}", p.name), m);
            ck.push(format!("adam.v.{}", p.name), v);
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let trained = TrainedModel::from_checkpoint(ck)?;
        let get = |name: &str| {
            ck.meta
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint has no `{name}` (not a training checkpoint)")))
        };
        let bad = |e: serde_json::Error| Error::Format(e.to_string());
        let config: TrainConfig = serde_json::from_value(get("train")?).map_err(bad)?;
        let epoch: usize = serde_json::from_value(get("epoch")?).map_err(bad)?;
        let step: u64 = serde_json::from_value(get("adam_step")?).map_err(bad)?;
        let history: Vec<EpochLog> = serde_json::from_value(get("history")?).map_err(bad)?;
        let mut adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            &trained.model.params,
        );
        adam.step = step;
        for (k, (_, p)) in trained.model.params.iter().enumerate() {
            for (prefix, store) in [("adam.m.", &mut adam.first), ("adam.v.", &mut adam.second)] {
                let t = ck
                    .get(&format!("{prefix}{}", p.name))
                    .ok_or_else(|| Error::Format(format!("missing optimizer state for `{}`", p.name)))?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Format(format!("optimizer state shape for `{}`", p.name)));
                }
                store[k] = t.clone();
            }
        }
        Ok(Self {
            trained,
            adam,
            config,
            epoch,
            history,
        })
    }
}

/// Predictions and metrics of a model on a labelled split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRecord>,
}

pub fn evaluate(
    trained: &TrainedModel,
    records: &[RelationalRecord],
    inference: &InferenceConfig,
    metrics: &MetricConfig,
) -> Result<Evaluation> {
    let mut predictions = Vec::new();
    for r in records {
        predictions.extend(trained.predict(r, inference)?);
    }
    let scored: Vec<ScoredRelation> = predictions.iter().map(ScoredRelation::from).collect();
    let gts: Vec<_> = records.iter().flat_map(|r| r.ground_truth()).collect();
    let pos = if trained.model.config().mtl() {
        Some(trained.pos_accuracy(records)?)
    } else {
        None
    };
    let report = EvalReport::compute(&scored, &gts, pos.as_ref(), metrics)?;
    Ok(Evaluation { report, predictions })
}
