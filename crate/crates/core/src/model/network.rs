use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::dataset::vocab::{EncodedCaption, PosTag, PAD};
use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{ModelConfig, Streams, POS_CLASSES};

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct RemIds {
    wa: ParamId,
    wb: ParamId,
    wx: ParamId,
    wz: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    fc1: Linear,
    subj_fc2: Option<Linear>,
    obj_fc2: Option<Linear>,
    union_fc: Option<Linear>,
    union_reduce: Option<Linear>,
    geo_fc: Option<Linear>,
    rem: Option<RemIds>,
    fuse: Option<Linear>,
    embed: ParamId,
    lstms: Vec<LstmIds>,
    word: Linear,
    pos: Linear,
    det_hidden: Linear,
    det_score: Linear,
    det_box: Linear,
}

/// Per-pair inputs for one image: the region set (all regions the
/// relational embedding attends over) plus, per ordered pair, indices into
/// that set, the union-box feature and the geometric feature.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInputs<T> {
    pub regions: Tensor<T>,
    pub subjects: Vec<usize>,
    pub objects: Vec<usize>,
    pub union: Tensor<T>,
    pub geo: Tensor<T>,
}

impl<T: Scalar> PairInputs<T> {
    pub fn new(
        regions: Tensor<T>,
        subjects: Vec<usize>,
        objects: Vec<usize>,
        union: Tensor<T>,
        geo: Tensor<T>,
    ) -> Result<Self> {
        let p = subjects.len();
        if objects.len() != p || union.rows() != p || geo.rows() != p || geo.cols() != 6 {
            return Err(Error::Dimension {
                op: "pair inputs",
                left: vec![p, objects.len()],
                right: vec![union.rows(), geo.rows(), geo.cols()],
            });
        }
        let b = regions.rows();
        if let Some(&bad) = subjects.iter().chain(&objects).find(|&&i| i >= b) {
            return Err(Error::Index {
                what: "pair region",
                index: bad,
                len: b,
            });
        }
        Ok(Self {
            regions,
            subjects,
            objects,
            union,
            geo,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Inputs restricted to the listed pairs (region set unchanged).
    pub fn select(&self, pairs: &[usize]) -> Result<Self> {
        let rows = |t: &Tensor<T>| -> Result<Tensor<T>> {
            let v: Vec<Vec<T>> = pairs.iter().map(|&p| t.row_slice(p).to_vec()).collect();
            Tensor::from_rows(&v)
        };
        Self::new(
            self.regions.clone(),
            pairs.iter().map(|&p| self.subjects[p]).collect(),
            pairs.iter().map(|&p| self.objects[p]).collect(),
            rows(&self.union)?,
            rows(&self.geo)?,
        )
    }
}

/// Region codes of a batch of pairs, each `P × code_dim` (geometry alone is
/// `P × geo_dim`).
#[derive(Debug, Clone, Copy, Default)]
pub struct Codes {
    pub subject: Option<NodeId>,
    pub object: Option<NodeId>,
    pub union: Option<NodeId>,
    pub geo: Option<NodeId>,
}

#[derive(Debug, Clone, Copy)]
pub struct StreamState {
    pub h: NodeId,
    pub c: NodeId,
}

/// Detection supervision for one candidate proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetLabel {
    /// Foreground, with its box-regression target.
    Positive([f64; 4]),
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionExample<T> {
    pub features: Tensor<T>,
    pub labels: Vec<DetLabel>,
}

/// Everything the composite loss needs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample<T> {
    pub pairs: Option<PairInputs<T>>,
    pub captions: Vec<EncodedCaption>,
    pub detection: Option<DetectionExample<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.1,
        }
    }
}

/// Components of `L_cap + α L_pos + β L_det + γ L_box`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub cap: f64,
    pub pos: f64,
    pub det: f64,
    pub bbox: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub no_positive_pairs: bool,
}

/// Architecture: parameter handles plus the forward computations. Parameter
/// values live in a separate [`ParamStore`] so the same network can be
/// evaluated against perturbed copies.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    ids: Ids,
}

fn xavier<T: Scalar>(rows: usize, cols: usize, rng: &mut SplitRng) -> Tensor<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::lit(rng.uniform(-a, a))).collect();
    Tensor::new(vec![rows, cols], data).expect("positive extents")
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut SplitRng,
}

impl<T: Scalar> Builder<'_, T> {
    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.store.add(name, xavier(rows, cols, self.rng))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.matrix(&format!("{name}.w"), fan_in, fan_out)?,
            b: self.store.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]))?,
        })
    }

    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> Result<LstmIds> {
        let mut bias = vec![T::zero(); 4 * hidden];
        for v in &mut bias[hidden..2 * hidden] {
            *v = T::one();
        }
        Ok(LstmIds {
            wx: self.matrix(&format!("{name}.wx"), input, 4 * hidden)?,
            wh: self.matrix(&format!("{name}.wh"), hidden, 4 * hidden)?,
            b: self.store.add(format!("{name}.b"), Tensor::row(bias))?,
        })
    }
}

impl Network {
    /// Registers every parameter in `store` with Xavier-uniform weights,
    /// zero biases and a unit LSTM forget-gate bias.
    pub fn build<T: Scalar>(config: ModelConfig, store: &mut ParamStore<T>, rng: &mut SplitRng) -> Result<Self> {
        config.validate()?;
        let d = config.dims;
        let inp = config.inputs;
        let mut b = Builder { store, rng };

        let fc1 = b.linear("enc.fc1", d.input_dim, d.subject_dim)?;
        let (subj_fc2, obj_fc2) = if inp.subject || inp.object {
            (
                Some(b.linear("enc.subj_fc2", d.subject_dim, d.code_dim)?),
                Some(b.linear("enc.obj_fc2", d.subject_dim, d.code_dim)?),
            )
        } else {
            (None, None)
        };
        let geo_fc = if inp.coord {
            Some(b.linear("enc.geo_fc", 6, d.geo_dim)?)
        } else {
            None
        };
        let (union_fc, union_reduce) = if inp.union {
            let reduce_in = d.union_dim + if inp.coord { d.geo_dim } else { 0 };
            (
                Some(b.linear("enc.union_fc", d.input_dim, d.union_dim)?),
                Some(b.linear("enc.union_reduce", reduce_in, d.code_dim)?),
            )
        } else {
            (None, None)
        };
        let rem = if config.rem() {
            Some(RemIds {
                wa: b.matrix("rem.wa", d.subject_dim, d.rem_dim)?,
                wb: b.matrix("rem.wb", d.subject_dim, d.rem_dim)?,
                wx: b.matrix("rem.wx", d.subject_dim, d.rem_dim)?,
                wz: b.matrix("rem.wz", d.subject_dim, d.rem_dim)?,
            })
        } else {
            None
        };
        let fuse = match config.streams {
            Streams::Single if config.fused_width() != d.hidden => {
                Some(b.linear("dec.fuse", config.fused_width(), d.hidden)?)
            }
            _ => None,
        };
        let embed = b.matrix("dec.embed", config.vocab_size, d.hidden)?;
        let lstms = match config.streams {
            Streams::Single => vec![b.lstm("lstm.main", d.hidden, d.hidden)?],
            Streams::Triple => vec![
                b.lstm("lstm.subj", d.hidden, d.hidden)?,
                b.lstm("lstm.pred", d.hidden, d.hidden)?,
                b.lstm("lstm.obj", d.hidden, d.hidden)?,
            ],
        };
        let concat = d.hidden * lstms.len();
        let word = b.linear("head.word", concat, config.vocab_size)?;
        let pos = b.linear("head.pos", concat, POS_CLASSES)?;
        let det_hidden = b.linear("det.hidden", d.input_dim, d.proposal_dim)?;
        let det_score = b.linear("det.score", d.proposal_dim, 1)?;
        let det_box = b.linear("det.box", d.proposal_dim, 4)?;

        Ok(Self {
            config,
            ids: Ids {
                fc1,
                subj_fc2,
                obj_fc2,
                union_fc,
                union_reduce,
                geo_fc,
                rem,
                fuse,
                embed,
                lstms,
                word,
                pos,
                det_hidden,
                det_score,
                det_box,
            },
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.dims.hidden
    }

    fn linear<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: NodeId, l: Linear) -> Result<NodeId> {
        let w = g.param(p, l.w);
        let b = g.param(p, l.b);
        g.affine(x, w, b)
    }

    fn dropout<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, rng: Option<&mut SplitRng>) -> Result<NodeId> {
        let rate = self.config.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let n = g.value(x).len();
                let mask = (0..n)
                    .map(|_| if rng.bernoulli(keep) { T::lit(1.0 / keep) } else { T::zero() })
                    .collect();
                g.mask_mul(x, mask)
            }
            _ => Ok(x),
        }
    }

    /// Shared first FC + ReLU over region features (`B × subject_dim`).
    pub fn region_hidden<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, features: NodeId) -> Result<NodeId> {
        let h = self.linear(g, p, features, self.ids.fc1)?;
        Ok(g.relu(h))
    }

    /// Relational embedding over all rows of `x`:
    /// `R = softmax_rows(relu(X Wa) relu(X Wb)ᵀ)`, `Z = X + R relu(X Wx) Wzᵀ`.
    pub fn rem_forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let r = self
            .ids
            .rem
            .ok_or_else(|| Error::contract("model has no relational embedding"))?;
        let (wa, wb, wx, wz) = (g.param(p, r.wa), g.param(p, r.wb), g.param(p, r.wx), g.param(p, r.wz));
        let a = g.matmul(x, wa)?;
        let a = g.relu(a);
        let b = g.matmul(x, wb)?;
        let b = g.relu(b);
        let logits = g.matmul_bt(a, b)?;
        let assoc = g.row_softmax(logits);
        let v = g.matmul(x, wx)?;
        let v = g.relu(v);
        let mixed = g.matmul(assoc, v)?;
        let rel = g.matmul_bt(mixed, wz)?;
        g.add(x, rel)
    }

    /// Region codes for every pair. `dropout` enables training-mode dropout.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        inputs: &PairInputs<T>,
        mut dropout: Option<&mut SplitRng>,
    ) -> Result<Codes> {
        let d = self.config.dims;
        if inputs.regions.cols() != d.input_dim || inputs.union.cols() != d.input_dim {
            return Err(Error::Dimension {
                op: "encode",
                left: inputs.regions.shape().to_vec(),
                right: vec![inputs.union.rows(), d.input_dim],
            });
        }
        let inp = self.config.inputs;
        let mut codes = Codes::default();
        if let (Some(sf), Some(of)) = (self.ids.subj_fc2, self.ids.obj_fc2) {
            let x = g.constant(inputs.regions.clone());
            let mut h = self.region_hidden(g, p, x)?;
            if self.ids.rem.is_some() {
                h = self.rem_forward(g, p, h)?;
            }
            let h = self.dropout(g, h, dropout.as_deref_mut())?;
            if inp.subject {
                let s = g.gather_rows(h, &inputs.subjects)?;
                codes.subject = Some(self.linear(g, p, s, sf)?);
            }
            if inp.object {
                let o = g.gather_rows(h, &inputs.objects)?;
                codes.object = Some(self.linear(g, p, o, of)?);
            }
        }
        let geo = match self.ids.geo_fc {
            Some(l) => {
                let x = g.constant(inputs.geo.clone());
                let e = self.linear(g, p, x, l)?;
                Some(g.relu(e))
            }
            None => None,
        };
        if let (Some(uf), Some(ur)) = (self.ids.union_fc, self.ids.union_reduce) {
            let x = g.constant(inputs.union.clone());
            let u = self.linear(g, p, x, uf)?;
            let u = g.relu(u);
            let u = self.dropout(g, u, dropout)?;
            let u = match geo {
                Some(e) => g.concat_cols(&[u, e])?,
                None => u,
            };
            codes.union = Some(self.linear(g, p, u, ur)?);
        } else {
            codes.geo = geo;
        }
        Ok(codes)
    }

    /// Inputs of the first decoding step, one per stream.
    fn first_inputs<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, codes: &Codes) -> Result<Vec<NodeId>> {
        let missing = || Error::contract("region code missing for this configuration");
        match self.config.streams {
            Streams::Triple => Ok(vec![
                codes.subject.ok_or_else(missing)?,
                codes.union.ok_or_else(missing)?,
                codes.object.ok_or_else(missing)?,
            ]),
            Streams::Single => {
                let parts: Vec<NodeId> = [codes.subject, codes.object, codes.union, codes.geo]
                    .into_iter()
                    .flatten()
                    .collect();
                let x = if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts)? };
                match self.ids.fuse {
                    Some(l) => Ok(vec![self.linear(g, p, x, l)?]),
                    None => Ok(vec![x]),
                }
            }
        }
    }

    pub fn initial_states<T: Scalar>(&self, g: &mut Graph<T>, batch: usize) -> Vec<StreamState> {
        let h = self.hidden();
        (0..self.ids.lstms.len())
            .map(|_| {
                let z = g.constant(Tensor::zeros(&[batch, h]));
                StreamState { h: z, c: z }
            })
            .collect()
    }

    /// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')` with gate blocks ordered `i, f, o, g`.
    pub(crate) fn lstm_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        stream: usize,
        x: NodeId,
        s: StreamState,
    ) -> Result<StreamState> {
        let ids = self.ids.lstms[stream];
        let h = self.hidden();
        let (wx, wh, b) = (g.param(p, ids.wx), g.param(p, ids.wh), g.param(p, ids.b));
        let zx = g.matmul(x, wx)?;
        let zh = g.matmul(s.h, wh)?;
        let z = g.add(zx, zh)?;
        let z = g.add_bias(z, b)?;
        let i = g.slice_cols(z, 0, h)?;
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, h, 2 * h)?;
        let f = g.sigmoid(f);
        let o = g.slice_cols(z, 2 * h, 3 * h)?;
        let o = g.sigmoid(o);
        let gg = g.slice_cols(z, 3 * h, 4 * h)?;
        let gg = g.tanh(gg);
        let fc = g.mul(f, s.c)?;
        let ig = g.mul(i, gg)?;
        let c = g.add(fc, ig)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(StreamState { h, c })
    }

    /// One decoding step. `inputs` holds one node per stream.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        inputs: &[NodeId],
        states: &[StreamState],
    ) -> Result<(Vec<StreamState>, NodeId, NodeId)> {
        let next = states
            .iter()
            .zip(inputs)
            .enumerate()
            .map(|(k, (&s, &x))| self.lstm_step(g, p, k, x, s))
            .collect::<Result<Vec<_>>>()?;
        let hs: Vec<NodeId> = next.iter().map(|s| s.h).collect();
        let joint = if hs.len() == 1 { hs[0] } else { g.concat_cols(&hs)? };
        let word = self.linear(g, p, joint, self.ids.word)?;
        let pos = self.linear(g, p, joint, self.ids.pos)?;
        Ok((next, word, pos))
    }

    /// Step inputs: region codes at `t = 0`, then the shared embedding of
    /// the previous word in every stream.
    pub fn step_inputs<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        codes: &Codes,
        prev: Option<&[usize]>,
    ) -> Result<Vec<NodeId>> {
        match prev {
            None => self.first_inputs(g, p, codes),
            Some(ids) => {
                if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
                    return Err(Error::Index {
                        what: "word id",
                        index: bad,
                        len: self.config.vocab_size,
                    });
                }
                let table = g.param(p, self.ids.embed);
                let e = g.gather_rows(table, ids)?;
                Ok(vec![e; self.ids.lstms.len()])
            }
        }
    }

    /// Teacher-forced caption and POS losses, each a sum over pairs of the
    /// per-caption mean cross-entropy. POS loss is `None` without the
    /// multi-task head.
    pub fn caption_loss<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        codes: &Codes,
        captions: &[EncodedCaption],
    ) -> Result<(NodeId, Option<NodeId>)> {
        if captions.iter().any(|c| c.ids.is_empty() || c.ids.len() != c.pos.len()) {
            return Err(Error::contract("empty or misaligned caption"));
        }
        let n = captions.len();
        let steps = captions.iter().map(|c| c.ids.len()).max().unwrap_or(0);
        if n == 0 || steps == 0 {
            return Err(Error::contract("no captions to score"));
        }
        let mut states = self.initial_states(g, n);
        let mut cap_terms = Vec::with_capacity(steps);
        let mut pos_terms = Vec::with_capacity(steps);
        for t in 0..steps {
            let prev: Option<Vec<usize>> = (t > 0).then(|| {
                captions
                    .iter()
                    .map(|c| c.ids.get(t - 1).copied().unwrap_or(PAD))
                    .collect()
            });
            let inputs = self.step_inputs(g, p, codes, prev.as_deref())?;
            let (next, word, pos) = self.step(g, p, &inputs, &states)?;
            states = next;
            let mut targets = Vec::with_capacity(n);
            let mut tags = Vec::with_capacity(n);
            let mut weights = Vec::with_capacity(n);
            for c in captions {
                match c.ids.get(t) {
                    Some(&id) => {
                        targets.push(id);
                        tags.push(c.pos[t].index());
                        weights.push(T::one() / T::lit(c.ids.len() as f64));
                    }
                    None => {
                        targets.push(PAD);
                        tags.push(0);
                        weights.push(T::zero());
                    }
                }
            }
            cap_terms.push(g.weighted_cross_entropy(word, &targets, &weights)?);
            if self.config.mtl() {
                pos_terms.push(g.weighted_cross_entropy(pos, &tags, &weights)?);
            }
        }
        let cap = sum_scalars(g, &cap_terms)?;
        let pos = if pos_terms.is_empty() {
            None
        } else {
            Some(sum_scalars(g, &pos_terms)?)
        };
        Ok((cap, pos))
    }

    /// Proposal-branch outputs over candidate features: (score logits `C×1`,
    /// box deltas `C×4`). The branch has its own hidden layer and shares no
    /// weights with the captioning encoder.
    pub fn detection_heads<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        features: &Tensor<T>,
    ) -> Result<(NodeId, NodeId)> {
        let x = g.constant(features.clone());
        let h = self.linear(g, p, x, self.ids.det_hidden)?;
        let h = g.relu(h);
        let score = self.linear(g, p, h, self.ids.det_score)?;
        let deltas = self.linear(g, p, h, self.ids.det_box)?;
        Ok((score, deltas))
    }

    /// Mean logistic loss over labelled candidates and mean smooth-L1 over
    /// positives (`None` when there are no positives).
    pub fn detection_loss<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        det: &DetectionExample<T>,
    ) -> Result<(Option<NodeId>, Option<NodeId>)> {
        if det.labels.len() != det.features.rows() {
            return Err(Error::Dimension {
                op: "detection labels",
                left: det.features.shape().to_vec(),
                right: vec![det.labels.len()],
            });
        }
        let (score, deltas) = self.detection_heads(g, p, &det.features)?;
        let labelled = det.labels.iter().filter(|l| !matches!(l, DetLabel::Ignore)).count();
        let positives = det
            .labels
            .iter()
            .filter(|l| matches!(l, DetLabel::Positive(_)))
            .count();
        let det_loss = if labelled > 0 {
            let w = T::one() / T::lit(labelled as f64);
            let (targets, weights): (Vec<T>, Vec<T>) = det
                .labels
                .iter()
                .map(|l| match l {
                    DetLabel::Positive(_) => (T::one(), w),
                    DetLabel::Negative => (T::zero(), w),
                    DetLabel::Ignore => (T::zero(), T::zero()),
                })
                .unzip();
            Some(g.logistic_loss(score, &targets, &weights)?)
        } else {
            None
        };
        let box_loss = if positives > 0 {
            let w = T::one() / T::lit(positives as f64);
            let mut target = Vec::with_capacity(det.labels.len() * 4);
            let mut weights = Vec::with_capacity(det.labels.len());
            for l in &det.labels {
                match l {
                    DetLabel::Positive(t) => {
                        target.extend(t.iter().map(|&v| T::lit(v)));
                        weights.push(w);
                    }
                    _ => {
                        target.extend([T::zero(); 4]);
                        weights.push(T::zero());
                    }
                }
            }
            let target = Tensor::matrix(det.labels.len(), 4, target)?;
            Some(g.smooth_l1(deltas, &target, &weights)?)
        } else {
            None
        };
        Ok((det_loss, box_loss))
    }

    /// Composite loss of one image; returns the scalar node to back-propagate
    /// and the component values.
    pub fn loss<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        ex: &TrainExample<T>,
        weights: LossWeights,
        dropout: Option<&mut SplitRng>,
    ) -> Result<(NodeId, LossReport)> {
        let zero = g.constant(Tensor::scalar(T::zero()));
        let (cap, pos, no_pairs) = match &ex.pairs {
            Some(inputs) if !inputs.is_empty() => {
                if inputs.len() != ex.captions.len() {
                    return Err(Error::contract(format!(
                        "{} pairs but {} captions",
                        inputs.len(),
                        ex.captions.len()
                    )));
                }
                let codes = self.encode(g, p, inputs, dropout)?;
                let (cap, pos) = self.caption_loss(g, p, &codes, &ex.captions)?;
                (cap, pos.unwrap_or(zero), false)
            }
            _ => (zero, zero, true),
        };
        let (det, bbox) = match &ex.detection {
            Some(d) => {
                let (det, bbox) = self.detection_loss(g, p, d)?;
                (det.unwrap_or(zero), if no_pairs { zero } else { bbox.unwrap_or(zero) })
            }
            None => (zero, zero),
        };
        let mut total = cap;
        for (node, w) in [(det, weights.beta), (bbox, weights.gamma), (pos, weights.alpha)] {
            let scaled = g.scale(node, T::lit(w));
            total = g.add(total, scaled)?;
        }
        let val = |n: NodeId| g.value(n).item().as_f64();
        let report = LossReport {
            cap: val(cap),
            pos: val(pos),
            det: val(det),
            bbox: val(bbox),
            total: val(total),
            alpha: weights.alpha,
            beta: weights.beta,
            gamma: weights.gamma,
            no_positive_pairs: no_pairs,
        };
        Ok((total, report))
    }

    pub fn stream_count(&self) -> usize {
        self.ids.lstms.len()
    }
}

fn sum_scalars<T: Scalar>(g: &mut Graph<T>, terms: &[NodeId]) -> Result<NodeId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn pos_from_logits<T: Scalar>(row: &[T]) -> PosTag {
    PosTag::from_index(argmax(row)).expect("three POS logits")
}
