//! The relational captioning network and its inference routines.

pub mod config;
pub mod network;

use serde::{Deserialize, Serialize};

use crate::autodiff::{row_softmax_values, Graph, ParamStore};
use crate::checkpoint::Checkpoint;
use crate::dataset::vocab::{EncodedCaption, PosTag, END};
use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use config::{Dims, Fusion, ModelConfig, ModelSpec, StreamInputs, Streams, Variant, POS_CLASSES};
pub use network::{
    argmax, Codes, DetLabel, DetectionExample, LossReport, LossWeights, Network, PairInputs, StreamState,
    TrainExample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Stochastic,
}

/// Decoded caption for one pair. `tokens` ends with the end token when the
/// decoder emitted it; `word_probs` and `pos` are aligned with `tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPrediction {
    /// Index of the pair within the decoded batch.
    pub pair: usize,
    pub tokens: Vec<usize>,
    pub pos: Vec<PosTag>,
    pub word_probs: Vec<f64>,
    pub confidence: f64,
}

impl CaptionPrediction {
    /// Tokens without the trailing end token.
    pub fn words(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&END) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn word_pos(&self) -> &[PosTag] {
        &self.pos[..self.words().len()]
    }
}

/// Network plus its parameter values.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub net: Network,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, rng: &mut SplitRng) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Network::build(config, &mut params, rng)?;
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Sets every parameter to zero (LSTM forget bias included).
    pub fn zero_all(&mut self) {
        for p in self.params.iter_mut() {
            p.value.fill(T::zero());
        }
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::contract(format!("no parameter `{name}`")))?;
        let p = self.params.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::Dimension {
                op: "set parameter",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Detection probability and box deltas for each candidate feature row.
    pub fn detect(&self, features: &Tensor<T>) -> Result<Vec<(f64, [f64; 4])>> {
        let mut g = Graph::new();
        let (score, deltas) = self.net.detection_heads(&mut g, &self.params, features)?;
        let (s, d) = (g.value(score), g.value(deltas));
        Ok((0..s.rows())
            .map(|r| {
                let row = d.row_slice(r);
                (
                    crate::autodiff::sigmoid(s.get(r, 0)).as_f64(),
                    [row[0].as_f64(), row[1].as_f64(), row[2].as_f64(), row[3].as_f64()],
                )
            })
            .collect())
    }

    /// Decodes every pair of `inputs` in one batch, up to `max_len` words.
    pub fn decode(
        &self,
        inputs: &PairInputs<T>,
        mode: DecodeMode,
        rng: &mut SplitRng,
        max_len: usize,
    ) -> Result<Vec<CaptionPrediction>> {
        let n = inputs.len();
        let mut out: Vec<CaptionPrediction> = (0..n)
            .map(|pair| CaptionPrediction {
                pair,
                tokens: Vec::new(),
                pos: Vec::new(),
                word_probs: Vec::new(),
                confidence: 1.0,
            })
            .collect();
        if n == 0 {
            return Ok(out);
        }
        let p = &self.params;
        let mut g = Graph::new();
        let codes = self.net.encode(&mut g, p, inputs, None)?;
        let mut states = self.net.initial_states(&mut g, n);
        let mut done = vec![false; n];
        let mut prev: Option<Vec<usize>> = None;
        for _ in 0..=max_len {
            let step_in = self.net.step_inputs(&mut g, p, &codes, prev.as_deref())?;
            let (next, word, pos) = self.net.step(&mut g, p, &step_in, &states)?;
            states = next;
            let probs = row_softmax_values(g.value(word));
            let pos_logits = g.value(pos);
            let mut chosen = vec![END; n];
            for (k, pred) in out.iter_mut().enumerate() {
                if done[k] {
                    continue;
                }
                let row = probs.row_slice(k);
                let id = match mode {
                    DecodeMode::Greedy => argmax(row),
                    DecodeMode::Stochastic => {
                        let w: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
                        rng.categorical(&w)
                    }
                };
                let prob = row[id].as_f64();
                pred.tokens.push(id);
                pred.pos.push(network::pos_from_logits(pos_logits.row_slice(k)));
                pred.word_probs.push(prob);
                pred.confidence *= prob;
                chosen[k] = id;
                if id == END || pred.tokens.len() >= max_len {
                    done[k] = true;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
            prev = Some(chosen);
        }
        Ok(out)
    }

    /// Teacher-forced per-step outputs of `tokens` for every pair: calls
    /// `visit(t, probs, pos_logits, states)` after each step.
    fn teacher_force(
        &self,
        inputs: &PairInputs<T>,
        tokens: &[Vec<usize>],
        mut visit: impl FnMut(usize, &Tensor<T>, &Tensor<T>, &Graph<T>, &[StreamState]),
    ) -> Result<()> {
        let n = inputs.len();
        if tokens.len() != n {
            return Err(Error::contract("one token sequence per pair required"));
        }
        let steps = tokens.iter().map(Vec::len).max().unwrap_or(0);
        if steps == 0 {
            return Err(Error::contract("empty token sequences"));
        }
        let v = self.net.config.vocab_size;
        if let Some(&bad) = tokens.iter().flatten().find(|&&i| i >= v) {
            return Err(Error::Index {
                what: "word id",
                index: bad,
                len: v,
            });
        }
        let p = &self.params;
        let mut g = Graph::new();
        let codes = self.net.encode(&mut g, p, inputs, None)?;
        let mut states = self.net.initial_states(&mut g, n);
        for t in 0..steps {
            let prev: Option<Vec<usize>> =
                (t > 0).then(|| tokens.iter().map(|s| s.get(t - 1).copied().unwrap_or(END)).collect());
            let step_in = self.net.step_inputs(&mut g, p, &codes, prev.as_deref())?;
            let (next, word, pos) = self.net.step(&mut g, p, &step_in, &states)?;
            states = next;
            let probs = row_softmax_values(g.value(word));
            let pos_logits = g.value(pos).clone();
            visit(t, &probs, &pos_logits, &g, &states);
        }
        Ok(())
    }

    /// ln p(query_t) per pair and step, feeding the query as the previous
    /// words. The end token is not scored.
    pub fn query_word_log_probs(&self, inputs: &PairInputs<T>, query: &[usize]) -> Result<Vec<Vec<f64>>> {
        if query.is_empty() {
            return Err(Error::contract("empty query"));
        }
        let n = inputs.len();
        let mut out = vec![Vec::with_capacity(query.len()); n];
        let seqs = vec![query.to_vec(); n];
        self.teacher_force(inputs, &seqs, |t, probs, _, _, _| {
            for (k, row) in out.iter_mut().enumerate() {
                row.push(probs.get(k, query[t]).as_f64().ln());
            }
        })?;
        Ok(out)
    }

    /// Σ_t ln p(query_t) for every pair.
    pub fn query_log_probs(&self, inputs: &PairInputs<T>, query: &[usize]) -> Result<Vec<f64>> {
        Ok(self
            .query_word_log_probs(inputs, query)?
            .iter()
            .map(|row| row.iter().sum())
            .collect())
    }

    /// Teacher-forced POS predictions aligned with each caption's tokens.
    pub fn teacher_forced_pos(&self, inputs: &PairInputs<T>, captions: &[EncodedCaption]) -> Result<Vec<Vec<PosTag>>> {
        let seqs: Vec<Vec<usize>> = captions.iter().map(|c| c.ids.clone()).collect();
        let mut out: Vec<Vec<PosTag>> = seqs.iter().map(|s| Vec::with_capacity(s.len())).collect();
        self.teacher_force(inputs, &seqs, |t, _, pos, _, _| {
            for (k, tags) in out.iter_mut().enumerate() {
                if t < seqs[k].len() {
                    tags.push(network::pos_from_logits(pos.row_slice(k)));
                }
            }
        })?;
        Ok(out)
    }

    /// Per-step L2 norms of the subject / predicate / object LSTM hidden
    /// states while reading `tokens` for pair `pair`, mean-centred over time
    /// per stream.
    pub fn importance_trace(&self, inputs: &PairInputs<T>, pair: usize, tokens: &[usize]) -> Result<Vec<[f64; 3]>> {
        if self.net.stream_count() != 3 {
            return Err(Error::contract("importance traces need the triple-stream decoder"));
        }
        if pair >= inputs.len() {
            return Err(Error::Index {
                what: "pair",
                index: pair,
                len: inputs.len(),
            });
        }
        let one = inputs.select(&[pair])?;
        let mut norms: Vec<[f64; 3]> = Vec::with_capacity(tokens.len());
        self.teacher_force(&one, &[tokens.to_vec()], |_, _, _, g, states| {
            let mut row = [0.0; 3];
            for (k, s) in states.iter().enumerate() {
                row[k] = g.value(s.h).data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            }
            norms.push(row);
        })?;
        Ok(center_columns(norms))
    }

    pub fn to_checkpoint(&self, mut meta: serde_json::Value) -> Result<Checkpoint> {
        if let Some(obj) = meta.as_object_mut() {
            obj.insert("model".into(), serde_json::to_value(&self.net.config)?);
        } else {
            return Err(Error::contract("checkpoint metadata must be a JSON object"));
        }
        let mut ck = Checkpoint::new(meta);
        ck.push_params("", &self.params);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(
            ck.meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint has no model config".into()))?,
        )
        .map_err(|e| Error::Format(format!("model config: {e}")))?;
        let mut model = Self::new(config, &mut SplitRng::new(0))?;
        ck.restore_params("", &mut model.params)?;
        Ok(model)
    }
}

/// Subtracts each column's mean over rows.
pub fn center_columns(mut rows: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
    if rows.is_empty() {
        return rows;
    }
    let n = rows.len() as f64;
    for k in 0..3 {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        for r in &mut rows {
            r[k] -= mean;
        }
    }
    rows
}
