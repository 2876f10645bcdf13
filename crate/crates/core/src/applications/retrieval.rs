//! Sentence-based image retrieval: an image scores a query by the best
//! teacher-forced query probability over its candidate region pairs.

use serde::{Deserialize, Serialize};

use crate::dataset::record::RelationalRecord;
use crate::dataset::vocab::tokenize;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::model::PairInputs;
use crate::pipeline::{InferenceConfig, TrainedModel};
use crate::rng::SplitRng;

/// Candidate pairs of one image, computed once and reused for every query.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pub image_id: u64,
    pub pairs: Vec<(BoundingBox<f64>, BoundingBox<f64>)>,
    pub inputs: Option<PairInputs<f64>>,
}

impl RetrievalIndex {
    pub fn build(trained: &TrainedModel, records: &[RelationalRecord], cfg: &InferenceConfig) -> Result<Vec<Self>> {
        records
            .iter()
            .map(|r| {
                let (pairs, inputs) = match trained.candidate_pairs(r, cfg)? {
                    Some((p, i)) => (p, Some(i)),
                    None => (Vec::new(), None),
                };
                Ok(Self {
                    image_id: r.image_id,
                    pairs,
                    inputs,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub image_id: u64,
    /// Best pair probability of the query, in (0, 1]; 0 when the image has
    /// no candidate pair.
    pub score: f64,
    pub log_score: f64,
    pub subject_box: Option<BoundingBox<f64>>,
    pub object_box: Option<BoundingBox<f64>>,
    /// Probability of each query word under the best pair.
    pub word_probs: Vec<f64>,
}

/// Query words mapped through the vocabulary; unknown words become the
/// unknown id.
pub fn query_ids(trained: &TrainedModel, query: &str) -> Result<Vec<usize>> {
    let words = tokenize(query);
    if words.is_empty() {
        return Err(Error::contract("empty query"));
    }
    Ok(words.iter().map(|w| trained.vocab.id(w)).collect())
}

/// Best pair for the query: its index, the summed log-probability and the
/// per-word log-probabilities. Ties keep the lowest pair index.
pub fn retrieval_score(trained: &TrainedModel, inputs: &PairInputs<f64>, ids: &[usize]) -> Result<(usize, f64, Vec<f64>)> {
    let words = trained.model.query_word_log_probs(inputs, ids)?;
    let mut best: Option<(usize, f64)> = None;
    for (k, row) in words.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    let (k, s) = best.ok_or_else(|| Error::contract("no candidate pairs to score"))?;
    Ok((k, s, words[k].clone()))
}

/// Images ordered by descending score; ties keep index order.
pub fn rank_images(trained: &TrainedModel, index: &[RetrievalIndex], query: &str) -> Result<Vec<RetrievalHit>> {
    let ids = query_ids(trained, query)?;
    let mut hits = Vec::with_capacity(index.len());
    for entry in index {
        let hit = match &entry.inputs {
            Some(inputs) => {
                let (k, log_score, words) = retrieval_score(trained, inputs, &ids)?;
                RetrievalHit {
                    image_id: entry.image_id,
                    score: log_score.exp(),
                    log_score,
                    subject_box: Some(entry.pairs[k].0),
                    object_box: Some(entry.pairs[k].1),
                    word_probs: words.iter().map(|w| w.exp()).collect(),
                }
            }
            None => RetrievalHit {
                image_id: entry.image_id,
                score: 0.0,
                log_score: f64::NEG_INFINITY,
                subject_box: None,
                object_box: None,
                word_probs: Vec::new(),
            },
        };
        hits.push(hit);
    }
    hits.sort_by(|a, b| b.log_score.total_cmp(&a.log_score));
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalProtocol {
    /// Images ranked per query.
    pub images: usize,
    /// Images the queries are drawn from.
    pub source_images: usize,
    /// Captions per source image; drawn without replacement while enough
    /// relations exist, with replacement beyond that.
    pub queries_per_image: usize,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
}

impl Default for RetrievalProtocol {
    fn default() -> Self {
        Self {
            images: 100,
            source_images: 5,
            queries_per_image: 4,
            seeds: vec![0, 1, 2],
            ks: vec![1, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub seed: u64,
    pub queries: usize,
    pub recall_at: Vec<(usize, f64)>,
    pub median_rank: f64,
    /// Rank of the source image for each query.
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub recall_at: Vec<(usize, f64)>,
    pub median_rank: f64,
    pub runs: Vec<RetrievalRun>,
}

pub fn median(values: &[usize]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// 1-based rank of `target` among `scores`: one plus the number of images
/// scoring strictly higher or scoring equal at an earlier position.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > t || (s == t && i < target))
        .count()
}

/// Recall@K and median rank averaged over the protocol seeds. Each seed
/// draws `images` images, `source_images` of them as query sources, and
/// ranks all drawn images for every query.
pub fn retrieval_eval(
    trained: &TrainedModel,
    records: &[RelationalRecord],
    protocol: &RetrievalProtocol,
    cfg: &InferenceConfig,
) -> Result<RetrievalReport> {
    if protocol.images == 0 || protocol.source_images == 0 || protocol.queries_per_image == 0 {
        return Err(Error::config("retrieval protocol sizes must be positive"));
    }
    if protocol.source_images > protocol.images {
        return Err(Error::config("more source images than ranked images"));
    }
    if records.len() < protocol.images {
        return Err(Error::config(format!(
            "retrieval protocol needs {} images, dataset has {}",
            protocol.images,
            records.len()
        )));
    }
    if protocol.seeds.is_empty() || protocol.ks.contains(&0) {
        return Err(Error::config("need at least one seed and K > 0"));
    }
    let index = RetrievalIndex::build(trained, records, cfg)?;
    let mut runs = Vec::new();
    for &seed in &protocol.seeds {
        let mut rng = SplitRng::derive(seed, 0x7e7);
        let mut chosen: Vec<usize> = (0..records.len()).collect();
        rng.shuffle(&mut chosen);
        chosen.truncate(protocol.images);
        let with_relations: Vec<usize> = (0..chosen.len())
            .filter(|&k| !records[chosen[k]].relations.is_empty())
            .collect();
        if with_relations.len() < protocol.source_images {
            return Err(Error::config("too few images with captions for the query protocol"));
        }
        let mut sources = with_relations;
        rng.shuffle(&mut sources);
        sources.truncate(protocol.source_images);
        let mut ranks = Vec::new();
        for &src in &sources {
            let rels = &records[chosen[src]].relations;
            let mut picks: Vec<usize> = (0..rels.len()).collect();
            rng.shuffle(&mut picks);
            while picks.len() < protocol.queries_per_image {
                picks.push(rng.below(rels.len()));
            }
            picks.truncate(protocol.queries_per_image);
            for q in picks {
                let ids = query_ids(trained, &rels[q].segments().text())?;
                let scores: Vec<f64> = chosen
                    .iter()
                    .map(|&i| match &index[i].inputs {
                        Some(inputs) => retrieval_score(trained, inputs, &ids).map(|s| s.1),
                        None => Ok(f64::NEG_INFINITY),
                    })
                    .collect::<Result<_>>()?;
                ranks.push(rank_of(&scores, src));
            }
        }
        let recall_at = protocol
            .ks
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64))
            .collect();
        runs.push(RetrievalRun {
            seed,
            queries: ranks.len(),
            recall_at,
            median_rank: median(&ranks),
            ranks,
        });
    }
    let n = runs.len() as f64;
    let recall_at = protocol
        .ks
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, runs.iter().map(|r| r.recall_at[i].1).sum::<f64>() / n))
        .collect();
    let median_rank = runs.iter().map(|r| r.median_rank).sum::<f64>() / n;
    Ok(RetrievalReport {
        recall_at,
        median_rank,
        runs,
    })
}
