use proptest::prelude::*;
use relcap::applications::retrieval::{query_ids, rank_images, retrieval_eval, RetrievalIndex, RetrievalProtocol};
use relcap::dataset::toy::{generate_toy_world, ToyConfig};
use relcap::dataset::vocab::RESERVED;
use relcap::dataset::{ProviderSpec, RelationalRecord};
use relcap::error::Error;
use relcap::pipeline::{InferenceConfig, TrainConfig, TrainedModel, Trainer};
use relcap::tensor::Tensor;

fn world(images: usize, seed: u64) -> (Vec<RelationalRecord>, TrainedModel) {
    let cfg = ToyConfig {
        images,
        ..ToyConfig::default()
    };
    let (records, provider) = generate_toy_world(seed, &cfg).unwrap();
    let trainer = Trainer::new(
        "mttsnet,mtl".parse().unwrap(),
        &records,
        ProviderSpec::Toy(provider),
        TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    (records, trainer.trained)
}

fn inference() -> InferenceConfig {
    InferenceConfig {
        keep_after_nms: 6,
        min_detection: 0.0,
        ..InferenceConfig::default()
    }
}

#[test]
fn uniform_model_scores_inverse_vocab_power() {
    let (records, mut t) = world(3, 1);
    t.model.zero_all();
    let index = RetrievalIndex::build(&t, &records, &inference()).unwrap();
    let v = t.vocab.len() as f64;
    let hits = rank_images(&t, &index, "red square is near blue circle").unwrap();
    let expected = v.powi(-6);
    for (k, h) in hits.iter().enumerate() {
        assert_eq!(h.image_id, records[k].image_id, "ties keep index order");
        assert!((h.score - expected).abs() <= 1e-12 * expected, "{} vs {expected}", h.score);
        assert_eq!(h.word_probs.len(), 6);
    }
}

#[test]
fn rigged_word_bias_gives_score_one() {
    let (records, mut t) = world(2, 2);
    t.model.zero_all();
    let word = t.vocab.words()[RESERVED.len()].clone();
    let mut bias = vec![0.0; t.vocab.len()];
    bias[t.vocab.id(&word)] = 50.0;
    t.model.set("head.word.b", Tensor::row(bias)).unwrap();
    let index = RetrievalIndex::build(&t, &records, &inference()).unwrap();
    for h in rank_images(&t, &index, &format!("{word} {word} {word}")).unwrap() {
        assert_eq!(h.score, 1.0);
        assert!(h.subject_box.is_some() && h.object_box.is_some());
    }
}

#[test]
fn ranking_matches_per_pair_recomputation() {
    let (records, t) = world(3, 3);
    let cfg = inference();
    let index = RetrievalIndex::build(&t, &records, &cfg).unwrap();
    let query = records[1].relations[0].segments().text();
    let ids = query_ids(&t, &query).unwrap();
    let mut expected: Vec<(u64, f64)> = Vec::new();
    for r in &records {
        let (pairs, inputs) = t.candidate_pairs(r, &cfg).unwrap().unwrap();
        let mut best = f64::NEG_INFINITY;
        for k in 0..pairs.len() {
            let one = inputs.select(&[k]).unwrap();
            let words = t.model.query_word_log_probs(&one, &ids).unwrap();
            let product: f64 = words[0].iter().map(|w| w.exp()).product();
            best = best.max(product);
        }
        expected.push((r.image_id, best));
    }
    expected.sort_by(|a, b| b.1.total_cmp(&a.1));
    let hits = rank_images(&t, &index, &query).unwrap();
    assert_eq!(hits.len(), 3);
    for (h, (id, score)) in hits.iter().zip(&expected) {
        assert_eq!(h.image_id, *id);
        assert!((h.score - score).abs() <= 1e-9 * score, "{} vs {score}", h.score);
        let product: f64 = h.word_probs.iter().product();
        assert!((product - h.score).abs() <= 1e-9 * h.score);
    }
}

#[test]
fn protocol_needs_enough_images() {
    let (records, t) = world(3, 4);
    let protocol = RetrievalProtocol::default();
    let err = retrieval_eval(&t, &records, &protocol, &inference()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn large_k_recalls_everything() {
    let (records, t) = world(6, 5);
    let protocol = RetrievalProtocol {
        images: 6,
        source_images: 2,
        queries_per_image: 3,
        seeds: vec![0, 1],
        ks: vec![1, 6, 50],
    };
    let report = retrieval_eval(&t, &records, &protocol, &inference()).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert!(report.runs.iter().all(|r| r.queries == 6));
    assert_eq!(report.recall_at[1], (6, 1.0));
    assert_eq!(report.recall_at[2], (50, 1.0));
    assert!(report.recall_at[0].1 <= 1.0);
    assert!(report.median_rank >= 1.0 && report.median_rank <= 6.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn query_score_never_grows_with_length(seed in 0u64..1000, len in 1usize..8) {
        let (records, t) = world(1, seed);
        let (_, inputs) = t.candidate_pairs(&records[0], &inference()).unwrap().unwrap();
        let words: Vec<usize> = (0..len).map(|k| RESERVED.len() + (seed as usize + 3 * k) % (t.vocab.len() - RESERVED.len())).collect();
        let mut previous = vec![0.0; inputs.len()];
        for l in 1..=len {
            let scores = t.model.query_log_probs(&inputs, &words[..l]).unwrap();
            for (s, p) in scores.iter().zip(&previous) {
                prop_assert!(s <= p);
            }
            previous = scores;
        }
    }
}
