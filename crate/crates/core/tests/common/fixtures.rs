//! Randomized relational-mAP fixtures with overlapping boxes, repeated
//! captions and tied confidences.

use relcap::dataset::record::GroundTruthRelation;
use relcap::dataset::vocab::PosTag;
use relcap::geometry::BoundingBox;
use relcap::metrics::ScoredRelation;
use relcap::rng::SplitRng;

const WORDS: [&str; 6] = ["the", "red", "square", "is", "near", "blue"];

fn words(rng: &mut SplitRng) -> Vec<String> {
    (0..1 + rng.below(4)).map(|_| WORDS[rng.below(WORDS.len())].to_string()).collect()
}

fn jitter(rng: &mut SplitRng, b: &BoundingBox<f64>) -> BoundingBox<f64> {
    BoundingBox::new(
        b.x + rng.uniform(-4.0, 4.0),
        b.y + rng.uniform(-4.0, 4.0),
        b.w * rng.uniform(0.7, 1.3),
        b.h * rng.uniform(0.7, 1.3),
    )
}

/// At most `max_pred` predictions and `max_gt` GTs over two images.
pub fn random_fixture(seed: u64, max_pred: usize, max_gt: usize) -> (Vec<ScoredRelation>, Vec<GroundTruthRelation>) {
    let mut rng = SplitRng::new(seed);
    let n_gt = 1 + rng.below(max_gt);
    let anchors: Vec<BoundingBox<f64>> = (0..3)
        .map(|_| BoundingBox::new(rng.uniform(15.0, 85.0), rng.uniform(15.0, 85.0), rng.uniform(8.0, 20.0), rng.uniform(8.0, 20.0)))
        .collect();
    let gts: Vec<GroundTruthRelation> = (0..n_gt)
        .map(|_| {
            let tokens = words(&mut rng);
            GroundTruthRelation {
                image_id: rng.below(2) as u64,
                subject: anchors[rng.below(3)],
                object: anchors[rng.below(3)],
                pos: vec![PosTag::Subj; tokens.len()],
                tokens,
            }
        })
        .collect();
    let n_pred = rng.below(max_pred + 1);
    let preds = (0..n_pred)
        .map(|_| {
            let g = &gts[rng.below(n_gt)];
            let tokens = if rng.bernoulli(0.5) { g.tokens.clone() } else { words(&mut rng) };
            ScoredRelation {
                image_id: if rng.bernoulli(0.8) { g.image_id } else { rng.below(2) as u64 },
                subject: jitter(&mut rng, &g.subject),
                object: jitter(&mut rng, &g.object),
                tokens,
                // Coarse levels make ties common.
                confidence: rng.below(4) as f64 / 4.0,
            }
        })
        .collect();
    (preds, gts)
}
