//! Checks against the hand-derived fixtures in `tests/fixtures`. Each
//! returns one message per mismatching case.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use relcap::dataset::enrich::{enrich_attributes, PosLexicon};
use relcap::dataset::record::{AttributeImage, AttributeRecord, Endpoint, RelationRecord, RelationalRecord, SCHEMA_VERSION};
use relcap::metrics::meteor_detail;
use serde::Deserialize;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

#[derive(Deserialize)]
struct MeteorCase {
    candidate: String,
    reference: String,
    matches: usize,
    chunks: usize,
    score: f64,
}

/// Returns the number of cases and the failures.
pub fn meteor_failures(dir: &Path) -> (usize, Vec<String>) {
    let text = std::fs::read_to_string(dir.join("meteor_cases.json")).unwrap();
    let cases: Vec<MeteorCase> = serde_json::from_str(&text).unwrap();
    let mut failures = Vec::new();
    for c in &cases {
        let cand: Vec<&str> = c.candidate.split_whitespace().collect();
        let refr: Vec<&str> = c.reference.split_whitespace().collect();
        let d = meteor_detail(&cand, &refr);
        if (d.matches, d.chunks) != (c.matches, c.chunks) || d.score != c.score {
            failures.push(format!(
                "{} | {}: got ({}, {}, {}), expected ({}, {}, {})",
                c.candidate, c.reference, d.matches, d.chunks, d.score, c.matches, c.chunks, c.score
            ));
        }
    }
    (cases.len(), failures)
}

#[derive(Deserialize)]
struct EnrichmentFixture {
    image_id: u64,
    lexicon: String,
    cases: Vec<EnrichmentCase>,
}

#[derive(Deserialize)]
struct EnrichmentCase {
    name: String,
    seed: u64,
    subject: Endpoint,
    predicate: String,
    object: Endpoint,
    attributes: Vec<AttributeRecord>,
    expected: [String; 2],
}

/// Returns the number of cases and the failures.
pub fn enrichment_failures(dir: &Path) -> (usize, Vec<String>) {
    let text = std::fs::read_to_string(dir.join("enrichment_cases.json")).unwrap();
    let fx: EnrichmentFixture = serde_json::from_str(&text).unwrap();
    let lexicon = PosLexicon::load(&dir.join(&fx.lexicon)).unwrap();
    let total = fx.cases.len();
    let mut failures = Vec::new();
    for c in fx.cases {
        let record = RelationalRecord {
            version: SCHEMA_VERSION,
            image_id: fx.image_id,
            width: 100.0,
            height: 100.0,
            objects: vec![],
            relations: vec![RelationRecord {
                subject: c.subject.clone(),
                predicate: c.predicate.clone(),
                object: c.object.clone(),
            }],
        };
        let attrs = AttributeImage {
            version: SCHEMA_VERSION,
            image_id: fx.image_id,
            attributes: c.attributes,
        };
        let out = enrich_attributes(&[record], &[attrs], &lexicon, c.seed).unwrap();
        let rel = &out[0].relations[0];
        let got = [rel.subject.phrase.clone(), rel.object.phrase.clone()];
        if got != c.expected || rel.predicate != c.predicate || rel.subject.bbox != c.subject.bbox {
            failures.push(format!("{}: got {got:?}, expected {:?}", c.name, c.expected));
        }
    }
    (total, failures)
}
