//! Attribute enrichment: prefixes each relation endpoint with an attribute
//! taken from a separately annotated box, or with "the" when none survives.
//!
//! For one endpoint:
//! 1. attribute boxes whose name equals the endpoint's category (lowercase)
//!    and whose IoU with the endpoint box exceeds 0.7 are candidates;
//! 2. the candidate box with the highest IoU is kept (lowest index on ties);
//! 3. its attributes are filtered to lexicon tags NN, VBN, VBG, VBD, JJ;
//! 4. attributes sharing a word with the relation triplet are dropped;
//! 5. one survivor is drawn uniformly at random;
//! 6. without survivors the phrase gets a leading "the".

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::dataset::record::{AttributeImage, AttributeRecord, Endpoint, RelationalRecord};
use crate::dataset::vocab::tokenize;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::rng::SplitRng;

pub const MATCH_IOU: f64 = 0.7;
pub const ALLOWED_TAGS: [&str; 5] = ["NN", "VBN", "VBG", "VBD", "JJ"];
const DETERMINERS: [&str; 3] = ["the", "a", "an"];

/// Word → coarse part-of-speech tag, read from `word<TAB>tag` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PosLexicon {
    tags: BTreeMap<String, String>,
}

impl PosLexicon {
    /// Blank lines and lines starting with `#` are skipped. Words are
    /// lowercased; a repeated word keeps its last tag.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tags = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |field: &str, message: &str| Error::Parse {
                line: i + 1,
                field: field.into(),
                message: message.into(),
            };
            let (word, tag) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("tag", "expected `word<TAB>tag`"))?;
            let (word, tag) = (word.trim(), tag.trim());
            if word.is_empty() {
                return Err(parse_err("word", "empty word"));
            }
            if tag.is_empty() || tag.contains(char::is_whitespace) {
                return Err(parse_err("tag", "tag must be a single non-empty token"));
            }
            tags.insert(word.to_lowercase(), tag.to_string());
        }
        Ok(Self { tags })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self {
            tags: pairs.into_iter().map(|(w, t)| (w.to_lowercase(), t.to_string())).collect(),
        }
    }

    pub fn tag(&self, word: &str) -> Option<&str> {
        self.tags.get(&word.to_lowercase()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Steps 1–4 for one endpoint: the surviving attribute strings, lowercased,
/// in annotation order.
pub fn candidate_attributes(
    endpoint: &Endpoint,
    triplet_words: &[String],
    annotations: &[AttributeRecord],
    lexicon: &PosLexicon,
) -> Vec<String> {
    let category = endpoint.category.to_lowercase();
    let mut best: Option<(&AttributeRecord, f64)> = None;
    for a in annotations {
        if a.name.to_lowercase() != category {
            continue;
        }
        let v = iou(&a.bbox, &endpoint.bbox);
        if v > MATCH_IOU && best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    let Some((chosen, _)) = best else {
        return Vec::new();
    };
    let mut out: Vec<String> = Vec::new();
    for attr in &chosen.attributes {
        let attr = attr.trim().to_lowercase();
        if attr.is_empty() || out.contains(&attr) {
            continue;
        }
        match lexicon.tag(&attr) {
            Some(t) if ALLOWED_TAGS.contains(&t) => {}
            Some(_) => continue,
            None => {
                log::info!("attribute `{attr}` missing from the POS lexicon; skipped");
                continue;
            }
        }
        if tokenize(&attr).iter().any(|w| triplet_words.contains(w)) {
            continue;
        }
        out.push(attr);
    }
    out
}

/// Inserts `word` at the front of `phrase`, after a leading determiner if
/// one is present. With `word == "the"` an existing determiner is kept as is.
pub fn prefix_phrase(phrase: &str, word: &str) -> String {
    let tokens: Vec<&str> = phrase.split_whitespace().collect();
    let has_det = tokens
        .first()
        .is_some_and(|t| DETERMINERS.contains(&t.to_lowercase().as_str()));
    match (has_det, word) {
        (true, "the") => tokens.join(" "),
        (true, _) => {
            let mut out = vec![tokens[0], word];
            out.extend_from_slice(&tokens[1..]);
            out.join(" ")
        }
        (false, _) => std::iter::once(word).chain(tokens).collect::<Vec<_>>().join(" "),
    }
}

fn enrich_endpoint(
    endpoint: &Endpoint,
    triplet_words: &[String],
    annotations: &[AttributeRecord],
    lexicon: &PosLexicon,
    rng: &mut SplitRng,
) -> Endpoint {
    let candidates = candidate_attributes(endpoint, triplet_words, annotations, lexicon);
    let word = match candidates.len() {
        0 => "the".to_string(),
        1 => candidates[0].clone(),
        n => candidates[rng.below(n)].clone(),
    };
    Endpoint {
        phrase: prefix_phrase(&endpoint.phrase, &word),
        ..endpoint.clone()
    }
}

/// Enriches one image. Relations are visited in order, subject before
/// object; the random stream is drawn only when several attributes survive.
pub fn enrich_record(
    record: &RelationalRecord,
    annotations: &[AttributeRecord],
    lexicon: &PosLexicon,
    rng: &mut SplitRng,
) -> RelationalRecord {
    let mut out = record.clone();
    for rel in &mut out.relations {
        let words = rel.segments().tokens();
        let subject = enrich_endpoint(&rel.subject, &words, annotations, lexicon, rng);
        let object = enrich_endpoint(&rel.object, &words, annotations, lexicon, rng);
        rel.subject = subject;
        rel.object = object;
    }
    out
}

/// Enriches a dataset. Image `i` uses the stream `SplitRng::derive(seed,
/// image_id)`, so the output does not depend on record order. Images without
/// an attribute entry fall back to "the" everywhere.
pub fn enrich_attributes(
    records: &[RelationalRecord],
    attributes: &[AttributeImage],
    lexicon: &PosLexicon,
    seed: u64,
) -> Result<Vec<RelationalRecord>> {
    let mut by_image: HashMap<u64, &AttributeImage> = HashMap::new();
    for a in attributes {
        if by_image.insert(a.image_id, a).is_some() {
            return Err(Error::contract(format!(
                "duplicate attribute entry for image {}",
                a.image_id
            )));
        }
    }
    Ok(records
        .iter()
        .map(|r| {
            let annotations = by_image.get(&r.image_id).map_or(&[][..], |a| &a.attributes[..]);
            let mut rng = SplitRng::derive(seed, r.image_id);
            enrich_record(r, annotations, lexicon, &mut rng)
        })
        .collect())
}
