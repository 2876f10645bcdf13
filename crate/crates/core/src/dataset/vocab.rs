//! Tokenization, vocabulary and POS-segment labelling of relational captions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Segment a caption token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PosTag {
    #[serde(rename = "SUBJ")]
    Subj,
    #[serde(rename = "PRED")]
    Pred,
    #[serde(rename = "OBJ")]
    Obj,
}

impl PosTag {
    pub const COUNT: usize = 3;
    pub const ALL: [PosTag; 3] = [PosTag::Subj, PosTag::Pred, PosTag::Obj];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Subj => "SUBJ",
            PosTag::Pred => "PRED",
            PosTag::Obj => "OBJ",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    pub min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
    min_count: usize,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Vocabulary::from_words(f.words, f.min_count)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            words: v.words,
            min_count: v.min_count,
        }
    }
}

impl Vocabulary {
    /// Words with frequency ≥ `min_count`, ordered by descending frequency
    /// then lexicographically, after the four reserved tokens.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::config("min_count must be at least 1"));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for sentence in corpus {
            for w in tokenize(sentence) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !RESERVED.contains(&w.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let words = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(w, _)| w))
            .collect();
        Ok(Self::from_words(words, min_count))
    }

    /// Rebuilds from an id-ordered word list (as stored in checkpoints).
    pub fn from_words(words: Vec<String>, min_count: usize) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self {
            words,
            index,
            min_count,
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.id(word) != UNK || word == RESERVED[UNK]
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// Words for ids, stopping at the end token and skipping padding.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != END)
            .filter(|&&i| i != PAD && i != START)
            .map(|&i| self.word(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }
}

/// Caption split into its subject / predicate / object phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Segments {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        Self {
            subject: subject.to_string(),
            predicate: predicate.to_string(),
            object: object.to_string(),
        }
    }

    /// Tokens with their segment tag, in SUBJ → PRED → OBJ order.
    pub fn tagged_tokens(&self) -> Vec<(String, PosTag)> {
        let mut out = Vec::new();
        for (text, tag) in [
            (&self.subject, PosTag::Subj),
            (&self.predicate, PosTag::Pred),
            (&self.object, PosTag::Obj),
        ] {
            out.extend(tokenize(text).into_iter().map(|w| (w, tag)));
        }
        out
    }

    pub fn tokens(&self) -> Vec<String> {
        self.tagged_tokens().into_iter().map(|(w, _)| w).collect()
    }

    pub fn text(&self) -> String {
        self.tokens().join(" ")
    }

    pub fn is_well_formed(&self) -> bool {
        [&self.subject, &self.predicate, &self.object]
            .iter()
            .all(|s| !tokenize(s).is_empty())
    }
}

/// Encoded caption: ids end with [`END`], tags are aligned with ids
/// (the end token is tagged OBJ).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCaption {
    pub ids: Vec<usize>,
    pub pos: Vec<PosTag>,
}

/// Maps a segmented caption to ids + POS tags. Every word inherits its
/// segment's tag; captions longer than `max_len` words are truncated before
/// the end token is appended.
pub fn encode_caption(segments: &Segments, vocab: &Vocabulary, max_len: usize) -> Result<EncodedCaption> {
    let tagged = segments.tagged_tokens();
    if tagged.is_empty() {
        return Err(Error::contract("empty caption"));
    }
    let (mut ids, mut pos): (Vec<usize>, Vec<PosTag>) = tagged
        .iter()
        .take(max_len)
        .map(|(w, t)| (vocab.id(w), *t))
        .unzip();
    ids.push(END);
    pos.push(PosTag::Obj);
    Ok(EncodedCaption { ids, pos })
}

#[cfg(test)]
mod tests {
    use super::*;
    use PosTag::*;

    #[test]
    fn vocab_min_count() {
        let v = Vocabulary::build(["a a b"], 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.word(4), Some("a"));
        assert_eq!(v.id("b"), UNK);
        let all = Vocabulary::build(["a a b"], 1).unwrap();
        assert_eq!(all.words()[4..], ["a".to_string(), "b".to_string()]);
        assert!(Vocabulary::build(["a"], 0).is_err());
    }

    #[test]
    fn vocab_order_is_frequency_then_lexicographic() {
        let corpus = ["z y x", "y x", "x w"];
        let v1 = Vocabulary::build(corpus, 1).unwrap();
        let v2 = Vocabulary::build(corpus.iter().rev().copied(), 1).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(&v1.words()[4..], ["x", "y", "w", "z"]);
        assert_eq!(&v1.words()[..4], RESERVED);
    }

    #[test]
    fn encode_segment_rule() {
        let corpus = ["the man riding a horse"];
        let v = Vocabulary::build(corpus, 1).unwrap();
        let seg = Segments::new("the man", "riding", "a horse");
        let enc = encode_caption(&seg, &v, 16).unwrap();
        assert_eq!(enc.pos, vec![Subj, Subj, Pred, Obj, Obj, Obj]);
        assert_eq!(*enc.ids.last().unwrap(), END);
        assert_eq!(v.decode(&enc.ids), ["the", "man", "riding", "a", "horse"]);
    }

    #[test]
    fn encode_oov_keeps_tag() {
        let v = Vocabulary::build(["the man"], 1).unwrap();
        let enc = encode_caption(&Segments::new("the man", "riding", "zebra"), &v, 16).unwrap();
        assert_eq!(enc.ids[2], UNK);
        assert_eq!(enc.pos[2], Pred);
        assert_eq!(enc.ids[3], UNK);
        assert_eq!(enc.pos[3], Obj);
    }

    #[test]
    fn encode_truncation() {
        // 3 + 2 + 3 words, truncated to 4: [the red square is] + end
        let seg = Segments::new("the red square", "is near", "the blue circle");
        let v = Vocabulary::build([seg.text().as_str()], 1).unwrap();
        let enc = encode_caption(&seg, &v, 4).unwrap();
        assert_eq!(enc.ids.len(), 5);
        assert_eq!(enc.pos, vec![Subj, Subj, Subj, Pred, Obj]);
        assert_eq!(v.decode(&enc.ids), ["the", "red", "square", "is"]);
    }

    #[test]
    fn empty_caption_is_error() {
        let v = Vocabulary::build(["x"], 1).unwrap();
        assert!(encode_caption(&Segments::new("", " ", ""), &v, 8).is_err());
    }

    #[test]
    fn pos_tag_serde() {
        assert_eq!(serde_json::to_string(&Pred).unwrap(), "\"PRED\"");
        let t: PosTag = serde_json::from_str("\"OBJ\"").unwrap();
        assert_eq!(t, Obj);
    }
}
