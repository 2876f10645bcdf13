//! JSON-lines record formats: dataset images, attribute annotations and
//! caption predictions. Every line carries a `version` field.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::vocab::{tokenize, PosTag, Segments};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub const SCHEMA_VERSION: u32 = 1;

/// Slack allowed when checking that boxes lie inside the image.
const BOUNDS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox<f64>,
    pub category: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    /// Scene description, toy worlds only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    #[serde(rename = "box")]
    pub bbox: BoundingBox<f64>,
    /// Category word used to match attribute annotations.
    pub category: String,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub subject: Endpoint,
    pub predicate: String,
    pub object: Endpoint,
}

impl RelationRecord {
    pub fn segments(&self) -> Segments {
        Segments::new(&self.subject.phrase, &self.predicate, &self.object.phrase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationalRecord {
    pub version: u32,
    pub image_id: u64,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectRecord>,
    pub relations: Vec<RelationRecord>,
}

/// Reference caption for the metrics: both boxes plus tagged tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRelation {
    pub image_id: u64,
    pub subject: BoundingBox<f64>,
    pub object: BoundingBox<f64>,
    pub tokens: Vec<String>,
    pub pos: Vec<PosTag>,
}

impl RelationalRecord {
    pub fn ground_truth(&self) -> Vec<GroundTruthRelation> {
        self.relations
            .iter()
            .map(|r| {
                let (tokens, pos) = r.segments().tagged_tokens().into_iter().unzip();
                GroundTruthRelation {
                    image_id: self.image_id,
                    subject: r.subject.bbox,
                    object: r.object.bbox,
                    tokens,
                    pos,
                }
            })
            .collect()
    }

    fn check_box(&self, b: &BoundingBox<f64>, field: &str) -> std::result::Result<(), (String, String)> {
        if !b.is_valid() {
            return Err((field.into(), format!("degenerate box {b:?}")));
        }
        let (x1, y1, x2, y2) = b.corners();
        if x1 < -BOUNDS_EPS || y1 < -BOUNDS_EPS || x2 > self.width + BOUNDS_EPS || y2 > self.height + BOUNDS_EPS {
            return Err((
                field.into(),
                format!("box {b:?} outside the {}x{} image", self.width, self.height),
            ));
        }
        Ok(())
    }

    /// Field-level validation; errors name the offending field.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if self.version != SCHEMA_VERSION {
            return Err((
                "version".into(),
                format!("schema version {} (expected {SCHEMA_VERSION})", self.version),
            ));
        }
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(("width".into(), "image size must be positive".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            self.check_box(&o.bbox, &format!("objects[{i}].box"))?;
            if o.category.trim().is_empty() {
                return Err((format!("objects[{i}].category"), "empty category".into()));
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            self.check_box(&r.subject.bbox, &format!("relations[{i}].subject.box"))?;
            self.check_box(&r.object.bbox, &format!("relations[{i}].object.box"))?;
            for (name, text) in [
                ("subject.phrase", &r.subject.phrase),
                ("predicate", &r.predicate),
                ("object.phrase", &r.object.phrase),
            ] {
                if tokenize(text).is_empty() {
                    return Err((format!("relations[{i}].{name}"), "empty phrase".into()));
                }
            }
        }
        Ok(())
    }
}

/// One attribute-annotated box from a separate annotation source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    #[serde(rename = "box")]
    pub bbox: BoundingBox<f64>,
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeImage {
    pub version: u32,
    pub image_id: u64,
    pub attributes: Vec<AttributeRecord>,
}

impl AttributeImage {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if self.version != SCHEMA_VERSION {
            return Err(("version".into(), format!("schema version {}", self.version)));
        }
        for (i, a) in self.attributes.iter().enumerate() {
            if a.name.trim().is_empty() {
                return Err((format!("attributes[{i}].name"), "empty object name".into()));
            }
            if !a.bbox.is_valid() {
                return Err((format!("attributes[{i}].box"), "degenerate box".into()));
            }
        }
        Ok(())
    }
}

/// One predicted caption, as written by inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: u64,
    pub subject_box: BoundingBox<f64>,
    pub object_box: BoundingBox<f64>,
    pub caption: String,
    /// One tag per caption word.
    pub pos: Vec<PosTag>,
    /// One probability per caption word, followed by the end-token
    /// probability when the decoder emitted it.
    pub word_probs: Vec<f64>,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.caption)
    }

    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let n = self.tokens().len();
        if self.pos.len() != n {
            return Err(("pos".into(), format!("{} tags for {n} words", self.pos.len())));
        }
        if self.word_probs.len() != n && self.word_probs.len() != n + 1 {
            return Err((
                "word_probs".into(),
                format!("{} probabilities for {n} words", self.word_probs.len()),
            ));
        }
        if self.word_probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(("word_probs".into(), "probabilities must lie in (0, 1]".into()));
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(("confidence".into(), format!("{} outside (0, 1]", self.confidence)));
        }
        for (field, b) in [("subject_box", &self.subject_box), ("object_box", &self.object_box)] {
            if !b.is_valid() {
                return Err((field.into(), "degenerate box".into()));
            }
        }
        Ok(())
    }

    /// Contiguous word spans per tag, in caption order.
    pub fn span(&self, tag: PosTag) -> Vec<String> {
        self.tokens()
            .into_iter()
            .zip(&self.pos)
            .filter(|(_, &t)| t == tag)
            .map(|(w, _)| w)
            .collect()
    }
}

/// Records that can be checked after parsing.
pub trait Validate {
    fn check(&self) -> std::result::Result<(), (String, String)>;
}

impl Validate for RelationalRecord {
    fn check(&self) -> std::result::Result<(), (String, String)> {
        self.validate()
    }
}

impl Validate for AttributeImage {
    fn check(&self) -> std::result::Result<(), (String, String)> {
        self.validate()
    }
}

impl Validate for PredictionRecord {
    fn check(&self) -> std::result::Result<(), (String, String)> {
        self.validate()
    }
}

/// Parses JSON lines, skipping blank lines. Errors carry 1-based line numbers.
pub fn parse_jsonl<R: DeserializeOwned + Validate>(text: &str) -> Result<Vec<R>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: R = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            field: field_of(&e),
            message: e.to_string(),
        })?;
        rec.check().map_err(|(field, message)| Error::Parse {
            line: i + 1,
            field,
            message,
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn field_of(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`').nth(1).unwrap_or("record").to_string()
}

pub fn to_jsonl<R: Serialize + Validate>(records: &[R]) -> Result<String> {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        r.check().map_err(|(field, message)| Error::Parse {
            line: i + 1,
            field,
            message,
        })?;
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl<R: DeserializeOwned + Validate>(path: &Path) -> Result<Vec<R>> {
    parse_jsonl(&fs::read_to_string(path)?)
}

pub fn write_jsonl<R: Serialize + Validate>(path: &Path, records: &[R]) -> Result<()> {
    crate::io::write_atomic_str(path, &to_jsonl(records)?)
}

pub fn load_dataset(path: &Path) -> Result<Vec<RelationalRecord>> {
    read_jsonl(path)
}

pub fn save_dataset(path: &Path, records: &[RelationalRecord]) -> Result<()> {
    write_jsonl(path, records)
}
