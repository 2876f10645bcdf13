//! Caption graphs: subject and object phrases become nodes, predicates
//! become directed edges.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::record::PredictionRecord;
use crate::dataset::vocab::PosTag;
use crate::geometry::{iou, BoundingBox};

pub const NODE_MERGE_IOU: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub phrase: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub predicate: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionGraph {
    pub image_id: u64,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl CaptionGraph {
    fn node_for(&mut self, bbox: BoundingBox<f64>, phrase: String, merge_iou: f64) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for n in &self.nodes {
            let v = iou(&n.bbox, &bbox);
            if v >= merge_iou && best.is_none_or(|(_, b)| v > b) {
                best = Some((n.id, v));
            }
        }
        match best {
            Some((id, _)) => id,
            None => {
                let id = self.nodes.len();
                self.nodes.push(GraphNode { id, phrase, bbox });
                id
            }
        }
    }

    /// Graphviz document; node labels are phrases, edge labels predicates.
    pub fn to_dot(&self) -> String {
        let esc = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
        let mut out = String::from("digraph caption_graph {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  n{} [label=\"{}\"];", n.id, esc(&n.phrase));
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  n{} -> n{} [label=\"{}\", confidence={:.6}];",
                e.source,
                e.target,
                esc(&e.predicate),
                e.confidence
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Builds the caption graph of one image's predictions. Captions are
/// visited in descending confidence; a box within `merge_iou` of an existing
/// node reuses it, so each node keeps the phrase of its most confident
/// caption. Edges between the same ordered node pair are collapsed onto the
/// most confident one. Captions without a subject, predicate or object span
/// are skipped.
pub fn build_caption_graph(image_id: u64, preds: &[PredictionRecord], merge_iou: f64) -> CaptionGraph {
    let mut order: Vec<&PredictionRecord> = preds.iter().filter(|p| p.image_id == image_id).collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut g = CaptionGraph {
        image_id,
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    for p in order {
        let spans = [PosTag::Subj, PosTag::Pred, PosTag::Obj].map(|t| p.span(t).join(" "));
        if let Some(missing) = spans.iter().position(String::is_empty) {
            log::warn!(
                "caption `{}` has no {} span; skipped",
                p.caption,
                PosTag::ALL[missing].as_str()
            );
            continue;
        }
        let [subject, predicate, object] = spans;
        let s = g.node_for(p.subject_box, subject, merge_iou);
        let o = g.node_for(p.object_box, object, merge_iou);
        if g.edges.iter().any(|e| e.source == s && e.target == o) {
            continue;
        }
        g.edges.push(GraphEdge {
            source: s,
            target: o,
            predicate,
            confidence: p.confidence,
        });
    }
    g
}
