//! Consumers of caption predictions: caption graphs and sentence retrieval.

pub mod graph;
pub mod retrieval;

pub use graph::{build_caption_graph, CaptionGraph, GraphEdge, GraphNode, NODE_MERGE_IOU};
pub use retrieval::{retrieval_eval, RetrievalHit, RetrievalIndex, RetrievalProtocol, RetrievalReport};
