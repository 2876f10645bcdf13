//! Dense relational captioning.
//!
//! Every ordered pair of detected regions gets its own caption. Regions are
//! encoded by a shared encoder (optionally refined by a relational embedding
//! module over all regions of the image), decoded by a triple-stream LSTM with
//! a joint word / part-of-speech head, and scored with relational detection
//! metrics.

pub mod applications;
pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type BoundingBox = geometry::BoundingBox<f64>;
pub type RegionProposal = geometry::RegionProposal<f64>;
pub type RegionPair = geometry::RegionPair<f64>;
pub type GeometricFeature = geometry::GeometricFeature<f64>;
pub type ParamStore = autodiff::ParamStore<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type Model = model::Model<f64>;
