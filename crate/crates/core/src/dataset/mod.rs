//! Dataset records, vocabulary, the synthetic toy world and attribute enrichment.

pub mod enrich;
pub mod record;
pub mod toy;
pub mod vocab;

use crate::geometry::BoundingBox;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use record::RelationalRecord;

/// Produces a fixed-width region descriptor for any box of an image.
pub trait FeatureProvider {
    fn dim(&self) -> usize;

    fn feature(&self, record: &RelationalRecord, bbox: &BoundingBox<f64>) -> Vec<f64>;

    /// One row per box.
    fn features<T: Scalar>(&self, record: &RelationalRecord, boxes: &[BoundingBox<f64>]) -> Tensor<T>
    where
        Self: Sized,
    {
        let d = self.dim();
        let mut data = Vec::with_capacity(boxes.len() * d);
        for b in boxes {
            data.extend(self.feature(record, b).into_iter().map(T::lit));
        }
        Tensor::matrix(boxes.len(), d, data).expect("feature width matches dim()")
    }
}

/// Serializable choice of feature provider, stored next to datasets and in
/// checkpoints.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSpec {
    Toy(toy::ToyProvider),
}

impl FeatureProvider for ProviderSpec {
    fn dim(&self) -> usize {
        match self {
            ProviderSpec::Toy(p) => p.dim(),
        }
    }

    fn feature(&self, record: &RelationalRecord, bbox: &BoundingBox<f64>) -> Vec<f64> {
        match self {
            ProviderSpec::Toy(p) => p.feature(record, bbox),
        }
    }
}
