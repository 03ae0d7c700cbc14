//! Instance descriptors for retrieval.

mod hog;
mod project;
mod raster;

pub use hog::GradientHistogramEmbedder;
pub use project::{embed_with_attention, Projector};
pub use raster::{GrayRaster, RoiPatch, DEFAULT_PATCH_SIZE};

use crate::error::Result;

pub const DEFAULT_DIMS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    /// True when `values` has unit norm. False only for the zero vector.
    pub normalized: bool,
}

impl Embedding {
    /// Scales `values` to unit norm. A zero vector stays zero and is flagged.
    pub fn normalize(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            return Self {
                values,
                normalized: false,
            };
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Self {
            values,
            normalized: true,
        }
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        !self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// Maps a fixed-size patch to a fixed-length descriptor. Implementations
/// must be deterministic.
pub trait Embedder: Send + Sync {
    fn dims(&self) -> usize;
    fn patch_size(&self) -> usize;
    fn embed(&self, patch: &RoiPatch) -> Result<Embedding>;
}
