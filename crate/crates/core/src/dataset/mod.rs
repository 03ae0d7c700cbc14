//! Annotations in the three-level type/brand/logo label scheme.
//!
//! Boxes are stored as `(x, y, width, height)` with a top-left origin; the
//! geometry and evaluation modules use corner-form [`BBox`] and convert via
//! [`InstanceAnnotation::bbox`].

mod annotations;
mod qc;
mod split;
mod stats;
mod taxonomy;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

pub use annotations::{format_annotations, load_annotations, parse_annotations, write_annotations, LineError, LoadReport};
pub use qc::{qc_consensus, QcOutcome};
pub use split::balanced_test_split;
pub use stats::{dataset_stats, DatasetStats};
pub use taxonomy::{LabelTriple, Level, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub label: LabelTriple,
}

impl InstanceAnnotation {
    pub fn new(x: f64, y: f64, width: f64, height: f64, label: LabelTriple) -> Self {
        Self {
            x,
            y,
            width,
            height,
            label,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_xywh(self.x, self.y, self.width, self.height)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<InstanceAnnotation>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            annotations: Vec::new(),
        }
    }

    pub fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }
}
