//! Logo recognition engine.
//!
//! Class-agnostic detection geometry, soft-mask attention pooling, the
//! weight-transfer function, the stage losses, and an IVF-PQ instance
//! retrieval index, plus dataset tooling and COCO-style evaluation.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod attention;
pub mod losses;
pub mod transfer;
pub mod ann;
pub mod embed;
pub mod eval;
pub mod pipeline;

pub use error::{Error, Result};
