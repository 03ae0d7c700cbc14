//! Box geometry: corner-form boxes, IoU, anchor grids over pyramid levels,
//! R-CNN style delta parameterization, anchor refinement and NMS.

mod anchors;
mod bbox;
mod nms;

pub use anchors::{
    decode_deltas, encode_deltas, generate_anchors, refine_anchors, AnchorGrid, AnchorLevel,
    BoxDeltas, RefinedAnchor, DEFAULT_NEGATIVE_THRESHOLD, MAX_LOG_SCALE,
};
pub use bbox::{iou, BBox};
pub use nms::nms;
