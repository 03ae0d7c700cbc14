use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{Error, Result};

/// Upper bound on `tw`/`th` before exponentiation.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Anchors whose background probability exceeds this are discarded.
pub const DEFAULT_NEGATIVE_THRESHOLD: f64 = 0.99;

/// One pyramid level. `scales` are anchor side lengths in pixels for
/// aspect ratio 1; `aspect_ratios` are height / width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLevel {
    pub stride: u32,
    pub scales: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub image_width: u32,
    pub image_height: u32,
    pub levels: Vec<AnchorLevel>,
}

impl AnchorGrid {
    pub fn new(image_width: u32, image_height: u32, levels: Vec<AnchorLevel>) -> Result<Self> {
        if image_width == 0 || image_height == 0 {
            return Err(Error::invalid("anchor grid image size must be positive"));
        }
        if levels.is_empty() {
            return Err(Error::invalid("anchor grid needs at least one level"));
        }
        for (i, level) in levels.iter().enumerate() {
            if level.stride == 0 {
                return Err(Error::invalid(format!("level {i}: stride must be positive")));
            }
            if i > 0 && level.stride <= levels[i - 1].stride {
                return Err(Error::invalid(format!(
                    "level {i}: strides must be strictly increasing ({} after {})",
                    level.stride,
                    levels[i - 1].stride
                )));
            }
            if level.scales.is_empty() || level.aspect_ratios.is_empty() {
                return Err(Error::invalid(format!("level {i}: empty scales or ratios")));
            }
            let positive = |v: &f64| v.is_finite() && *v > 0.0;
            if !level.scales.iter().all(positive) || !level.aspect_ratios.iter().all(positive) {
                return Err(Error::invalid(format!(
                    "level {i}: scales and ratios must be positive"
                )));
            }
        }
        Ok(Self {
            image_width,
            image_height,
            levels,
        })
    }

    /// Four-level pyramid at strides 8/16/32/64 with one anchor of side
    /// 4 x stride per cell and ratios {1/2, 1, 2}.
    pub fn pyramid(image_width: u32, image_height: u32) -> Self {
        let levels = [8u32, 16, 32, 64]
            .iter()
            .map(|&stride| AnchorLevel {
                stride,
                scales: vec![4.0 * stride as f64],
                aspect_ratios: vec![0.5, 1.0, 2.0],
            })
            .collect();
        Self::new(image_width, image_height, levels).expect("static pyramid is valid")
    }

    pub fn cells(&self, level: &AnchorLevel) -> (u32, u32) {
        (
            self.image_width.div_ceil(level.stride),
            self.image_height.div_ceil(level.stride),
        )
    }

    pub fn anchor_count(&self) -> usize {
        self.levels
            .iter()
            .map(|l| {
                let (cx, cy) = self.cells(l);
                cx as usize * cy as usize * l.scales.len() * l.aspect_ratios.len()
            })
            .sum()
    }
}

/// Anchors for every level, ordered row-major over cells, then scale, then
/// ratio. Ratio changes keep the anchor area fixed.
pub fn generate_anchors(grid: &AnchorGrid) -> Vec<Vec<BBox>> {
    grid.levels
        .iter()
        .map(|level| {
            let (nx, ny) = grid.cells(level);
            let stride = level.stride as f64;
            let mut out = Vec::with_capacity(
                nx as usize * ny as usize * level.scales.len() * level.aspect_ratios.len(),
            );
            for row in 0..ny {
                let cy = (row as f64 + 0.5) * stride;
                for col in 0..nx {
                    let cx = (col as f64 + 0.5) * stride;
                    for &scale in &level.scales {
                        for &ratio in &level.aspect_ratios {
                            let r = ratio.sqrt();
                            out.push(BBox::from_center(cx, cy, scale / r, scale * r));
                        }
                    }
                }
            }
            out
        })
        .collect()
}

/// Regression targets `(tx, ty, tw, th)` relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDeltas {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDeltas {
    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self { dx, dy, dw, dh }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }
}

pub fn encode_deltas(anchor: &BBox, target: &BBox) -> Result<BoxDeltas> {
    if !anchor.is_proper() {
        return Err(Error::invalid(format!("anchor has non-positive size: {anchor:?}")));
    }
    if !target.is_proper() {
        return Err(Error::invalid(format!("target has non-positive size: {target:?}")));
    }
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok(BoxDeltas {
        dx: (tcx - acx) / aw,
        dy: (tcy - acy) / ah,
        dw: (target.width() / aw).ln(),
        dh: (target.height() / ah).ln(),
    })
}

pub fn decode_deltas(anchor: &BBox, deltas: &BoxDeltas) -> BBox {
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = acx + deltas.dx * aw;
    let cy = acy + deltas.dy * ah;
    let w = aw * deltas.dw.min(MAX_LOG_SCALE).exp();
    let h = ah * deltas.dh.min(MAX_LOG_SCALE).exp();
    BBox::from_center(cx, cy, w, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedAnchor {
    /// Position in the input anchor list.
    pub index: usize,
    pub bbox: BBox,
    pub objectness: f64,
    pub deltas_applied: bool,
}

/// Discards anchors whose background probability `1 - objectness` exceeds
/// `negative_threshold`, then applies the coarse deltas to the survivors and
/// clips them to the image. Input order is preserved.
pub fn refine_anchors(
    anchors: &[BBox],
    objectness: &[f64],
    deltas: &[BoxDeltas],
    negative_threshold: f64,
    image_size: (f64, f64),
) -> Result<Vec<RefinedAnchor>> {
    if anchors.len() != objectness.len() || anchors.len() != deltas.len() {
        return Err(Error::invalid(format!(
            "refine_anchors length mismatch: {} anchors, {} scores, {} deltas",
            anchors.len(),
            objectness.len(),
            deltas.len()
        )));
    }
    if !(negative_threshold > 0.0 && negative_threshold < 1.0) {
        return Err(Error::invalid(format!(
            "negative threshold must lie in (0,1), got {negative_threshold}"
        )));
    }
    let (w, h) = image_size;
    Ok(anchors
        .iter()
        .zip(objectness)
        .zip(deltas)
        .enumerate()
        .filter(|(_, ((_, &p), _))| 1.0 - p.clamp(0.0, 1.0) <= negative_threshold)
        .map(|(index, ((anchor, &p), d))| RefinedAnchor {
            index,
            bbox: decode_deltas(anchor, d).clip(w, h),
            objectness: p.clamp(0.0, 1.0),
            deltas_applied: true,
        })
        .collect())
}
