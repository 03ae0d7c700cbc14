//! Soft-mask attention over RoI feature maps.
//!
//! Masks are class-agnostic (one channel per region) and must already be
//! squashed into `[0, 1]`; no sigmoid is applied here.

use std::path::Path;

use ndarray::{Array2, Array4, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Default heatmap side length.
pub const DEFAULT_MASK_SIZE: usize = 28;

/// RoI features of shape `(regions, channels, m, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiFeatures {
    values: Array4<f64>,
}

impl RoiFeatures {
    pub fn new(values: Array4<f64>) -> Result<Self> {
        let (_, _, h, w) = values.dim();
        if h != w {
            return Err(Error::invalid(format!("RoI features must be square, got {h}x{w}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("RoI features contain non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.values
    }

    pub fn regions(&self) -> usize {
        self.values.dim().0
    }

    pub fn channels(&self) -> usize {
        self.values.dim().1
    }

    pub fn size(&self) -> usize {
        self.values.dim().2
    }
}

/// Heatmaps of shape `(regions, 1, m, m)` with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMaskStack {
    values: Array4<f64>,
}

impl SoftMaskStack {
    pub fn new(values: Array4<f64>) -> Result<Self> {
        let (_, k, h, w) = values.dim();
        if k != 1 {
            return Err(Error::invalid(format!(
                "soft masks are class-agnostic: expected 1 mask per region, got {k}"
            )));
        }
        if h != w {
            return Err(Error::invalid(format!("soft masks must be square, got {h}x{w}")));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("soft mask entries must lie in [0, 1]"));
        }
        Ok(Self { values })
    }

    pub fn uniform(regions: usize, size: usize, value: f64) -> Result<Self> {
        Self::new(Array4::from_elem((regions, 1, size, size), value))
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn regions(&self) -> usize {
        self.values.dim().0
    }

    pub fn size(&self) -> usize {
        self.values.dim().2
    }

    pub fn mask(&self, region: usize) -> ArrayView2<'_, f64> {
        self.values
            .index_axis(Axis(0), region)
            .index_axis_move(Axis(0), 0)
    }
}

fn check_shapes(feat: &RoiFeatures, masks: &SoftMaskStack) -> Result<()> {
    if feat.regions() != masks.regions() {
        return Err(Error::DimensionMismatch {
            expected: feat.regions(),
            got: masks.regions(),
        });
    }
    if feat.size() != masks.size() {
        return Err(Error::DimensionMismatch {
            expected: feat.size(),
            got: masks.size(),
        });
    }
    Ok(())
}

/// `out[r,c,i,j] = feat[r,c,i,j] * mask[r,0,i,j]`.
pub fn gate_features(feat: &RoiFeatures, masks: &SoftMaskStack) -> Result<RoiFeatures> {
    check_shapes(feat, masks)?;
    let mut out = feat.values.clone();
    for (mut region, mask) in out
        .axis_iter_mut(Axis(0))
        .zip(masks.values.axis_iter(Axis(0)))
    {
        let mask = mask.index_axis(Axis(0), 0);
        for mut channel in region.axis_iter_mut(Axis(0)) {
            channel *= &mask;
        }
    }
    Ok(RoiFeatures { values: out })
}

/// Mask-weighted spatial average per region and channel, shape
/// `(regions, channels)`.
pub fn pool_features(feat: &RoiFeatures, masks: &SoftMaskStack) -> Result<Array2<f64>> {
    check_shapes(feat, masks)?;
    let mut out = Array2::zeros((feat.regions(), feat.channels()));
    for (r, (region, mut row)) in feat
        .values
        .axis_iter(Axis(0))
        .zip(out.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        let mask = masks.mask(r);
        let total = mask.sum();
        if total <= 0.0 {
            return Err(Error::EmptyMask { region: r });
        }
        for (channel, slot) in region.axis_iter(Axis(0)).zip(row.iter_mut()) {
            let mut acc = 0.0;
            Zip::from(&channel).and(&mask).for_each(|&f, &m| acc += f * m);
            *slot = acc / total;
        }
    }
    Ok(out)
}

/// Places a mask into image coordinates: bilinear resampling (pixel-centre
/// aligned, edge-clamped) over the pixels whose centres fall inside `bbox`;
/// everything else is 0. Output shape is `(height, width)`.
pub fn heatmap_overlay(
    mask: ArrayView2<'_, f64>,
    bbox: &BBox,
    image_size: (u32, u32),
) -> Result<Array2<f64>> {
    if !bbox.is_proper() {
        return Err(Error::invalid(format!("degenerate overlay box {bbox:?}")));
    }
    let (mh, mw) = mask.dim();
    if mh == 0 || mw == 0 {
        return Err(Error::invalid("empty mask"));
    }
    let (width, height) = image_size;
    let mut out = Array2::zeros((height as usize, width as usize));
    let sample = |u: f64, v: f64| -> f64 {
        let u = u.clamp(0.0, (mw - 1) as f64);
        let v = v.clamp(0.0, (mh - 1) as f64);
        let (u0, v0) = (u.floor() as usize, v.floor() as usize);
        let (u1, v1) = ((u0 + 1).min(mw - 1), (v0 + 1).min(mh - 1));
        let (fu, fv) = (u - u0 as f64, v - v0 as f64);
        let top = mask[[v0, u0]] * (1.0 - fu) + mask[[v0, u1]] * fu;
        let bottom = mask[[v1, u0]] * (1.0 - fu) + mask[[v1, u1]] * fu;
        top * (1.0 - fv) + bottom * fv
    };
    let sx = mw as f64 / bbox.width();
    let sy = mh as f64 / bbox.height();
    for (py, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let cy = py as f64 + 0.5;
        if cy < bbox.y1 || cy >= bbox.y2 {
            continue;
        }
        let v = (cy - bbox.y1) * sy - 0.5;
        for (px, slot) in row.iter_mut().enumerate() {
            let cx = px as f64 + 0.5;
            if cx < bbox.x1 || cx >= bbox.x2 {
                continue;
            }
            *slot = sample((cx - bbox.x1) * sx - 0.5, v);
        }
    }
    Ok(out)
}

/// Writes a `[0, 1]` heatmap as an 8-bit binary PGM.
pub fn write_heatmap_pgm(path: &Path, heatmap: &Array2<f64>) -> Result<()> {
    let (h, w) = heatmap.dim();
    let pixels: Vec<u8> = heatmap
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| Error::invalid("heatmap buffer size mismatch"))?;
    img.save_with_format(path, image::ImageFormat::Pnm)?;
    Ok(())
}
