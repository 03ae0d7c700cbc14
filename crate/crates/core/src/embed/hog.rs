use std::f64::consts::TAU;

use super::raster::RoiPatch;
use super::{Embedder, Embedding};
use crate::error::{Error, Result};

/// Histogram of signed gradient orientations over a square grid of cells.
///
/// Gradients are central differences with replicated borders. Each pixel
/// votes its gradient magnitude into its cell, split linearly between the two
/// nearest orientation bins. The concatenated histograms are L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientHistogramEmbedder {
    pub patch_size: usize,
    pub grid_cells: usize,
    pub orientation_bins: usize,
}

impl Default for GradientHistogramEmbedder {
    fn default() -> Self {
        Self {
            patch_size: 64,
            grid_cells: 16,
            orientation_bins: 16,
        }
    }
}

impl GradientHistogramEmbedder {
    pub fn new(patch_size: usize, grid_cells: usize, orientation_bins: usize) -> Result<Self> {
        if grid_cells == 0 || orientation_bins == 0 || patch_size < 2 {
            return Err(Error::invalid("patch size, grid cells and orientation bins must be positive"));
        }
        if patch_size % grid_cells != 0 {
            return Err(Error::invalid(format!(
                "patch size {patch_size} is not a multiple of the grid {grid_cells}"
            )));
        }
        Ok(Self {
            patch_size,
            grid_cells,
            orientation_bins,
        })
    }

    /// Unnormalized histogram.
    pub fn histogram(&self, patch: &RoiPatch) -> Result<Vec<f64>> {
        let n = self.patch_size;
        if patch.size() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: patch.size(),
            });
        }
        let cell = n / self.grid_cells;
        let bins = self.orientation_bins;
        let mut hist = vec![0.0; self.dims()];
        for y in 0..n {
            let (ym, yp) = (y.saturating_sub(1), (y + 1).min(n - 1));
            for x in 0..n {
                let (xm, xp) = (x.saturating_sub(1), (x + 1).min(n - 1));
                let gx = patch.get(xp, y) - patch.get(xm, y);
                let gy = patch.get(x, yp) - patch.get(x, ym);
                let mag = gx.hypot(gy);
                if mag == 0.0 {
                    continue;
                }
                let angle = gy.atan2(gx).rem_euclid(TAU);
                let pos = angle / TAU * bins as f64 - 0.5;
                let lo = pos.floor();
                let frac = pos - lo;
                let b0 = (lo as i64).rem_euclid(bins as i64) as usize;
                let b1 = (b0 + 1) % bins;
                let base = ((y / cell) * self.grid_cells + x / cell) * bins;
                hist[base + b0] += mag * (1.0 - frac);
                hist[base + b1] += mag * frac;
            }
        }
        Ok(hist)
    }
}

impl Embedder for GradientHistogramEmbedder {
    fn dims(&self) -> usize {
        self.grid_cells * self.grid_cells * self.orientation_bins
    }

    fn patch_size(&self) -> usize {
        self.patch_size
    }

    fn embed(&self, patch: &RoiPatch) -> Result<Embedding> {
        Ok(Embedding::normalize(self.histogram(patch)?))
    }
}
