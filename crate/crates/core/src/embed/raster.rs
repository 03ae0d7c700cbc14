use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("raster must be non-empty"));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at continuous pixel coordinates, where pixel `(i, j)`
    /// has its centre at `(i + 0.5, j + 0.5)`. Clamps at the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let g = |x, y| self.get(x, y) as f64;
        let top = g(x0, y0) * (1.0 - tx) + g(x1, y0) * tx;
        let bottom = g(x0, y1) * (1.0 - tx) + g(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Reads a binary or ASCII PGM/PPM file. Colour is reduced to luma.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()?
            .into_luma8();
        Ok(Self::from_luma(&img))
    }

    pub fn from_luma(img: &GrayImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        }
    }

    pub fn to_luma(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize).clamp(0.0, 1.0);
            Luma([(v * 255.0).round() as u8])
        })
    }

    /// Writes an 8-bit binary PGM.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        self.to_luma()
            .save_with_format(path, image::ImageFormat::Pnm)
            .map_err(Error::from)
    }
}

/// Square grayscale crop resampled to a fixed side length.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPatch {
    size: usize,
    values: Vec<f64>,
}

pub const DEFAULT_PATCH_SIZE: usize = 64;

impl RoiPatch {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid("patch side must be at least 2"));
        }
        if values.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("patch values must be finite and non-negative"));
        }
        Ok(Self { size, values })
    }

    /// Bilinearly resamples the part of `image` under `bbox`. The box is
    /// clipped to the image first.
    pub fn crop(image: &GrayRaster, bbox: &BBox, size: usize) -> Result<Self> {
        let b = bbox.clip(image.width() as f64, image.height() as f64);
        if !b.is_proper() {
            return Err(Error::invalid(format!("crop box {bbox:?} has no area inside the image")));
        }
        let sx = b.width() / size as f64;
        let sy = b.height() / size as f64;
        let mut values = Vec::with_capacity(size * size);
        for j in 0..size {
            let y = b.y1 + (j as f64 + 0.5) * sy;
            for i in 0..size {
                values.push(image.sample(b.x1 + (i as f64 + 0.5) * sx, y));
            }
        }
        Self::new(size, values)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.size + x]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.size, self.values.iter().map(|v| v * factor).collect())
    }
}
