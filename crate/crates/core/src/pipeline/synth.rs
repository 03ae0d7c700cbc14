//! Procedural logo dataset for end-to-end tests.
//!
//! Every logo is a fixed random texture (a few oriented sinusoids plus hard
//! edged discs) seeded only by the dataset seed and the logo id, so separate
//! batches with disjoint brand ranges draw the same pattern for a given logo.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ann::derive_seed;
use crate::dataset::{write_annotations, ImageRecord, InstanceAnnotation, LabelTriple, Taxonomy};
use crate::embed::GrayRaster;
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_brands: u32,
    pub instances_per_brand: u32,
    pub logos_per_brand: u32,
    /// Brand ids are `first_brand..first_brand + num_brands`.
    pub first_brand: u32,
    pub num_types: u32,
    pub image_size: u32,
    pub max_instances_per_image: u32,
    /// Instance area as a percentage of image area is drawn uniformly from
    /// `mean_scale_percent +- scale_spread_percent`.
    pub mean_scale_percent: f64,
    pub scale_spread_percent: f64,
    pub empty_images: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_brands: 10,
            instances_per_brand: 10,
            logos_per_brand: 1,
            first_brand: 0,
            num_types: 4,
            image_size: 256,
            max_instances_per_image: 4,
            mean_scale_percent: 1.2,
            scale_spread_percent: 0.6,
            empty_images: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub records: Vec<ImageRecord>,
    pub taxonomy: Taxonomy,
    pub images: Vec<GrayRaster>,
}

impl SynthDataset {
    pub fn num_instances(&self) -> usize {
        self.records.iter().map(|r| r.annotations.len()).sum()
    }

    pub fn image(&self, image_id: &str) -> Option<&GrayRaster> {
        self.records
            .iter()
            .position(|r| r.image_id == image_id)
            .map(|i| &self.images[i])
    }
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

struct Disc {
    cx: f64,
    cy: f64,
    r: f64,
    value: f64,
}

/// Fixed texture on the unit square for one logo.
pub struct LogoPattern {
    waves: Vec<Wave>,
    discs: Vec<Disc>,
}

impl LogoPattern {
    pub fn new(seed: u64, logo_id: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4c4f_474f_0000_0000 | logo_id as u64));
        let waves = (0..4)
            .map(|_| {
                let angle = rng.random_range(0.0..TAU);
                let freq = rng.random_range(1.0..3.5);
                Wave {
                    fx: freq * angle.cos(),
                    fy: freq * angle.sin(),
                    phase: rng.random_range(0.0..TAU),
                    amp: rng.random_range(0.5..1.0),
                }
            })
            .collect();
        let discs = (0..3)
            .map(|_| Disc {
                cx: rng.random_range(0.15..0.85),
                cy: rng.random_range(0.15..0.85),
                r: rng.random_range(0.08..0.22),
                value: if rng.random_bool(0.5) { 0.95 } else { 0.05 },
            })
            .collect();
        Self { waves, discs }
    }

    /// Intensity in `[0, 1]` at unit-square coordinates.
    pub fn value(&self, u: f64, v: f64) -> f64 {
        for d in &self.discs {
            if (u - d.cx).powi(2) + (v - d.cy).powi(2) <= d.r * d.r {
                return d.value;
            }
        }
        let total: f64 = self.waves.iter().map(|w| w.amp).sum();
        let s: f64 = self
            .waves
            .iter()
            .map(|w| w.amp * (TAU * (w.fx * u + w.fy * v) + w.phase).sin())
            .sum();
        0.5 + 0.4 * s / total
    }
}

fn render_background(rng: &mut ChaCha8Rng, size: usize) -> GrayRaster {
    let base = rng.random_range(0.3..0.7);
    let gx = rng.random_range(-0.1..0.1);
    let gy = rng.random_range(-0.1..0.1);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let v = base + gx * x as f64 / size as f64 + gy * y as f64 / size as f64 + rng.random_range(-0.03..0.03);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    GrayRaster::new(size, size, data).expect("non-empty raster")
}

fn paint(image: &mut GrayRaster, b: &BBox, pattern: &LogoPattern) {
    let (x0, y0) = (b.x1 as usize, b.y1 as usize);
    let (x1, y1) = (b.x2 as usize, b.y2 as usize);
    for py in y0..y1 {
        let v = (py as f64 + 0.5 - b.y1) / b.height();
        for px in x0..x1 {
            let u = (px as f64 + 0.5 - b.x1) / b.width();
            image.set(px, py, pattern.value(u, v) as f32);
        }
    }
}

/// Integer box of the requested area fraction and aspect ratio.
fn sample_box(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> (f64, f64) {
    let size = cfg.image_size as f64;
    let lo = (cfg.mean_scale_percent - cfg.scale_spread_percent).max(0.01);
    let hi = cfg.mean_scale_percent + cfg.scale_spread_percent;
    let frac = rng.random_range(lo..=hi) / 100.0;
    let aspect: f64 = rng.random_range(0.8..=1.25);
    let area = frac * size * size;
    let w = (area / aspect).sqrt().round().clamp(4.0, size);
    let h = (area * aspect).sqrt().round().clamp(4.0, size);
    (w, h)
}

/// Renders the dataset in memory. Deterministic for a given config.
pub fn synthesize(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.num_brands == 0 || cfg.instances_per_brand == 0 || cfg.logos_per_brand == 0 || cfg.num_types == 0 {
        return Err(Error::invalid("brand, instance, logo and type counts must all be at least 1"));
    }
    if cfg.max_instances_per_image == 0 || cfg.image_size < 32 {
        return Err(Error::invalid("images must hold at least one instance and be 32 px or larger"));
    }
    if !(cfg.mean_scale_percent > 0.0 && cfg.mean_scale_percent + cfg.scale_spread_percent < 25.0) {
        return Err(Error::invalid("mean scale must lie in (0, 25) percent"));
    }
    let mut taxonomy = Taxonomy::new();
    let mut instances: Vec<LabelTriple> = Vec::new();
    for brand in cfg.first_brand..cfg.first_brand + cfg.num_brands {
        let type_id = brand % cfg.num_types;
        taxonomy.insert_brand(brand, type_id)?;
        taxonomy.set_name(crate::dataset::Level::Brand, brand, format!("brand_{brand}"));
        for l in 0..cfg.logos_per_brand {
            taxonomy.insert_logo(brand * cfg.logos_per_brand + l, brand)?;
        }
        for i in 0..cfg.instances_per_brand {
            let logo = brand * cfg.logos_per_brand + i % cfg.logos_per_brand;
            instances.push(LabelTriple::new(type_id, brand, logo));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, cfg.first_brand as u64));
    instances.shuffle(&mut rng);

    let size = cfg.image_size as usize;
    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut patterns = std::collections::HashMap::new();
    let mut pending = instances.into_iter().peekable();
    let mut image_idx = 0u32;
    while pending.peek().is_some() || image_idx < cfg.empty_images {
        let id = format!("img_{:04}_{:05}", cfg.first_brand, image_idx);
        let mut image = render_background(&mut rng, size);
        let mut rec = ImageRecord::new(id, cfg.image_size, cfg.image_size);
        let wanted = if image_idx < cfg.empty_images {
            0
        } else {
            rng.random_range(1..=cfg.max_instances_per_image)
        };
        let mut placed: Vec<BBox> = Vec::new();
        for _ in 0..wanted {
            let Some(&label) = pending.peek() else { break };
            let (w, h) = sample_box(&mut rng, cfg);
            let mut spot = None;
            for _ in 0..50 {
                let x = rng.random_range(0..=(size - w as usize)) as f64;
                let y = rng.random_range(0..=(size - h as usize)) as f64;
                let b = BBox::from_xywh(x, y, w, h);
                let grown = BBox::new(b.x1 - 2.0, b.y1 - 2.0, b.x2 + 2.0, b.y2 + 2.0);
                if placed.iter().all(|p| p.intersection_area(&grown) == 0.0) {
                    spot = Some(b);
                    break;
                }
            }
            let Some(b) = spot else { break };
            pending.next();
            let pattern = patterns
                .entry(label.logo_id)
                .or_insert_with(|| LogoPattern::new(cfg.seed, label.logo_id));
            paint(&mut image, &b, pattern);
            placed.push(b);
            rec.annotations.push(InstanceAnnotation::new(b.x1, b.y1, w, h, label));
        }
        records.push(rec);
        images.push(image);
        image_idx += 1;
    }
    Ok(SynthDataset {
        records,
        taxonomy,
        images,
    })
}

/// Writes `images/<image_id>.pgm`, `annotations.txt` and `taxonomy.txt`
/// under `dir`.
pub fn generate_synthetic_dataset(dir: &Path, cfg: &SynthConfig) -> Result<SynthDataset> {
    let data = synthesize(cfg)?;
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    for (rec, img) in data.records.iter().zip(&data.images) {
        img.save_pgm(&image_dir.join(format!("{}.pgm", rec.image_id)))?;
    }
    write_annotations(&dir.join("annotations.txt"), &data.records)?;
    data.taxonomy.save(&dir.join("taxonomy.txt"))?;
    info!(
        "synthesized {} images with {} instances in {}",
        data.records.len(),
        data.num_instances(),
        dir.display()
    );
    Ok(data)
}
