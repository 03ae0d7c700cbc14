//! Gallery embedding, index sidecars and nearest-neighbour recognition.
//!
//! An index file `<index>` travels with two sidecars: `<index>.labels`
//! (`id,image_id,x,y,w,h,type_id,brand_id,logo_id` per indexed vector) and
//! `<index>.taxonomy`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::{read_index, training_runs, write_index, BuildReport, IvfPqIndex, Neighbor};
use crate::dataset::{ImageRecord, LabelTriple, Taxonomy};
use crate::embed::{Embedder, GrayRaster, RoiPatch};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub image_id: String,
    pub bbox: BBox,
    pub label: LabelTriple,
}

pub fn labels_path(index: &Path) -> PathBuf {
    sidecar(index, "labels")
}

pub fn taxonomy_path(index: &Path) -> PathBuf {
    sidecar(index, "taxonomy")
}

fn sidecar(index: &Path, ext: &str) -> PathBuf {
    let mut s = index.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn write_labels(path: &Path, labels: &BTreeMap<u64, GalleryEntry>) -> Result<()> {
    let mut s = String::new();
    for (id, e) in labels {
        let (x, y, w, h) = e.bbox.to_xywh();
        let _ = writeln!(
            s,
            "{id},{},{x:?},{y:?},{w:?},{h:?},{},{},{}",
            e.image_id, e.label.type_id, e.label.brand_id, e.label.logo_id
        );
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<u64, GalleryEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(err("expected 9 fields"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| err("bad number"));
        let int = |i: usize| f[i].parse::<u32>().map_err(|_| err("bad id"));
        let id: u64 = f[0].parse().map_err(|_| err("bad vector id"))?;
        let entry = GalleryEntry {
            image_id: f[1].to_string(),
            bbox: BBox::from_xywh(num(2)?, num(3)?, num(4)?, num(5)?),
            label: LabelTriple::new(int(6)?, int(7)?, int(8)?),
        };
        if out.insert(id, entry).is_some() {
            return Err(err("duplicate vector id"));
        }
    }
    Ok(out)
}

/// `<dir>/<image_id>.pgm`, falling back to `.ppm`.
pub fn image_path(dir: &Path, image_id: &str) -> PathBuf {
    let pgm = dir.join(format!("{image_id}.pgm"));
    if pgm.exists() {
        return pgm;
    }
    let ppm = dir.join(format!("{image_id}.ppm"));
    if ppm.exists() {
        ppm
    } else {
        pgm
    }
}

/// Embeds every annotated instance, in record order then annotation order.
/// Work runs in parallel; the output order never depends on scheduling.
pub fn embed_records<E: Embedder>(
    records: &[ImageRecord],
    image_dir: &Path,
    embedder: &E,
) -> Result<(Vec<f32>, Vec<GalleryEntry>)> {
    let per_image: Vec<Result<Vec<(Vec<f32>, GalleryEntry)>>> = records
        .par_iter()
        .filter(|r| !r.annotations.is_empty())
        .map(|r| {
            let image = GrayRaster::load(&image_path(image_dir, &r.image_id))?;
            r.annotations
                .iter()
                .map(|a| {
                    let patch = RoiPatch::crop(&image, &a.bbox(), embedder.patch_size())?;
                    let emb = embedder.embed(&patch)?;
                    if emb.is_zero() {
                        warn!("instance on `{}` has a constant crop; indexed as zero vector", r.image_id);
                    }
                    Ok((
                        emb.to_f32(),
                        GalleryEntry {
                            image_id: r.image_id.clone(),
                            bbox: a.bbox(),
                            label: a.label,
                        },
                    ))
                })
                .collect()
        })
        .collect();
    let mut vectors = Vec::new();
    let mut entries = Vec::new();
    for item in per_image {
        for (v, e) in item? {
            vectors.extend_from_slice(&v);
            entries.push(e);
        }
    }
    Ok((vectors, entries))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildSummary {
    pub count: usize,
    pub report: BuildReport,
}

/// Embeds the gallery, trains and fills the index, and writes it with its
/// sidecars. Ids are assigned `0..n` in gallery order.
pub fn build_gallery_index<E: Embedder>(
    records: &[ImageRecord],
    image_dir: &Path,
    taxonomy: &Taxonomy,
    embedder: &E,
    params: &crate::ann::IvfParams,
    index_path: &Path,
) -> Result<BuildSummary> {
    let (vectors, entries) = embed_records(records, image_dir, embedder)?;
    if entries.is_empty() {
        return Err(Error::NotEnoughData {
            required: params.nlist.max(params.ksub),
            got: 0,
        });
    }
    let (index, report) = IvfPqIndex::build(&vectors, embedder.dims(), params)?;
    write_index(&index, index_path)?;
    let labels: BTreeMap<u64, GalleryEntry> = entries.into_iter().enumerate().map(|(i, e)| (i as u64, e)).collect();
    write_labels(&labels_path(index_path), &labels)?;
    taxonomy.save(&taxonomy_path(index_path))?;
    info!("indexed {} instances into {}", index.len(), index_path.display());
    Ok(BuildSummary {
        count: index.len(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AddSummary {
    pub added: usize,
    pub count: usize,
    pub codebook_retrained: bool,
}

/// Appends new exemplars to an existing index using its frozen quantizers.
/// New labels are merged into the stored taxonomy.
pub fn add_to_gallery_index<E: Embedder>(
    records: &[ImageRecord],
    image_dir: &Path,
    new_taxonomy: &Taxonomy,
    embedder: &E,
    index_path: &Path,
) -> Result<AddSummary> {
    let runs_before = training_runs();
    let mut gallery = Gallery::open(index_path)?;
    gallery.taxonomy.merge(new_taxonomy)?;
    for r in records {
        for a in &r.annotations {
            gallery.taxonomy.check(&a.label)?;
        }
    }
    if gallery.index.dim() != embedder.dims() {
        return Err(Error::DimensionMismatch {
            expected: gallery.index.dim(),
            got: embedder.dims(),
        });
    }
    let (vectors, entries) = embed_records(records, image_dir, embedder)?;
    let mut next = gallery.labels.keys().next_back().map_or(0, |k| k + 1);
    let added = entries.len();
    for (v, e) in vectors.chunks_exact(embedder.dims()).zip(entries) {
        gallery.index.add(next, v)?;
        gallery.labels.insert(next, e);
        next += 1;
    }
    write_index(&gallery.index, index_path)?;
    write_labels(&labels_path(index_path), &gallery.labels)?;
    gallery.taxonomy.save(&taxonomy_path(index_path))?;
    Ok(AddSummary {
        added,
        count: gallery.index.len(),
        codebook_retrained: training_runs() != runs_before,
    })
}

/// An index loaded together with its sidecars.
#[derive(Debug, Clone)]
pub struct Gallery {
    pub index: IvfPqIndex,
    pub labels: BTreeMap<u64, GalleryEntry>,
    pub taxonomy: Taxonomy,
}

impl Gallery {
    pub fn open(index_path: &Path) -> Result<Self> {
        let index = read_index(index_path)?;
        let labels = read_labels(&labels_path(index_path))?;
        let taxonomy = Taxonomy::load(&taxonomy_path(index_path))?;
        for l in index.lists() {
            for id in &l.ids {
                if !labels.contains_key(id) {
                    return Err(Error::Format(format!("vector {id} has no entry in the labels sidecar")));
                }
            }
        }
        Ok(Self {
            index,
            labels,
            taxonomy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedNeighbor {
    pub id: u64,
    pub distance: f64,
    pub image_id: String,
    pub label: LabelTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionResult {
    pub query_id: String,
    pub neighbors: Vec<RankedNeighbor>,
    pub prediction: LabelTriple,
    /// Votes received by the predicted logo.
    pub votes: usize,
    pub warnings: Vec<String>,
}

impl RecognitionResult {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "query={}", self.query_id);
        let _ = writeln!(s, "logo_id={}", self.prediction.logo_id);
        let _ = writeln!(s, "brand_id={}", self.prediction.brand_id);
        let _ = writeln!(s, "type_id={}", self.prediction.type_id);
        let _ = writeln!(s, "votes={}", self.votes);
        for (rank, n) in self.neighbors.iter().enumerate() {
            let _ = writeln!(
                s,
                "neighbor.{rank}={},{:.6},{},{}",
                n.id, n.distance, n.image_id, n.label.logo_id
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning={w}");
        }
        s
    }
}

/// Majority vote over neighbour logo ids. Ties go to the logo of the nearest
/// neighbour among the tied ones. Returns `(logo_id, votes)`.
pub fn vote(logos: &[u32]) -> Option<(u32, usize)> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in logos {
        *counts.entry(l).or_default() += 1;
    }
    let best = *counts.values().max()?;
    logos
        .iter()
        .find(|l| counts[l] == best)
        .map(|&l| (l, best))
}

/// Loads a gallery once and answers crop queries against it.
pub struct Recognizer<E: Embedder> {
    gallery: Gallery,
    embedder: E,
    nprobe: usize,
}

impl<E: Embedder> Recognizer<E> {
    pub fn open(index_path: &Path, embedder: E, nprobe: usize) -> Result<Self> {
        Self::new(Gallery::open(index_path)?, embedder, nprobe)
    }

    pub fn new(gallery: Gallery, embedder: E, nprobe: usize) -> Result<Self> {
        if gallery.index.dim() != embedder.dims() {
            return Err(Error::DimensionMismatch {
                expected: gallery.index.dim(),
                got: embedder.dims(),
            });
        }
        if nprobe == 0 || nprobe > gallery.index.nlist() {
            return Err(Error::Config(format!(
                "nprobe must lie in 1..={}, got {nprobe}",
                gallery.index.nlist()
            )));
        }
        Ok(Self {
            gallery,
            embedder,
            nprobe,
        })
    }

    pub fn gallery(&self) -> &Gallery {
        &self.gallery
    }

    pub fn embed_crop(&self, image: &GrayRaster, bbox: &BBox) -> Result<Vec<f32>> {
        let patch = RoiPatch::crop(image, bbox, self.embedder.patch_size())?;
        Ok(self.embedder.embed(&patch)?.to_f32())
    }

    pub fn recognize(&self, query_id: &str, image: &GrayRaster, bbox: &BBox, k: usize) -> Result<RecognitionResult> {
        let v = self.embed_crop(image, bbox)?;
        self.recognize_vector(query_id, &v, k)
    }

    pub fn recognize_vector(&self, query_id: &str, vector: &[f32], k: usize) -> Result<RecognitionResult> {
        if self.gallery.index.is_empty() {
            return Err(Error::invalid("the index is empty"));
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut warnings = Vec::new();
        if k > self.gallery.index.len() {
            warnings.push(format!(
                "k={k} exceeds the {} indexed vectors; result truncated",
                self.gallery.index.len()
            ));
        }
        let result = self.gallery.index.search(vector, k, self.nprobe)?;
        let neighbors: Vec<RankedNeighbor> = result
            .neighbors
            .iter()
            .map(|&Neighbor { id, distance }| {
                let e = &self.gallery.labels[&id];
                RankedNeighbor {
                    id,
                    distance,
                    image_id: e.image_id.clone(),
                    label: e.label,
                }
            })
            .collect();
        let logos: Vec<u32> = neighbors.iter().map(|n| n.label.logo_id).collect();
        let Some((logo, votes)) = vote(&logos) else {
            return Err(Error::invalid("no neighbours found in the probed lists"));
        };
        let prediction = self
            .gallery
            .taxonomy
            .resolve(logo)
            .ok_or_else(|| Error::Taxonomy(format!("logo {logo} is missing from the gallery taxonomy")))?;
        Ok(RecognitionResult {
            query_id: query_id.to_string(),
            neighbors,
            prediction,
            votes,
            warnings,
        })
    }
}
