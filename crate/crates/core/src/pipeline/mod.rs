//! End-to-end commands: ingest, quality control, gallery indexing,
//! recognition, evaluation and synthetic data.

mod config;
mod gallery;
mod synth;

pub use config::{PipelineConfig, CONFIG_KEYS};
pub use gallery::{
    add_to_gallery_index, build_gallery_index, embed_records, image_path, labels_path, read_labels, taxonomy_path,
    vote, write_labels, AddSummary, BuildSummary, Gallery, GalleryEntry, RankedNeighbor, RecognitionResult,
    Recognizer,
};
pub use synth::{generate_synthetic_dataset, synthesize, LogoPattern, SynthConfig, SynthDataset};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{
    dataset_stats, load_annotations, qc_consensus, write_annotations, DatasetStats, ImageRecord, LoadReport,
    QcOutcome, Taxonomy,
};
use crate::embed::{GradientHistogramEmbedder, GrayRaster};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ground_truth_from_records, load_results, EvalReport};
use crate::geometry::BBox;

fn load_taxonomy(cfg: &PipelineConfig) -> Result<Taxonomy> {
    Taxonomy::load(cfg.require_path("taxonomy", &cfg.taxonomy)?)
}

fn load_records(cfg: &PipelineConfig, taxonomy: &Taxonomy) -> Result<LoadReport> {
    load_annotations(cfg.require_path("annotations", &cfg.annotations)?, taxonomy)
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub load: LoadReport,
    pub stats: Option<DatasetStats>,
}

impl IngestOutcome {
    pub fn is_clean(&self) -> bool {
        self.load.rejected.is_empty()
    }
}

/// Loads and validates the annotation file and summarizes it.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestOutcome> {
    let taxonomy = load_taxonomy(cfg)?;
    let load = load_records(cfg, &taxonomy)?;
    let stats = if load.records.is_empty() {
        None
    } else {
        Some(dataset_stats(&load.records)?)
    };
    Ok(IngestOutcome { load, stats })
}

#[derive(Debug, Clone)]
pub struct QcResult {
    /// Per image: the consensus outcome, or `None` when no annotator drew a box.
    pub outcomes: Vec<(String, Option<QcOutcome>)>,
    pub records: Vec<ImageRecord>,
    pub rejected: usize,
}

/// Merges three annotators' files by keeping, per image, the boxes of the
/// annotator that agrees best with the other two.
pub fn cmd_qc(inputs: [&Path; 3], taxonomy: &Taxonomy) -> Result<QcResult> {
    let mut loads = Vec::with_capacity(3);
    for p in inputs {
        loads.push(load_annotations(p, taxonomy)?);
    }
    let rejected = loads.iter().map(|l| l.rejected.len()).sum();
    let mut images: BTreeMap<String, [Option<&ImageRecord>; 3]> = BTreeMap::new();
    for (a, load) in loads.iter().enumerate() {
        for r in &load.records {
            images.entry(r.image_id.clone()).or_default()[a] = Some(r);
        }
    }
    let mut outcomes = Vec::new();
    let mut records = Vec::new();
    for (id, recs) in images {
        let first = recs.iter().flatten().next().expect("at least one annotator");
        let boxes = recs.map(|r| r.map_or(&[][..], |r| r.annotations.as_slice()));
        let outcome = if boxes.iter().all(|b| b.is_empty()) {
            None
        } else {
            Some(qc_consensus(boxes)?)
        };
        let mut rec = ImageRecord::new(id.clone(), first.width, first.height);
        if let Some(o) = &outcome {
            rec.annotations = boxes[o.chosen].to_vec();
        }
        outcomes.push((id, outcome));
        records.push(rec);
    }
    Ok(QcResult {
        outcomes,
        records,
        rejected,
    })
}

pub fn write_qc(path: &Path, result: &QcResult) -> Result<()> {
    write_annotations(path, &result.records)
}

pub fn cmd_build_index(cfg: &PipelineConfig) -> Result<BuildSummary> {
    cfg.validate()?;
    let taxonomy = load_taxonomy(cfg)?;
    let load = load_records(cfg, &taxonomy)?;
    let images = cfg.require_path("images", &cfg.images)?;
    let index = cfg.require_path("index", &cfg.index)?;
    build_gallery_index(&load.records, images, &taxonomy, &cfg.embedder()?, &cfg.ivf_params(), index)
}

/// Adds the instances of `annotations` (labelled under `taxonomy`) to the
/// existing index without any retraining.
pub fn cmd_add(cfg: &PipelineConfig) -> Result<AddSummary> {
    cfg.validate()?;
    let taxonomy = load_taxonomy(cfg)?;
    let load = load_records(cfg, &taxonomy)?;
    let images = cfg.require_path("images", &cfg.images)?;
    let index = cfg.require_path("index", &cfg.index)?;
    add_to_gallery_index(&load.records, images, &taxonomy, &cfg.embedder()?, index)
}

pub fn open_recognizer(cfg: &PipelineConfig) -> Result<Recognizer<GradientHistogramEmbedder>> {
    cfg.validate()?;
    let index = cfg.require_path("index", &cfg.index)?;
    Recognizer::open(index, cfg.embedder()?, cfg.nprobe)
}

/// Recognizes the crop `bbox` of the image at `image`.
pub fn cmd_search(cfg: &PipelineConfig, image: &Path, bbox: &BBox) -> Result<RecognitionResult> {
    let recognizer = open_recognizer(cfg)?;
    let raster = GrayRaster::load(image)?;
    let query_id = image.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    recognizer.recognize(&query_id, &raster, bbox, cfg.top_k)
}

/// Path of the machine-readable companion to a text report.
pub fn json_report_path(report: &Path) -> PathBuf {
    report.with_extension("json")
}

/// Scores `results` against `annotations` and writes the report files when
/// `report` is set.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let taxonomy = load_taxonomy(cfg)?;
    let load = load_records(cfg, &taxonomy)?;
    if let Some(bad) = load.rejected.first() {
        return Err(Error::Parse {
            path: cfg.annotations.clone().unwrap_or_default(),
            line: bad.line,
            message: bad.message.clone(),
        });
    }
    let dets = load_results(cfg.require_path("results", &cfg.results)?)?;
    for d in &dets {
        taxonomy.check(&d.label)?;
    }
    let gts = ground_truth_from_records(&load.records);
    let report = evaluate(&dets, &gts, &cfg.eval_config())?;
    if let Some(path) = &cfg.report {
        fs::write(path, report.to_text()).map_err(|e| Error::io(path, e))?;
        let json = json_report_path(path);
        fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
    }
    Ok(report)
}
