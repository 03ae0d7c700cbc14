//! COCO-style detection evaluation with all-point interpolated AP.

mod io;

pub use io::{format_results, load_results, parse_results, write_results};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageRecord, LabelTriple, Level};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    pub label: LabelTriple,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub bbox: BBox,
    pub label: LabelTriple,
}

pub fn ground_truth_from_records(records: &[ImageRecord]) -> Vec<GroundTruth> {
    records
        .iter()
        .flat_map(|r| {
            r.annotations.iter().map(move |a| GroundTruth {
                image_id: r.image_id.clone(),
                bbox: a.bbox(),
                label: a.label,
            })
        })
        .collect()
}

/// Detection indices by descending confidence; equal confidences keep input
/// order.
pub fn rank_detections(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy one-to-one matching. Detections are visited by descending
/// confidence; each takes the unmatched ground truth of the same image and
/// class with the highest IoU, provided that IoU reaches `iou_threshold`.
/// Returns TP flags in the input order of `dets`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64, level: Level) -> Vec<bool> {
    let mut by_key: HashMap<(&str, u32), Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_key.entry((g.image_id.as_str(), g.label.at(level))).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for d in rank_detections(dets) {
        let det = &dets[d];
        let Some(cands) = by_key.get(&(det.image_id.as_str(), det.label.at(level))) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &g in cands {
            if taken[g] {
                continue;
            }
            let o = iou(&det.bbox, &gts[g].bbox);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            flags[d] = true;
        }
    }
    flags
}

/// Area under the precision/recall curve with precision made monotone from
/// the right, summed over every recall step. `ranked_flags` must be in
/// descending confidence order.
pub fn average_precision(ranked_flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked_flags.len());
    let mut precision = Vec::with_capacity(ranked_flags.len());
    for (i, &f) in ranked_flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub confidence_threshold: f64,
    pub iou_thresholds: Vec<f64>,
    /// Level whose ids define the classes of the headline numbers.
    pub level: Level,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            iou_thresholds: coco_iou_thresholds(),
            level: Level::Logo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: u32,
    pub num_gt: usize,
    /// AP at each configured IoU threshold.
    pub ap: Vec<f64>,
    pub mean_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: Level,
    pub num_classes: usize,
    pub map: f64,
    /// mAP per IoU threshold, averaged over classes.
    pub map_per_threshold: Vec<f64>,
    pub classes: Vec<ClassAp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confidence_threshold: f64,
    pub iou_thresholds: Vec<f64>,
    pub level: Level,
    pub map: f64,
    pub classes: Vec<ClassAp>,
    pub levels: Vec<LevelSummary>,
    pub num_detections: usize,
    pub num_dropped: usize,
    pub num_gt: usize,
    /// Counts at IoU 0.5 for the headline level.
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub warnings: Vec<String>,
}

fn summarize_level(dets: &[Detection], gts: &[GroundTruth], thresholds: &[f64], level: Level) -> LevelSummary {
    let classes: BTreeSet<u32> = gts.iter().map(|g| g.label.at(level)).collect();
    let per_class: Vec<ClassAp> = classes
        .into_par_iter()
        .map(|c| {
            let cd: Vec<Detection> = dets.iter().filter(|d| d.label.at(level) == c).cloned().collect();
            let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.label.at(level) == c).cloned().collect();
            let order = rank_detections(&cd);
            let ap: Vec<f64> = thresholds
                .iter()
                .map(|&t| {
                    let flags = match_detections(&cd, &cg, t, level);
                    let ranked: Vec<bool> = order.iter().map(|&i| flags[i]).collect();
                    average_precision(&ranked, cg.len())
                })
                .collect();
            let mean_ap = mean(&ap);
            ClassAp {
                class_id: c,
                num_gt: cg.len(),
                ap,
                mean_ap,
            }
        })
        .collect();
    let map_per_threshold = (0..thresholds.len())
        .map(|t| mean(&per_class.iter().map(|c| c.ap[t]).collect::<Vec<_>>()))
        .collect();
    LevelSummary {
        level,
        num_classes: per_class.len(),
        map: mean(&per_class.iter().map(|c| c.mean_ap).collect::<Vec<_>>()),
        map_per_threshold,
        classes: per_class,
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Drops detections below the confidence threshold, then computes per-class
/// AP at every IoU threshold for each taxonomy level. mAP averages over the
/// classes present in the ground truth and over the thresholds.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], config: &EvalConfig) -> Result<EvalReport> {
    if config.iou_thresholds.is_empty() || config.iou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("IoU thresholds must be a non-empty set within [0, 1]"));
    }
    for d in dets {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::invalid(format!(
                "confidence {} on image `{}` is outside [0, 1]",
                d.confidence, d.image_id
            )));
        }
        if !d.bbox.is_valid() {
            return Err(Error::invalid(format!("invalid detection box on image `{}`", d.image_id)));
        }
    }
    let kept: Vec<Detection> = dets
        .iter()
        .filter(|d| d.confidence >= config.confidence_threshold)
        .cloned()
        .collect();
    let mut warnings = Vec::new();
    if gts.is_empty() {
        warnings.push("ground truth is empty; no classes to evaluate".to_string());
    }
    let levels: Vec<LevelSummary> = Level::ALL
        .iter()
        .map(|&l| summarize_level(&kept, gts, &config.iou_thresholds, l))
        .collect();
    let head = levels.iter().find(|s| s.level == config.level).expect("all levels summarized");
    let flags = match_detections(&kept, gts, 0.5, config.level);
    let tp = flags.iter().filter(|&&f| f).count();
    Ok(EvalReport {
        confidence_threshold: config.confidence_threshold,
        iou_thresholds: config.iou_thresholds.clone(),
        level: config.level,
        map: head.map,
        classes: head.classes.clone(),
        num_detections: dets.len(),
        num_dropped: dets.len() - kept.len(),
        num_gt: gts.len(),
        tp,
        fp: kept.len() - tp,
        fn_: gts.len() - tp,
        warnings,
        levels,
    })
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// `key=value` lines. The first line is `mAP(0.5:0.95)=<value>` when the
    /// thresholds are the standard ten.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let lo = self.iou_thresholds.first().copied().unwrap_or(0.0);
        let hi = self.iou_thresholds.last().copied().unwrap_or(0.0);
        let _ = writeln!(s, "mAP({lo}:{hi:.2})={:.6}", self.map);
        let _ = writeln!(s, "level={}", self.level.name());
        let _ = writeln!(s, "confidence_threshold={}", self.confidence_threshold);
        let _ = writeln!(s, "num_classes={}", self.classes.len());
        let _ = writeln!(s, "num_gt={}", self.num_gt);
        let _ = writeln!(s, "num_detections={}", self.num_detections);
        let _ = writeln!(s, "num_dropped={}", self.num_dropped);
        let _ = writeln!(s, "tp@0.5={}", self.tp);
        let _ = writeln!(s, "fp@0.5={}", self.fp);
        let _ = writeln!(s, "fn@0.5={}", self.fn_);
        for l in &self.levels {
            let _ = writeln!(s, "mAP.{}={:.6}", l.level.name(), l.map);
        }
        for c in &self.classes {
            let _ = writeln!(s, "AP.{}.{}={:.6}", self.level.name(), c.class_id, c.mean_ap);
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning={w}");
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Headline mAP by level name.
    pub fn level_map(&self) -> BTreeMap<&'static str, f64> {
        self.levels.iter().map(|l| (l.level.name(), l.map)).collect()
    }
}
