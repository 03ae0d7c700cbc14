use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::InstanceAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcOutcome {
    pub chosen: usize,
    pub score: f64,
    pub scores: [f64; 3],
}

/// Picks the annotator whose boxes agree best with the other two.
///
/// For each annotator and each other annotator, boxes are matched one to one
/// greedily on descending IoU; the annotator's score is the mean matched IoU
/// over all of its boxes against both others (unmatched boxes count 0). An
/// annotator with no boxes scores 0. Ties go to the lowest index.
pub fn qc_consensus(candidates: [&[InstanceAnnotation]; 3]) -> Result<QcOutcome> {
    if candidates.iter().all(|c| c.is_empty()) {
        return Err(Error::invalid("all three annotators returned no boxes"));
    }
    let boxes: Vec<Vec<BBox>> = candidates
        .iter()
        .map(|c| c.iter().map(InstanceAnnotation::bbox).collect())
        .collect();

    let mut scores = [0.0; 3];
    for (a, score) in scores.iter_mut().enumerate() {
        if boxes[a].is_empty() {
            continue;
        }
        let mut total = 0.0;
        for (b, other) in boxes.iter().enumerate() {
            if a != b {
                total += greedy_matched_ious(&boxes[a], other).iter().sum::<f64>();
            }
        }
        *score = total / (2 * boxes[a].len()) as f64;
    }

    let mut chosen = 0;
    for i in 1..3 {
        if scores[i] > scores[chosen] {
            chosen = i;
        }
    }
    Ok(QcOutcome {
        chosen,
        score: scores[chosen],
        scores,
    })
}

/// Matched IoU for every box in `ours` (0 when unmatched).
fn greedy_matched_ious(ours: &[BBox], theirs: &[BBox]) -> Vec<f64> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(ours.len() * theirs.len());
    for (i, a) in ours.iter().enumerate() {
        for (j, b) in theirs.iter().enumerate() {
            let v = iou(a, b);
            if v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(Ordering::Equal)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let mut matched = vec![0.0; ours.len()];
    let mut ours_used = vec![false; ours.len()];
    let mut theirs_used = vec![false; theirs.len()];
    for (v, i, j) in pairs {
        if !ours_used[i] && !theirs_used[j] {
            ours_used[i] = true;
            theirs_used[j] = true;
            matched[i] = v;
        }
    }
    matched
}
