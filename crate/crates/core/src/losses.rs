//! Training losses with analytic gradients.
//!
//! Every function returns a [`LossValue`] whose gradient is taken with
//! respect to the function's primary real-valued input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxDeltas;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl LossValue {
    fn scalar(value: f64, gradient: f64) -> Self {
        Self {
            value,
            gradient: vec![gradient],
        }
    }
}

pub fn smooth_l1(x: f64) -> LossValue {
    if x.abs() < 1.0 {
        LossValue::scalar(0.5 * x * x, x)
    } else {
        LossValue::scalar(x.abs() - 0.5, x.signum())
    }
}

/// Gradient is with respect to `p`; it is zero where clamping is active.
pub fn binary_cross_entropy(p: f64, label: bool) -> LossValue {
    let q = p.clamp(EPS, 1.0 - EPS);
    let inside = p > EPS && p < 1.0 - EPS;
    if label {
        LossValue::scalar(-q.ln(), if inside { -1.0 / q } else { 0.0 })
    } else {
        LossValue::scalar(-(1.0 - q).ln(), if inside { 1.0 / (1.0 - q) } else { 0.0 })
    }
}

/// Weighted softmax cross-entropy; gradient with respect to the logits.
pub fn softmax_cross_entropy(
    logits: &[f64],
    label: usize,
    weights: Option<&[f64]>,
) -> Result<LossValue> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let weight = match weights {
        Some(w) if w.len() != logits.len() => {
            return Err(Error::DimensionMismatch {
                expected: logits.len(),
                got: w.len(),
            })
        }
        Some(w) if w.iter().any(|&v| !(v > 0.0)) => {
            return Err(Error::invalid("class weights must be positive"))
        }
        Some(w) => w[label],
        None => 1.0,
    };
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_prob = (logits[label] - max) - sum.ln();
    let gradient = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| weight * (e / sum - if i == label { 1.0 } else { 0.0 }))
        .collect();
    Ok(LossValue {
        value: -weight * log_prob,
        gradient,
    })
}

/// Mean per-pixel binary cross-entropy over a mask; gradient per pixel.
pub fn mask_bce(pred: &[f64], target: &[bool]) -> Result<LossValue> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.len(),
            got: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("mask_bce on an empty mask"));
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let l = binary_cross_entropy(p, t);
        value += l.value;
        gradient.push(l.gradient[0] / n);
    }
    Ok(LossValue {
        value: value / n,
        gradient,
    })
}

/// Class weights proportional to inverse frequency, normalized so they
/// average to 1 over the classes that occur. Absent classes get weight 1.
pub fn inverse_frequency_weights(counts: &[usize]) -> Vec<f64> {
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if present.is_empty() {
        return vec![1.0; counts.len()];
    }
    let inv_mean = present.iter().map(|&c| 1.0 / c as f64).sum::<f64>() / present.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { (1.0 / c as f64) / inv_mean })
        .collect()
}

/// Sum of smooth L1 over the four delta coordinates of every positive
/// anchor, divided by the number of positives. Gradient is laid out as
/// `[dx, dy, dw, dh]` per prediction.
pub fn box_regression_loss(predicted: &[BoxDeltas], targets: &[BoxDeltas]) -> Result<LossValue> {
    if predicted.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: predicted.len(),
            got: targets.len(),
        });
    }
    if predicted.is_empty() {
        return Ok(LossValue {
            value: 0.0,
            gradient: Vec::new(),
        });
    }
    let n = predicted.len() as f64;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(4 * predicted.len());
    for (p, t) in predicted.iter().zip(targets) {
        for (a, b) in p.to_array().into_iter().zip(t.to_array()) {
            let l = smooth_l1(a - b);
            value += l.value;
            gradient.push(l.gradient[0] / n);
        }
    }
    Ok(LossValue {
        value: value / n,
        gradient,
    })
}

/// Class-agnostic anchor refinement loss: mean binary cross-entropy of the
/// foreground probabilities plus [`box_regression_loss`] over the positives.
/// The returned gradient covers the probabilities only.
pub fn anchor_refinement_loss(
    foreground: &[f64],
    is_object: &[bool],
    positive_deltas: &[BoxDeltas],
    positive_targets: &[BoxDeltas],
) -> Result<LossValue> {
    let cls = mask_bce(foreground, is_object)?;
    let reg = box_regression_loss(positive_deltas, positive_targets)?;
    Ok(LossValue {
        value: cls.value + reg.value,
        gradient: cls.gradient,
    })
}

/// Optional per-term coefficients for [`compose_stage_loss`]; missing
/// entries weigh 1.
pub type StageWeights = BTreeMap<String, f64>;

pub fn stage_components(stage: u8) -> Result<&'static [&'static str]> {
    match stage {
        1 => Ok(&["rpn", "ar", "det"]),
        2 => Ok(&["det", "mask"]),
        3 => Ok(&["rpn", "ar", "det", "mt"]),
        other => Err(Error::invalid(format!("unknown training stage {other}"))),
    }
}

/// Sum of the components required by `stage`:
/// stage 1 `rpn + ar + det`, stage 2 `det + mask`, stage 3
/// `rpn + ar + det + mt`. Extra components are ignored.
pub fn compose_stage_loss(
    stage: u8,
    components: &BTreeMap<String, f64>,
    weights: Option<&StageWeights>,
) -> Result<f64> {
    let mut total = 0.0;
    for &name in stage_components(stage)? {
        let v = components
            .get(name)
            .ok_or_else(|| Error::MissingComponent(name.to_string()))?;
        let w = weights.and_then(|w| w.get(name)).copied().unwrap_or(1.0);
        total += w * v;
    }
    Ok(total)
}
