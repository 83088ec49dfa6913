//! Fixed-confidence-threshold evaluation with one-to-one matching.
//!
//! Candidate (prediction, ground truth) pairs with IoU strictly above the
//! threshold are accepted greedily by descending IoU, regardless of class.
//! An accepted pair with equal classes is a TP; with different classes it is
//! one FP plus one FN. Leftover predictions are FPs, leftover objects FNs.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BinaryMask, Xyxy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Mask,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub iou_kind: IouKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            iou_kind: IouKind::Mask,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "IoU threshold {} is not in (0, 1)",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// A prediction or ground-truth object as seen by the evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub class_id: usize,
    /// 1.0 for ground truth.
    pub score: f64,
    pub bbox: Xyxy,
    pub mask: Option<BinaryMask>,
}

/// `|a ∧ b| / |a ∨ b|`; two empty masks give 0.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(
            "mask_iou",
            &[a.height(), a.width()],
            &[b.height(), b.width()],
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

pub(crate) fn instance_iou(a: &EvalInstance, b: &EvalInstance, kind: IouKind) -> Result<f64> {
    match kind {
        IouKind::Box => Ok(box_iou(a.bbox, b.bbox)),
        IouKind::Mask => match (&a.mask, &b.mask) {
            (Some(x), Some(y)) => mask_iou(x, y),
            _ => Err(Error::invalid("mask IoU requested but an instance has no mask")),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
    pub same_class: bool,
}

/// Greedy one-to-one pairing by descending IoU (ties: lower pred, then lower
/// gt index), considering only pairs with IoU above the threshold.
pub fn greedy_pairs(preds: &[EvalInstance], gts: &[EvalInstance], config: &EvalConfig) -> Result<Vec<MatchRecord>> {
    config.validate()?;
    let mut candidates = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let iou = instance_iou(p, g, config.iou_kind)?;
            if iou > config.iou_threshold {
                candidates.push((iou, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut out = Vec::new();
    for (iou, pi, gi) in candidates {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        out.push(MatchRecord {
            pred: pi,
            gt: gi,
            iou,
            same_class: preds[pi].class_id == gts[gi].class_id,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// One IoU per TP.
    pub matched_ious: Vec<f64>,
}

impl AddAssign<&EvalOutcome> for EvalOutcome {
    fn add_assign(&mut self, o: &EvalOutcome) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.matched_ious.extend_from_slice(&o.matched_ious);
    }
}

impl Add<&EvalOutcome> for EvalOutcome {
    type Output = EvalOutcome;

    fn add(mut self, o: &EvalOutcome) -> EvalOutcome {
        self += o;
        self
    }
}

pub fn match_one_to_one(preds: &[EvalInstance], gts: &[EvalInstance], config: &EvalConfig) -> Result<EvalOutcome> {
    let pairs = greedy_pairs(preds, gts, config)?;
    let mut out = EvalOutcome::default();
    for m in &pairs {
        if m.same_class {
            out.tp += 1;
            out.matched_ious.push(m.iou);
        } else {
            out.fp += 1;
            out.fn_ += 1;
        }
    }
    out.fp += preds.len() - pairs.len();
    out.fn_ += gts.len() - pairs.len();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn prf1(outcome: &EvalOutcome) -> Prf1 {
    let tp = outcome.tp as f64;
    let precision = ratio(tp, tp + outcome.fp as f64);
    let recall = ratio(tp, tp + outcome.fn_ as f64);
    Prf1 {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

/// Mean IoU over TPs + FPs + FNs, where FPs and FNs contribute zero.
pub fn penalized_iou(outcome: &EvalOutcome) -> f64 {
    let sum = outcome.matched_ious.iter().fold(0.0, |acc, v| acc + v);
    ratio(sum, (outcome.tp + outcome.fp + outcome.fn_) as f64)
}
