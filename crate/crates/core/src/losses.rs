//! Segmentation-aware training losses.
//!
//! Mask losses are computed only inside the matched ground-truth box projected
//! onto the mask-head grid ([`RoiRect`]). BCE is the mean per ROI pixel; dice
//! works on sigmoid probabilities. Both consume fractional soft targets as-is.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{generalized_iou, BinaryMask, CxCyWh};
use crate::tensor::{bilinear_resize, sigmoid_scalar, Tensor};

pub const DICE_EPS: f64 = 1.0;
pub const VFL_ALPHA: f64 = 0.75;
pub const VFL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// One ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTarget {
    pub class_id: usize,
    /// Normalized center-size box.
    pub bbox: CxCyWh,
    /// Full-resolution binary mask.
    pub mask: BinaryMask,
    /// `h' × w'` mask resized to the mask-head grid, values in `[0, 1]`.
    pub soft_mask: Tensor,
}

impl InstanceTarget {
    pub fn new(class_id: usize, bbox: CxCyWh, mask: BinaryMask, grid: (usize, usize)) -> Result<Self> {
        let soft_mask = resize_mask(&mask, grid.0, grid.1)?;
        Ok(Self {
            class_id,
            bbox,
            mask,
            soft_mask,
        })
    }
}

fn resize_mask(mask: &BinaryMask, out_h: usize, out_w: usize) -> Result<Tensor> {
    bilinear_resize(&mask.to_tensor(), out_h, out_w)?.reshape(vec![out_h, out_w])
}

/// Bilinearly resizes binary masks to soft `out_h × out_w` targets.
pub fn resize_targets(masks: &[BinaryMask], out_h: usize, out_w: usize) -> Result<Vec<Tensor>> {
    masks.iter().map(|m| resize_mask(m, out_h, out_w)).collect()
}

/// Integer region `[x0, x1) × [y0, y1)` on the mask-head grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl RoiRect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.x1 > w || self.y1 > h {
            return Err(Error::invalid(format!("ROI {self:?} is not inside a {h}×{w} grid")));
        }
        Ok(())
    }

    fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (y, x)))
    }
}

fn roi_axis(center: f64, size: f64, grid: usize) -> (usize, usize) {
    let g = grid as f64;
    let lo = ((center - size / 2.0) * g).floor().clamp(0.0, g) as usize;
    let hi = ((center + size / 2.0) * g).ceil().clamp(0.0, g) as usize;
    if hi > lo {
        (lo, hi)
    } else {
        let c = (center * g).floor().clamp(0.0, g - 1.0) as usize;
        (c, c + 1)
    }
}

/// Projects a normalized box onto a `grid_w × grid_h` grid, never empty.
pub fn roi_rect(bbox: CxCyWh, grid_w: usize, grid_h: usize) -> RoiRect {
    let (x0, x1) = roi_axis(bbox.cx, bbox.w, grid_w);
    let (y0, y1) = roi_axis(bbox.cy, bbox.h, grid_h);
    RoiRect { x0, y0, x1, y1 }
}

fn grid_dims(logits: &Tensor, target: &Tensor) -> Result<(usize, usize)> {
    if logits.dims() != target.dims() {
        return Err(Error::shape("mask loss", logits.dims(), target.dims()));
    }
    match *logits.dims() {
        [h, w] => Ok((h, w)),
        _ => Err(Error::invalid(format!(
            "mask logits must be h×w, got {:?}",
            logits.dims()
        ))),
    }
}

fn bce_logit(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over the ROI pixels.
pub fn bce_roi(logits: &Tensor, soft_target: &Tensor, roi: RoiRect) -> Result<f64> {
    let (h, w) = grid_dims(logits, soft_target)?;
    roi.check(h, w)?;
    let (z, t) = (logits.data(), soft_target.data());
    let first = bce_logit(z[roi.y0 * w + roi.x0], t[roi.y0 * w + roi.x0]);
    // offsetting by the first pixel keeps constant fields exact
    let spread: f64 = roi
        .pixels()
        .map(|(y, x)| bce_logit(z[y * w + x], t[y * w + x]) - first)
        .sum();
    Ok(first + spread / roi.area() as f64)
}

struct DiceSums {
    inter: f64,
    p: f64,
    t: f64,
}

fn dice_sums(logits: &Tensor, soft_target: &Tensor, roi: RoiRect, w: usize) -> DiceSums {
    let (z, t) = (logits.data(), soft_target.data());
    let mut s = DiceSums {
        inter: 0.0,
        p: 0.0,
        t: 0.0,
    };
    for (y, x) in roi.pixels() {
        let p = sigmoid_scalar(z[y * w + x]);
        let tv = t[y * w + x];
        s.inter += p * tv;
        s.p += p;
        s.t += tv;
    }
    s
}

/// `1 − (2·Σpt + eps) / (Σp + Σt + eps)` over the ROI.
pub fn dice_roi(logits: &Tensor, soft_target: &Tensor, roi: RoiRect, eps: f64) -> Result<f64> {
    let (h, w) = grid_dims(logits, soft_target)?;
    roi.check(h, w)?;
    let s = dice_sums(logits, soft_target, roi, w);
    Ok(1.0 - (2.0 * s.inter + eps) / (s.p + s.t + eps))
}

/// Analytic ∂[`bce_roi`]/∂logits; zero outside the ROI.
pub fn grad_bce_roi(logits: &Tensor, soft_target: &Tensor, roi: RoiRect) -> Result<Tensor> {
    let (h, w) = grid_dims(logits, soft_target)?;
    roi.check(h, w)?;
    let n = roi.area() as f64;
    let mut g = Tensor::zeros(logits.dims());
    let (z, t) = (logits.data(), soft_target.data());
    for (y, x) in roi.pixels() {
        let i = y * w + x;
        g.data_mut()[i] = (sigmoid_scalar(z[i]) - t[i]) / n;
    }
    Ok(g)
}

/// Analytic ∂[`dice_roi`]/∂logits; zero outside the ROI.
pub fn grad_dice_roi(logits: &Tensor, soft_target: &Tensor, roi: RoiRect, eps: f64) -> Result<Tensor> {
    let (h, w) = grid_dims(logits, soft_target)?;
    roi.check(h, w)?;
    let s = dice_sums(logits, soft_target, roi, w);
    let num = 2.0 * s.inter + eps;
    let den = s.p + s.t + eps;
    let mut g = Tensor::zeros(logits.dims());
    let (z, t) = (logits.data(), soft_target.data());
    for (y, x) in roi.pixels() {
        let i = y * w + x;
        let p = sigmoid_scalar(z[i]);
        let d_loss_dp = -(2.0 * t[i] * den - num) / (den * den);
        g.data_mut()[i] = d_loss_dp * p * (1.0 - p);
    }
    Ok(g)
}

/// Varifocal loss for one logit with quality target `q ∈ [0, 1]`.
pub fn vfl(logit: f64, q: f64, alpha: f64, gamma: f64) -> f64 {
    // -ln p = softplus(-z), -ln(1-p) = softplus(z)
    if q > 0.0 {
        q * (q * softplus(-logit) + (1.0 - q) * softplus(logit))
    } else {
        alpha * sigmoid_scalar(logit).powf(gamma) * softplus(logit)
    }
}

/// Sigmoid focal loss with a (possibly fractional) target.
pub fn focal(logit: f64, target: f64, alpha: f64, gamma: f64) -> f64 {
    let p = sigmoid_scalar(logit);
    target * alpha * (1.0 - p).powf(gamma) * softplus(-logit)
        + (1.0 - target) * (1.0 - alpha) * p.powf(gamma) * softplus(logit)
}

pub fn l1_box(pred: CxCyWh, target: CxCyWh) -> f64 {
    pred.components()
        .iter()
        .zip(target.components())
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// `1 − GIoU`, in `[0, 2]`.
pub fn giou_loss(pred: CxCyWh, target: CxCyWh) -> f64 {
    1.0 - generalized_iou(pred.to_xyxy(), target.to_xyxy())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Vfl,
    Focal,
    L1,
    Giou,
    Fgl,
    Ddf,
    MaskBce,
    MaskDice,
}

impl LossTerm {
    pub const ALL: [LossTerm; 8] = [
        LossTerm::Vfl,
        LossTerm::Focal,
        LossTerm::L1,
        LossTerm::Giou,
        LossTerm::Fgl,
        LossTerm::Ddf,
        LossTerm::MaskBce,
        LossTerm::MaskDice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Vfl => "vfl",
            LossTerm::Focal => "focal",
            LossTerm::L1 => "l1",
            LossTerm::Giou => "giou",
            LossTerm::Fgl => "fgl",
            LossTerm::Ddf => "ddf",
            LossTerm::MaskBce => "mask_bce",
            LossTerm::MaskDice => "mask_dice",
        }
    }

    /// Classification terms still apply when a branch has no matches.
    fn is_classification(self) -> bool {
        matches!(self, LossTerm::Vfl | LossTerm::Focal)
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub vfl: f64,
    /// The optional focal classification loss; off by default.
    pub focal: f64,
    pub l1: f64,
    pub giou: f64,
    pub fgl: f64,
    pub ddf: f64,
    pub mask_bce: f64,
    pub mask_dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            vfl: 1.0,
            focal: 0.0,
            l1: 5.0,
            giou: 2.0,
            fgl: 0.15,
            ddf: 1.5,
            mask_bce: 1.0,
            mask_dice: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            vfl: 0.0,
            focal: 0.0,
            l1: 0.0,
            giou: 0.0,
            fgl: 0.0,
            ddf: 0.0,
            mask_bce: 0.0,
            mask_dice: 0.0,
        }
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Vfl => self.vfl,
            LossTerm::Focal => self.focal,
            LossTerm::L1 => self.l1,
            LossTerm::Giou => self.giou,
            LossTerm::Fgl => self.fgl,
            LossTerm::Ddf => self.ddf,
            LossTerm::MaskBce => self.mask_bce,
            LossTerm::MaskDice => self.mask_dice,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if LossTerm::ALL.iter().any(|&t| self.get(t).is_nan() || self.get(t) < 0.0) {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-term loss sums for one supervision branch (final layer, one auxiliary
/// layer, or the denoising queries). FGL and DDF are supplied externally.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBranch {
    pub name: String,
    pub sums: BTreeMap<LossTerm, f64>,
    pub matched: usize,
}

impl LossBranch {
    pub fn new(name: impl Into<String>, matched: usize) -> Self {
        Self {
            name: name.into(),
            sums: BTreeMap::new(),
            matched,
        }
    }

    pub fn with(mut self, term: LossTerm, sum: f64) -> Self {
        *self.sums.entry(term).or_insert(0.0) += sum;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    /// Weighted, normalized value per `branch/term`.
    pub breakdown: BTreeMap<String, f64>,
}

impl LossReport {
    /// Flat `{"branch/term": value, ..., "total": value}` object.
    pub fn to_json(&self) -> String {
        let mut flat = self.breakdown.clone();
        flat.insert("total".into(), self.total);
        serde_json::to_string_pretty(&flat).expect("finite map serializes")
    }
}

/// Weighted sum over branches, each term averaged over its branch's matches.
///
/// A branch with zero matches contributes nothing for box and mask terms;
/// classification terms are then normalized by one.
pub fn aggregate(branches: &[LossBranch], weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    let mut total = 0.0;
    let mut breakdown = BTreeMap::new();
    for branch in branches {
        for (&term, &sum) in &branch.sums {
            let value = if branch.matched > 0 {
                sum / branch.matched as f64
            } else if term.is_classification() {
                sum
            } else {
                0.0
            };
            let weighted = weights.get(term) * value;
            total += weighted;
            *breakdown.entry(format!("{}/{}", branch.name, term)).or_insert(0.0) += weighted;
        }
    }
    Ok(LossReport { total, breakdown })
}

/// Box and mask loss sums over matched `(query, target)` pairs.
///
/// `pred_masks` is `Q × h' × w'` and must share the grid of the targets' soft
/// masks.
pub fn matched_term_sums(
    pred_boxes: &[CxCyWh],
    pred_masks: &Tensor,
    targets: &[InstanceTarget],
    pairs: &[(usize, usize)],
) -> Result<BTreeMap<LossTerm, f64>> {
    let mut sums = BTreeMap::new();
    for &(qi, ti) in pairs {
        let target = targets
            .get(ti)
            .ok_or_else(|| Error::invalid(format!("target index {ti} out of range")))?;
        let pbox = *pred_boxes
            .get(qi)
            .ok_or_else(|| Error::invalid(format!("query index {qi} out of range")))?;
        let logits = pred_masks.select(qi)?;
        let (h, w) = grid_dims(&logits, &target.soft_mask)?;
        let roi = roi_rect(target.bbox, w, h);
        *sums.entry(LossTerm::L1).or_insert(0.0) += l1_box(pbox, target.bbox);
        *sums.entry(LossTerm::Giou).or_insert(0.0) += giou_loss(pbox, target.bbox);
        *sums.entry(LossTerm::MaskBce).or_insert(0.0) += bce_roi(&logits, &target.soft_mask, roi)?;
        *sums.entry(LossTerm::MaskDice).or_insert(0.0) += dice_roi(&logits, &target.soft_mask, roi, DICE_EPS)?;
    }
    Ok(sums)
}

/// VFL summed over every query and class. Matched queries get their target
/// class scored with the caller's quality value, everything else is negative.
pub fn vfl_sum(
    class_logits: &[Vec<f64>],
    targets: &[InstanceTarget],
    pairs: &[(usize, usize)],
    quality: &[f64],
) -> Result<f64> {
    if quality.len() != pairs.len() {
        return Err(Error::invalid("one quality score per matched pair is required"));
    }
    let mut positive: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(qi, ti), &q) in pairs.iter().zip(quality) {
        let class = targets
            .get(ti)
            .ok_or_else(|| Error::invalid(format!("target index {ti} out of range")))?
            .class_id;
        positive.insert((qi, class), q.clamp(0.0, 1.0));
    }
    let mut sum = 0.0;
    for (qi, row) in class_logits.iter().enumerate() {
        for (c, &z) in row.iter().enumerate() {
            let q = positive.get(&(qi, c)).copied().unwrap_or(0.0);
            sum += vfl(z, q, VFL_ALPHA, VFL_GAMMA);
        }
    }
    Ok(sum)
}
