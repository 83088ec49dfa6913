//! Raw query outputs → final instances.
//!
//! Steps: confidence filter, box scaling to the original image, sigmoid +
//! bilinear upscale of the mask, binarization, and zeroing of mask pixels
//! whose centers fall outside the instance box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CxCyWh, Xyxy};
use crate::tensor::{bilinear_resize, sigmoid, Tensor};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

/// Score retention floor used for AP evaluation.
pub const AP_CONF_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RawDetections {
    pub scores: Vec<f64>,
    pub class_ids: Vec<usize>,
    /// Normalized center-size boxes at model input scale.
    pub boxes: Vec<CxCyWh>,
    /// `Q × h' × w'`; `None` when there are no queries.
    pub mask_logits: Option<Tensor>,
}

impl RawDetections {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.scores.len();
        if self.class_ids.len() != q || self.boxes.len() != q {
            return Err(Error::invalid(format!(
                "raw detections disagree on query count: {q} scores, {} classes, {} boxes",
                self.class_ids.len(),
                self.boxes.len()
            )));
        }
        if self.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("scores must lie in [0, 1]"));
        }
        match &self.mask_logits {
            Some(m) if m.rank() != 3 || m.dims()[0] != q => Err(Error::shape("raw mask logits", &[q], m.dims())),
            None if q > 0 => Err(Error::invalid("mask logits missing")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub class_id: usize,
    pub score: f64,
    /// Corner box in original-image pixels.
    pub box_px: Xyxy,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub conf_threshold: f64,
    pub mask_threshold: f64,
    /// Model input `(H, W)`.
    pub input_size: (usize, usize),
    /// Original image `(H₀, W₀)`.
    pub original_size: (usize, usize),
}

impl PostprocessConfig {
    pub fn new(input_size: (usize, usize), original_size: (usize, usize)) -> Self {
        Self {
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            input_size,
            original_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("conf", self.conf_threshold), ("mask", self.mask_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(format!("{name} threshold {t} is not in (0, 1)")));
            }
        }
        if self.original_size.0 == 0 || self.original_size.1 == 0 {
            return Err(Error::invalid("original size must be positive"));
        }
        Ok(())
    }
}

/// Keeps queries with `score ≥ threshold`, preserving order.
pub fn filter_confidence(raw: &RawDetections, threshold: f64) -> Result<RawDetections> {
    raw.validate()?;
    let keep: Vec<usize> = (0..raw.len()).filter(|&i| raw.scores[i] >= threshold).collect();
    let mask_logits = match (&raw.mask_logits, keep.is_empty()) {
        (Some(m), false) => Some(Tensor::stack(
            &keep.iter().map(|&i| m.select(i)).collect::<Result<Vec<_>>>()?,
        )?),
        _ => None,
    };
    Ok(RawDetections {
        scores: keep.iter().map(|&i| raw.scores[i]).collect(),
        class_ids: keep.iter().map(|&i| raw.class_ids[i]).collect(),
        boxes: keep.iter().map(|&i| raw.boxes[i]).collect(),
        mask_logits,
    })
}

/// Sigmoid, then bilinear resize of the probabilities to `(H₀, W₀)`.
pub fn upscale_mask(logits: &Tensor, original_size: (usize, usize)) -> Result<Tensor> {
    let (h, w) = match *logits.dims() {
        [h, w] => (h, w),
        _ => {
            return Err(Error::invalid(format!(
                "mask logits must be h×w, got {:?}",
                logits.dims()
            )))
        }
    };
    let probs = sigmoid(logits).reshape(vec![1, h, w])?;
    bilinear_resize(&probs, original_size.0, original_size.1)?.reshape(vec![original_size.0, original_size.1])
}

/// `prob ≥ threshold` per pixel; accepts `H×W` or `1×H×W` tensors.
pub fn binarize(probs: &Tensor, threshold: f64) -> Result<BinaryMask> {
    let (h, w) = match *probs.dims() {
        [h, w] | [1, h, w] => (h, w),
        _ => return Err(Error::invalid(format!("cannot binarize dims {:?}", probs.dims()))),
    };
    BinaryMask::new(h, w, probs.data().iter().map(|&p| (p >= threshold) as u8).collect())
}

/// Zeroes pixels whose centers lie outside `[x0, x1) × [y0, y1)`.
pub fn crop_to_box(mask: &BinaryMask, box_px: Xyxy) -> BinaryMask {
    let b = box_px.clamp_to(mask.width() as f64, mask.height() as f64);
    BinaryMask::from_fn(mask.height(), mask.width(), |y, x| {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        mask.get(y, x) && cx >= b.x0 && cx < b.x1 && cy >= b.y0 && cy < b.y1
    })
}

/// Normalized center-size boxes → clamped corner boxes in original pixels.
///
/// Plain resize is assumed, so the normalized coordinates map directly onto
/// the original image; `input_size` only matters for letterboxed inputs,
/// which are not supported.
pub fn scale_boxes(boxes: &[CxCyWh], _input_size: (usize, usize), original_size: (usize, usize)) -> Vec<Xyxy> {
    let (h0, w0) = (original_size.0 as f64, original_size.1 as f64);
    boxes
        .iter()
        .map(|b| {
            let c = b.to_xyxy();
            Xyxy::new(c.x0 * w0, c.y0 * h0, c.x1 * w0, c.y1 * h0).clamp_to(w0, h0)
        })
        .collect()
}

/// Full pipeline; instances are sorted by descending score (stable).
pub fn postprocess(raw: &RawDetections, config: &PostprocessConfig) -> Result<Vec<Instance>> {
    config.validate()?;
    let kept = filter_confidence(raw, config.conf_threshold)?;
    let boxes = scale_boxes(&kept.boxes, config.input_size, config.original_size);
    let mut out = Vec::with_capacity(kept.len());
    for (i, box_px) in boxes.into_iter().enumerate() {
        let logits = kept.mask_logits.as_ref().expect("nonempty").select(i)?;
        let probs = upscale_mask(&logits, config.original_size)?;
        let mask = crop_to_box(&binarize(&probs, config.mask_threshold)?, box_px);
        out.push(Instance {
            class_id: kept.class_ids[i],
            score: kept.scores[i],
            box_px,
            mask,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}
