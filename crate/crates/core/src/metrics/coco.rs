//! COCO-style mean average precision (no crowd regions, no area ranges).

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::fixed::{instance_iou, EvalInstance, IouKind};

pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CocoParams {
    pub max_det: usize,
    pub score_floor: f64,
}

impl Default for CocoParams {
    fn default() -> Self {
        Self {
            max_det: 100,
            score_floor: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CocoAp {
    pub map_50_95: f64,
    pub map_50: f64,
}

/// One image's predictions and ground truth.
pub struct ImageEval<'a> {
    pub preds: &'a [EvalInstance],
    pub gts: &'a [EvalInstance],
}

/// 101-point interpolated AP from detections sorted by descending score.
fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in hits {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&rc| rc < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

pub fn coco_ap(images: &[ImageEval<'_>], iou_kind: IouKind, params: &CocoParams) -> Result<CocoAp> {
    let thresholds = iou_thresholds();
    let mut classes: Vec<usize> = images.iter().flat_map(|im| im.gts.iter().map(|g| g.class_id)).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Ok(CocoAp {
            map_50_95: 0.0,
            map_50: 0.0,
        });
    }

    let mut per_threshold = [0.0f64; 10];
    for &class in &classes {
        // (score, image, detection order) plus a hit flag per threshold
        let mut scored: Vec<(f64, usize, usize, [bool; 10])> = Vec::new();
        let mut num_gt = 0;
        for (ii, im) in images.iter().enumerate() {
            let gts: Vec<&EvalInstance> = im.gts.iter().filter(|g| g.class_id == class).collect();
            num_gt += gts.len();
            let mut dts: Vec<&EvalInstance> = im
                .preds
                .iter()
                .filter(|p| p.class_id == class && p.score >= params.score_floor)
                .collect();
            dts.sort_by(|a, b| b.score.total_cmp(&a.score));
            dts.truncate(params.max_det);
            let ious = dts
                .iter()
                .map(|d| {
                    gts.iter()
                        .map(|g| instance_iou(d, g, iou_kind))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let mut hits = vec![[false; 10]; dts.len()];
            for (ti, &thr) in thresholds.iter().enumerate() {
                let mut gt_taken = vec![false; gts.len()];
                for (di, row) in ious.iter().enumerate() {
                    let floor = thr.min(1.0 - 1e-10);
                    let mut best: Option<(usize, f64)> = None;
                    for (gi, &iou) in row.iter().enumerate() {
                        if gt_taken[gi] || iou < floor {
                            continue;
                        }
                        if best.is_none_or(|(_, b)| iou > b) {
                            best = Some((gi, iou));
                        }
                    }
                    if let Some((gi, _)) = best {
                        gt_taken[gi] = true;
                        hits[di][ti] = true;
                    }
                }
            }
            for (di, (d, h)) in dts.iter().zip(hits).enumerate() {
                scored.push((d.score, ii, di, h));
            }
        }
        if num_gt == 0 {
            continue;
        }
        // stable: equal scores keep image order, then per-image rank
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (ti, slot) in per_threshold.iter_mut().enumerate() {
            let hits: Vec<bool> = scored.iter().map(|s| s.3[ti]).collect();
            *slot += average_precision(&hits, num_gt);
        }
    }
    let n = classes.len() as f64;
    let maps: Vec<f64> = per_threshold.iter().map(|s| s / n).collect();
    Ok(CocoAp {
        map_50_95: maps.iter().sum::<f64>() / maps.len() as f64,
        map_50: maps[0],
    })
}
