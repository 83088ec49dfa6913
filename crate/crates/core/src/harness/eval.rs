//! Dataset-level evaluation of stored predictions.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::dataset::DatasetIndex;
use crate::harness::predictions::Predictions;
use crate::harness::report::ReportRow;
use crate::metrics::{
    coco_ap, match_one_to_one, penalized_iou, prf1, CocoAp, CocoParams, EvalConfig, EvalInstance, EvalOutcome,
    ImageEval, IouKind, Prf1,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub eval: EvalConfig,
    /// Predictions below this score are dropped before fixed-threshold matching.
    pub conf_threshold: f64,
    pub coco: CocoParams,
    /// 0 lets the thread pool pick.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageOutcome {
    pub image_id: String,
    pub outcome: EvalOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub per_image: Vec<ImageOutcome>,
    pub total: EvalOutcome,
    pub prf1: Prf1,
    pub penalized_iou: f64,
    pub coco: CocoAp,
}

impl EvalSummary {
    pub fn to_row(&self, model: &str) -> ReportRow {
        ReportRow {
            model: model.to_string(),
            f1: self.prf1.f1,
            iou: self.penalized_iou,
            precision: self.prf1.precision,
            recall: self.prf1.recall,
            map_50_95: Some(self.coco.map_50_95),
            map_50: Some(self.coco.map_50),
            ..ReportRow::default()
        }
    }
}

/// One image's predictions (all scores) and ground truth.
pub struct ScoredImage {
    pub image_id: String,
    pub preds: Vec<EvalInstance>,
    pub gts: Vec<EvalInstance>,
}

fn fixed_outcome(image: &ScoredImage, settings: &EvalSettings) -> Result<EvalOutcome> {
    let kept: Vec<EvalInstance> = image
        .preds
        .iter()
        .filter(|p| p.score >= settings.conf_threshold)
        .cloned()
        .collect();
    match_one_to_one(&kept, &image.gts, &settings.eval)
}

/// Sums per-image outcomes in input order and computes the aggregate metrics.
pub fn summarize(images: &[ScoredImage], outcomes: Vec<EvalOutcome>, settings: &EvalSettings) -> Result<EvalSummary> {
    let mut total = EvalOutcome::default();
    for o in &outcomes {
        total += o;
    }
    let coco_input: Vec<ImageEval<'_>> = images
        .iter()
        .map(|im| ImageEval {
            preds: &im.preds,
            gts: &im.gts,
        })
        .collect();
    let coco = coco_ap(&coco_input, settings.eval.iou_kind, &settings.coco)?;
    Ok(EvalSummary {
        per_image: images
            .iter()
            .zip(outcomes)
            .map(|(im, outcome)| ImageOutcome {
                image_id: im.image_id.clone(),
                outcome,
            })
            .collect(),
        prf1: prf1(&total),
        penalized_iou: penalized_iou(&total),
        total,
        coco,
    })
}

/// Sequential evaluation of already-assembled images.
pub fn evaluate_images(images: &[ScoredImage], settings: &EvalSettings) -> Result<EvalSummary> {
    settings.eval.validate()?;
    let outcomes = images
        .iter()
        .map(|im| fixed_outcome(im, settings))
        .collect::<Result<Vec<_>>>()?;
    summarize(images, outcomes, settings)
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} evaluation workers: {e}")))
}

/// Evaluates `predictions` against the dataset's labels.
///
/// Images are processed in parallel; results are gathered in dataset order
/// and summed sequentially, so output does not depend on `workers`.
pub fn run_eval(dataset: &DatasetIndex, predictions: &Predictions, settings: &EvalSettings) -> Result<EvalSummary> {
    settings.eval.validate()?;
    let unknown: Vec<String> = predictions
        .images
        .keys()
        .filter(|id| dataset.position(id).is_none())
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownImages(unknown));
    }
    let with_mask = settings.eval.iou_kind == IouKind::Mask;
    let pool = build_pool(settings.workers)?;
    let scored: Vec<Result<(ScoredImage, EvalOutcome)>> = pool.install(|| {
        (0..dataset.len())
            .into_par_iter()
            .map(|i| {
                let id = &dataset.images[i].id;
                let preds = predictions
                    .get(id)
                    .iter()
                    .map(|r| r.to_eval(with_mask))
                    .collect::<Result<Vec<_>>>()?;
                let image = ScoredImage {
                    image_id: id.clone(),
                    preds,
                    gts: dataset.ground_truth(i)?,
                };
                let outcome = fixed_outcome(&image, settings)?;
                Ok((image, outcome))
            })
            .collect()
    });
    let (images, outcomes): (Vec<_>, Vec<_>) = scored.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    summarize(&images, outcomes, settings)
}
