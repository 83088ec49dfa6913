//! End-to-end latency benchmark.
//!
//! Per image: load pixels (untimed), `sync`, start the clock, `predict`
//! (preprocess + forward + postprocess), `sync`, stop the clock. The
//! predictor reports its forward-only duration separately. The first
//! `warmup` images are excluded from the timing statistics; accuracy is
//! computed from the very outputs that were timed, warmup images included.

use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixture::load_params;
use crate::geometry::CxCyWh;
use crate::harness::config::{Config, ModelSection, PostprocessSection, PredictorKind, PreprocessSection};
use crate::harness::dataset::{DatasetIndex, ImageSample};
use crate::harness::eval::{evaluate_images, EvalSettings, EvalSummary, ScoredImage};
use crate::harness::predictions::{PredictionRecord, Predictions};
use crate::harness::report::{BenchReport, ReportRow};
use crate::mask_head::{forward, FeaturePyramid, MaskHeadConfig, MaskHeadParams, QuerySet};
use crate::metrics::EvalInstance;
use crate::postprocess::{postprocess, Instance, PostprocessConfig, RawDetections};
use crate::tensor::{bilinear_resize, conv2d, matmul, sigmoid_scalar, Tensor};

pub struct PredictOutput {
    pub instances: Vec<Instance>,
    /// Forward-pass-only duration.
    pub raw: Duration,
}

pub trait Predictor {
    fn name(&self) -> &str;

    /// Device synchronization point; in-process predictors have nothing to wait for.
    fn sync(&mut self) {}

    fn predict(&mut self, image: &ImageSample) -> Result<PredictOutput>;
}

/// Seeded mask head over a pyramid derived from the image, followed by the
/// standard postprocessing.
pub struct StubPredictor {
    name: String,
    config: MaskHeadConfig,
    params: MaskHeadParams,
    queries: QuerySet,
    input_size: (usize, usize),
    preprocess: PreprocessSection,
    post: PostprocessSection,
    /// Per level, `C_l × 3 × 1 × 1` and its bias.
    level_proj: Vec<(Tensor, Vec<f64>)>,
    /// `D × 3`: image channel means shift the query states.
    query_shift: Tensor,
    /// `D × (classes + 4)`.
    det_head: Tensor,
    class_count: usize,
}

impl StubPredictor {
    pub fn new(
        name: impl Into<String>,
        model: &ModelSection,
        preprocess: &PreprocessSection,
        post: &PostprocessSection,
        class_count: usize,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("stub predictor needs at least one class"));
        }
        let config = model.mask_head()?;
        let params = match &model.params {
            Some(path) => load_params(path, &config)?,
            None => MaskHeadParams::seeded(&config, model.seed)?,
        };
        let queries = QuerySet::seeded(model.decoder_layers, model.queries, model.hidden_dim, model.seed ^ 0x51)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ 0xa7);
        let mut uniform = |dims: &[usize]| Tensor::from_fn(dims, |_| rng.gen_range(-1.0..=1.0));
        let level_proj = config
            .level_channels
            .iter()
            .map(|&c| {
                let w = uniform(&[c, 3, 1, 1]);
                let b = uniform(&[c]).into_data();
                (w, b)
            })
            .collect();
        let query_shift = uniform(&[model.hidden_dim, 3]);
        let det_head = uniform(&[model.hidden_dim, class_count + 4]);
        Ok(Self {
            name: name.into(),
            config,
            params,
            queries,
            input_size: (model.input_size[0], model.input_size[1]),
            preprocess: preprocess.clone(),
            post: post.clone(),
            level_proj,
            query_shift,
            det_head,
            class_count,
        })
    }

    /// Bilinear resize to the model input, scale to `[0, 1]`, normalize.
    pub fn preprocess(&self, image: &ImageSample) -> Result<Tensor> {
        let (h, w) = self.input_size;
        let mut t = bilinear_resize(&image.pixels, h, w)?;
        let plane = h * w;
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            let c = i / plane;
            *v = (*v / 255.0 - self.preprocess.mean[c]) / self.preprocess.std[c];
        }
        Ok(t)
    }

    fn forward_raw(&self, input: &Tensor) -> Result<RawDetections> {
        let (h, w) = self.input_size;
        let levels = self
            .config
            .strides
            .iter()
            .zip(&self.level_proj)
            .map(|(&s, (weight, bias))| conv2d(&bilinear_resize(input, h / s, w / s)?, weight, bias))
            .collect::<Result<Vec<_>>>()?;
        let pyramid = FeaturePyramid {
            levels,
            input_size: self.input_size,
        };

        let plane = (h * w) as f64;
        let means: Vec<f64> = (0..3).map(|c| input.outer(c).iter().sum::<f64>() / plane).collect();
        let shift = matmul(&self.query_shift, &Tensor::new(vec![3, 1], means)?)?;
        let mut hidden = self.queries.hidden.clone();
        let d = shift.len();
        for (i, v) in hidden.data_mut().iter_mut().enumerate() {
            *v += shift.data()[i % d];
        }
        let queries = QuerySet::new(hidden, 0)?;
        let out = forward(&pyramid, &queries, &self.params, &self.config)?;

        let last = queries.layers() - 1;
        let heads = matmul(&queries.hidden.select(last)?, &self.det_head)?;
        let k = self.class_count;
        let mut raw = RawDetections {
            scores: Vec::new(),
            class_ids: Vec::new(),
            boxes: Vec::new(),
            mask_logits: Some(out.layer(last)?),
        };
        for row in heads.data().chunks(k + 4) {
            let (class_id, best) =
                row[..k].iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                );
            let b: Vec<f64> = row[k..].iter().map(|&v| sigmoid_scalar(v)).collect();
            raw.scores.push(sigmoid_scalar(best));
            raw.class_ids.push(class_id);
            raw.boxes
                .push(CxCyWh::new(b[0], b[1], 0.05 + 0.5 * b[2], 0.05 + 0.5 * b[3]));
        }
        Ok(raw)
    }
}

impl Predictor for StubPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&mut self, image: &ImageSample) -> Result<PredictOutput> {
        let input = self.preprocess(image)?;
        let start = Instant::now();
        let raw_out = self.forward_raw(&input)?;
        let raw = start.elapsed();
        let cfg = PostprocessConfig {
            conf_threshold: self.post.conf_threshold,
            mask_threshold: self.post.mask_threshold,
            input_size: self.input_size,
            original_size: image.size(),
        };
        Ok(PredictOutput {
            instances: postprocess(&raw_out, &cfg)?,
            raw,
        })
    }
}

/// Serves stored predictions; the "forward pass" is a lookup.
pub struct ReplayPredictor {
    name: String,
    predictions: Predictions,
}

impl ReplayPredictor {
    pub fn new(name: impl Into<String>, predictions: Predictions) -> Self {
        Self {
            name: name.into(),
            predictions,
        }
    }
}

impl Predictor for ReplayPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&mut self, image: &ImageSample) -> Result<PredictOutput> {
        let start = Instant::now();
        let records: Vec<PredictionRecord> = self.predictions.get(&image.id).to_vec();
        let raw = start.elapsed();
        let instances = records
            .iter()
            .map(PredictionRecord::to_instance)
            .collect::<Result<_>>()?;
        Ok(PredictOutput { instances, raw })
    }
}

/// Adds a fixed sleep to the wrapped predictor's forward pass.
pub struct Delayed<P> {
    pub inner: P,
    pub delay: Duration,
}

impl<P: Predictor> Predictor for Delayed<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn sync(&mut self) {
        self.inner.sync()
    }

    fn predict(&mut self, image: &ImageSample) -> Result<PredictOutput> {
        let mut out = self.inner.predict(image)?;
        let start = Instant::now();
        let deadline = start + self.delay;
        // coarse sleep, then yield up to the deadline
        if let Some(coarse) = self.delay.checked_sub(Duration::from_millis(1)) {
            thread::sleep(coarse);
        }
        while Instant::now() < deadline {
            thread::yield_now();
        }
        out.raw += start.elapsed();
        Ok(out)
    }
}

/// Builds the predictor selected by `[bench]`.
pub fn predictor_from_config(cfg: &Config, dataset: &DatasetIndex) -> Result<Box<dyn Predictor>> {
    let kind = cfg.bench.predictor;
    let name = cfg.bench.model_name.clone().unwrap_or_else(|| match kind {
        PredictorKind::Stub => "stub".into(),
        PredictorKind::Replay => "replay".into(),
    });
    let delay = Duration::from_secs_f64(cfg.bench.delay_ms / 1e3);
    let boxed: Box<dyn Predictor> = match kind {
        PredictorKind::Stub => {
            let p = StubPredictor::new(
                name,
                &cfg.model,
                &cfg.preprocess,
                &cfg.postprocess,
                dataset.class_names.len(),
            )?;
            if delay.is_zero() {
                Box::new(p)
            } else {
                Box::new(Delayed { inner: p, delay })
            }
        }
        PredictorKind::Replay => {
            let p = ReplayPredictor::new(name, Predictions::load(cfg.predictions_path()?)?);
            if delay.is_zero() {
                Box::new(p)
            } else {
                Box::new(Delayed { inner: p, delay })
            }
        }
    };
    Ok(boxed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingSample {
    pub image_id: String,
    pub end_to_end: Duration,
    pub raw: Duration,
    pub warmup: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub report: BenchReport,
    /// Every image in order, warmup included.
    pub timings: Vec<TimingSample>,
    pub accuracy: EvalSummary,
}

impl BenchOutcome {
    pub fn timed(&self) -> impl Iterator<Item = &TimingSample> {
        self.timings.iter().filter(|t| !t.warmup)
    }
}

/// Nearest-rank percentile of ascending `sorted`, `q ∈ (0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn to_eval(inst: Instance) -> EvalInstance {
    EvalInstance {
        class_id: inst.class_id,
        score: inst.score,
        bbox: inst.box_px,
        mask: Some(inst.mask),
    }
}

pub fn run_bench(
    dataset: &DatasetIndex,
    predictor: &mut dyn Predictor,
    warmup: usize,
    settings: &EvalSettings,
) -> Result<BenchOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("benchmark dataset is empty"));
    }
    if warmup >= dataset.len() {
        return Err(Error::invalid(format!(
            "warmup {warmup} leaves no timed samples out of {} images",
            dataset.len()
        )));
    }
    let mut timings = Vec::with_capacity(dataset.len());
    let mut scored = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let image = dataset.load_image(i)?;
        let gts = dataset.ground_truth(i)?;

        predictor.sync();
        let start = Instant::now();
        let out = predictor.predict(&image);
        predictor.sync();
        let end_to_end = start.elapsed();

        let out = out.map_err(|e| Error::Predictor {
            image_id: image.id.clone(),
            msg: e.to_string(),
        })?;
        timings.push(TimingSample {
            image_id: image.id.clone(),
            end_to_end,
            raw: out.raw,
            warmup: i < warmup,
        });
        scored.push(ScoredImage {
            image_id: image.id,
            preds: out.instances.into_iter().map(to_eval).collect(),
            gts,
        });
    }

    let accuracy = evaluate_images(&scored, settings)?;
    let e2e: Vec<f64> = timings.iter().filter(|t| !t.warmup).map(|t| ms(t.end_to_end)).collect();
    let raw: Vec<f64> = timings.iter().filter(|t| !t.warmup).map(|t| ms(t.raw)).collect();
    let mut sorted = e2e.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let row = ReportRow {
        latency_ms: Some(mean(&e2e)),
        raw_latency_ms: Some(mean(&raw)),
        p50_ms: Some(percentile(&sorted, 0.5)),
        p95_ms: Some(percentile(&sorted, 0.95)),
        samples: Some(e2e.len()),
        ..accuracy.to_row(predictor.name())
    };
    Ok(BenchOutcome {
        report: BenchReport { rows: vec![row] },
        timings,
        accuracy,
    })
}
