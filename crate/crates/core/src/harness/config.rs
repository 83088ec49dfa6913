//! The single run configuration file.
//!
//! TOML with `[section]` headers and `key = value` lines. Unknown sections or
//! keys are rejected. Relative paths are resolved against the directory that
//! holds the config file.
//!
//! ```toml
//! [dataset]
//! root = "mini"
//!
//! [eval]
//! predictions = "mini/predictions.json"
//! iou_threshold = 0.5
//! iou_kind = "mask"
//!
//! [bench]
//! warmup = 10
//! predictor = "stub"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::report::ReportFormat;
use crate::mask_head::MaskHeadConfig;
use crate::metrics::{CocoParams, EvalConfig, IouKind};
use crate::postprocess::{DEFAULT_CONF_THRESHOLD, DEFAULT_MASK_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub postprocess: PostprocessSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory holding `classes.txt`, `images.csv` and `labels/`.
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Prediction JSON; required by `eval` and the replay predictor.
    pub predictions: Option<PathBuf>,
    pub iou_threshold: f64,
    pub iou_kind: IouKind,
    /// Evaluation threads; 0 uses every core.
    pub workers: usize,
    pub max_det: usize,
    pub model_name: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            predictions: None,
            iou_threshold: e.iou_threshold,
            iou_kind: e.iou_kind,
            workers: 0,
            max_det: CocoParams::default().max_det,
            model_name: "predictions".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Stub,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub warmup: usize,
    pub predictor: PredictorKind,
    pub model_name: Option<String>,
    /// Artificial delay added to every forward pass.
    pub delay_ms: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            warmup: 10,
            predictor: PredictorKind::Stub,
            model_name: None,
            delay_ms: 0.0,
        }
    }
}

/// Stub model shape and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `[height, width]`.
    pub input_size: [usize; 2],
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub level_channels: Vec<usize>,
    pub queries: usize,
    pub decoder_layers: usize,
    pub seed: u64,
    /// Optional tensor bundle overriding the seeded mask-head parameters.
    pub params: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            input_size: [64, 64],
            embed_dim: 32,
            hidden_dim: 32,
            level_channels: vec![32, 32, 32],
            queries: 20,
            decoder_layers: 1,
            seed: 0,
            params: None,
        }
    }
}

impl ModelSection {
    pub fn mask_head(&self) -> Result<MaskHeadConfig> {
        MaskHeadConfig::new(self.embed_dim, self.level_channels.clone(), self.hidden_dim)
    }
}

/// Pixels are scaled to `[0, 1]`, then `(x - mean) / std` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessSection {
    pub conf_threshold: f64,
    pub mask_threshold: f64,
}

impl Default for PostprocessSection {
    fn default() -> Self {
        Self {
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub format: ReportFormat,
}

impl Config {
    /// Reads, parses, resolves paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::Config {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::invalid(e.to_string().trim_end()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset.root);
        cfg.eval.predictions.as_mut().map(resolve);
        cfg.model.params.as_mut().map(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.eval_config().validate()?;
        let p = &self.postprocess;
        for (name, t) in [
            ("conf_threshold", p.conf_threshold),
            ("mask_threshold", p.mask_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(format!("postprocess.{name} = {t} is not in (0, 1)")));
            }
        }
        if self.eval.max_det == 0 {
            return Err(Error::invalid("eval.max_det must be positive"));
        }
        if !(self.bench.delay_ms >= 0.0 && self.bench.delay_ms.is_finite()) {
            return Err(Error::invalid("bench.delay_ms must be a finite non-negative number"));
        }
        let m = &self.model;
        if m.queries == 0 || m.decoder_layers == 0 {
            return Err(Error::invalid(
                "model.queries and model.decoder_layers must be positive",
            ));
        }
        let mh = m.mask_head()?;
        let [h, w] = m.input_size;
        let coarsest = mh.strides.iter().copied().max().unwrap_or(1);
        if h == 0 || w == 0 || h % coarsest != 0 || w % coarsest != 0 {
            return Err(Error::invalid(format!(
                "model.input_size {h}×{w} must be a positive multiple of {coarsest}"
            )));
        }
        if self.preprocess.std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::invalid("preprocess.std entries must be positive"));
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            iou_threshold: self.eval.iou_threshold,
            iou_kind: self.eval.iou_kind,
        }
    }

    pub fn coco_params(&self) -> CocoParams {
        CocoParams {
            max_det: self.eval.max_det,
            ..CocoParams::default()
        }
    }

    /// Path of the prediction file, or a validation error naming the key.
    pub fn predictions_path(&self) -> Result<&Path> {
        self.eval
            .predictions
            .as_deref()
            .ok_or_else(|| Error::invalid("eval.predictions is not set"))
    }
}
