//! Data ingestion, evaluation runs, latency benchmarking and report output.

pub mod bench;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod predictions;
pub mod raster;
pub mod report;

pub use bench::{run_bench, BenchOutcome, Delayed, PredictOutput, Predictor, ReplayPredictor, StubPredictor};
pub use config::Config;
pub use dataset::{load_yolo_seg_labels, DatasetIndex, ImageEntry, ImageSample};
pub use eval::{run_eval, EvalSettings, EvalSummary};
pub use predictions::{PredictionRecord, Predictions};
pub use raster::fill_polygon;
pub use report::{emit_report, BenchReport, ReportFormat, ReportRow};

impl Config {
    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            eval: self.eval_config(),
            conf_threshold: self.postprocess.conf_threshold,
            coco: self.coco_params(),
            workers: self.eval.workers,
        }
    }
}
