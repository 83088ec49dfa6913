//! Query-based instance segmentation toolkit.
//!
//! - [`tensor`]: dense `f64` tensors with conv, GroupNorm, bilinear resize.
//! - [`mask_head`]: pixel-feature fusion, query MLP and dynamic-conv logits.
//! - [`losses`]: ROI-cropped mask BCE/dice, VFL, focal, L1, GIoU, aggregation.
//! - [`matcher`]: mask-aware Hungarian matching.
//! - [`postprocess`]: thresholding, mask upscaling, binarization, box cleanup.
//! - [`metrics`]: fixed-threshold F1/P/R and penalized IoU, COCO AP, RLE.
//! - [`harness`]: dataset ingestion, evaluation runs, latency benchmarking, reports.

pub mod error;
pub mod fixture;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod mask_head;
pub mod matcher;
pub mod metrics;
pub mod postprocess;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
