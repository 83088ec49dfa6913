//! Evaluation: the fixed-threshold one-to-one protocol, COCO-style AP and the
//! RLE mask codec.

pub mod coco;
pub mod fixed;
pub mod rle;

pub use coco::{coco_ap, iou_thresholds, CocoAp, CocoParams, ImageEval};
pub use fixed::{
    f1_score, greedy_pairs, mask_iou, match_one_to_one, penalized_iou, prf1, EvalConfig, EvalInstance, EvalOutcome,
    IouKind, MatchRecord, Prf1,
};
pub use rle::{rle_decode, rle_encode, RleMask};
