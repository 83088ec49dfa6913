//! Prediction JSON: `{ image_id: [ {class_id, score, box, mask}, ... ] }`.
//!
//! Boxes are `[x0, y0, x1, y1]` in original-image pixels; masks are
//! row-major RLE (`{"h", "w", "counts"}`). Masks stay encoded until an
//! evaluator asks for them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, Xyxy};
use crate::metrics::{rle_decode, rle_encode, EvalInstance, RleMask};
use crate::postprocess::Instance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub class_id: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub mask: RleMask,
}

impl PredictionRecord {
    pub fn from_instance(inst: &Instance) -> Self {
        Self {
            class_id: inst.class_id,
            score: inst.score,
            bbox: inst.box_px.to_array(),
            mask: rle_encode(&inst.mask),
        }
    }

    pub fn decode_mask(&self) -> Result<BinaryMask> {
        rle_decode(&self.mask)
    }

    pub fn to_instance(&self) -> Result<Instance> {
        Ok(Instance {
            class_id: self.class_id,
            score: self.score,
            box_px: Xyxy::from_array(self.bbox),
            mask: self.decode_mask()?,
        })
    }

    /// Evaluator view; the mask is decoded only when `with_mask` is set.
    pub fn to_eval(&self, with_mask: bool) -> Result<EvalInstance> {
        Ok(EvalInstance {
            class_id: self.class_id,
            score: self.score,
            bbox: Xyxy::from_array(self.bbox),
            mask: if with_mask { Some(self.decode_mask()?) } else { None },
        })
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(("score", format!("{} is not in [0, 1]", self.score)));
        }
        let [x0, y0, x1, y1] = self.bbox;
        if self.bbox.iter().any(|v| !v.is_finite()) || x1 < x0 || y1 < y0 {
            return Err(("box", format!("{:?} is not a finite [x0, y0, x1, y1] box", self.bbox)));
        }
        self.mask.validate().map_err(|e| ("mask", e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Predictions {
    pub images: BTreeMap<String, Vec<PredictionRecord>>,
}

impl Predictions {
    /// Parses and validates; `origin` only labels error messages.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let schema = |json_path: String, msg: String| Error::Schema {
            path: origin.to_path_buf(),
            json_path,
            msg,
        };
        let de = &mut serde_json::Deserializer::from_str(text);
        let preds: Predictions = serde_path_to_error::deserialize(&mut *de)
            .map_err(|e| schema(e.path().to_string(), e.inner().to_string()))?;
        de.end().map_err(|e| schema(".".into(), e.to_string()))?;
        for (id, records) in &preds.images {
            for (i, r) in records.iter().enumerate() {
                r.check()
                    .map_err(|(field, msg)| schema(format!("{id}[{i}].{field}"), msg))?;
            }
        }
        Ok(preds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Canonical text: sorted image ids, pretty-printed, trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("prediction records always serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, image_id: &str) -> &[PredictionRecord] {
        self.images.get(image_id).map_or(&[], Vec::as_slice)
    }

    pub fn instance_count(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }
}
