//! Dataset layout and YOLO-style polygon labels.
//!
//! ```text
//! root/
//!   classes.txt        one class name per line
//!   images.csv         image_id,width,height
//!   labels/<id>.txt    "class x1 y1 x2 y2 ... xn yn", coordinates in [0, 1]
//! ```
//!
//! A missing label file means the image has no objects. Pixel data is not
//! stored: [`DatasetIndex::load_image`] synthesizes a deterministic image from
//! the id and the labels, which is enough to drive the predictors.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{CxCyWh, Xyxy};
use crate::harness::raster::fill_polygon;
use crate::losses::InstanceTarget;
use crate::mask_head::OUTPUT_STRIDE;
use crate::metrics::EvalInstance;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageEntry {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub label_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub images: Vec<ImageEntry>,
    pub class_names: Vec<String>,
}

#[derive(Deserialize)]
struct ImageRow {
    image_id: String,
    width: usize,
    height: usize,
}

/// Loaded pixels, `3 × H × W` with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub pixels: Tensor,
}

impl ImageSample {
    /// `(height, width)`.
    pub fn size(&self) -> (usize, usize) {
        (self.pixels.dims()[1], self.pixels.dims()[2])
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl DatasetIndex {
    pub fn load(root: &Path) -> Result<Self> {
        let classes_path = root.join("classes.txt");
        let class_names: Vec<String> = read_text(&classes_path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();

        let csv_path = root.join("images.csv");
        let file = std::fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut images = Vec::new();
        for row in reader.deserialize::<ImageRow>() {
            let row = row.map_err(|e| Error::Parse {
                path: csv_path.clone(),
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })?;
            images.push(ImageEntry {
                label_path: root.join("labels").join(format!("{}.txt", row.image_id)),
                id: row.image_id,
                width: row.width,
                height: row.height,
            });
        }
        let index = Self { images, class_names };
        index.validate()?;
        Ok(index)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::invalid("dataset has no classes"));
        }
        let mut seen = HashSet::new();
        for im in &self.images {
            if !seen.insert(im.id.as_str()) {
                return Err(Error::invalid(format!("duplicate image id {:?}", im.id)));
            }
            if im.width == 0 || im.height == 0 {
                return Err(Error::invalid(format!("image {:?} has an empty size", im.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.images.iter().position(|im| im.id == id)
    }

    pub fn targets(&self, i: usize) -> Result<Vec<InstanceTarget>> {
        let im = &self.images[i];
        if !im.label_path.exists() {
            return Ok(Vec::new());
        }
        load_yolo_seg_labels(&im.label_path, im.width, im.height, self.class_names.len())
    }

    /// Ground truth of image `i` in evaluator form.
    pub fn ground_truth(&self, i: usize) -> Result<Vec<EvalInstance>> {
        let im = &self.images[i];
        Ok(self
            .targets(i)?
            .into_iter()
            .map(|t| target_to_eval(t, im.width, im.height))
            .collect())
    }

    /// Deterministic synthetic image: seeded noise with objects painted in a
    /// per-class color.
    pub fn load_image(&self, i: usize) -> Result<ImageSample> {
        let im = &self.images[i];
        let targets = self.targets(i)?;
        let (h, w) = (im.height, im.width);
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(im.id.as_bytes()));
        let mut pixels = Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..64.0));
        let data = pixels.data_mut();
        for t in &targets {
            let color = class_color(t.class_id);
            for y in 0..h {
                for x in 0..w {
                    if t.mask.get(y, x) {
                        for (c, &v) in color.iter().enumerate() {
                            data[(c * h + y) * w + x] = v;
                        }
                    }
                }
            }
        }
        Ok(ImageSample {
            id: im.id.clone(),
            pixels,
        })
    }
}

fn class_color(class_id: usize) -> [f64; 3] {
    let k = class_id as u64 + 1;
    [
        (96 + (k * 53) % 160) as f64,
        (96 + (k * 97) % 160) as f64,
        (96 + (k * 151) % 160) as f64,
    ]
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub(crate) fn target_to_eval(t: InstanceTarget, width: usize, height: usize) -> EvalInstance {
    let c = t.bbox.to_xyxy();
    let (w, h) = (width as f64, height as f64);
    EvalInstance {
        class_id: t.class_id,
        score: 1.0,
        bbox: Xyxy::new(c.x0 * w, c.y0 * h, c.x1 * w, c.y1 * h),
        mask: Some(t.mask),
    }
}

/// Parses one label file into rasterized targets.
///
/// Soft masks are sized for the mask-head grid of an input of the same size.
pub fn load_yolo_seg_labels(
    path: &Path,
    image_w: usize,
    image_h: usize,
    class_count: usize,
) -> Result<Vec<InstanceTarget>> {
    if image_w == 0 || image_h == 0 {
        return Err(Error::invalid(format!("image size {image_w}×{image_h} is empty")));
    }
    let text = read_text(path)?;
    let grid = ((image_h / OUTPUT_STRIDE).max(1), (image_w / OUTPUT_STRIDE).max(1));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fail = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };
        let class_id: usize = first
            .parse()
            .map_err(|_| fail(format!("class index {first:?} is not a non-negative integer")))?;
        if class_id >= class_count {
            return Err(fail(format!("class index {class_id} ≥ class count {class_count}")));
        }
        let coords = tokens
            .map(|t| match t.parse::<f64>() {
                Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
                _ => Err(fail(format!("coordinate {t:?} is not a number in [0, 1]"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if coords.len() < 6 || coords.len() % 2 != 0 {
            return Err(fail(format!(
                "expected an even number (≥ 6) of coordinates, got {}",
                coords.len()
            )));
        }
        let norm: Vec<(f64, f64)> = coords.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let px: Vec<(f64, f64)> = norm
            .iter()
            .map(|&(x, y)| (x * image_w as f64, y * image_h as f64))
            .collect();
        let mask = fill_polygon(&px, image_h, image_w);
        let fold =
            |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| norm.iter().map(pick).fold(init, f);
        let tight = Xyxy::new(
            fold(f64::min, f64::INFINITY, |p| p.0),
            fold(f64::min, f64::INFINITY, |p| p.1),
            fold(f64::max, f64::NEG_INFINITY, |p| p.0),
            fold(f64::max, f64::NEG_INFINITY, |p| p.1),
        );
        let bbox: CxCyWh = tight.to_cxcywh();
        out.push(InstanceTarget::new(class_id, bbox, mask, grid)?);
    }
    Ok(out)
}
