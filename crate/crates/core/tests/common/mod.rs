//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use segkit::geometry::{BinaryMask, CxCyWh};
use segkit::postprocess::{PostprocessConfig, RawDetections};
use segkit::Tensor;

/// Exhaustive assignment search.
///
/// Targets are visited in order and try queries ascending, then "unmatched"
/// (only while more targets than queries remain unmatched). Returns the
/// minimal cost, summed over pairs in query order, and the first optimal
/// assignment met in that enumeration order as `(query, target)` pairs.
pub fn brute_force(rows: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let nq = rows.len();
    let nt = rows[0].len();
    let skips = nt.saturating_sub(nq);
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    let mut used = vec![false; nq];
    let mut chosen: Vec<Option<usize>> = Vec::with_capacity(nt);

    fn rec(
        rows: &[Vec<f64>],
        t: usize,
        skips_left: usize,
        used: &mut Vec<bool>,
        chosen: &mut Vec<Option<usize>>,
        best: &mut Option<(f64, Vec<(usize, usize)>)>,
    ) {
        let nt = rows[0].len();
        if t == nt {
            let mut pairs: Vec<(usize, usize)> = chosen
                .iter()
                .enumerate()
                .filter_map(|(t, q)| q.map(|q| (q, t)))
                .collect();
            pairs.sort_unstable();
            let cost: f64 = pairs.iter().map(|&(q, t)| rows[q][t]).sum();
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                *best = Some((cost, pairs));
            }
            return;
        }
        for q in 0..rows.len() {
            if !used[q] {
                used[q] = true;
                chosen.push(Some(q));
                rec(rows, t + 1, skips_left, used, chosen, best);
                chosen.pop();
                used[q] = false;
            }
        }
        if skips_left > 0 {
            chosen.push(None);
            rec(rows, t + 1, skips_left - 1, used, chosen, best);
            chosen.pop();
        }
    }

    rec(rows, 0, skips, &mut used, &mut chosen, &mut best);
    best.expect("at least one assignment")
}

/// Ray-crossing point-in-polygon test (edges `p[k] → p[k+1]`) plus an exact
/// on-boundary check.
pub fn point_in_polygon(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
    let n = poly.len();
    let mut inside = false;
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if cross == 0.0 && p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1) {
            return true;
        }
        if (a.1 > p.1) != (b.1 > p.1) && p.0 < (b.0 - a.0) * (p.1 - a.1) / (b.1 - a.1) + a.0 {
            inside = !inside;
        }
    }
    inside
}

pub fn pip_mask(poly: &[(f64, f64)], h: usize, w: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |y, x| point_in_polygon(poly, (x as f64 + 0.5, y as f64 + 0.5)))
}

/// Star-shaped (hence simple) polygon in pixel coordinates; with `snap`,
/// vertices are moved onto pixel centers.
pub fn random_simple_polygon(rng: &mut ChaCha8Rng, h: usize, w: usize, snap: bool) -> Vec<(f64, f64)> {
    let (wf, hf) = (w as f64, h as f64);
    let (cx, cy) = (rng.gen_range(0.2..0.8) * wf, rng.gen_range(0.2..0.8) * hf);
    let r = rng.gen_range(0.1..0.45) * wf.min(hf);
    let n = rng.gen_range(3..=12);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    angles
        .into_iter()
        .map(|a| {
            let rr = r * rng.gen_range(0.3..1.0);
            let (x, y) = (cx + rr * a.cos(), cy + rr * a.sin());
            if snap {
                (x.floor() + 0.5, y.floor() + 0.5)
            } else {
                (x, y)
            }
        })
        .collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(lo..hi))
}

/// Relative error with an absolute floor for near-zero values.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Writes a dataset directory: `classes.txt`, `images.csv` and one label file
/// per image.
pub fn write_dataset(root: &Path, classes: &[&str], images: &[(&str, usize, usize, &str)]) {
    std::fs::create_dir_all(root.join("labels")).unwrap();
    std::fs::write(root.join("classes.txt"), classes.join("\n")).unwrap();
    let mut csv = String::from("image_id,width,height\n");
    for (id, w, h, labels) in images {
        csv.push_str(&format!("{id},{w},{h}\n"));
        std::fs::write(root.join("labels").join(format!("{id}.txt")), labels).unwrap();
    }
    std::fs::write(root.join("images.csv"), csv).unwrap();
}

pub fn fixture_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini")
}

/// Random raw decoder outputs with a matching postprocess configuration.
pub fn random_raw(rng: &mut ChaCha8Rng) -> (RawDetections, PostprocessConfig) {
    let q = rng.gen_range(0..=12);
    let (gh, gw) = (rng.gen_range(2..=12), rng.gen_range(2..=12));
    let raw = RawDetections {
        scores: (0..q).map(|_| rng.gen_range(0.0..=1.0)).collect(),
        class_ids: (0..q).map(|_| rng.gen_range(0..5)).collect(),
        boxes: (0..q)
            .map(|_| {
                CxCyWh::new(
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.01..1.0),
                    rng.gen_range(0.01..1.0),
                )
            })
            .collect(),
        mask_logits: (q > 0).then(|| random_tensor(rng, &[q, gh, gw], -4.0, 4.0)),
    };
    let mut cfg = PostprocessConfig::new((gh * 4, gw * 4), (rng.gen_range(4..=40), rng.gen_range(4..=40)));
    cfg.conf_threshold = rng.gen_range(0.05..0.95);
    cfg.mask_threshold = rng.gen_range(0.2..0.8);
    (raw, cfg)
}
