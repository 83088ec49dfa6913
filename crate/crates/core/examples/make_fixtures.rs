//! Regenerates the bundled `fixtures/mini` dataset.
//!
//! ```text
//! cargo run --example make_fixtures [-- <out_dir>]
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segkit::geometry::BinaryMask;
use segkit::harness::{DatasetIndex, PredictionRecord, Predictions};
use segkit::metrics::rle_encode;

const CLASSES: [&str; 3] = ["bottle", "can", "carton"];
const IMAGES: usize = 12;

fn star_polygon(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let (cx, cy) = (rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75));
    let r = rng.gen_range(0.1..0.22);
    let n = rng.gen_range(6..=9);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| {
            let rr = r * rng.gen_range(0.6..1.0);
            ((cx + rr * a.cos()).clamp(0.0, 1.0), (cy + rr * a.sin()).clamp(0.0, 1.0))
        })
        .collect()
}

fn shifted(mask: &BinaryMask, dx: usize) -> BinaryMask {
    BinaryMask::from_fn(mask.height(), mask.width(), |y, x| x >= dx && mask.get(y, x - dx))
}

fn record(class_id: usize, score: f64, mask: &BinaryMask) -> Option<PredictionRecord> {
    let bbox = mask.bounding_box()?;
    Some(PredictionRecord {
        class_id,
        score: (score * 1000.0).round() / 1000.0,
        bbox: bbox.to_array(),
        mask: rle_encode(mask),
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini"));
    std::fs::create_dir_all(out.join("labels"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    std::fs::write(out.join("classes.txt"), CLASSES.join("\n") + "\n")?;
    let mut csv = String::from("image_id,width,height\n");
    for i in 0..IMAGES {
        let id = format!("img_{i:03}");
        let (w, h) = (48 + 8 * (i % 5), 40 + 8 * (i % 4));
        writeln!(csv, "{id},{w},{h}")?;
        let mut labels = String::new();
        for _ in 0..rng.gen_range(1..=3) {
            let class = rng.gen_range(0..CLASSES.len());
            write!(labels, "{class}")?;
            for (x, y) in star_polygon(&mut rng) {
                write!(labels, " {x:.4} {y:.4}")?;
            }
            labels.push('\n');
        }
        std::fs::write(out.join("labels").join(format!("{id}.txt")), labels)?;
    }
    std::fs::write(out.join("images.csv"), csv)?;

    let dataset = DatasetIndex::load(&out)?;
    let mut preds = Predictions::default();
    for i in 0..dataset.len() {
        let entry = &dataset.images[i];
        let mut records = Vec::new();
        for gt in dataset.ground_truth(i)? {
            let mask = gt.mask.expect("rasterized");
            let roll: f64 = rng.gen();
            let rec = if roll < 0.55 {
                record(gt.class_id, rng.gen_range(0.6..0.99), &mask)
            } else if roll < 0.7 {
                record(gt.class_id, rng.gen_range(0.55..0.9), &shifted(&mask, 2))
            } else if roll < 0.8 {
                record((gt.class_id + 1) % CLASSES.len(), rng.gen_range(0.6..0.9), &mask)
            } else if roll < 0.9 {
                record(gt.class_id, rng.gen_range(0.1..0.4), &mask)
            } else {
                None
            };
            records.extend(rec);
        }
        if rng.gen_bool(0.3) {
            let (x0, y0) = (rng.gen_range(0..entry.width / 2), rng.gen_range(0..entry.height / 2));
            let blob = BinaryMask::from_fn(entry.height, entry.width, |y, x| {
                (x0..x0 + 8).contains(&x) && (y0..y0 + 6).contains(&y)
            });
            records.extend(record(rng.gen_range(0..CLASSES.len()), rng.gen_range(0.5..0.8), &blob));
        }
        preds.images.insert(entry.id.clone(), records);
    }
    preds.save(&out.join("predictions.json"))?;

    std::fs::write(
        out.join("eval.toml"),
        "[dataset]\nroot = \".\"\n\n[eval]\npredictions = \"predictions.json\"\niou_threshold = 0.5\n\
         iou_kind = \"mask\"\nmodel_name = \"replay-fixture\"\n\n[postprocess]\nconf_threshold = 0.5\n",
    )?;
    std::fs::write(
        out.join("bench.toml"),
        "[dataset]\nroot = \".\"\n\n[bench]\nwarmup = 10\npredictor = \"stub\"\nmodel_name = \"stub\"\n\n\
         [model]\ninput_size = [64, 64]\nqueries = 20\nseed = 7\n",
    )?;
    std::fs::write(
        out.join("bench_replay.toml"),
        "[dataset]\nroot = \".\"\n\n[eval]\npredictions = \"predictions.json\"\n\n[bench]\nwarmup = 10\n\
         predictor = \"replay\"\nmodel_name = \"replay-5ms\"\ndelay_ms = 5.0\n",
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
