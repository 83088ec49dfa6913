use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use segkit::error::{Error, Result};
use segkit::fixture::save_bundle;
use segkit::harness::dataset::fnv1a;
use segkit::harness::{
    emit_report, run_bench, run_eval, Config, DatasetIndex, PredictionRecord, Predictions, ReportFormat,
};
use segkit::mask_head::{forward, FeaturePyramid, MaskHeadConfig, MaskHeadParams, QuerySet};
use segkit::metrics::rle_encode;
use segkit::Tensor;

#[derive(Parser)]
#[command(
    name = "segkit",
    version,
    about = "Instance segmentation evaluation and benchmarking toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score stored predictions against the dataset labels.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `[output] format`.
        #[arg(long)]
        format: Option<ReportFormat>,
        /// Overrides `[eval] workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Time a predictor over the dataset.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<ReportFormat>,
    },
    /// Rasterize polygon labels into a prediction-format JSON of ground truth.
    Rasterize {
        /// Directory of `<image_id>.txt` label files.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset root holding `classes.txt` and `images.csv`; defaults to the
        /// parent of `--labels`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the mask head on seeded synthetic inputs and print checksums.
    ForwardDemo {
        #[arg(long)]
        seed: u64,
        /// Square input side; a multiple of 32.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Also write pixel features and logits as a tensor bundle.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

fn write_output(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn eval_cmd(config: &Path, out: Option<&Path>, format: Option<ReportFormat>, workers: Option<usize>) -> Result<()> {
    let cfg = Config::load(config)?;
    let dataset = DatasetIndex::load(&cfg.dataset.root)?;
    let predictions = Predictions::load(cfg.predictions_path()?)?;
    let mut settings = cfg.eval_settings();
    if let Some(w) = workers {
        settings.workers = w;
    }
    let summary = run_eval(&dataset, &predictions, &settings)?;
    let report = segkit::harness::BenchReport {
        rows: vec![summary.to_row(&cfg.eval.model_name)],
    };
    write_output(&emit_report(&report, format.unwrap_or(cfg.output.format)), out)
}

fn bench_cmd(config: &Path, out: Option<&Path>, format: Option<ReportFormat>) -> Result<()> {
    let cfg = Config::load(config)?;
    let dataset = DatasetIndex::load(&cfg.dataset.root)?;
    let mut predictor = segkit::harness::bench::predictor_from_config(&cfg, &dataset)?;
    let outcome = run_bench(&dataset, predictor.as_mut(), cfg.bench.warmup, &cfg.eval_settings())?;
    write_output(&emit_report(&outcome.report, format.unwrap_or(cfg.output.format)), out)
}

fn rasterize_cmd(labels: &Path, out: &Path, dataset: Option<&Path>) -> Result<()> {
    let root = match dataset {
        Some(d) => d.to_path_buf(),
        None => labels.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    let mut index = DatasetIndex::load(&root)?;
    for im in &mut index.images {
        im.label_path = labels.join(format!("{}.txt", im.id));
    }
    let mut preds = Predictions::default();
    for i in 0..index.len() {
        let records = index
            .ground_truth(i)?
            .into_iter()
            .map(|g| PredictionRecord {
                class_id: g.class_id,
                score: g.score,
                bbox: g.bbox.to_array(),
                mask: rle_encode(g.mask.as_ref().expect("labels are rasterized")),
            })
            .collect();
        preds.images.insert(index.images[i].id.clone(), records);
    }
    preds.save(out)
}

fn checksum(t: &Tensor) -> String {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let sum: f64 = t.data().iter().sum();
    format!("{:?} sum={sum:.12e} fnv={:016x}", t.dims(), fnv1a(&bytes))
}

fn forward_demo(seed: u64, size: usize, dump: Option<&Path>) -> Result<()> {
    let config = MaskHeadConfig::new(32, vec![16, 24, 32], 32)?;
    let pyramid = FeaturePyramid::seeded(&config, (size, size), seed)?;
    let queries = QuerySet::seeded(2, 8, config.hidden_dim, seed.wrapping_add(1))?;
    let params = MaskHeadParams::seeded(&config, seed.wrapping_add(2))?;
    let out = forward(&pyramid, &queries, &params, &config)?;
    let mut text = format!("seed {seed}\ninput {size}x{size}\n");
    for (i, level) in pyramid.levels.iter().enumerate() {
        text.push_str(&format!("level{i} {}\n", checksum(level)));
    }
    text.push_str(&format!("queries {}\n", checksum(&queries.hidden)));
    text.push_str(&format!("pixel_features {}\n", checksum(&out.pixel_features)));
    text.push_str(&format!("logits {}\n", checksum(&out.logits)));
    if let Some(path) = dump {
        save_bundle(path, &[out.pixel_features, out.logits])?;
    }
    write_output(&text, None)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval {
            config,
            out,
            format,
            workers,
        } => eval_cmd(&config, out.as_deref(), format, workers),
        Command::Bench { config, out, format } => bench_cmd(&config, out.as_deref(), format),
        Command::Rasterize { labels, out, dataset } => rasterize_cmd(&labels, &out, dataset.as_deref()),
        Command::ForwardDemo { seed, size, dump } => forward_demo(seed, size, dump.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
