//! Command-line pipeline: train the original classifier, compress it,
//! compute guaranteed discrepancy bounds, and repair.
//!
//! Every command is deterministic given `--seed`; reports are JSON with an
//! embedded run manifest (byte-identical across runs except the wall-time
//! field) and CSV companions carry the plot data. Exit codes: 0 success,
//! 1 repair timeout, 2 usage/input error, 3 internal numerical error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use nnequiv::compress::{original_size_bytes, quantize, quantized_size_bytes, QuantSpec};
use nnequiv::data::{load_mnist, load_mnist_csv, Dataset};
use nnequiv::error::{Error, Result};
use nnequiv::merge::merge;
use nnequiv::network::Network;
use nnequiv::reach::{
    merged_discrepancy, select_brightest_dims, star_from_linf_ball, ReachOptions, StarSet,
};
use nnequiv::repair::{
    containment_check, mean_discrepancy, repair, RepairConfig, RepairOutcome, RepairResult,
    RepairSetup, RepairTarget, RetrainStrategy,
};
use nnequiv::training::{
    evaluate_accuracy, init_mlp, train_with_progress, LossKind, TrainConfig,
};

const EXIT_OK: i32 = 0;
const EXIT_TIMEOUT: i32 = 1;
const EXIT_USAGE: i32 = 2;
const EXIT_NUMERICAL: i32 = 3;

/// Samples per image used for the pointwise per-image discrepancy statistic.
const IMAGE_DELTA_SAMPLES: usize = 64;

#[derive(Parser)]
#[command(
    name = "nnequiv",
    version,
    about = "Guaranteed output discrepancy bounds and repair for compressed feedforward ReLU networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a fully connected ReLU classifier and write it as network JSON.
    Train(TrainArgs),
    /// Quantize a trained network and report size and accuracy effects.
    Compress(CompressArgs),
    /// Guaranteed output-discrepancy bounds of a network pair on one image.
    Reach(ReachArgs),
    /// Iteratively retrain the compressed network until the reachable
    /// discrepancy fits the target box.
    Repair(RepairArgs),
}

#[derive(Args)]
struct DataArgs {
    /// IDX image file.
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// CSV fallback (label,pixel0,...,pixelN).
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    csv: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self, what: &str) -> Result<Dataset> {
        match (&self.images, &self.labels, &self.csv) {
            (Some(i), Some(l), None) => load_mnist(i, l),
            (None, None, Some(c)) => load_mnist_csv(c),
            _ => Err(Error::Validation(format!(
                "{what}: provide --images with --labels, or --csv"
            ))),
        }
    }

    fn manifest_entries(&self, prefix: &str, into: &mut BTreeMap<String, String>) {
        if let Some(p) = &self.images {
            into.insert(format!("{prefix}_images"), p.display().to_string());
        }
        if let Some(p) = &self.labels {
            into.insert(format!("{prefix}_labels"), p.display().to_string());
        }
        if let Some(p) = &self.csv {
            into.insert(format!("{prefix}_csv"), p.display().to_string());
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// IDX image/label pair for the held-out accuracy report.
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long, requires = "test_images")]
    test_labels: Option<PathBuf>,
    /// Layer widths, input through output.
    #[arg(long, default_value = "784,256,64,10", value_delimiter = ',')]
    arch: Vec<usize>,
    /// Base TrainConfig as JSON; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output network JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    /// Network JSON to quantize.
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(2..=16))]
    bits: u8,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long, requires = "test_images")]
    test_labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ReachArgs {
    /// Original network JSON.
    #[arg(long)]
    net1: PathBuf,
    /// Compressed network JSON.
    #[arg(long)]
    net2: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Index of the anchor image within the dataset.
    #[arg(long, default_value_t = 0)]
    image_index: usize,
    /// Input perturbation radius.
    #[arg(long)]
    epsilon: f64,
    /// Number of brightest pixels to perturb.
    #[arg(long)]
    perturb_dims: usize,
    #[arg(long, default_value_t = 4096)]
    max_sets: usize,
    /// Fail instead of over-approximating when the split budget is exceeded.
    #[arg(long)]
    no_box_fallback: bool,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV with per-label whisker rows.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct RepairArgs {
    #[arg(long)]
    net1: PathBuf,
    #[arg(long)]
    net2: PathBuf,
    /// Test split: evaluation images are drawn from it and accuracy is
    /// tracked on all of it.
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Per-image target = this fraction of the initial discrepancy bounds.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    target_frac: f64,
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    #[arg(long, default_value_t = 3)]
    retrain_epochs: usize,
    #[arg(long, default_value_t = 500)]
    n_samples: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    perturb_dims: usize,
    /// How many evaluation images to pick from the test split.
    #[arg(long, default_value_t = 10)]
    num_images: usize,
    /// Pick evaluation images only from those the original network
    /// misclassifies.
    #[arg(long)]
    misclassified_only: bool,
    #[arg(long, default_value_t = 4096)]
    max_sets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Retraining step size relative to the round's mean residual norm.
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    /// Retraining target construction.
    #[arg(long, value_enum, default_value_t = StrategyArg::SignedStep)]
    strategy: StrategyArg,
    /// Repaired network JSON path.
    #[arg(long)]
    out_net: PathBuf,
    /// Per-iteration trace CSV (iteration,mean_discrepancy,accuracy).
    #[arg(long)]
    trace_csv: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum StrategyArg {
    SignedStep,
    MidpointStep,
    FullReplacement,
}

impl From<StrategyArg> for RetrainStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::SignedStep => RetrainStrategy::SignedStep,
            StrategyArg::MidpointStep => RetrainStrategy::MidpointStep,
            StrategyArg::FullReplacement => RetrainStrategy::FullReplacement,
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    wall_time_s: f64,
}

pub fn run() -> i32 {
    if let Ok(threads) = std::env::var("NNEQUIV_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Compress(args) => cmd_compress(args),
        Command::Reach(args) => cmd_reach(args),
        Command::Repair(args) => cmd_repair(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    }
}

fn classify(e: &Error) -> i32 {
    match e {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Validation(_)
        | Error::Dimension { .. }
        | Error::Incompatible(_) => EXIT_USAGE,
        Error::Lp(_) | Error::Training { .. } | Error::OverBudget { .. } | Error::Internal(_) => {
            EXIT_NUMERICAL
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("report serialization: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_test_pair(images: &Option<PathBuf>, labels: &Option<PathBuf>) -> Result<Option<Dataset>> {
    match (images, labels) {
        (Some(i), Some(l)) => Ok(Some(load_mnist(i, l)?)),
        (None, None) => Ok(None),
        _ => Err(Error::Validation(
            "--test-images and --test-labels must be given together".into(),
        )),
    }
}

#[derive(Serialize)]
struct TrainReport {
    manifest: RunManifest,
    arch: Vec<usize>,
    epochs: usize,
    final_loss: Option<f64>,
    train_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let start = Instant::now();
    if args.arch.len() < 2 {
        return Err(Error::Validation("--arch needs at least input and output widths".into()));
    }
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.loss = LossKind::CrossEntropy;

    let data = args.data.load("training data")?;
    let test = load_test_pair(&args.test_images, &args.test_labels)?;

    let init = init_mlp(&args.arch, cfg.seed)?;
    let mut final_loss = None;
    let mut train_accuracy = None;
    let trained = train_with_progress(&init, &data, &cfg, |record| {
        final_loss = Some(record.loss);
        train_accuracy = record.accuracy;
        println!(
            "{}",
            serde_json::to_string(record).expect("epoch record serializes")
        );
    })?;
    trained.save(&args.out)?;

    let test_accuracy = match &test {
        Some(t) => Some(evaluate_accuracy(&trained, t)?),
        None => None,
    };

    if let Some(report_path) = &args.report {
        let mut inputs = BTreeMap::new();
        args.data.manifest_entries("train", &mut inputs);
        if let Some(p) = &args.test_images {
            inputs.insert("test_images".into(), p.display().to_string());
        }
        if let Some(p) = &args.test_labels {
            inputs.insert("test_labels".into(), p.display().to_string());
        }
        let mut outputs = BTreeMap::new();
        outputs.insert("network".into(), args.out.display().to_string());
        let report = TrainReport {
            manifest: RunManifest {
                command: "train".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: Some(cfg.seed),
                config: serde_json::to_value(&cfg).unwrap(),
                inputs,
                outputs,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
            arch: args.arch.clone(),
            epochs: cfg.epochs,
            final_loss,
            train_accuracy,
            test_accuracy,
        };
        write_json(report_path, &report)?;
    }
    if let Some(acc) = test_accuracy {
        eprintln!("test accuracy: {acc:.4}");
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CompressReport {
    manifest: RunManifest,
    bits: u8,
    parameter_count: usize,
    original_size_bytes: u64,
    quantized_size_bytes: u64,
    size_ratio: f64,
    accuracy_before: Option<f64>,
    accuracy_after: Option<f64>,
}

fn cmd_compress(args: CompressArgs) -> Result<i32> {
    let start = Instant::now();
    let net = Network::load(&args.net)?;
    let spec = QuantSpec::new(args.bits)?;
    let compressed = quantize(&net, &spec);
    compressed.save(&args.out)?;

    let test = load_test_pair(&args.test_images, &args.test_labels)?;
    let (accuracy_before, accuracy_after) = match &test {
        Some(t) => (
            Some(evaluate_accuracy(&net, t)?),
            Some(evaluate_accuracy(&compressed, t)?),
        ),
        None => (None, None),
    };

    if let Some(report_path) = &args.report {
        let mut inputs = BTreeMap::new();
        inputs.insert("network".into(), args.net.display().to_string());
        let mut outputs = BTreeMap::new();
        outputs.insert("network".into(), args.out.display().to_string());
        let original = original_size_bytes(&net);
        let quantized = quantized_size_bytes(&net, &spec);
        let report = CompressReport {
            manifest: RunManifest {
                command: "compress".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: None,
                config: serde_json::to_value(spec).unwrap(),
                inputs,
                outputs,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
            bits: args.bits,
            parameter_count: net.parameter_count(),
            original_size_bytes: original,
            quantized_size_bytes: quantized,
            size_ratio: quantized as f64 / original as f64,
            accuracy_before,
            accuracy_after,
        };
        write_json(report_path, &report)?;
    }
    if let (Some(b), Some(a)) = (accuracy_before, accuracy_after) {
        eprintln!("accuracy: {b:.4} -> {a:.4}");
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ReachReport {
    manifest: RunManifest,
    image_index: usize,
    label: Option<usize>,
    epsilon: f64,
    perturb_dims: Vec<usize>,
    /// True when the perturbation ball leaves [0, 1] on some pixel; values
    /// are not clamped, the star covers the full ball.
    ball_exceeds_unit_range: bool,
    /// Output scores of the original network on the anchor image.
    original_scores: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    delta_max: f64,
    delta_tilde_max: Vec<f64>,
    delta_tilde_mag: Vec<f64>,
    set_count: usize,
    splits_performed: usize,
    overapprox_used: bool,
    per_layer_set_counts: Vec<usize>,
    reach_wall_time_s: f64,
}

fn cmd_reach(args: ReachArgs) -> Result<i32> {
    let start = Instant::now();
    let n1 = Network::load(&args.net1)?;
    let n2 = Network::load(&args.net2)?;
    let data = args.data.load("dataset")?;
    if args.image_index >= data.len() {
        return Err(Error::Validation(format!(
            "--image-index {} out of range for {} images",
            args.image_index,
            data.len()
        )));
    }
    let anchor = data.inputs()[args.image_index].clone();
    let dims = select_brightest_dims(&anchor, args.perturb_dims);
    let star = star_from_linf_ball(&anchor, args.epsilon, Some(&dims))?;
    let merged = merge(&n1, &n2)?;
    let opts = ReachOptions {
        max_sets: args.max_sets,
        box_fallback: !args.no_box_fallback,
    };
    let (result, report) = merged_discrepancy(&merged, &star, &opts)?;
    let original_scores = n1.forward(&anchor)?.to_vec();

    if let Some(csv_path) = &args.out_csv {
        let mut csv = String::from("label,lower,upper,original_score\n");
        for j in 0..report.lower.len() {
            csv.push_str(&format!(
                "{j},{},{},{}\n",
                report.lower[j], report.upper[j], original_scores[j]
            ));
        }
        write_text(csv_path, &csv)?;
    }

    let mut inputs = BTreeMap::new();
    inputs.insert("net1".into(), args.net1.display().to_string());
    inputs.insert("net2".into(), args.net2.display().to_string());
    args.data.manifest_entries("data", &mut inputs);
    let mut outputs = BTreeMap::new();
    outputs.insert("report".into(), args.out.display().to_string());
    if let Some(p) = &args.out_csv {
        outputs.insert("csv".into(), p.display().to_string());
    }
    let out = ReachReport {
        manifest: RunManifest {
            command: "reach".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: serde_json::json!({
                "epsilon": args.epsilon,
                "perturb_dims": args.perturb_dims,
                "max_sets": args.max_sets,
                "box_fallback": !args.no_box_fallback,
            }),
            inputs,
            outputs,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        image_index: args.image_index,
        label: data.labels().map(|l| l[args.image_index]),
        epsilon: args.epsilon,
        ball_exceeds_unit_range: dims
            .iter()
            .any(|&d| anchor[d] - args.epsilon < 0.0 || anchor[d] + args.epsilon > 1.0),
        perturb_dims: dims,
        original_scores,
        lower: report.lower.clone(),
        upper: report.upper.clone(),
        delta_max: report.delta_max,
        delta_tilde_max: report.delta_tilde_max.clone(),
        delta_tilde_mag: report.delta_tilde_mag.clone(),
        set_count: report.set_count,
        splits_performed: result.splits_performed,
        overapprox_used: result.overapprox_used,
        per_layer_set_counts: result.per_layer_set_counts.clone(),
        reach_wall_time_s: report.wall_time_s,
    };
    write_json(&args.out, &out)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct NetStats {
    accuracy: f64,
    parameter_count: usize,
}

#[derive(Serialize)]
struct ImageRow {
    image_index: usize,
    label: usize,
    delta_before: f64,
    delta_after: f64,
    reach_delta_max_before: f64,
    reach_delta_max_after: f64,
    target_met: bool,
}

#[derive(Serialize)]
struct RepairReport {
    manifest: RunManifest,
    alpha: f64,
    target_frac: f64,
    outcome: RepairOutcome,
    iterations: usize,
    original: NetStats,
    compressed: NetStats,
    repaired: NetStats,
    images: Vec<ImageRow>,
    trace: Vec<nnequiv::repair::IterationRecord>,
}

/// Pointwise per-image discrepancy statistic: mean over the anchor plus a
/// fixed draw of star samples of the max-coordinate output distance.
fn per_image_delta(
    n1: &Network,
    n2: &Network,
    star: &StarSet,
    anchor: &Array1<f64>,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![anchor.clone()];
    for _ in 0..IMAGE_DELTA_SAMPLES {
        points.push(star.sample_box(&mut rng)?);
    }
    mean_discrepancy(n1, n2, &points)
}

fn cmd_repair(args: RepairArgs) -> Result<i32> {
    let start = Instant::now();
    let n1 = Network::load(&args.net1)?;
    let n2 = Network::load(&args.net2)?;
    let data = args.data.load("test data")?;
    let labels = data
        .labels()
        .ok_or_else(|| Error::Validation("repair needs a labeled test split".into()))?;

    // Evaluation pool, optionally restricted to images the original network
    // gets wrong.
    let mut pool: Vec<usize> = (0..data.len()).collect();
    if args.misclassified_only {
        let mut wrong = Vec::new();
        for &i in &pool {
            let scores = n1.forward(&data.inputs()[i])?;
            if nnequiv_argmax(&scores) != labels[i] {
                wrong.push(i);
            }
        }
        if wrong.is_empty() {
            return Err(Error::Validation(
                "--misclassified-only: the original network classifies every image correctly"
                    .into(),
            ));
        }
        pool = wrong;
    }
    if args.num_images == 0 || args.num_images > pool.len() {
        return Err(Error::Validation(format!(
            "--num-images {} out of range for a pool of {}",
            args.num_images,
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    pool.shuffle(&mut rng);
    let mut chosen: Vec<usize> = pool[..args.num_images].to_vec();
    chosen.sort_unstable();

    let eval_inputs: Vec<Array1<f64>> =
        chosen.iter().map(|&i| data.inputs()[i].clone()).collect();
    let cfg = RepairConfig {
        alpha: args.alpha,
        retrain_epochs: args.retrain_epochs,
        max_iterations: args.max_iter,
        n_samples: args.n_samples,
        epsilon: args.epsilon,
        perturb_dims: Some(args.perturb_dims),
        max_sets: args.max_sets,
        seed: args.seed,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        momentum: args.momentum,
        strategy: args.strategy.into(),
    };
    let setup = RepairSetup {
        eval_inputs: eval_inputs.clone(),
        accuracy_data: Some(&data),
    };
    let target = RepairTarget::FractionOfInitial(args.target_frac);
    let result = repair(&n1, &n2, &target, &cfg, &setup)?;

    result.repaired.save(&args.out_net)?;
    if let Some(trace_path) = &args.trace_csv {
        write_text(trace_path, &trace_csv(&result))?;
    }
    if let Some(report_path) = &args.report {
        let report = build_repair_report(&args, &n1, &n2, &data, &chosen, &cfg, &result, start)?;
        write_json(report_path, &report)?;
    }
    let last = result.trace.records.last().expect("trace is non-empty");
    eprintln!(
        "outcome: {:?} after {} iterations (mean discrepancy {:.4}, accuracy {})",
        result.trace.outcome,
        last.iteration,
        last.mean_discrepancy,
        last.accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
    );
    Ok(match result.trace.outcome {
        RepairOutcome::Success => EXIT_OK,
        RepairOutcome::Timeout => EXIT_TIMEOUT,
    })
}

fn trace_csv(result: &RepairResult) -> String {
    let mut csv = String::from("iteration,mean_discrepancy,accuracy\n");
    for r in &result.trace.records {
        csv.push_str(&format!(
            "{},{},{}\n",
            r.iteration,
            r.mean_discrepancy,
            r.accuracy.map_or(String::new(), |a| a.to_string())
        ));
    }
    csv
}

#[allow(clippy::too_many_arguments)]
fn build_repair_report(
    args: &RepairArgs,
    n1: &Network,
    n2: &Network,
    data: &Dataset,
    chosen: &[usize],
    cfg: &RepairConfig,
    result: &RepairResult,
    start: Instant,
) -> Result<RepairReport> {
    let labels = data.labels().expect("validated");
    let mut images = Vec::with_capacity(chosen.len());
    for (k, &idx) in chosen.iter().enumerate() {
        let anchor = &data.inputs()[idx];
        let dims = select_brightest_dims(anchor, args.perturb_dims);
        let star = star_from_linf_ball(anchor, args.epsilon, Some(&dims))?;
        let delta_seed = args.seed.wrapping_add(idx as u64);
        images.push(ImageRow {
            image_index: idx,
            label: labels[idx],
            delta_before: per_image_delta(n1, n2, &star, anchor, delta_seed)?,
            delta_after: per_image_delta(n1, &result.repaired, &star, anchor, delta_seed)?,
            reach_delta_max_before: result.initial_reports[k].delta_max,
            reach_delta_max_after: result.final_reports[k].delta_max,
            target_met: containment_check(&result.final_reports[k], &result.targets[k]),
        });
    }
    let mut inputs = BTreeMap::new();
    inputs.insert("net1".into(), args.net1.display().to_string());
    inputs.insert("net2".into(), args.net2.display().to_string());
    args.data.manifest_entries("data", &mut inputs);
    let mut outputs = BTreeMap::new();
    outputs.insert("network".into(), args.out_net.display().to_string());
    if let Some(p) = &args.trace_csv {
        outputs.insert("trace_csv".into(), p.display().to_string());
    }
    if let Some(p) = &args.report {
        outputs.insert("report".into(), p.display().to_string());
    }

    Ok(RepairReport {
        manifest: RunManifest {
            command: "repair".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: Some(args.seed),
            config: serde_json::to_value(cfg).unwrap(),
            inputs,
            outputs,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        alpha: args.alpha,
        target_frac: args.target_frac,
        outcome: result.trace.outcome,
        iterations: result.trace.records.last().map_or(0, |r| r.iteration),
        original: NetStats {
            accuracy: evaluate_accuracy(n1, data)?,
            parameter_count: n1.parameter_count(),
        },
        compressed: NetStats {
            accuracy: evaluate_accuracy(n2, data)?,
            parameter_count: n2.parameter_count(),
        },
        repaired: NetStats {
            accuracy: evaluate_accuracy(&result.repaired, data)?,
            parameter_count: result.repaired.parameter_count(),
        },
        images,
        trace: result.trace.records.clone(),
    })
}

fn nnequiv_argmax(values: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
