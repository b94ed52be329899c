//! CLI integration tests on a desk-scale fixture: exit codes, file outputs,
//! and the per-command edge cases.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use nnequiv::compress::{quantize, QuantSpec};
use nnequiv::data::{load_mnist, write_idx_images, write_idx_labels};
use nnequiv::network::Network;
use nnequiv::synth::{generate, SynthSpec};
use nnequiv::training::{init_mlp, train, TrainConfig};

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            train: 300,
            test: 120,
            ..SynthSpec::default()
        };
        let (train_data, test_data) = generate(&spec).unwrap();
        write_idx_images(dir.path().join("train-images.idx"), train_data.inputs(), 28, 28)
            .unwrap();
        write_idx_labels(dir.path().join("train-labels.idx"), train_data.labels().unwrap())
            .unwrap();
        write_idx_images(dir.path().join("test-images.idx"), test_data.inputs(), 28, 28).unwrap();
        write_idx_labels(dir.path().join("test-labels.idx"), test_data.labels().unwrap()).unwrap();

        let net = init_mlp(&[784, 16, 10], 5).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 32,
            seed: 5,
            ..TrainConfig::default()
        };
        let trained = train(&net, &train_data, &cfg).unwrap();
        trained.save(dir.path().join("orig.json")).unwrap();
        quantize(&trained, &QuantSpec::new(6).unwrap())
            .save(dir.path().join("quant.json"))
            .unwrap();
        Fixture { dir }
    })
}

fn nnequiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnequiv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_epochs_zero_saves_initialized_network() {
    let f = fixture();
    let run = |out_name: &str| {
        let out_path = f.arg(out_name);
        let out = nnequiv(&[
            "train",
            "--images", &f.arg("train-images.idx"),
            "--labels", &f.arg("train-labels.idx"),
            "--arch", "784,12,10",
            "--epochs", "0",
            "--batch-size", "32",
            "--seed", "9",
            "--out", &out_path,
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_path
    };
    let first = run("untrained.json");
    let second = run("untrained-again.json");
    // same command, same bytes
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    // the saved net is the seeded initialization, not a trained one; weights
    // agree with an in-process init up to cross-build FP codegen differences
    let saved = Network::load(&first).unwrap();
    let expected = init_mlp(&[784, 12, 10], 9).unwrap();
    assert_eq!(saved.depth(), expected.depth());
    assert_eq!(saved.parameter_count(), expected.parameter_count());
    for (a, b) in saved.layers().iter().zip(expected.layers()) {
        if let (
            nnequiv::network::Layer::FullyConnected { weight: wa, bias: ba },
            nnequiv::network::Layer::FullyConnected { weight: wb, bias: bb },
        ) = (a, b)
        {
            for (x, y) in wa.iter().zip(wb.iter()) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
            assert_eq!(ba, bb);
        }
    }
}

#[test]
fn train_bad_path_exits_2() {
    let f = fixture();
    let out = nnequiv(&[
        "train",
        "--images", "/nonexistent/images.idx",
        "--labels", "/nonexistent/labels.idx",
        "--out", &f.arg("never.json"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn train_emits_ndjson_progress() {
    let f = fixture();
    let out = nnequiv(&[
        "train",
        "--images", &f.arg("train-images.idx"),
        "--labels", &f.arg("train-labels.idx"),
        "--arch", "784,8,10",
        "--epochs", "2",
        "--batch-size", "32",
        "--seed", "3",
        "--out", &f.arg("progress.json"),
    ]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    for (i, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["epoch"].as_u64().unwrap() as usize, i);
        assert!(v["loss"].as_f64().unwrap().is_finite());
        assert!(v["accuracy"].as_f64().is_some());
    }
}

#[test]
fn compress_bits_out_of_range_exits_2() {
    let f = fixture();
    for bits in ["1", "17"] {
        let out = nnequiv(&[
            "compress",
            "--net", &f.arg("orig.json"),
            "--bits", bits,
            "--out", &f.arg("never.json"),
        ]);
        assert_eq!(code(&out), 2, "bits={bits}");
    }
}

#[test]
fn compress_is_idempotent_on_grid_aligned_network() {
    let f = fixture();
    let first = f.arg("q16.json");
    let second = f.arg("q16-again.json");
    let run = |input: &str, output: &str| {
        let out = nnequiv(&[
            "compress",
            "--net", input,
            "--bits", "16",
            "--out", output,
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&f.arg("orig.json"), &first);
    run(&first, &second);
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap(),
        "requantizing a grid-aligned network changed it"
    );
}

#[test]
fn compress_report_fields() {
    let f = fixture();
    let report_path = f.arg("compress-report.json");
    let out = nnequiv(&[
        "compress",
        "--net", &f.arg("orig.json"),
        "--bits", "8",
        "--test-images", &f.arg("test-images.idx"),
        "--test-labels", &f.arg("test-labels.idx"),
        "--out", &f.arg("q8.json"),
        "--report", &report_path,
    ]);
    assert_eq!(code(&out), 0);
    let report = read_json(&f.path("compress-report.json"));
    assert_eq!(report["parameter_count"].as_u64().unwrap(), 12_730);
    let ratio = report["size_ratio"].as_f64().unwrap();
    assert!((ratio - 0.25).abs() < 0.02, "8-bit size ratio {ratio}");
    assert!(report["accuracy_before"].as_f64().is_some());
    assert!(report["accuracy_after"].as_f64().is_some());
    assert_eq!(report["manifest"]["command"], "compress");
}

#[test]
fn reach_self_pair_zero_whiskers() {
    let f = fixture();
    let out = nnequiv(&[
        "reach",
        "--net1", &f.arg("orig.json"),
        "--net2", &f.arg("orig.json"),
        "--images", &f.arg("test-images.idx"),
        "--labels", &f.arg("test-labels.idx"),
        "--image-index", "3",
        "--epsilon", "0.05",
        "--perturb-dims", "4",
        "--out", &f.arg("reach-self.json"),
        "--out-csv", &f.arg("reach-self.csv"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&f.path("reach-self.json"));
    for j in 0..10 {
        assert_eq!(report["lower"][j], 0.0);
        assert_eq!(report["upper"][j], 0.0);
    }
    assert_eq!(report["delta_max"], 0.0);
    let csv = std::fs::read_to_string(f.path("reach-self.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11, "header + one row per label");
    assert!(csv.starts_with("label,lower,upper,original_score\n"));
}

#[test]
fn reach_epsilon_zero_equals_pointwise_difference() {
    let f = fixture();
    let out = nnequiv(&[
        "reach",
        "--net1", &f.arg("orig.json"),
        "--net2", &f.arg("quant.json"),
        "--images", &f.arg("test-images.idx"),
        "--labels", &f.arg("test-labels.idx"),
        "--image-index", "0",
        "--epsilon", "0",
        "--perturb-dims", "4",
        "--out", &f.arg("reach-eps0.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&f.path("reach-eps0.json"));

    let n1 = Network::load(f.path("orig.json")).unwrap();
    let n2 = Network::load(f.path("quant.json")).unwrap();
    let data = load_mnist(f.path("test-images.idx"), f.path("test-labels.idx")).unwrap();
    let x = &data.inputs()[0];
    let diff = n1.forward(x).unwrap() - n2.forward(x).unwrap();
    for j in 0..10 {
        let lo = report["lower"][j].as_f64().unwrap();
        let hi = report["upper"][j].as_f64().unwrap();
        assert!((lo - diff[j]).abs() <= 1e-9, "lower[{j}] = {lo} vs {}", diff[j]);
        assert!((hi - diff[j]).abs() <= 1e-9);
    }
}

#[test]
fn reach_runs_are_deterministic() {
    let f = fixture();
    // re-running the same command must reproduce the same bytes, and capping
    // the worker pool must not change the numbers
    let run = |threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_nnequiv"))
            .env("NNEQUIV_THREADS", threads)
            .args([
                "reach",
                "--net1", &f.arg("orig.json"),
                "--net2", &f.arg("quant.json"),
                "--images", &f.arg("test-images.idx"),
                "--labels", &f.arg("test-labels.idx"),
                "--image-index", "7",
                "--epsilon", "0.03",
                "--perturb-dims", "5",
                "--out", &f.arg("reach-det.json"),
                "--out-csv", &f.arg("reach-det.csv"),
            ])
            .output()
            .expect("binary runs");
        assert_eq!(code(&out), 0);
        (
            std::fs::read(f.path("reach-det.csv")).unwrap(),
            read_json(&f.path("reach-det.json")),
        )
    };
    let (csv_a, mut a) = run("2");
    let (csv_b, mut b) = run("1");
    assert_eq!(csv_a, csv_b);
    // identical modulo the wall-time fields
    for v in [&mut a, &mut b] {
        v["manifest"]["wall_time_s"] = 0.into();
        v["reach_wall_time_s"] = 0.into();
    }
    assert_eq!(a, b);
}

#[test]
fn repair_max_iter_zero_times_out_with_trace() {
    let f = fixture();
    let out = nnequiv(&[
        "repair",
        "--net1", &f.arg("orig.json"),
        "--net2", &f.arg("quant.json"),
        "--images", &f.arg("test-images.idx"),
        "--labels", &f.arg("test-labels.idx"),
        "--alpha", "10",
        "--max-iter", "0",
        "--epsilon", "0.02",
        "--perturb-dims", "3",
        "--n-samples", "20",
        "--num-images", "4",
        "--seed", "2",
        "--out-net", &f.arg("repaired-t0.json"),
        "--trace-csv", &f.arg("trace-t0.csv"),
        "--report", &f.arg("repair-t0.json"),
    ]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(f.path("trace-t0.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iteration,mean_discrepancy,accuracy");
    assert_eq!(lines.len(), 2, "exactly the iteration-0 record");
    assert!(lines[1].starts_with("0,"));
    let report = read_json(&f.path("repair-t0.json"));
    assert_eq!(report["outcome"], "timeout");
}

#[test]
fn repair_misclassified_only_selects_wrong_images() {
    let f = fixture();
    let out = nnequiv(&[
        "repair",
        "--net1", &f.arg("orig.json"),
        "--net2", &f.arg("quant.json"),
        "--images", &f.arg("test-images.idx"),
        "--labels", &f.arg("test-labels.idx"),
        "--alpha", "10",
        "--max-iter", "0",
        "--epsilon", "0.02",
        "--perturb-dims", "3",
        "--n-samples", "10",
        "--num-images", "2",
        "--misclassified-only",
        "--seed", "3",
        "--out-net", &f.arg("repaired-mc.json"),
        "--report", &f.arg("repair-mc.json"),
    ]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&f.path("repair-mc.json"));
    let n1 = Network::load(f.path("orig.json")).unwrap();
    let data = load_mnist(f.path("test-images.idx"), f.path("test-labels.idx")).unwrap();
    let labels = data.labels().unwrap();
    let images = report["images"].as_array().unwrap();
    assert_eq!(images.len(), 2);
    for row in images {
        let idx = row["image_index"].as_u64().unwrap() as usize;
        let scores = n1.forward(&data.inputs()[idx]).unwrap();
        let pred = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        assert_ne!(pred, labels[idx], "image {idx} is not misclassified");
    }
}
