//! End-to-end runs of the `vdib` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vdib::data::{encode_idx_images, encode_idx_labels};
use vdib::harness::artifacts::decode_pgm;

fn vdib(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vdib"));
    cmd.args(args).env_remove("VDIB_DATA_ROOT").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL_PC: [&str; 8] = [
    "--set",
    "train_examples=30",
    "--set",
    "test_steps=60",
    "--set",
    "seeds=[3]",
    "--set",
    "log_every=10",
];

fn train_small(dir: &Path) -> Output {
    let out_dir = format!("output_dir=\"{}\"", dir.display());
    let mut args = vec!["train", "--task", "predictive_coding", "--set", &out_dir];
    args.extend(SMALL_PC);
    vdib(&args, &[])
}

#[test]
fn exit_codes() {
    assert_eq!(code(&vdib(&["gradcheck", "--scope", "readout"], &[])), 0);
    let bad = vdib(&["train", "--task", "predictive_coding", "--set", "dataset.root=x"], &[]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("dataset.root"));
    assert_eq!(code(&vdib(&["train", "--task", "predictive_coding", "--set", "vdib.no_such_key=1"], &[])), 2);
    assert_eq!(code(&vdib(&["train"], &[])), 2);
    assert_eq!(code(&vdib(&["frobnicate"], &[])), 2);
    assert_eq!(code(&vdib(&["train", "--config", "/nonexistent/run.toml"], &[])), 3);
    assert_eq!(code(&vdib(&["eval", "--checkpoint", "/nonexistent/ck.json"], &[])), 3);
    let dir = tempfile::tempdir().unwrap();
    let sweep_dir = format!("output_dir=\"{}\"", dir.path().display());
    let args = ["sweep", "--task", "predictive_coding", "--set", &sweep_dir, "--axis", "tau_e", "--values", "2.5"];
    assert_eq!(code(&vdib(&args, &[])), 2);
}

#[test]
fn train_eval_export_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let seed_dir = dir.path().join("seed-3");
    let metrics = fs::read_to_string(seed_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("iter,ell_dec,ell_enc,spike_rate_readout,spike_rate_hidden,task_metric\n"));
    assert_eq!(metrics.lines().count(), 1 + 3);

    let ck = seed_dir.join("checkpoint.json");
    let eval = vdib(&["eval", "--checkpoint", ck.to_str().unwrap()], &[]);
    assert_eq!(code(&eval), 0);
    let eval: serde_json::Value = serde_json::from_str(&stdout(&eval)).unwrap();
    assert_eq!(eval["mse"], summary["seeds"][0]["mse"]);

    let csv = dir.path().join("repr.csv");
    let exp = vdib(&["export-repr", "--checkpoint", ck.to_str().unwrap(), "--out", csv.to_str().unwrap()], &[]);
    assert_eq!(code(&exp), 0);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 1 + 10);

    // The resolved snapshot alone reproduces the metrics bit for bit.
    let again = tempfile::tempdir().unwrap();
    let snapshot = seed_dir.join("config.json");
    let out_dir = format!("output_dir=\"{}\"", again.path().display());
    let rerun = vdib(&["train", "--config", snapshot.to_str().unwrap(), "--set", &out_dir], &[]);
    assert_eq!(code(&rerun), 0);
    assert_eq!(fs::read(again.path().join("seed-3/metrics.csv")).unwrap(), metrics.as_bytes());
}

#[test]
fn gen_data_cache_feeds_export() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_small(dir.path())), 0);
    let cache = dir.path().join("train.bin");
    let mut args = vec!["gen-data", "--task", "predictive_coding", "--count", "7", "--out", cache.to_str().unwrap()];
    args.extend(SMALL_PC);
    assert_eq!(code(&vdib(&args, &[])), 0);
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("train.bin.json")).unwrap()).unwrap();
    assert_eq!(side["count"], 7);
    assert_eq!(side["generation"]["split"], "train");

    let ck = dir.path().join("seed-3/checkpoint.json");
    let csv = dir.path().join("full.csv");
    let exp = vdib(
        &[
            "export-repr",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--dataset",
            cache.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
            "--full",
        ],
        &[],
    );
    assert_eq!(code(&exp), 0);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 1 + 10 + 10 * 100);
}

#[test]
fn sweep_writes_long_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = format!("output_dir=\"{}\"", dir.path().display());
    let mut args = vec!["sweep", "--task", "predictive_coding", "--set", &out_dir, "--axis", "delta", "--values", "-2,2"];
    args.extend(SMALL_PC);
    let out = vdib(&args, &[]);
    assert_eq!(code(&out), 0);
    let csv = stdout(&out);
    assert_eq!(csv, fs::read_to_string(dir.path().join("sweep.csv")).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,value,seed,mse,spike_rate");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("delta,-2,3,") && lines[2].starts_with("delta,2,3,"));
}

/// A tiny MNIST-shaped dataset under `<root>/mnist`.
fn fake_mnist(root: &Path) {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    let images = |n: usize| -> Vec<Vec<u8>> {
        (0..n).map(|k| (0..784).map(|i| if (i + 28 * k) % 97 < 20 { 255 } else { 0 }).collect()).collect()
    };
    let labels = |n: usize| -> Vec<u8> { (0..n).map(|k| (k % 10) as u8).collect() };
    fs::write(dir.join("train-images-idx3-ubyte"), encode_idx_images(28, 28, &images(20))).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), encode_idx_labels(&labels(20))).unwrap();
    fs::write(dir.join("t10k-images-idx3-ubyte"), encode_idx_images(28, 28, &images(6))).unwrap();
    fs::write(dir.join("t10k-labels-idx1-ubyte"), encode_idx_labels(&labels(6))).unwrap();
}

#[test]
fn image_task_uses_the_data_root_and_writes_graymaps() {
    let data = tempfile::tempdir().unwrap();
    fake_mnist(data.path());
    let dir = tempfile::tempdir().unwrap();
    let out_dir = format!("output_dir=\"{}\"", dir.path().display());
    let args = [
        "train", "--task", "mnist_naturalize", "--set", &out_dir, "--set", "dataset.root=\"mnist\"",
        "--set", "train_examples=5", "--set", "seeds=[0]", "--set", "encoder.hidden=[8]",
        "--set", "encoder.n_readout=4", "--set", "vdib.steps=4", "--set", "vdib.tau_e=4", "--set", "vdib.tau_d=4",
        "--set", "dataset.classifier_epochs=1", "--set", "images_to_write=2",
    ];
    // Without the variable the relative root points at the working directory.
    assert_eq!(code(&vdib(&args, &[])), 3);
    let out = vdib(&args, &[("VDIB_DATA_ROOT", data.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["seeds"][0]["time"]["images"], 6);
    for variant in ["time", "rate"] {
        let images = dir.path().join("seed-0").join(variant).join("images");
        let names: Vec<String> = fs::read_dir(&images)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 4, "{names:?}");
        let (w, h, px) = decode_pgm(&fs::read(images.join("target-0000.pgm")).unwrap()).unwrap();
        assert_eq!((w, h, px.len()), (28, 28, 784));
    }
}
