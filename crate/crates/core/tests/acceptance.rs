//! Acceptance criteria 1-12. Each test prints one `criterion N: PASS|FAIL`
//! line to stderr (uncaptured) and fails when its criterion does.
//!
//! Criterion 10 needs MNIST IDX files under `$VDIB_DATA_ROOT/mnist` or, when
//! the variable is unset, under `data/mnist` at the workspace root.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use vdib::data::{encode_aedat, encode_idx_images, encode_idx_labels, parse_aedat, parse_idx, Event, EventStream, IdxData};
use vdib::decoder::{DecoderKind, Likelihood};
use vdib::encoder::{trace_step, FilterParams, TraceState};
use vdib::gradcheck::{
    decoder_gradcheck, default_formula, kl_check, normalization_check, readout_gradcheck, unbiasedness_check, CheckReport,
};
use vdib::harness::{run_mnist_naturalization, run_predictive_coding, sweep, ExperimentConfig, SweepAxis, SweepRow, DATA_ROOT_ENV};
use vdib::mathcore::Rng;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str, out: &Path) -> ExperimentConfig {
    let path = workspace().join("configs").join(name);
    let set = format!("output_dir=\"{}\"", out.display());
    ExperimentConfig::load(&path, &[set]).unwrap()
}

fn verdict(n: u32, passed: bool, detail: &str, elapsed: Duration) {
    let line = format!(
        "criterion {n}: {} ({detail}; {:.1} s)\n",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn checks_verdict(n: u32, reports: &[CheckReport], limit: Duration, start: Instant) {
    let elapsed = start.elapsed();
    let worst = reports.iter().map(|r| r.max_error).fold(0.0, f64::max);
    let passed = reports.iter().all(|r| r.passed) && elapsed < limit;
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.to_string()).collect();
    verdict(n, passed, &format!("{} checks, worst error {worst:.3e}", reports.len()), elapsed);
    assert!(failed.is_empty(), "{failed:?}");
    assert!(elapsed < limit, "took {elapsed:?}");
}

#[test]
fn criterion_01_readout_gradients() {
    let start = Instant::now();
    let reports: Vec<_> = (0..2).map(|s| readout_gradcheck(20, 100 + s, default_formula()).unwrap()).collect();
    checks_verdict(1, &reports, Duration::from_secs(10), start);
}

#[test]
fn criterion_02_decoder_backprop() {
    let start = Instant::now();
    let mut reports = Vec::new();
    for kind in [DecoderKind::LinearSoftmax, DecoderKind::Mlp] {
        for lik in [Likelihood::Categorical, Likelihood::BernoulliPixel, Likelihood::GaussianUnit] {
            reports.push(decoder_gradcheck(kind, lik, 20, 200).unwrap());
        }
    }
    checks_verdict(2, &reports, Duration::from_secs(10), start);
}

#[test]
fn criterion_03_normalization() {
    let start = Instant::now();
    let reports = vec![normalization_check(40, 300).unwrap()];
    checks_verdict(3, &reports, Duration::from_secs(5), start);
}

#[test]
fn criterion_04_unbiasedness() {
    let start = Instant::now();
    let reports = vec![unbiasedness_check(12, 400).unwrap()];
    checks_verdict(4, &reports, Duration::from_secs(30), start);
}

#[test]
fn criterion_05_kl_consistency() {
    let start = Instant::now();
    let reports = vec![kl_check(30, 500).unwrap()];
    checks_verdict(5, &reports, Duration::from_secs(10), start);
}

/// Impulse responses of the trace recursions in closed form:
/// `p` answers a spike `δ` steps back with `(a^{δ−1} − b^{δ−1}) / (a − b)`,
/// `r` with `c^{δ−1}`.
fn closed_form(params: &FilterParams, delta: usize) -> (f64, f64) {
    let a = (-1.0 / params.tau_mem).exp();
    let b = (-1.0 / params.tau_syn).exp();
    let c = (-1.0 / params.tau_ref).exp();
    let k = delta as i32 - 1;
    ((a.powi(k) - b.powi(k)) / (a - b), c.powi(k))
}

#[test]
fn criterion_06_ar_convolution_equivalence() {
    let start = Instant::now();
    let mut rng = Rng::new(600, 0);
    let steps = 100;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let params = FilterParams {
            tau_mem: rng.uniform_range(2.0, 30.0),
            tau_syn: rng.uniform_range(0.5, 1.9),
            tau_ref: rng.uniform_range(1.0, 20.0),
            tau_e: steps,
            num_kernels: 1,
        };
        let pre: Vec<u8> = (0..steps).map(|_| u8::from(rng.uniform() < 0.3)).collect();
        let post: Vec<u8> = (0..steps).map(|_| u8::from(rng.uniform() < 0.2)).collect();
        let mut state = TraceState::new(1, 1);
        for t in 0..steps {
            state = trace_step(&state, &[pre[t]], &[post[t]], &params).unwrap();
            // The state now describes step t + 1; spikes at s ≤ t are δ = t + 1 − s back.
            let (mut p, mut r) = (0.0, 0.0);
            for s in 0..=t {
                let (hp, hr) = closed_form(&params, t + 1 - s);
                p += hp * f64::from(pre[s]);
                r += hr * f64::from(post[s]);
            }
            worst = worst.max((state.p[0] - p).abs()).max((state.r[0] - r).abs());
        }
    }
    let passed = worst <= 1e-9;
    verdict(6, passed, &format!("worst deviation {worst:.3e} over 20 filters, T = {steps}"), start.elapsed());
    assert!(passed, "{worst}");
}

fn sweep_means(rows: &[SweepRow], value: f64, f: fn(&SweepRow) -> f64) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.value == value).map(f).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_07_beta_sparsity() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("predictive_coding.toml", dir.path());
    let betas = [0.1, 1.0, 10.0];
    let rows = sweep(&cfg, SweepAxis::Beta, &betas).unwrap();
    let rates: Vec<f64> = betas.iter().map(|&b| sweep_means(&rows, b, |r| r.spike_rate)).collect();
    let passed = rates.windows(2).all(|w| w[1] <= w[0]);
    let detail = format!("mean readout rate {:.4} / {:.4} / {:.4} at beta 0.1 / 1 / 10", rates[0], rates[1], rates[2]);
    verdict(7, passed, &detail, start.elapsed());
    assert!(passed, "{detail}");
}

#[test]
fn criterion_08_window_size() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("predictive_coding.toml", dir.path());
    cfg.blobs.as_mut().unwrap().delta = -3;
    let rows = sweep(&cfg, SweepAxis::TauE, &[1.0, 5.0]).unwrap();
    let (m1, m5) = (sweep_means(&rows, 1.0, |r| r.mse), sweep_means(&rows, 5.0, |r| r.mse));
    let passed = m5 < m1;
    let detail = format!("mean MSE {m1:.7} at tau_e 1, {m5:.7} at tau_e 5 (delta -3)");
    verdict(8, passed, &detail, start.elapsed());
    assert!(passed, "{detail}");
}

#[test]
fn criterion_09_lag_asymmetry() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("predictive_coding.toml", dir.path());
    let rows = sweep(&cfg, SweepAxis::Delta, &[-2.0, 2.0]).unwrap();
    let (filt, pred) = (sweep_means(&rows, -2.0, |r| r.mse), sweep_means(&rows, 2.0, |r| r.mse));
    let passed = filt < pred;
    let detail = format!("mean MSE {filt:.7} at delta -2, {pred:.7} at delta +2");
    verdict(9, passed, &detail, start.elapsed());
    assert!(passed, "{detail}");
}

fn mnist_root() -> Option<PathBuf> {
    let root = std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data"));
    root.join("mnist/train-images-idx3-ubyte").exists().then_some(root)
}

#[test]
fn criterion_10_time_beats_rate_decoding() {
    let start = Instant::now();
    let Some(root) = mnist_root() else {
        verdict(10, false, "MNIST IDX files not found", start.elapsed());
        panic!("set {DATA_ROOT_ENV} to a directory containing mnist/");
    };
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("mnist.toml", dir.path());
    cfg.dataset.as_mut().unwrap().root = Some(root.join("mnist"));
    let report = run_mnist_naturalization(&cfg).unwrap();
    let wins = report
        .seeds
        .iter()
        .filter(|s| s.time.mse < s.rate.mse && s.time.accuracy > s.rate.accuracy)
        .count();
    let elapsed = start.elapsed();
    let passed = wins >= 2 && elapsed < Duration::from_secs(90 * 60);
    let per_seed: Vec<String> = report
        .seeds
        .iter()
        .map(|s| {
            format!(
                "seed {}: MSE {:.4} vs {:.4}, accuracy {:.3} vs {:.3}",
                s.seed, s.time.mse, s.rate.mse, s.time.accuracy, s.rate.accuracy
            )
        })
        .collect();
    let detail = format!("time vs rate wins on {wins}/3 seeds; {}", per_seed.join("; "));
    verdict(10, passed, &detail, elapsed);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_11_training_progress() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("predictive_coding.toml", dir.path());
    let report = run_predictive_coding(&cfg).unwrap();
    let ratio = report.mse.mean / report.untrained_mse.mean;
    let elapsed = start.elapsed();
    let passed = ratio < 0.8 && elapsed < Duration::from_secs(600);
    let detail = format!(
        "trained MSE {:.7} / untrained {:.7} = {ratio:.4} (bound 0.8)",
        report.mse.mean, report.untrained_mse.mean
    );
    verdict(11, passed, &detail, elapsed);
    assert!(passed, "{detail}");
}

// ---------------------------------------------------------------- criterion 12

fn idx_fixtures() -> Vec<(Vec<u8>, IdxData)> {
    let images: Vec<Vec<u8>> = (0..3).map(|k| (0..12).map(|i| (i * 20 + k * 7) as u8).collect()).collect();
    let as_f64 = images
        .iter()
        .map(|im| im.iter().map(|&v| f64::from(v) / 255.0).collect())
        .collect();
    vec![
        (
            encode_idx_images(3, 4, &images),
            IdxData::Images { rows: 3, cols: 4, images: as_f64 },
        ),
        (encode_idx_labels(&[0, 9, 4, 4, 1]), IdxData::Labels(vec![0, 9, 4, 4, 1])),
    ]
}

fn aedat_fixture() -> EventStream {
    let events = (0..12)
        .map(|k| Event {
            timestamp_us: 10 * k as u64 + (k as u64 % 3),
            x: (k * 11 % 128) as u8,
            y: (k * 5 % 128) as u8,
            polarity: if k % 2 == 0 { 1 } else { -1 },
        })
        .collect();
    EventStream { events }
}

/// An IDX input that must be rejected, variant chosen by `k`.
fn broken_idx(valid: &[u8], is_labels: bool, k: usize, rng: &mut Rng) -> Vec<u8> {
    let mut b = valid.to_vec();
    match k % 5 {
        0 => b.truncate(rng.below(valid.len())),
        1 => b.extend((0..1 + rng.below(16)).map(|_| rng.below(256) as u8)),
        2 => {
            let magic = loop {
                let m = rng.below(1 << 16) as u32;
                if m != 0x0801 && m != 0x0803 {
                    break m;
                }
            };
            b[..4].copy_from_slice(&magic.to_be_bytes());
        }
        3 => {
            // Declared count grows past the payload.
            let count = u32::from_be_bytes([b[4], b[5], b[6], b[7]]) + 1 + rng.below(1 << 20) as u32;
            b[4..8].copy_from_slice(&count.to_be_bytes());
        }
        _ => {
            if is_labels {
                let pos = 8 + rng.below(b.len() - 8);
                b[pos] = 10 + rng.below(246) as u8;
            } else {
                // Zero-sized images with a matching empty payload.
                b.truncate(16);
                b[12..16].copy_from_slice(&0u32.to_be_bytes());
                b[8..12].copy_from_slice(&(rng.below(30) as u32).to_be_bytes());
            }
        }
    }
    b
}

/// An AEDAT input that must be rejected, variant chosen by `k`.
fn broken_aedat(valid: &[u8], body_start: usize, k: usize, rng: &mut Rng) -> Vec<u8> {
    let mut b = valid.to_vec();
    let n_events = (valid.len() - body_start) / 8;
    match k % 5 {
        0 => {
            // Cut inside an event record.
            let event = rng.below(n_events);
            b.truncate(body_start + 8 * event + 1 + rng.below(7));
        }
        1 => {
            let pos = rng.below(12);
            b[pos] = loop {
                let v = rng.below(256) as u8;
                if v != valid[pos] {
                    break v;
                }
            };
        }
        2 => {
            // Special-event bits above the DVS128 address range.
            let event = rng.below(n_events);
            b[body_start + 8 * event] |= 0x80 >> rng.below(8);
        }
        3 => {
            // A timestamp earlier than its predecessor.
            let event = 2 + rng.below(n_events - 2);
            let at = body_start + 8 * event + 4;
            let prev = u32::from_be_bytes([b[at - 8], b[at - 7], b[at - 6], b[at - 5]]);
            let ts = rng.below(prev as usize) as u32;
            b[at..at + 4].copy_from_slice(&ts.to_be_bytes());
        }
        _ => {
            // Header line without a terminating newline.
            b.truncate(1 + rng.below(body_start - 1));
            if let Some(last) = b.last_mut() {
                if *last == b'\n' {
                    *last = b'x';
                }
            }
            if !b.starts_with(b"#!AER-DAT2.0") {
                b = b"#!AER-DAT2.0 unterminated".to_vec();
            }
        }
    }
    b
}

fn no_panic<T>(f: impl FnOnce() -> T + std::panic::UnwindSafe) -> Option<T> {
    std::panic::catch_unwind(f).ok()
}

#[test]
fn criterion_12_parser_robustness() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut rng = Rng::new(1200, 0);

    let idx = idx_fixtures();
    for (bytes, expected) in &idx {
        if parse_idx(bytes).ok().as_ref() != Some(expected) {
            failures.push("IDX fixture does not round-trip".to_string());
        }
    }
    let stream = aedat_fixture();
    let header = ["HardwareInterface: DVS128", "Start-Time: fixture"];
    let aedat = encode_aedat(&stream, &header);
    let body_start = aedat.len() - 8 * stream.events.len();
    let normalised = EventStream {
        events: stream
            .events
            .iter()
            .map(|e| Event { timestamp_us: e.timestamp_us - stream.events[0].timestamp_us, ..*e })
            .collect(),
    };
    if parse_aedat(&aedat).ok().as_ref() != Some(&normalised) {
        failures.push("AEDAT fixture does not round-trip".to_string());
    }

    let mut idx_rejected = 0;
    for k in 0..1000 {
        let (valid, expected) = &idx[k % 2];
        let bytes = broken_idx(valid, matches!(expected, IdxData::Labels(_)), k / 2, &mut rng);
        match no_panic(|| parse_idx(&bytes).is_err()) {
            Some(true) => idx_rejected += 1,
            Some(false) => failures.push(format!("IDX case {k} accepted")),
            None => failures.push(format!("IDX case {k} panicked")),
        }
    }
    let mut aedat_rejected = 0;
    for k in 0..1000 {
        let bytes = broken_aedat(&aedat, body_start, k, &mut rng);
        match no_panic(|| parse_aedat(&bytes).is_err()) {
            Some(true) => aedat_rejected += 1,
            Some(false) => failures.push(format!("AEDAT case {k} accepted")),
            None => failures.push(format!("AEDAT case {k} panicked")),
        }
    }
    // Unconstrained byte mutations may or may not stay valid; they must not crash.
    for k in 0..1000 {
        let base = if k % 2 == 0 { &idx[k % 4 / 2].0 } else { &aedat };
        let mut bytes = base.clone();
        for _ in 0..1 + rng.below(4) {
            let pos = rng.below(bytes.len());
            bytes[pos] = rng.below(256) as u8;
        }
        bytes.truncate(bytes.len() - rng.below(bytes.len() / 4 + 1));
        let ok = if k % 2 == 0 {
            no_panic(|| drop(parse_idx(&bytes))).is_some()
        } else {
            no_panic(|| drop(parse_aedat(&bytes))).is_some()
        };
        if !ok {
            failures.push(format!("mutation {k} panicked"));
        }
    }

    let elapsed = start.elapsed();
    let passed = failures.is_empty() && elapsed < Duration::from_secs(30);
    let detail = format!("rejected {idx_rejected}/1000 IDX and {aedat_rejected}/1000 AEDAT inputs, fixtures round-trip");
    verdict(12, passed, &detail, elapsed);
    assert!(failures.is_empty(), "{:?}", &failures[..failures.len().min(10)]);
    assert!(elapsed < Duration::from_secs(30));
}
