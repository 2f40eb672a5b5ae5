//! Experiment runs: predictive coding, MNIST and MNIST-DVS naturalisation,
//! sweeps and checkpoint evaluation.
//!
//! Every run draws from independent streams of its seed (see the `STREAM_*`
//! constants), so a run is reproduced exactly from its config snapshot.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{create_dir, write_json, write_pgm, write_text};
use super::classifier::{evaluate_classifier, SurrogateClassifier};
use super::config::{DatasetSection, ExperimentConfig, Task};
use crate::checkpoint::Checkpoint;
use crate::data::{
    bin_events, build_reference, canonical_exemplars, gen_blob_sequence, load_mnist, mnist_dvs_label,
    parse_aedat, poisson_encode, ttfs_encode, wrapped_distance, BlobProcessParams, Crop, ImageEncoding,
    MnistSplit,
};
use crate::decoder::{DecoderInput, DecoderModel};
use crate::encoder::EncoderNetwork;
use crate::error::{Error, Result};
use crate::mathcore::{mean, std_dev, Rng};
use crate::spikes::SpikeTrain;
use crate::trainer::{evaluate_sequence, train, Sample, Trainer, VdibModel};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_SAMPLING: u64 = 1;
pub const STREAM_DATA: u64 = 2;
pub const STREAM_TEST_DATA: u64 = 3;
pub const STREAM_EVAL: u64 = 4;

/// Fresh encoder and decoder for `cfg`, drawn from `rng`.
pub fn build_model(cfg: &ExperimentConfig, rng: &mut Rng) -> Result<VdibModel> {
    let encoder = EncoderNetwork::new(&cfg.encoder.architecture(cfg.vdib.tau_e), rng)?;
    let decoder = DecoderModel::new(
        cfg.decoder.kind,
        cfg.decoder.likelihood,
        cfg.decoder.input,
        cfg.encoder.n_readout,
        cfg.vdib.tau_d,
        cfg.decoder.n_out,
        rng,
    )?;
    VdibModel::new(encoder, decoder)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        MeanStd {
            mean: mean(values),
            std: std_dev(values),
        }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6} ± {:.6}", self.mean, self.std)
    }
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(format!("seed-{seed}"))
}

/// Trains `model` on `samples` and writes `config.json`, `metrics.csv`,
/// intermediate and final checkpoints into `dir`.
fn train_into(
    cfg: &ExperimentConfig,
    model: VdibModel,
    samples: impl IntoIterator<Item = Result<Sample>>,
    dir: &Path,
) -> Result<VdibModel> {
    create_dir(dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    let seed = cfg.vdib.seed;
    let mut trainer = Trainer::new(model, cfg.vdib.clone(), Rng::new(seed, STREAM_SAMPLING))?;
    let every = (cfg.checkpoint_every > 0).then_some(cfg.checkpoint_every);
    let log = train(&mut trainer, samples, cfg.log_every, every, |iter, model| {
        Checkpoint::new(model.clone(), cfg, iter as u64)?.save(&dir.join(format!("checkpoint-{iter}.json")))
    })?;
    log.write_csv(&dir.join("metrics.csv"))?;
    Checkpoint::new(trainer.model.clone(), cfg, cfg.train_examples as u64)?.save(&dir.join("checkpoint.json"))?;
    Ok(trainer.model)
}

// ---------------------------------------------------------------- predictive coding

/// Class index back to its 1-based position pair, inverse of [`crate::data::pair_index`].
pub fn pair_from_index(idx: usize, n: usize) -> Option<(usize, usize)> {
    let mut k = idx;
    for a in 1..=n {
        let row = n - a + 1;
        if k < row {
            return Some((a, a + k));
        }
        k -= row;
    }
    None
}

/// Mean squared wrapped distance between two unordered position pairs,
/// under the better of the two matchings.
pub fn pair_position_error(pred: (usize, usize), target: (usize, usize), n: usize) -> f64 {
    let d = |a: usize, b: usize| wrapped_distance(a, b as f64, n).powi(2);
    let straight = d(pred.0, target.0) + d(pred.1, target.1);
    let crossed = d(pred.0, target.1) + d(pred.1, target.0);
    straight.min(crossed) / 2.0
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Position-space error of the decoder's arg-max over the reference steps of `sample`.
fn position_mse(predictions: &[Vec<f64>], sample: &Sample, blobs: &BlobProcessParams) -> f64 {
    let n = blobs.n_positions;
    let targets = (0..sample.r.len()).filter_map(|t| sample.r.at(t));
    let errs: Vec<f64> = predictions
        .iter()
        .zip(targets)
        .map(|(p, r)| {
            let (pi, ti) = (argmax(p), argmax(r));
            match blobs.n_blobs {
                1 => wrapped_distance(pi + 1, (ti + 1) as f64, n).powi(2),
                _ => {
                    let pp = pair_from_index(pi, n).expect("class in range");
                    let tp = pair_from_index(ti, n).expect("class in range");
                    pair_position_error(pp, tp, n)
                }
            }
        })
        .collect();
    mean(&errs)
}

/// Held-out results of one predictive-coding seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSeedResult {
    pub seed: u64,
    /// Softmax-vs-one-hot MSE of the trained model.
    pub mse: f64,
    /// Same metric for the model before training.
    pub untrained_mse: f64,
    /// Top-1 pair accuracy.
    pub accuracy: f64,
    pub untrained_accuracy: f64,
    /// Squared position error of the arg-max pair.
    pub position_mse: f64,
    pub untrained_position_mse: f64,
    pub spike_rate_readout: f64,
    pub untrained_spike_rate_readout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveCodingReport {
    pub seeds: Vec<PredictiveSeedResult>,
    pub mse: MeanStd,
    pub untrained_mse: MeanStd,
    pub accuracy: MeanStd,
    pub position_mse: MeanStd,
    pub spike_rate_readout: MeanStd,
}

impl PredictiveCodingReport {
    fn from_seeds(seeds: Vec<PredictiveSeedResult>) -> Self {
        let col = |f: fn(&PredictiveSeedResult) -> f64| MeanStd::of(&seeds.iter().map(f).collect::<Vec<_>>());
        PredictiveCodingReport {
            mse: col(|s| s.mse),
            untrained_mse: col(|s| s.untrained_mse),
            accuracy: col(|s| s.accuracy),
            position_mse: col(|s| s.position_mse),
            spike_rate_readout: col(|s| s.spike_rate_readout),
            seeds,
        }
    }
}

fn blobs_of(cfg: &ExperimentConfig) -> Result<BlobProcessParams> {
    cfg.blobs
        .clone()
        .ok_or_else(|| Error::config("task predictive_coding needs a blobs section"))
}

/// The held-out predictive-coding sequence of `seed`.
pub fn predictive_test_sequence(cfg: &ExperimentConfig, seed: u64) -> Result<Sample> {
    let blobs = blobs_of(cfg)?;
    Ok(gen_blob_sequence(&mut Rng::new(seed, STREAM_TEST_DATA), &blobs, cfg.test_steps)?.sample)
}

fn predictive_seed(cfg: &ExperimentConfig, seed: u64) -> Result<PredictiveSeedResult> {
    let cfg = cfg.for_seed(seed);
    let dir = seed_dir(&cfg, seed);
    let blobs = blobs_of(&cfg)?;
    let model = build_model(&cfg, &mut Rng::new(seed, STREAM_INIT))?;
    let test = predictive_test_sequence(&cfg, seed)?;
    let p = cfg.vdib.prior_p;
    let before = evaluate_sequence(&mut model.clone(), &test, p, &mut Rng::new(seed, STREAM_EVAL))?;
    let mut data_rng = Rng::new(seed, STREAM_DATA);
    let steps = cfg.vdib.steps;
    let samples =
        (0..cfg.train_examples).map(|_| gen_blob_sequence(&mut data_rng, &blobs, steps).map(|s| s.sample));
    let mut model = train_into(&cfg, model, samples, &dir)?;
    let after = evaluate_sequence(&mut model, &test, p, &mut Rng::new(seed, STREAM_EVAL))?;
    let result = PredictiveSeedResult {
        seed,
        mse: after.mse,
        untrained_mse: before.mse,
        accuracy: after.accuracy,
        untrained_accuracy: before.accuracy,
        position_mse: position_mse(&after.predictions, &test, &blobs),
        untrained_position_mse: position_mse(&before.predictions, &test, &blobs),
        spike_rate_readout: after.spike_rate_readout,
        untrained_spike_rate_readout: before.spike_rate_readout,
    };
    write_json(&dir.join("eval.json"), &result)?;
    log::info!(
        "predictive coding seed {seed}: mse {:.6} (untrained {:.6}), rate {:.4}",
        result.mse,
        result.untrained_mse,
        result.spike_rate_readout
    );
    Ok(result)
}

/// Trains and evaluates one model per seed, in parallel, and writes
/// `summary.json` into the output directory.
pub fn run_predictive_coding(cfg: &ExperimentConfig) -> Result<PredictiveCodingReport> {
    if cfg.task != Task::PredictiveCoding {
        return Err(Error::config("run_predictive_coding needs task = predictive_coding"));
    }
    cfg.validate()?;
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&s| predictive_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let report = PredictiveCodingReport::from_seeds(seeds);
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("summary.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- image tasks

/// Where the spiking input of an example comes from.
#[derive(Clone, Debug)]
pub enum ImageInputs {
    /// Images, spike-encoded afresh each time they are drawn.
    Images(Vec<Vec<f64>>),
    /// Pre-binned event recordings.
    Trains(Vec<SpikeTrain>),
}

impl ImageInputs {
    fn len(&self) -> usize {
        match self {
            ImageInputs::Images(v) => v.len(),
            ImageInputs::Trains(v) => v.len(),
        }
    }

    fn spikes(&self, i: usize, steps: usize, ds: &DatasetSection, rng: &mut Rng) -> Result<SpikeTrain> {
        match self {
            ImageInputs::Images(v) => match ds.encoding {
                ImageEncoding::Poisson => poisson_encode(&v[i], steps, ds.poisson_gain, rng),
                ImageEncoding::Ttfs => ttfs_encode(&v[i], steps),
            },
            ImageInputs::Trains(v) => {
                if v[i].steps() != steps {
                    return Err(Error::shape(format!("recording has {} steps, expected {steps}", v[i].steps())));
                }
                Ok(v[i].clone())
            }
        }
    }
}

/// One split of an image task: inputs, the image each should reconstruct, labels.
#[derive(Clone, Debug)]
pub struct ImageSplit {
    pub inputs: ImageInputs,
    pub targets: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl ImageSplit {
    fn check(&self) -> Result<()> {
        let n = self.inputs.len();
        if n == 0 || self.targets.len() != n || self.labels.len() != n {
            return Err(Error::shape("image split needs equal, non-zero counts of inputs, targets and labels"));
        }
        Ok(())
    }

    fn sample(&self, i: usize, cfg: &ExperimentConfig, ds: &DatasetSection, rng: &mut Rng) -> Result<Sample> {
        let steps = cfg.vdib.steps;
        Ok(Sample {
            x: self.inputs.spikes(i, steps, ds, rng)?,
            r: build_reference(&self.targets[i], steps, ds.reference)?,
            label: Some(usize::from(self.labels[i])),
        })
    }
}

/// Training and test data of an image task plus the frozen surrogate classifier.
#[derive(Clone, Debug)]
pub struct ImageTaskData {
    pub train: ImageSplit,
    pub test: ImageSplit,
    pub classifier: SurrogateClassifier,
}

/// Loads MNIST from the configured root and fits the surrogate classifier.
pub fn load_mnist_task(cfg: &ExperimentConfig) -> Result<ImageTaskData> {
    let root = cfg.dataset_root()?;
    let ds = dataset_of(cfg)?;
    let train = load_mnist(&root, MnistSplit::Train)?;
    let test = load_mnist(&root, MnistSplit::Test)?;
    let mut classifier = SurrogateClassifier::new();
    classifier.fit(&train.images, &train.labels, ds.classifier_epochs, ds.classifier_seed)?;
    Ok(ImageTaskData {
        train: ImageSplit {
            targets: train.images.clone(),
            inputs: ImageInputs::Images(train.images),
            labels: train.labels,
        },
        test: ImageSplit {
            targets: test.images.clone(),
            inputs: ImageInputs::Images(test.images),
            labels: test.labels,
        },
        classifier,
    })
}

fn collect_aedat(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_aedat(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("aedat")) && mnist_dvs_label(&path).is_some()
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads MNIST-DVS recordings (`mnist_<digit>_*.aedat`, searched recursively)
/// and pairs each with its class exemplar from MNIST. The last
/// `test_fraction` of each digit's recordings, in path order, is held out.
pub fn load_mnistdvs_task(cfg: &ExperimentConfig) -> Result<ImageTaskData> {
    let ds = dataset_of(cfg)?;
    let root = cfg.dataset_root()?;
    let mnist = load_mnist(&cfg.exemplar_root()?, MnistSplit::Train)?;
    let exemplars = canonical_exemplars(&mnist)?;
    let mut classifier = SurrogateClassifier::new();
    classifier.fit(&mnist.images, &mnist.labels, ds.classifier_epochs, ds.classifier_seed)?;
    let mut paths = Vec::new();
    collect_aedat(&root, &mut paths)?;
    paths.sort();
    if paths.is_empty() {
        return Err(Error::io(
            &root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no mnist_<digit>_*.aedat recordings"),
        ));
    }
    let crop = Crop::centered(ds.crop);
    let mut by_digit: Vec<Vec<(SpikeTrain, u8)>> = vec![Vec::new(); 10];
    for p in &paths {
        let label = mnist_dvs_label(p).expect("filtered above");
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        let stream = parse_aedat(&bytes).map_err(|e| match e {
            Error::Parse { offset, message } => Error::parse(offset, format!("{}: {message}", p.display())),
            other => other,
        })?;
        by_digit[usize::from(label)].push((bin_events(&stream, ds.bin_ms, ds.duration_ms, crop)?, label));
    }
    let mut train = (Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new());
    for recs in by_digit {
        let n_test = (recs.len() as f64 * ds.test_fraction).round() as usize;
        let split = recs.len() - n_test;
        for (k, (x, l)) in recs.into_iter().enumerate() {
            let dst = if k < split { &mut train } else { &mut test };
            dst.0.push(x);
            dst.1.push(l);
        }
    }
    let split = |(xs, ls): (Vec<SpikeTrain>, Vec<u8>)| ImageSplit {
        targets: ls.iter().map(|&l| exemplars[usize::from(l)].clone()).collect(),
        inputs: ImageInputs::Trains(xs),
        labels: ls,
    };
    Ok(ImageTaskData {
        train: split(train),
        test: split(test),
        classifier,
    })
}

fn dataset_of(cfg: &ExperimentConfig) -> Result<&DatasetSection> {
    cfg.dataset
        .as_ref()
        .ok_or_else(|| Error::config("image tasks need a dataset section"))
}

/// Test-set metrics of one decoding scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionEval {
    /// Mean over test images of the per-pixel squared error.
    pub mse: f64,
    /// Surrogate-classifier accuracy on the reconstructions.
    pub accuracy: f64,
    pub spike_rate_readout: f64,
    pub images: usize,
}

/// Reconstructs the test split with `model` (final-step prediction) and
/// scores it. The first `images_to_write` reconstructions and targets are
/// written as graymaps into `image_dir`, if given.
pub fn evaluate_reconstructions(
    model: &mut VdibModel,
    cfg: &ExperimentConfig,
    data: &ImageTaskData,
    seed: u64,
    image_dir: Option<&Path>,
) -> Result<ReconstructionEval> {
    data.test.check()?;
    let ds = dataset_of(cfg)?;
    let n = ds.test_examples.unwrap_or(usize::MAX).min(data.test.inputs.len());
    let mut input_rng = Rng::new(seed, STREAM_TEST_DATA);
    let mut eval_rng = Rng::new(seed, STREAM_EVAL);
    let mut recons = Vec::with_capacity(n);
    let mut mses = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    if let Some(dir) = image_dir {
        create_dir(dir)?;
    }
    for i in 0..n {
        let sample = data.test.sample(i, cfg, ds, &mut input_rng)?;
        let stats = evaluate_sequence(model, &sample, cfg.vdib.prior_p, &mut eval_rng)?;
        let recon = stats
            .predictions
            .last()
            .cloned()
            .ok_or_else(|| Error::invalid("reference defines no timestep"))?;
        mses.push(crate::trainer::prediction_mse(&recon, &data.test.targets[i]));
        rates.push(stats.spike_rate_readout);
        if let Some(dir) = image_dir {
            if i < cfg.images_to_write {
                write_pgm(&dir.join(format!("recon-{i:04}.pgm")), 28, 28, &recon)?;
                write_pgm(&dir.join(format!("target-{i:04}.pgm")), 28, 28, &data.test.targets[i])?;
            }
        }
        recons.push(recon);
    }
    Ok(ReconstructionEval {
        mse: mean(&mses),
        accuracy: evaluate_classifier(&data.classifier, &recons, &data.test.labels[..n])?,
        spike_rate_readout: mean(&rates),
        images: n,
    })
}

fn train_image_model(cfg: &ExperimentConfig, data: &ImageTaskData, dir: &Path) -> Result<VdibModel> {
    data.train.check()?;
    let ds = dataset_of(cfg)?;
    let seed = cfg.vdib.seed;
    let model = build_model(cfg, &mut Rng::new(seed, STREAM_INIT))?;
    let mut data_rng = Rng::new(seed, STREAM_DATA);
    let n_train = data.train.inputs.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let samples = (0..cfg.train_examples).map(move |k| {
        if k % n_train == 0 {
            data_rng.shuffle(&mut order);
        }
        data.train.sample(order[k % n_train], cfg, ds, &mut data_rng)
    });
    train_into(cfg, model, samples, dir)
}

/// Results of one image-task seed under time (window) and rate decoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSeedResult {
    pub seed: u64,
    pub time: ReconstructionEval,
    pub rate: ReconstructionEval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTaskReport {
    pub seeds: Vec<ImageSeedResult>,
    pub time_mse: MeanStd,
    pub rate_mse: MeanStd,
    pub time_accuracy: MeanStd,
    pub rate_accuracy: MeanStd,
    pub time_spike_rate: MeanStd,
}

fn image_seed(cfg: &ExperimentConfig, data: &ImageTaskData, seed: u64, input: DecoderInput) -> Result<ReconstructionEval> {
    let mut c = cfg.for_seed(seed);
    c.decoder.input = input;
    let name = match input {
        DecoderInput::Window => "time",
        DecoderInput::Rate => "rate",
    };
    let dir = seed_dir(&c, seed).join(name);
    let mut model = train_image_model(&c, data, &dir)?;
    let eval = evaluate_reconstructions(&mut model, &c, data, seed, Some(&dir.join("images")))?;
    write_json(&dir.join("eval.json"), &eval)?;
    log::info!(
        "{:?} seed {seed} {name} decoding: mse {:.5}, accuracy {:.4}",
        c.task,
        eval.mse,
        eval.accuracy
    );
    Ok(eval)
}

/// Trains a windowed (time) decoder and a rate-pooled decoder with the same
/// budget for every seed and scores both on the test split.
pub fn run_image_task(cfg: &ExperimentConfig, data: &ImageTaskData) -> Result<ImageTaskReport> {
    if cfg.task == Task::PredictiveCoding {
        return Err(Error::config("run_image_task needs an image task"));
    }
    cfg.validate()?;
    let jobs: Vec<(u64, DecoderInput)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| [(s, DecoderInput::Window), (s, DecoderInput::Rate)])
        .collect();
    let evals = jobs
        .par_iter()
        .map(|&(s, input)| image_seed(cfg, data, s, input))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<ImageSeedResult> = evals
        .chunks(2)
        .zip(&cfg.seeds)
        .map(|(pair, &seed)| ImageSeedResult {
            seed,
            time: pair[0].clone(),
            rate: pair[1].clone(),
        })
        .collect();
    let col = |f: fn(&ImageSeedResult) -> f64| MeanStd::of(&seeds.iter().map(f).collect::<Vec<_>>());
    let report = ImageTaskReport {
        time_mse: col(|s| s.time.mse),
        rate_mse: col(|s| s.rate.mse),
        time_accuracy: col(|s| s.time.accuracy),
        rate_accuracy: col(|s| s.rate.accuracy),
        time_spike_rate: col(|s| s.time.spike_rate_readout),
        seeds,
    };
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("summary.json"), &report)?;
    Ok(report)
}

/// Loads MNIST and runs [`run_image_task`].
pub fn run_mnist_naturalization(cfg: &ExperimentConfig) -> Result<ImageTaskReport> {
    if cfg.task != Task::MnistNaturalize {
        return Err(Error::config("run_mnist_naturalization needs task = mnist_naturalize"));
    }
    cfg.validate()?;
    run_image_task(cfg, &load_mnist_task(cfg)?)
}

/// Experimental MNIST-DVS naturalisation.
pub fn run_mnistdvs_naturalization(cfg: &ExperimentConfig) -> Result<ImageTaskReport> {
    if cfg.task != Task::MnistdvsNaturalize {
        return Err(Error::config("run_mnistdvs_naturalization needs task = mnistdvs_naturalize"));
    }
    cfg.validate()?;
    log::warn!("the MNIST-DVS task is experimental");
    run_image_task(cfg, &load_mnistdvs_task(cfg)?)
}

/// Summary of any run, as printed by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunReport {
    Predictive(PredictiveCodingReport),
    Image(ImageTaskReport),
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    match cfg.task {
        Task::PredictiveCoding => run_predictive_coding(cfg).map(RunReport::Predictive),
        Task::MnistNaturalize => run_mnist_naturalization(cfg).map(RunReport::Image),
        Task::MnistdvsNaturalize => run_mnistdvs_naturalization(cfg).map(RunReport::Image),
    }
}

// ---------------------------------------------------------------- sweeps

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Beta,
    Delta,
    TauE,
    TauD,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SweepAxis::Beta),
            "delta" => Ok(SweepAxis::Delta),
            "tau_e" => Ok(SweepAxis::TauE),
            "tau_d" => Ok(SweepAxis::TauD),
            other => Err(Error::config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::Delta => "delta",
            SweepAxis::TauE => "tau_e",
            SweepAxis::TauD => "tau_d",
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        let integer = |v: f64| -> Result<i64> {
            if v.fract() != 0.0 || !v.is_finite() {
                return Err(Error::config(format!("{} takes integer values, got {v}", self.name())));
            }
            Ok(v as i64)
        };
        match self {
            SweepAxis::Beta => c.vdib.beta = value,
            SweepAxis::Delta => match c.blobs.as_mut() {
                Some(b) => b.delta = integer(value)?,
                None => return Err(Error::config("delta sweeps apply to predictive_coding only")),
            },
            SweepAxis::TauE => c.vdib.tau_e = usize::try_from(integer(value)?).map_err(|_| Error::config("tau_e must be positive"))?,
            SweepAxis::TauD => c.vdib.tau_d = usize::try_from(integer(value)?).map_err(|_| Error::config("tau_d must be positive"))?,
        }
        c.output_dir = cfg.output_dir.join(format!("{}={value}", self.name()));
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub mse: f64,
    pub spike_rate: f64,
}

pub const SWEEP_HEADER: &str = "axis,value,seed,mse,spike_rate";

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", axis.name(), r.value, r.seed, r.mse, r.spike_rate);
    }
    s
}

/// One full run per value and seed, in parallel; rows come back ordered by
/// value, then seed. Image tasks report the time-decoding metrics.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|&v| axis.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let image_data = match cfg.task {
        Task::PredictiveCoding => None,
        Task::MnistNaturalize => Some(load_mnist_task(cfg)?),
        Task::MnistdvsNaturalize => Some(load_mnistdvs_task(cfg)?),
    };
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let c = &configs[i];
            let (mse, spike_rate) = match &image_data {
                None => {
                    let r = predictive_seed(c, seed)?;
                    (r.mse, r.spike_rate_readout)
                }
                Some(data) => {
                    let r = image_seed(c, data, seed, c.decoder.input)?;
                    (r.mse, r.spike_rate_readout)
                }
            };
            Ok(SweepRow {
                value: values[i],
                seed,
                mse,
                spike_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("sweep.csv"), &sweep_csv(axis, &rows))?;
    Ok(rows)
}

// ---------------------------------------------------------------- sample sets

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSplit {
    Train,
    Test,
}

impl std::str::FromStr for DataSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(DataSplit::Train),
            "test" => Ok(DataSplit::Test),
            other => Err(Error::config(format!("unknown split `{other}` (train or test)"))),
        }
    }
}

/// Materialises up to `count` samples of a split for the first seed, drawn
/// from the same streams a run uses. Predictive coding has one test
/// sequence; its training split defaults to `train_examples` sequences.
pub fn task_samples(cfg: &ExperimentConfig, split: DataSplit, count: Option<usize>) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let seed = cfg.seeds.first().copied().unwrap_or(cfg.vdib.seed);
    match cfg.task {
        Task::PredictiveCoding => {
            let blobs = blobs_of(cfg)?;
            match split {
                DataSplit::Test => Ok(vec![predictive_test_sequence(cfg, seed)?]),
                DataSplit::Train => {
                    let mut rng = Rng::new(seed, STREAM_DATA);
                    (0..count.unwrap_or(cfg.train_examples))
                        .map(|_| gen_blob_sequence(&mut rng, &blobs, cfg.vdib.steps).map(|s| s.sample))
                        .collect()
                }
            }
        }
        Task::MnistNaturalize | Task::MnistdvsNaturalize => {
            let data = match cfg.task {
                Task::MnistNaturalize => load_mnist_task(cfg)?,
                _ => load_mnistdvs_task(cfg)?,
            };
            let ds = dataset_of(cfg)?;
            let (part, stream) = match split {
                DataSplit::Train => (&data.train, STREAM_DATA),
                DataSplit::Test => (&data.test, STREAM_TEST_DATA),
            };
            part.check()?;
            let n = count.unwrap_or(usize::MAX).min(part.inputs.len());
            let mut rng = Rng::new(seed, stream);
            (0..n).map(|i| part.sample(i, cfg, ds, &mut rng)).collect()
        }
    }
}

// ---------------------------------------------------------------- evaluation

/// Re-evaluates a checkpoint on its task's held-out data.
pub fn evaluate_checkpoint(ck: &Checkpoint) -> Result<serde_json::Value> {
    let cfg: ExperimentConfig = serde_json::from_value(ck.config.clone())
        .map_err(|e| Error::config(format!("checkpoint config is not an experiment config: {e}")))?;
    let seed = cfg.vdib.seed;
    let mut model = ck.model.clone();
    match cfg.task {
        Task::PredictiveCoding => {
            let blobs = blobs_of(&cfg)?;
            let test = predictive_test_sequence(&cfg, seed)?;
            let stats = evaluate_sequence(&mut model, &test, cfg.vdib.prior_p, &mut Rng::new(seed, STREAM_EVAL))?;
            Ok(serde_json::json!({
                "task": cfg.task,
                "seed": seed,
                "mse": stats.mse,
                "accuracy": stats.accuracy,
                "position_mse": position_mse(&stats.predictions, &test, &blobs),
                "spike_rate_readout": stats.spike_rate_readout,
            }))
        }
        Task::MnistNaturalize | Task::MnistdvsNaturalize => {
            let data = match cfg.task {
                Task::MnistNaturalize => load_mnist_task(&cfg)?,
                _ => load_mnistdvs_task(&cfg)?,
            };
            let eval = evaluate_reconstructions(&mut model, &cfg, &data, seed, None)?;
            Ok(serde_json::to_value(eval)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pair_index;

    #[test]
    fn pair_inverse_matches_pair_index() {
        for n in [3, 20] {
            for idx in 0..n * (n + 1) / 2 {
                let (a, b) = pair_from_index(idx, n).unwrap();
                assert_eq!(pair_index(a, b, n).unwrap(), idx);
            }
            assert_eq!(pair_from_index(n * (n + 1) / 2, n), None);
        }
    }

    #[test]
    fn position_error_uses_best_matching() {
        assert_eq!(pair_position_error((3, 7), (7, 3), 20), 0.0);
        assert_eq!(pair_position_error((1, 5), (20, 5), 20), 0.5);
    }

    fn tiny_pc(dir: &Path, extra: &[&str]) -> ExperimentConfig {
        let mut o: Vec<String> = vec![
            "train_examples=20".into(),
            "test_steps=60".into(),
            "vdib.steps=30".into(),
            "log_every=5".into(),
            "seeds=[1, 2]".into(),
            format!("output_dir={}", dir.display()),
        ];
        o.extend(extra.iter().map(|s| s.to_string()));
        ExperimentConfig::from_task(Task::PredictiveCoding, &o).unwrap()
    }

    #[test]
    fn predictive_run_writes_artifacts_and_reproduces() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_pc(tmp.path(), &["checkpoint_every=10"]);
        let report = run_predictive_coding(&cfg).unwrap();
        assert_eq!(report.seeds.len(), 2);
        let dir = tmp.path().join("seed-1");
        for f in ["config.json", "metrics.csv", "checkpoint.json", "checkpoint-10.json", "eval.json"] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        assert!(tmp.path().join("summary.json").is_file());
        let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 1 + 4);

        // Re-running from the snapshot reproduces the metrics byte for byte.
        let rerun_dir = tmp.path().join("rerun");
        let snap = ExperimentConfig::load(&dir.join("config.json"), &[format!("output_dir={}", rerun_dir.display())])
            .unwrap();
        let again = run_predictive_coding(&snap).unwrap();
        assert_eq!(again.seeds[0], report.seeds[0]);
        let metrics2 = std::fs::read_to_string(rerun_dir.join("seed-1/metrics.csv")).unwrap();
        assert_eq!(metrics, metrics2);
    }

    #[test]
    fn zero_learning_rate_keeps_untrained_mse() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_pc(tmp.path(), &["vdib.eta=0"]);
        let report = run_predictive_coding(&cfg).unwrap();
        for s in &report.seeds {
            assert_eq!(s.mse, s.untrained_mse);
        }
    }

    #[test]
    fn single_value_sweep_matches_plain_run() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_pc(tmp.path(), &["vdib.beta=0.5"]);
        let plain = run_predictive_coding(&cfg).unwrap();
        let rows = sweep(&cfg, SweepAxis::Beta, &[0.5]).unwrap();
        assert_eq!(rows.len(), 2);
        for (row, s) in rows.iter().zip(&plain.seeds) {
            assert_eq!((row.seed, row.mse, row.spike_rate), (s.seed, s.mse, s.spike_rate_readout));
        }
        let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
        assert!(csv.starts_with(SWEEP_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn sweep_rejects_bad_values() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_pc(tmp.path(), &[]);
        assert!(sweep(&cfg, SweepAxis::Beta, &[]).is_err());
        assert!(sweep(&cfg, SweepAxis::TauE, &[1.5]).is_err());
        assert!(sweep(&cfg, SweepAxis::Beta, &[-1.0]).is_err());
    }

    #[test]
    fn checkpoint_evaluation_matches_run() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_pc(tmp.path(), &["seeds=[3]"]);
        let report = run_predictive_coding(&cfg).unwrap();
        let ck = Checkpoint::load(&tmp.path().join("seed-3/checkpoint.json")).unwrap();
        let v = evaluate_checkpoint(&ck).unwrap();
        assert_eq!(v["mse"].as_f64().unwrap(), report.seeds[0].mse);
    }
}
