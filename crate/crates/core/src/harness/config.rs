//! Experiment configuration: per-task defaults, file loading, `key=value`
//! overrides and validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{BlobProcessParams, ImageEncoding, ReferenceMode};
use crate::decoder::{DecoderInput, DecoderKind, Likelihood};
use crate::encoder::{EncoderArchitecture, FilterParams};
use crate::error::{Error, Result};
use crate::mathcore::SurrogateKind;
use crate::trainer::VdibConfig;

/// Environment variable naming the dataset root.
pub const DATA_ROOT_ENV: &str = "VDIB_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PredictiveCoding,
    MnistNaturalize,
    /// Experimental: an MLP decoder stands in for a convolutional one.
    MnistdvsNaturalize,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::config(format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    /// `N_X`.
    pub n_input: usize,
    /// Hidden layer sizes, input side first.
    pub hidden: Vec<usize>,
    /// `N_Y`.
    pub n_readout: usize,
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub tau_ref: f64,
    pub num_kernels: usize,
    pub surrogate: SurrogateKind,
    pub threshold: f64,
    pub hidden_feedback_init: f64,
    pub readout_feedback_init: f64,
}

impl EncoderSection {
    fn with_sizes(n_input: usize, hidden: Vec<usize>, n_readout: usize) -> Self {
        let f = FilterParams::default();
        EncoderSection {
            n_input,
            hidden,
            n_readout,
            tau_mem: f.tau_mem,
            tau_syn: f.tau_syn,
            tau_ref: f.tau_ref,
            num_kernels: 1,
            surrogate: SurrogateKind::default(),
            threshold: 0.0,
            hidden_feedback_init: -1.0,
            readout_feedback_init: 0.0,
        }
    }

    /// Filters use the truncation window `tau_e` of the training config.
    pub fn architecture(&self, tau_e: usize) -> EncoderArchitecture {
        let filter = FilterParams {
            tau_mem: self.tau_mem,
            tau_syn: self.tau_syn,
            tau_ref: self.tau_ref,
            tau_e,
            num_kernels: 1,
        };
        EncoderArchitecture {
            n_input: self.n_input,
            hidden: self.hidden.clone(),
            n_readout: self.n_readout,
            hidden_filter: filter.clone(),
            readout_filter: FilterParams {
                num_kernels: self.num_kernels,
                ..filter
            },
            surrogate: self.surrogate,
            threshold: self.threshold,
            hidden_feedback_init: self.hidden_feedback_init,
            readout_feedback_init: self.readout_feedback_init,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    pub kind: DecoderKind,
    pub input: DecoderInput,
    pub likelihood: Likelihood,
    /// `N_R`.
    pub n_out: usize,
}

/// Where and how image data is read. Absent for predictive coding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// MNIST IDX directory, or the directory of MNIST-DVS recordings.
    /// Relative paths resolve against `$VDIB_DATA_ROOT` when it is set.
    pub root: Option<PathBuf>,
    /// MNIST IDX directory supplying class exemplars for MNIST-DVS.
    pub exemplar_root: Option<PathBuf>,
    pub encoding: ImageEncoding,
    pub poisson_gain: f64,
    pub reference: ReferenceMode,
    /// Test images to evaluate; all of them when unset.
    pub test_examples: Option<usize>,
    pub classifier_epochs: usize,
    pub classifier_seed: u64,
    /// MNIST-DVS binning.
    pub bin_ms: f64,
    pub duration_ms: f64,
    pub crop: usize,
    /// Fraction of MNIST-DVS recordings per digit held out for testing.
    pub test_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            root: None,
            exemplar_root: None,
            encoding: ImageEncoding::Poisson,
            poisson_gain: 0.5,
            reference: ReferenceMode::FinalStep,
            test_examples: None,
            classifier_epochs: 15,
            classifier_seed: 0,
            bin_ms: 10.0,
            duration_ms: 2000.0,
            crop: 26,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub vdib: VdibConfig,
    pub encoder: EncoderSection,
    pub decoder: DecoderSection,
    #[serde(default)]
    pub blobs: Option<BlobProcessParams>,
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    /// Training sequences per run.
    pub train_examples: usize,
    /// Length of the held-out predictive-coding sequence.
    pub test_steps: usize,
    /// Metrics row interval, in training sequences.
    pub log_every: usize,
    /// Intermediate checkpoint interval; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Reconstructions written as images per run.
    pub images_to_write: usize,
    pub output_dir: PathBuf,
    /// One independent run per seed.
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `task`.
    pub fn defaults(task: Task) -> Self {
        match task {
            Task::PredictiveCoding => ExperimentConfig {
                task,
                vdib: VdibConfig::default(),
                encoder: EncoderSection::with_sizes(20, Vec::new(), 10),
                decoder: DecoderSection {
                    kind: DecoderKind::LinearSoftmax,
                    input: DecoderInput::Window,
                    likelihood: Likelihood::Categorical,
                    n_out: 210,
                },
                blobs: Some(BlobProcessParams::default()),
                dataset: None,
                train_examples: 5000,
                test_steps: 1000,
                log_every: 100,
                checkpoint_every: 0,
                images_to_write: 0,
                output_dir: PathBuf::from("runs/predictive_coding"),
                seeds: vec![0, 1, 2],
            },
            Task::MnistNaturalize => ExperimentConfig {
                task,
                vdib: VdibConfig {
                    beta: 1e-3,
                    eta: 1e-5,
                    prior_p: 0.3,
                    tau_e: 16,
                    tau_d: 16,
                    steps: 16,
                    ..VdibConfig::default()
                },
                encoder: EncoderSection::with_sizes(784, vec![600], 64),
                decoder: DecoderSection {
                    kind: DecoderKind::Mlp,
                    input: DecoderInput::Window,
                    likelihood: Likelihood::BernoulliPixel,
                    n_out: 784,
                },
                blobs: None,
                dataset: Some(DatasetSection::default()),
                train_examples: 20_000,
                test_steps: 0,
                log_every: 500,
                checkpoint_every: 0,
                images_to_write: 16,
                output_dir: PathBuf::from("runs/mnist"),
                seeds: vec![0, 1, 2],
            },
            Task::MnistdvsNaturalize => ExperimentConfig {
                task,
                vdib: VdibConfig {
                    beta: 1e-3,
                    eta: 1e-4,
                    prior_p: 0.3,
                    tau_e: 40,
                    tau_d: 40,
                    steps: 40,
                    ..VdibConfig::default()
                },
                encoder: EncoderSection::with_sizes(676, vec![800], 64),
                decoder: DecoderSection {
                    kind: DecoderKind::Mlp,
                    input: DecoderInput::Window,
                    likelihood: Likelihood::BernoulliPixel,
                    n_out: 784,
                },
                blobs: None,
                dataset: Some(DatasetSection {
                    bin_ms: 50.0,
                    ..DatasetSection::default()
                }),
                train_examples: 10_000,
                test_steps: 0,
                log_every: 500,
                checkpoint_every: 0,
                images_to_write: 16,
                output_dir: PathBuf::from("runs/mnistdvs"),
                seeds: vec![0],
            },
        }
    }

    /// Parses a TOML or JSON document layered over the defaults of its task,
    /// then applies `key=value` overrides (dotted keys reach nested fields).
    pub fn from_str_with_overrides(text: &str, format: ConfigFormat, overrides: &[String]) -> Result<Self> {
        let user = match format {
            ConfigFormat::Json => serde_json::from_str::<Value>(text)
                .map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?,
            ConfigFormat::Toml => {
                let t: toml::Table =
                    toml::from_str(text).map_err(|e| Error::config(format!("config is not valid TOML: {e}")))?;
                serde_json::to_value(t).map_err(|e| Error::config(e.to_string()))?
            }
        };
        Self::from_value(user, overrides)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        };
        Self::from_str_with_overrides(&text, format, overrides)
    }

    /// Defaults of `task` plus overrides, without a file.
    pub fn from_task(task: Task, overrides: &[String]) -> Result<Self> {
        let mut user = Map::new();
        user.insert("task".into(), serde_json::to_value(task)?);
        Self::from_value(Value::Object(user), overrides)
    }

    fn from_value(mut user: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let task: Task = match user.get("task") {
            Some(t) => serde_json::from_value(t.clone())
                .map_err(|_| Error::config(format!("unknown task {t}")))?,
            None => return Err(Error::config("config must name a `task`")),
        };
        let mut merged = serde_json::to_value(Self::defaults(task))?;
        merge(&mut merged, user);
        let cfg: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.vdib.validate()?;
        self.encoder.architecture(self.vdib.tau_e).readout_filter.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be at least 1"));
        }
        if self.encoder.n_input == 0 || self.encoder.n_readout == 0 || self.encoder.hidden.contains(&0) {
            return Err(Error::config("encoder layer sizes must be positive"));
        }
        if self.decoder.n_out == 0 {
            return Err(Error::config("decoder.n_out must be positive"));
        }
        match self.task {
            Task::PredictiveCoding => {
                if let Some(d) = &self.dataset {
                    let what = if d.root.is_some() { "dataset.root" } else { "a dataset section" };
                    return Err(Error::config(format!(
                        "task predictive_coding generates its own data and does not accept {what}"
                    )));
                }
                let blobs = self
                    .blobs
                    .as_ref()
                    .ok_or_else(|| Error::config("task predictive_coding needs a blobs section"))?;
                blobs.validate()?;
                if self.encoder.n_input != blobs.n_positions {
                    return Err(Error::config(format!(
                        "encoder.n_input ({}) must equal blobs.n_positions ({})",
                        self.encoder.n_input, blobs.n_positions
                    )));
                }
                if self.decoder.n_out != blobs.n_classes() || self.decoder.likelihood != Likelihood::Categorical {
                    return Err(Error::config(format!(
                        "predictive coding needs a categorical decoder with n_out = {}",
                        blobs.n_classes()
                    )));
                }
                if self.test_steps == 0 {
                    return Err(Error::config("test_steps must be at least 1"));
                }
            }
            Task::MnistNaturalize | Task::MnistdvsNaturalize => {
                if self.blobs.is_some() {
                    return Err(Error::config("blobs applies to predictive_coding only"));
                }
                let d = self
                    .dataset
                    .as_ref()
                    .ok_or_else(|| Error::config("image tasks need a dataset section"))?;
                if self.decoder.n_out != 784 {
                    return Err(Error::config("image tasks reconstruct 28x28 images: decoder.n_out must be 784"));
                }
                if !(d.poisson_gain > 0.0 && d.poisson_gain <= 1.0) {
                    return Err(Error::config("dataset.poisson_gain must lie in (0, 1]"));
                }
                if !(0.0..1.0).contains(&d.test_fraction) {
                    return Err(Error::config("dataset.test_fraction must lie in [0, 1)"));
                }
                if self.task == Task::MnistNaturalize {
                    if self.encoder.n_input != 784 {
                        return Err(Error::config("MNIST inputs have 784 pixels: encoder.n_input must be 784"));
                    }
                } else {
                    if self.encoder.n_input != d.crop * d.crop {
                        return Err(Error::config(format!(
                            "encoder.n_input must equal dataset.crop² = {}",
                            d.crop * d.crop
                        )));
                    }
                    let steps = (d.duration_ms / d.bin_ms).round() as usize;
                    if steps != self.vdib.steps {
                        return Err(Error::config(format!(
                            "vdib.steps ({}) must equal duration_ms / bin_ms = {steps}",
                            self.vdib.steps
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Copy of this config for a single seed, as written to a run directory.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.vdib.seed = seed;
        c
    }

    /// Dataset directory: `dataset.root`, resolved against `$VDIB_DATA_ROOT`
    /// when relative, or the environment root itself when unset.
    pub fn dataset_root(&self) -> Result<PathBuf> {
        let d = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::config("this task has no dataset section"))?;
        resolve_root(d.root.as_deref(), std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
    }

    pub fn exemplar_root(&self) -> Result<PathBuf> {
        let d = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::config("this task has no dataset section"))?;
        match &d.exemplar_root {
            Some(p) => resolve_root(Some(p), std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)),
            None => Err(Error::config("dataset.exemplar_root (MNIST IDX directory) is required for MNIST-DVS")),
        }
    }

}

fn resolve_root(root: Option<&Path>, env_root: Option<PathBuf>) -> Result<PathBuf> {
    match (root, env_root) {
        (Some(p), Some(base)) if p.is_relative() => Ok(base.join(p)),
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(base)) => Ok(base),
        (None, None) => Err(Error::config(format!(
            "no dataset location: set dataset.root or {DATA_ROOT_ENV}"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_override_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|t| t.get("v").cloned())
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override to a JSON tree, creating objects on the way.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("override key `{key}` is malformed")));
    }
    let mut node = tree;
    for part in &path[..path.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    node.as_object_mut()
        .expect("object")
        .insert(path[path.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}
