//! VDIB objective and learning rules.
//!
//! Every timestep the encoder emits readout spikes `y_t`, the decoder scores
//! the reference `r_t` from the window of recent readout spikes, and the
//! scalar `ℓ_dec + β·ℓ_enc` is broadcast to every encoder synapse, where it
//! multiplies the local eligibility (readout) or the eligibility times the
//! feedback-alignment learning signal (hidden).

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoder::{loss_and_grad, DecoderGradients, DecoderModel, Likelihood, WindowBuffer};
use crate::encoder::{DenseEligibility, EncoderNetwork, LayerKind, StepOutput};
use crate::error::{ensure_len, Error, Result};
use crate::mathcore::{log_bernoulli, softmax, Rng};
use crate::spikes::{Reference, SpikeTrain};

/// Bound applied to the global learning signal.
pub const SIGNAL_CLIP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Update after every timestep with that step's signal and eligibility.
    Online,
    /// Accumulate eligibilities over the sequence and update once with the
    /// sequence-level signal.
    Episodic,
}

impl FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(UpdateMode::Online),
            "episodic" => Ok(UpdateMode::Episodic),
            other => Err(Error::config(format!("unknown update mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdibConfig {
    pub beta: f64,
    pub eta: f64,
    /// Overrides `eta` for the encoder.
    #[serde(default)]
    pub eta_encoder: Option<f64>,
    /// Overrides `eta` for the decoder.
    #[serde(default)]
    pub eta_decoder: Option<f64>,
    /// Moving-average factor of the learning-signal baseline; 0 disables it.
    pub kappa: f64,
    /// Firing probability of the marginal `q(y)`.
    pub prior_p: f64,
    pub tau_e: usize,
    pub tau_d: usize,
    /// Sequence length `T`.
    pub steps: usize,
    pub update_mode: UpdateMode,
    pub seed: u64,
}

impl Default for VdibConfig {
    fn default() -> Self {
        VdibConfig {
            beta: 1.0,
            eta: 1e-2,
            eta_encoder: None,
            eta_decoder: None,
            kappa: 0.0,
            prior_p: 0.2,
            tau_e: 5,
            tau_d: 5,
            steps: 100,
            update_mode: UpdateMode::Online,
            seed: 0,
        }
    }
}

impl VdibConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config(format!("beta must be >= 0, got {}", self.beta)));
        }
        for (name, eta) in [
            ("eta", Some(self.eta)),
            ("eta_encoder", self.eta_encoder),
            ("eta_decoder", self.eta_decoder),
        ] {
            if let Some(eta) = eta {
                if !(eta.is_finite() && eta >= 0.0) {
                    return Err(Error::config(format!("{name} must be >= 0, got {eta}")));
                }
            }
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::config(format!("kappa must lie in [0, 1), got {}", self.kappa)));
        }
        if !(self.prior_p > 0.0 && self.prior_p < 1.0) {
            return Err(Error::config(format!(
                "prior_p must lie in (0, 1), got {}",
                self.prior_p
            )));
        }
        if self.tau_e < 1 || self.tau_d < 1 || self.steps < 1 {
            return Err(Error::config("tau_e, tau_d and steps must be at least 1"));
        }
        Ok(())
    }

    pub fn encoder_eta(&self) -> f64 {
        self.eta_encoder.unwrap_or(self.eta)
    }

    pub fn decoder_eta(&self) -> f64 {
        self.eta_decoder.unwrap_or(self.eta)
    }
}

/// Losses of one timestep.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    /// Zero on timesteps without a reference sample.
    pub ell_dec: f64,
    pub ell_enc: f64,
    pub global_signal: f64,
}

/// `Σ_i [log p(y_i | u_i) − log q(y_i)]` with `q = Bernoulli(prior_p)`.
pub fn encoder_loss_step(readout_logprobs: &[f64], y_t: &[u8], prior_p: f64) -> f64 {
    readout_logprobs
        .iter()
        .zip(y_t)
        .map(|(&lp, &y)| lp - log_bernoulli(y, prior_p))
        .sum()
}

/// Exponential-moving-average baseline for the global learning signal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalBaseline {
    pub value: f64,
}

/// Returns `ell_dec + β·ell_enc`, minus the running baseline when `κ > 0`.
/// The baseline is read before being updated with the raw value.
pub fn global_learning_signal(
    ell_dec: f64,
    ell_enc: f64,
    beta: f64,
    kappa: f64,
    baseline: &mut SignalBaseline,
) -> f64 {
    let raw = ell_dec + beta * ell_enc;
    if kappa == 0.0 {
        return raw;
    }
    let signal = raw - baseline.value;
    baseline.value = kappa * baseline.value + (1.0 - kappa) * raw;
    signal
}

/// Encoder and decoder trained together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdibModel {
    pub encoder: EncoderNetwork,
    pub decoder: DecoderModel,
}

impl VdibModel {
    pub fn new(encoder: EncoderNetwork, decoder: DecoderModel) -> Result<Self> {
        ensure_len("decoder input units", decoder.n_units, encoder.n_readout())?;
        Ok(VdibModel { encoder, decoder })
    }
}

/// A training or test example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: SpikeTrain,
    pub r: Reference,
    /// Class label, when the task has one.
    pub label: Option<usize>,
}

/// Summary of one sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    /// Mean decoder loss over timesteps carrying a reference.
    pub ell_dec: f64,
    /// Mean encoder loss per timestep.
    pub ell_enc: f64,
    pub spike_rate_readout: f64,
    pub spike_rate_hidden: f64,
    /// Mean squared error between the decoder's predicted mean and `r_t`,
    /// averaged over components and reference timesteps.
    pub mse: f64,
    /// Fraction of reference timesteps whose arg-max prediction matches the
    /// arg-max of `r_t`.
    pub accuracy: f64,
    /// Timesteps whose learning signal hit the clip bound.
    pub clipped: usize,
    pub readout: SpikeTrain,
    /// Decoder predictions at reference timesteps, in time order.
    pub predictions: Vec<Vec<f64>>,
}

/// Squared error between predicted means and the target, averaged over components.
pub fn prediction_mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / pred.len().max(1) as f64
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

fn predicted_mean(o: &[f64], likelihood: Likelihood) -> Vec<f64> {
    match likelihood {
        Likelihood::Categorical => softmax(o),
        Likelihood::BernoulliPixel => o.iter().map(|&v| crate::mathcore::sigmoid(v)).collect(),
        Likelihood::GaussianUnit => o.to_vec(),
    }
}

struct Accum {
    ell_dec: f64,
    ell_enc: f64,
    n_ref: usize,
    mse: f64,
    correct: usize,
    readout_spikes: usize,
    hidden_spikes: usize,
    hidden_units: usize,
    clipped: usize,
    predictions: Vec<Vec<f64>>,
}

impl Accum {
    fn new(hidden_units: usize) -> Self {
        Accum {
            ell_dec: 0.0,
            ell_enc: 0.0,
            n_ref: 0,
            mse: 0.0,
            correct: 0,
            readout_spikes: 0,
            hidden_spikes: 0,
            hidden_units,
            clipped: 0,
            predictions: Vec::new(),
        }
    }

    fn finish(self, readout: SpikeTrain, steps: usize) -> EpisodeStats {
        let n_ref = self.n_ref.max(1) as f64;
        let n_y = readout.units();
        EpisodeStats {
            ell_dec: self.ell_dec / n_ref,
            ell_enc: self.ell_enc / steps.max(1) as f64,
            spike_rate_readout: self.readout_spikes as f64 / (n_y * steps).max(1) as f64,
            spike_rate_hidden: if self.hidden_units == 0 {
                0.0
            } else {
                self.hidden_spikes as f64 / (self.hidden_units * steps).max(1) as f64
            },
            mse: self.mse / n_ref,
            accuracy: self.correct as f64 / n_ref,
            clipped: self.clipped,
            readout,
            predictions: self.predictions,
        }
    }
}

fn check_sample(model: &VdibModel, sample: &Sample) -> Result<()> {
    ensure_len("input units", sample.x.units(), model.encoder.n_input())?;
    ensure_len("reference length", sample.r.len(), sample.x.steps())?;
    ensure_len("reference dimension", sample.r.dim(), model.decoder.n_out)
}

/// Decoder step: loss, gradients and prediction at a reference timestep.
fn decoder_step(
    decoder: &DecoderModel,
    window: &WindowBuffer,
    r_t: &[f64],
    want_grads: bool,
) -> Result<(f64, Option<DecoderGradients>, Vec<f64>)> {
    let features = decoder.features(window)?;
    if want_grads {
        let (g, loss) = decoder.backprop(&features, r_t)?;
        let o = decoder.forward(&features)?;
        Ok((loss, Some(g), predicted_mean(&o, decoder.likelihood)))
    } else {
        let o = decoder.forward(&features)?;
        let (loss, _) = loss_and_grad(&o, r_t, decoder.likelihood)?;
        Ok((loss, None, predicted_mean(&o, decoder.likelihood)))
    }
}

fn record_prediction(acc: &mut Accum, pred: Vec<f64>, r_t: &[f64], ell_dec: f64) {
    acc.ell_dec += ell_dec;
    acc.n_ref += 1;
    acc.mse += prediction_mse(&pred, r_t);
    if argmax(&pred) == argmax(r_t) {
        acc.correct += 1;
    }
    acc.predictions.push(pred);
}

fn record_spikes(acc: &mut Accum, out: &StepOutput) {
    acc.readout_spikes += out.y.iter().filter(|&&s| s != 0).count();
    acc.hidden_spikes += out
        .hidden_spikes
        .iter()
        .map(|z| z.iter().filter(|&&s| s != 0).count())
        .sum::<usize>();
}

fn clip_signal(signal: f64, clipped: &mut usize) -> f64 {
    if signal.abs() > SIGNAL_CLIP {
        *clipped += 1;
        signal.clamp(-SIGNAL_CLIP, SIGNAL_CLIP)
    } else {
        signal
    }
}

/// Runs training on sequences, one [`Trainer::train_step`] per sample.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: VdibModel,
    pub config: VdibConfig,
    pub baseline: SignalBaseline,
    rng: Rng,
}

impl Trainer {
    /// `rng` drives readout sampling during training.
    pub fn new(model: VdibModel, config: VdibConfig, rng: Rng) -> Result<Self> {
        config.validate()?;
        if model.decoder.window != config.tau_d {
            return Err(Error::config("decoder window differs from tau_d"));
        }
        Ok(Trainer {
            model,
            config,
            baseline: SignalBaseline::default(),
            rng,
        })
    }

    /// Processes one sequence from rest and updates both networks.
    pub fn train_step(&mut self, sample: &Sample) -> Result<EpisodeStats> {
        check_sample(&self.model, sample)?;
        match self.config.update_mode {
            UpdateMode::Online => self.train_online(sample),
            UpdateMode::Episodic => self.train_episodic(sample),
        }
    }

    fn train_online(&mut self, sample: &Sample) -> Result<EpisodeStats> {
        let cfg = &self.config;
        let (eta_e, eta_d) = (cfg.encoder_eta(), cfg.decoder_eta());
        let model = &mut self.model;
        model.encoder.reset();
        let n_y = model.encoder.n_readout();
        let hidden_units = model.encoder.layers()[..model.encoder.n_hidden_layers()]
            .iter()
            .map(|l| l.n_post)
            .sum();
        let mut window = WindowBuffer::new(cfg.tau_d, n_y);
        let mut readout = SpikeTrain::zeros(n_y, sample.x.steps());
        let mut acc = Accum::new(hidden_units);
        for t in 0..sample.x.steps() {
            let out = model.encoder.forward_step(sample.x.column(t), &mut self.rng)?;
            readout.set_column(t, &out.y)?;
            window.push(&out.y)?;
            record_spikes(&mut acc, &out);
            let ell_enc = encoder_loss_step(&out.logprobs, &out.y, cfg.prior_p);
            acc.ell_enc += ell_enc;
            let mut ell_dec = 0.0;
            if let Some(r_t) = sample.r.at(t) {
                let (loss, grads, pred) = decoder_step(&model.decoder, &window, r_t, eta_d != 0.0)?;
                ell_dec = loss;
                record_prediction(&mut acc, pred, r_t, loss);
                if let Some(g) = grads {
                    model.decoder.apply_gradients(eta_d, &g);
                }
            }
            let signal = global_learning_signal(ell_dec, ell_enc, cfg.beta, cfg.kappa, &mut self.baseline);
            let signal = clip_signal(signal, &mut acc.clipped);
            let scale = -eta_e * signal;
            if scale != 0.0 {
                apply_step_update(&mut model.encoder, scale, &out);
            }
        }
        if acc.clipped > 0 {
            log::debug!("learning signal clipped on {} steps", acc.clipped);
        }
        Ok(acc.finish(readout, sample.x.steps()))
    }

    fn train_episodic(&mut self, sample: &Sample) -> Result<EpisodeStats> {
        let cfg = &self.config;
        let (eta_e, eta_d) = (cfg.encoder_eta(), cfg.decoder_eta());
        let mut ep = run_episode(
            &mut self.model,
            sample,
            cfg.tau_d,
            cfg.prior_p,
            eta_d != 0.0,
            Drive::Sample(&mut self.rng),
        )?;
        let signal = global_learning_signal(ep.total_dec, ep.total_enc, cfg.beta, cfg.kappa, &mut self.baseline);
        let signal = clip_signal(signal, &mut ep.stats.clipped);
        let scale = -eta_e * signal;
        for (layer, sum) in self.model.encoder.layers_mut().iter_mut().zip(&ep.sums) {
            layer.apply_dense(scale, sum);
        }
        if eta_d != 0.0 {
            self.model.decoder.apply_gradients(eta_d, &ep.dec_grads);
        }
        Ok(ep.stats)
    }
}

enum Drive<'a> {
    Sample(&'a mut Rng),
    Clamp(&'a SpikeTrain),
}

struct Episode {
    stats: EpisodeStats,
    sums: Vec<DenseEligibility>,
    dec_grads: DecoderGradients,
    total_dec: f64,
    total_enc: f64,
}

/// Runs one sequence from rest, accumulating `Σ_t Δ_t` per layer, the summed
/// decoder gradients and the sequence losses. No parameter is changed.
fn run_episode(
    model: &mut VdibModel,
    sample: &Sample,
    tau_d: usize,
    prior_p: f64,
    want_dec_grads: bool,
    mut drive: Drive<'_>,
) -> Result<Episode> {
    model.encoder.reset();
    let n_y = model.encoder.n_readout();
    let n_hidden = model.encoder.n_hidden_layers();
    let hidden_units = model.encoder.layers()[..n_hidden].iter().map(|l| l.n_post).sum();
    let mut window = WindowBuffer::new(tau_d, n_y);
    let mut readout = SpikeTrain::zeros(n_y, sample.x.steps());
    let mut acc = Accum::new(hidden_units);
    let mut sums: Vec<DenseEligibility> = model.encoder.layers().iter().map(DenseEligibility::zeros).collect();
    let mut dec_grads = DecoderGradients::zeros_like(&model.decoder);
    let (mut total_dec, mut total_enc) = (0.0, 0.0);
    for t in 0..sample.x.steps() {
        let out = match &mut drive {
            Drive::Sample(rng) => model.encoder.forward_step(sample.x.column(t), rng)?,
            Drive::Clamp(y) => model.encoder.step_clamped(sample.x.column(t), y.column(t))?,
        };
        readout.set_column(t, &out.y)?;
        window.push(&out.y)?;
        record_spikes(&mut acc, &out);
        let ell_enc = encoder_loss_step(&out.logprobs, &out.y, prior_p);
        acc.ell_enc += ell_enc;
        total_enc += ell_enc;
        if let Some(r_t) = sample.r.at(t) {
            let (loss, grads, pred) = decoder_step(&model.decoder, &window, r_t, want_dec_grads)?;
            total_dec += loss;
            record_prediction(&mut acc, pred, r_t, loss);
            if let Some(g) = grads {
                dec_grads.add_scaled(1.0, &g);
            }
        }
        accumulate_step(&mut sums, &out);
    }
    Ok(Episode {
        stats: acc.finish(readout, sample.x.steps()),
        sums,
        dec_grads,
        total_dec,
        total_enc,
    })
}

/// Single-sample sequence-level gradient estimate for readout train `y`:
/// `(ℓ_dec + β·ℓ_enc) · Σ_t Δ_t`, one flat vector per encoder layer. The
/// episodic update is `−η` times this (before baseline and clipping).
pub fn episodic_gradient_estimate(
    model: &mut VdibModel,
    sample: &Sample,
    y: &SpikeTrain,
    beta: f64,
    prior_p: f64,
) -> Result<Vec<Vec<f64>>> {
    check_sample(model, sample)?;
    ensure_len("readout units", y.units(), model.encoder.n_readout())?;
    ensure_len("readout steps", y.steps(), sample.x.steps())?;
    let tau_d = model.decoder.window;
    let ep = run_episode(model, sample, tau_d, prior_p, false, Drive::Clamp(y))?;
    let signal = ep.total_dec + beta * ep.total_enc;
    Ok(ep
        .sums
        .iter()
        .map(|s| s.flat().into_iter().map(|v| signal * v).collect())
        .collect())
}

/// Adds `scale · Δ_t` to every encoder layer: the eligibility for the readout
/// and the eligibility times the learning signal for hidden neurons.
fn apply_step_update(encoder: &mut EncoderNetwork, scale: f64, out: &StepOutput) {
    let signals = out.learning_signals.clone();
    for (k, (layer, e)) in encoder.layers_mut().iter_mut().zip(&out.eligibilities).enumerate() {
        match layer.kind {
            LayerKind::ReadoutStochastic => layer.apply(scale, e),
            LayerKind::HiddenDeterministic => layer.apply(scale, &e.scaled(&signals[k])),
        }
    }
}

/// Adds the per-step `Δ_t` of every layer into `sums`.
pub fn accumulate_step(sums: &mut [DenseEligibility], out: &StepOutput) {
    let n_hidden = out.learning_signals.len();
    for (k, (sum, e)) in sums.iter_mut().zip(&out.eligibilities).enumerate() {
        if k < n_hidden {
            sum.add(1.0, &e.scaled(&out.learning_signals[k]));
        } else {
            sum.add(1.0, e);
        }
    }
}

/// Runs a sequence without learning, sampling readout spikes with `rng`.
pub fn evaluate_sequence(model: &mut VdibModel, sample: &Sample, prior_p: f64, rng: &mut Rng) -> Result<EpisodeStats> {
    check_sample(model, sample)?;
    model.encoder.reset();
    let n_y = model.encoder.n_readout();
    let hidden_units = model.encoder.layers()[..model.encoder.n_hidden_layers()]
        .iter()
        .map(|l| l.n_post)
        .sum();
    let mut window = WindowBuffer::new(model.decoder.window, n_y);
    let mut readout = SpikeTrain::zeros(n_y, sample.x.steps());
    let mut acc = Accum::new(hidden_units);
    for t in 0..sample.x.steps() {
        let out = model.encoder.forward_step(sample.x.column(t), rng)?;
        readout.set_column(t, &out.y)?;
        window.push(&out.y)?;
        record_spikes(&mut acc, &out);
        acc.ell_enc += encoder_loss_step(&out.logprobs, &out.y, prior_p);
        if let Some(r_t) = sample.r.at(t) {
            let (loss, _, pred) = decoder_step(&model.decoder, &window, r_t, false)?;
            record_prediction(&mut acc, pred, r_t, loss);
        }
    }
    Ok(acc.finish(readout, sample.x.steps()))
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: usize,
    pub ell_dec: f64,
    pub ell_enc: f64,
    pub spike_rate_readout: f64,
    pub spike_rate_hidden: f64,
    pub task_metric: f64,
}

/// Append-only training log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

pub const METRICS_HEADER: &str = "iter,ell_dec,ell_enc,spike_rate_readout,spike_rate_hidden,task_metric";

impl MetricLog {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iter, r.ell_dec, r.ell_enc, r.spike_rate_readout, r.spike_rate_hidden, r.task_metric
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == METRICS_HEADER => {}
            _ => return Err(Error::parse(0, "missing metrics header")),
        }
        let mut rows = Vec::new();
        let mut offset = METRICS_HEADER.len() + 1;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::parse(offset, "expected 6 fields"));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i].parse().map_err(|_| Error::parse(offset, format!("bad number `{}`", fields[i])))
            };
            rows.push(MetricRow {
                iter: fields[0].parse().map_err(|_| Error::parse(offset, "bad iteration"))?,
                ell_dec: num(1)?,
                ell_enc: num(2)?,
                spike_rate_readout: num(3)?,
                spike_rate_hidden: num(4)?,
                task_metric: num(5)?,
            });
            offset += line.len() + 1;
        }
        Ok(MetricLog { rows })
    }
}

/// Averages episode statistics over a logging interval.
#[derive(Clone, Debug, Default)]
pub struct IntervalMean {
    n: usize,
    row: [f64; 5],
}

impl IntervalMean {
    pub fn add(&mut self, s: &EpisodeStats, task_metric: f64) {
        self.n += 1;
        for (a, v) in self.row.iter_mut().zip([
            s.ell_dec,
            s.ell_enc,
            s.spike_rate_readout,
            s.spike_rate_hidden,
            task_metric,
        ]) {
            *a += v;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn take(&mut self, iter: usize) -> MetricRow {
        let n = self.n.max(1) as f64;
        let r = self.row.map(|v| v / n);
        *self = IntervalMean::default();
        MetricRow {
            iter,
            ell_dec: r[0],
            ell_enc: r[1],
            spike_rate_readout: r[2],
            spike_rate_hidden: r[3],
            task_metric: r[4],
        }
    }
}

/// Trains over `samples`, appending one log row every `log_every` samples
/// (and one for a trailing partial interval). `on_checkpoint` is invoked
/// with the number of samples seen every `checkpoint_every` samples, if set.
pub fn train<I>(
    trainer: &mut Trainer,
    samples: I,
    log_every: usize,
    checkpoint_every: Option<usize>,
    mut on_checkpoint: impl FnMut(usize, &VdibModel) -> Result<()>,
) -> Result<MetricLog>
where
    I: IntoIterator<Item = Result<Sample>>,
{
    let log_every = log_every.max(1);
    let mut log = MetricLog::default();
    let mut interval = IntervalMean::default();
    let mut seen = 0;
    for sample in samples {
        let sample = sample?;
        let stats = trainer.train_step(&sample)?;
        interval.add(&stats, stats.mse);
        seen += 1;
        if seen % log_every == 0 {
            log.push(interval.take(seen));
        }
        if let Some(every) = checkpoint_every {
            if every > 0 && seen % every == 0 {
                on_checkpoint(seen, &trainer.model)?;
            }
        }
    }
    if !interval.is_empty() {
        log.push(interval.take(seen));
    }
    Ok(log)
}

/// Losses and readout score of one clamped readout sequence `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceScore {
    pub log_prob: f64,
    pub ell_dec: f64,
    pub ell_enc: f64,
    /// `Σ_t Δ_t` of the readout layer in [`crate::encoder::NeuronLayer::flat_params`] layout.
    pub readout_eligibility: Vec<f64>,
}

/// Replays `y` through the encoder with the readout clamped and scores it
/// with the (fixed) decoder.
pub fn score_sequence(model: &mut VdibModel, sample: &Sample, y: &SpikeTrain, prior_p: f64) -> Result<SequenceScore> {
    check_sample(model, sample)?;
    ensure_len("readout units", y.units(), model.encoder.n_readout())?;
    ensure_len("readout steps", y.steps(), sample.x.steps())?;
    model.encoder.reset();
    let mut window = WindowBuffer::new(model.decoder.window, y.units());
    let readout_idx = model.encoder.layers().len() - 1;
    let mut elig = DenseEligibility::zeros(model.encoder.readout());
    let (mut log_prob, mut ell_dec, mut ell_enc) = (0.0, 0.0, 0.0);
    for t in 0..y.steps() {
        let out = model.encoder.step_clamped(sample.x.column(t), y.column(t))?;
        log_prob += out.logprobs.iter().sum::<f64>();
        ell_enc += encoder_loss_step(&out.logprobs, &out.y, prior_p);
        elig.add(1.0, &out.eligibilities[readout_idx]);
        window.push(&out.y)?;
        if let Some(r_t) = sample.r.at(t) {
            let features = model.decoder.features(&window)?;
            let o = model.decoder.forward(&features)?;
            ell_dec += loss_and_grad(&o, r_t, model.decoder.likelihood)?.0;
        }
    }
    Ok(SequenceScore {
        log_prob,
        ell_dec,
        ell_enc,
        readout_eligibility: elig.flat(),
    })
}

/// Largest `N_Y · T` accepted by the enumeration oracles.
pub const MAX_ENUMERATION_BITS: usize = 12;

/// Calls `f` with every binary readout train of the given shape.
pub fn for_each_readout(
    n_y: usize,
    steps: usize,
    mut f: impl FnMut(&SpikeTrain) -> Result<()>,
) -> Result<()> {
    let bits = n_y * steps;
    if bits > MAX_ENUMERATION_BITS {
        return Err(Error::invalid(format!(
            "enumeration over {bits} readout bits exceeds the limit of {MAX_ENUMERATION_BITS}"
        )));
    }
    let mut y = SpikeTrain::zeros(n_y, steps);
    for code in 0u32..(1u32 << bits) {
        for b in 0..bits {
            y.set(b % n_y, b / n_y, (code >> b) & 1 == 1);
        }
        f(&y)?;
    }
    Ok(())
}

/// Exact expected loss `E_{p(y‖x)}[ℓ_dec + β·ℓ_enc]` of a readout-only encoder
/// and its gradient with respect to the readout parameters, obtained from
/// the score-function identity `∇E[L] = E[L ∇log p]` (the `β·∇log p` term
/// of `ℓ_enc` has zero mean).
pub fn enumerate_expected_loss(
    model: &mut VdibModel,
    sample: &Sample,
    beta: f64,
    prior_p: f64,
) -> Result<(f64, Vec<f64>)> {
    if model.encoder.n_hidden_layers() != 0 {
        return Err(Error::invalid("enumeration oracle needs a readout-only encoder"));
    }
    let n_params = model.encoder.readout_params().len();
    let mut expected = 0.0;
    let mut grad = vec![0.0; n_params];
    let n_y = model.encoder.n_readout();
    for_each_readout(n_y, sample.x.steps(), |y| {
        let s = score_sequence(model, sample, y, prior_p)?;
        let p = s.log_prob.exp();
        let loss = s.ell_dec + beta * s.ell_enc;
        expected += p * loss;
        for (g, e) in grad.iter_mut().zip(&s.readout_eligibility) {
            *g += p * loss * e;
        }
        Ok(())
    })?;
    Ok((expected, grad))
}
