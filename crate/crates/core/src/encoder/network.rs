use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::mathcore::{log_bernoulli, nonzero_indices, sigmoid, CausalFilter, Rng, SurrogateKind};
use crate::spikes::SpikeTrain;

use super::filters::{build_readout_kernels, FilterParams};
use super::layer::{
    hidden_eligibility, hidden_step, learning_signal, readout_eligibility, readout_step,
    EligibilitySet, FeedbackMatrix, LayerKind, NeuronLayer,
};
use super::traces::{SpikeHistory, TraceState};

/// Layer sizes and filter settings of an encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderArchitecture {
    pub n_input: usize,
    /// Sizes of the deterministic hidden layers, input side first. May be empty.
    pub hidden: Vec<usize>,
    pub n_readout: usize,
    pub hidden_filter: FilterParams,
    pub readout_filter: FilterParams,
    pub surrogate: SurrogateKind,
    /// Surrogate threshold `ϑ`.
    pub threshold: f64,
    /// Initial self-feedback weight of hidden neurons. Negative values give
    /// the refractory response `−e^{-t/τ_ref}`.
    pub hidden_feedback_init: f64,
    pub readout_feedback_init: f64,
}

impl EncoderArchitecture {
    pub fn readout_only(n_input: usize, n_readout: usize, readout_filter: FilterParams) -> Self {
        EncoderArchitecture {
            n_input,
            hidden: Vec::new(),
            n_readout,
            hidden_filter: FilterParams::default(),
            readout_filter,
            surrogate: SurrogateKind::SigmoidPrime,
            threshold: 0.0,
            hidden_feedback_init: -1.0,
            readout_feedback_init: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct LayerState {
    traces: TraceState,
    history: Option<SpikeHistory>,
}

#[derive(Clone, Debug, Default)]
struct NetworkState {
    last_input: Vec<u8>,
    layers: Vec<LayerState>,
}

/// Everything produced by one timestep of the encoder.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub y: Vec<u8>,
    /// `log p(y_i | u_i)` for the emitted (or clamped) readout spikes.
    pub logprobs: Vec<f64>,
    pub readout_potential: Vec<f64>,
    /// `σ(u_i)` of the readout neurons.
    pub readout_prob: Vec<f64>,
    pub hidden_spikes: Vec<Vec<u8>>,
    /// One set per layer, readout last.
    pub eligibilities: Vec<EligibilitySet>,
    /// One vector per hidden layer.
    pub learning_signals: Vec<Vec<f64>>,
}

enum Readout<'a> {
    Sample(&'a mut Rng),
    Clamp(&'a [u8]),
}

/// Layered spiking encoder: deterministic hidden layers followed by one
/// layer of stochastic-threshold readout neurons.
///
/// A spike emitted at step `t` reaches downstream potentials from step
/// `t + 1` on, so each layer adds one step of latency.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderNetwork {
    layers: Vec<NeuronLayer>,
    /// Feedback alignment matrix for each hidden layer, mapping readout errors
    /// to that layer's neurons.
    feedback: Vec<FeedbackMatrix>,
    surrogate: SurrogateKind,
    threshold: f64,
    #[serde(skip)]
    readout_kernels: Vec<CausalFilter>,
    #[serde(skip)]
    state: NetworkState,
}

impl PartialEq for EncoderNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.feedback == other.feedback
            && self.surrogate == other.surrogate
            && self.threshold == other.threshold
    }
}

impl EncoderNetwork {
    pub fn new(arch: &EncoderArchitecture, rng: &mut Rng) -> Result<Self> {
        if arch.n_input == 0 || arch.n_readout == 0 || arch.hidden.contains(&0) {
            return Err(Error::config("encoder layer sizes must be positive"));
        }
        let mut layers = Vec::with_capacity(arch.hidden.len() + 1);
        let mut n_pre = arch.n_input;
        for &h in &arch.hidden {
            layers.push(NeuronLayer::init(
                LayerKind::HiddenDeterministic,
                n_pre,
                h,
                FilterParams {
                    num_kernels: 1,
                    ..arch.hidden_filter.clone()
                },
                arch.hidden_feedback_init,
                rng,
            )?);
            n_pre = h;
        }
        layers.push(NeuronLayer::init(
            LayerKind::ReadoutStochastic,
            n_pre,
            arch.n_readout,
            arch.readout_filter.clone(),
            arch.readout_feedback_init,
            rng,
        )?);
        let feedback = arch
            .hidden
            .iter()
            .map(|&h| FeedbackMatrix::random(h, arch.n_readout, rng))
            .collect();
        Self::from_parts(layers, feedback, arch.surrogate, arch.threshold)
    }

    pub fn from_parts(
        layers: Vec<NeuronLayer>,
        feedback: Vec<FeedbackMatrix>,
        surrogate: SurrogateKind,
        threshold: f64,
    ) -> Result<Self> {
        let mut net = EncoderNetwork {
            layers,
            feedback,
            surrogate,
            threshold,
            readout_kernels: Vec::new(),
            state: NetworkState::default(),
        };
        net.validate()?;
        net.reset();
        Ok(net)
    }

    /// Checks layer shapes and filters, e.g. after deserialisation.
    pub fn validate(&self) -> Result<()> {
        let (readout, hidden) = self
            .layers
            .split_last()
            .ok_or_else(|| Error::config("encoder needs at least a readout layer"))?;
        if readout.kind != LayerKind::ReadoutStochastic {
            return Err(Error::config("final layer must be the stochastic readout"));
        }
        if hidden.iter().any(|l| l.kind != LayerKind::HiddenDeterministic) {
            return Err(Error::config("only the final layer may be stochastic"));
        }
        for pair in self.layers.windows(2) {
            if pair[1].n_pre != pair[0].n_post {
                return Err(Error::shape("consecutive layer sizes disagree"));
            }
        }
        for l in &self.layers {
            l.filter.validate()?;
            ensure_len("layer weights rows", l.weights.rows(), l.n_post)?;
            ensure_len("layer weights cols", l.weights.cols(), l.syn_width())?;
            ensure_len("feedback weights", l.feedback_weights.len(), l.n_post)?;
            ensure_len("biases", l.biases.len(), l.n_post)?;
        }
        ensure_len("feedback matrices", self.feedback.len(), hidden.len())?;
        for (b, l) in self.feedback.iter().zip(hidden) {
            ensure_len("feedback matrix rows", b.matrix().rows(), l.n_post)?;
            ensure_len("feedback matrix cols", b.matrix().cols(), readout.n_post)?;
        }
        Ok(())
    }

    pub fn n_input(&self) -> usize {
        self.layers[0].n_pre
    }

    pub fn n_readout(&self) -> usize {
        self.readout().n_post
    }

    pub fn n_hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layers(&self) -> &[NeuronLayer] {
        &self.layers
    }

    /// Mutable access to layer weights. The feedback matrices stay frozen.
    pub fn layers_mut(&mut self) -> &mut [NeuronLayer] {
        &mut self.layers
    }

    pub fn readout(&self) -> &NeuronLayer {
        self.layers.last().expect("validated: at least one layer")
    }

    pub fn feedback_matrices(&self) -> &[FeedbackMatrix] {
        &self.feedback
    }

    pub fn surrogate(&self) -> SurrogateKind {
        self.surrogate
    }

    /// Readout parameters flattened as `[weights, feedback, bias]`.
    pub fn readout_params(&self) -> Vec<f64> {
        self.readout().flat_params()
    }

    pub fn set_readout_params(&mut self, flat: &[f64]) -> Result<()> {
        self.layers.last_mut().expect("validated").set_flat_params(flat)
    }

    /// Returns the network to rest: all traces zero, no spike history.
    pub fn reset(&mut self) {
        let readout = self.readout();
        self.readout_kernels = build_readout_kernels(&readout.filter).unwrap_or_default();
        self.state = NetworkState {
            last_input: vec![0; self.layers[0].n_pre],
            layers: self
                .layers
                .iter()
                .map(|l| match l.kind {
                    LayerKind::HiddenDeterministic => LayerState {
                        traces: TraceState::new(l.n_pre, l.n_post),
                        history: None,
                    },
                    LayerKind::ReadoutStochastic => LayerState {
                        traces: TraceState::new(0, l.n_post),
                        history: Some(SpikeHistory::new(l.filter.tau_e, l.n_pre)),
                    },
                })
                .collect(),
        };
    }

    /// Advances the network by one step with input `x_t`, sampling readout spikes.
    pub fn forward_step(&mut self, x_t: &[u8], rng: &mut Rng) -> Result<StepOutput> {
        self.step(x_t, Readout::Sample(rng))
    }

    /// Advances the network by one step with the readout spikes clamped to `y_t`.
    pub fn step_clamped(&mut self, x_t: &[u8], y_t: &[u8]) -> Result<StepOutput> {
        ensure_len("clamped readout spikes", y_t.len(), self.n_readout())?;
        self.step(x_t, Readout::Clamp(y_t))
    }

    fn step(&mut self, x_t: &[u8], mut readout_mode: Readout<'_>) -> Result<StepOutput> {
        ensure_len("input spikes", x_t.len(), self.n_input())?;
        if self.state.layers.len() != self.layers.len() {
            self.reset();
        }
        let mut pre = std::mem::replace(&mut self.state.last_input, x_t.to_vec());
        let n_layers = self.layers.len();
        let mut hidden_spikes = Vec::with_capacity(n_layers - 1);
        let mut eligibilities = Vec::with_capacity(n_layers);
        let mut readout_out = None;

        for (layer, st) in self.layers.iter().zip(self.state.layers.iter_mut()) {
            let decays = layer.filter.decays();
            let syn = match layer.kind {
                LayerKind::HiddenDeterministic => {
                    st.traces.advance_own(&pre, decays);
                    st.traces.p.clone()
                }
                LayerKind::ReadoutStochastic => {
                    st.traces.advance_own(&[], decays);
                    let hist = st.history.as_mut().expect("readout layers keep a history");
                    hist.push(&pre);
                    hist.kernel_traces(&self.readout_kernels)
                }
            };
            let active = nonzero_indices(&syn);
            let u = layer.potential_sparse(&syn, &active, &st.traces.r);
            let spikes = match layer.kind {
                LayerKind::HiddenDeterministic => {
                    let z = hidden_step(&u);
                    eligibilities.push(hidden_eligibility(
                        &syn,
                        &st.traces.r,
                        &u,
                        self.surrogate,
                        self.threshold,
                    ));
                    hidden_spikes.push(z.clone());
                    z
                }
                LayerKind::ReadoutStochastic => {
                    let (y, logprobs) = match &mut readout_mode {
                        Readout::Sample(rng) => readout_step(&u, rng),
                        Readout::Clamp(y) => {
                            let lp = u
                                .iter()
                                .zip(y.iter())
                                .map(|(&ui, &yi)| log_bernoulli(yi, sigmoid(ui)))
                                .collect();
                            (y.to_vec(), lp)
                        }
                    };
                    eligibilities.push(readout_eligibility(&syn, &st.traces.r, &u, &y));
                    readout_out = Some((y.clone(), logprobs, u));
                    y
                }
            };
            pre = std::mem::replace(&mut st.traces.last_spikes, spikes);
        }

        let (y, logprobs, readout_potential) = readout_out.expect("validated: readout layer present");
        let readout_prob: Vec<f64> = readout_potential.iter().map(|&u| sigmoid(u)).collect();
        let learning_signals = self
            .feedback
            .iter()
            .map(|b| learning_signal(b, &y, &readout_prob))
            .collect::<Result<Vec<_>>>()?;
        Ok(StepOutput {
            y,
            logprobs,
            readout_potential,
            readout_prob,
            hidden_spikes,
            eligibilities,
            learning_signals,
        })
    }

    /// `Σ_{i,t} log p(y_{i,t} | u_{i,t})` with the readout clamped to `y`.
    /// Resets the network first.
    pub fn sequence_log_prob(&mut self, x: &SpikeTrain, y: &SpikeTrain) -> Result<f64> {
        self.check_pair(x, y)?;
        self.reset();
        let mut total = 0.0;
        for t in 0..x.steps() {
            let out = self.step_clamped(x.column(t), y.column(t))?;
            total += out.logprobs.iter().sum::<f64>();
        }
        Ok(total)
    }

    /// Samples a readout train for `x` from rest. Returns the readout train,
    /// its log-probability and the hidden-layer spike trains.
    pub fn sample_sequence(&mut self, x: &SpikeTrain, rng: &mut Rng) -> Result<SampledSequence> {
        ensure_len("input units", x.units(), self.n_input())?;
        self.reset();
        let mut y = SpikeTrain::zeros(self.n_readout(), x.steps());
        let mut hidden: Vec<SpikeTrain> = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| SpikeTrain::zeros(l.n_post, x.steps()))
            .collect();
        let mut log_prob = 0.0;
        for t in 0..x.steps() {
            let out = self.forward_step(x.column(t), rng)?;
            y.set_column(t, &out.y)?;
            for (train, z) in hidden.iter_mut().zip(&out.hidden_spikes) {
                train.set_column(t, z)?;
            }
            log_prob += out.logprobs.iter().sum::<f64>();
        }
        Ok(SampledSequence { y, log_prob, hidden })
    }

    fn check_pair(&self, x: &SpikeTrain, y: &SpikeTrain) -> Result<()> {
        ensure_len("input units", x.units(), self.n_input())?;
        ensure_len("readout units", y.units(), self.n_readout())?;
        ensure_len("readout steps", y.steps(), x.steps())
    }
}

#[derive(Clone, Debug)]
pub struct SampledSequence {
    pub y: SpikeTrain,
    pub log_prob: f64,
    pub hidden: Vec<SpikeTrain>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::filters::ar_synaptic_kernel;
    use crate::mathcore::Matrix;

    fn small_arch(hidden: Vec<usize>) -> EncoderArchitecture {
        EncoderArchitecture {
            hidden,
            ..EncoderArchitecture::readout_only(
                4,
                3,
                FilterParams {
                    tau_e: 3,
                    num_kernels: 2,
                    ..FilterParams::default()
                },
            )
        }
    }

    fn random_train(units: usize, steps: usize, p: f64, rng: &mut Rng) -> SpikeTrain {
        let mut x = SpikeTrain::zeros(units, steps);
        for t in 0..steps {
            for u in 0..units {
                x.set(u, t, rng.uniform() < p);
            }
        }
        x
    }

    #[test]
    fn silent_network_fires_at_bias_rate() {
        let mut rng = Rng::new(1, 0);
        let mut net = EncoderNetwork::new(&small_arch(vec![5]), &mut rng).unwrap();
        for l in net.layers_mut() {
            l.weights.as_mut_slice().fill(0.0);
            l.feedback_weights.fill(0.0);
            l.biases.fill(-5.0);
        }
        let out = net.forward_step(&[1, 1, 1, 1], &mut rng).unwrap();
        for p in &out.readout_prob {
            assert!((p - 0.006_692_850_924_284_856).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_deterministic_and_reset_restores_rest() {
        let mut rng = Rng::new(2, 0);
        let net0 = EncoderNetwork::new(&small_arch(vec![6]), &mut rng).unwrap();
        let x = random_train(4, 20, 0.4, &mut rng);
        let run = |net: &mut EncoderNetwork, seed| {
            let mut r = Rng::new(seed, 9);
            net.sample_sequence(&x, &mut r).unwrap()
        };
        let mut a = net0.clone();
        let mut b = net0.clone();
        let ra = run(&mut a, 5);
        let rb = run(&mut b, 5);
        assert_eq!(ra.y, rb.y);
        assert_eq!(ra.log_prob, rb.log_prob);
        // A second run on the used network matches the fresh one.
        let again = run(&mut a, 5);
        assert_eq!(again.y, ra.y);
        assert_eq!(again.hidden, ra.hidden);
    }

    #[test]
    fn shape_errors() {
        let mut rng = Rng::new(3, 0);
        let mut net = EncoderNetwork::new(&small_arch(vec![]), &mut rng).unwrap();
        assert!(net.forward_step(&[1, 0], &mut rng).is_err());
        assert!(net.step_clamped(&[1, 0, 0, 0], &[1]).is_err());
        let x = SpikeTrain::zeros(4, 3);
        assert!(net.sequence_log_prob(&x, &SpikeTrain::zeros(3, 2)).is_err());
        assert_eq!(net.sequence_log_prob(&SpikeTrain::zeros(4, 0), &SpikeTrain::zeros(3, 0)).unwrap(), 0.0);
    }

    #[test]
    fn replay_matches_sampling_log_prob() {
        let mut rng = Rng::new(4, 0);
        let mut net = EncoderNetwork::new(&small_arch(vec![5]), &mut rng).unwrap();
        let x = random_train(4, 30, 0.5, &mut rng);
        let sampled = net.sample_sequence(&x, &mut rng).unwrap();
        let replay = net.sequence_log_prob(&x, &sampled.y).unwrap();
        assert!((replay - sampled.log_prob).abs() < 1e-9);
    }

    #[test]
    fn hidden_dynamics_ignore_readout_samples() {
        let mut rng = Rng::new(6, 0);
        let net = EncoderNetwork::new(&small_arch(vec![7, 5]), &mut rng).unwrap();
        let x = random_train(4, 25, 0.5, &mut rng);
        let mut a = net.clone();
        let mut b = net.clone();
        let ra = a.sample_sequence(&x, &mut Rng::new(1, 1)).unwrap();
        let rb = b.sample_sequence(&x, &mut Rng::new(2, 2)).unwrap();
        assert_eq!(ra.hidden, rb.hidden);
    }

    #[test]
    fn readout_forgets_spikes_older_than_window() {
        let mut rng = Rng::new(7, 0);
        let tau_e = 4;
        let arch = EncoderArchitecture::readout_only(
            3,
            2,
            FilterParams {
                tau_e,
                num_kernels: 2,
                ..FilterParams::default()
            },
        );
        let net = EncoderNetwork::new(&arch, &mut rng).unwrap();
        let steps = 20;
        let x = random_train(3, steps, 0.4, &mut rng);
        let y = random_train(2, steps, 0.3, &mut rng);
        let t0 = 6;
        let mut x2 = x.clone();
        x2.set(1, t0, x.get(1, t0) == 0);
        let potentials = |x: &SpikeTrain| {
            let mut n = net.clone();
            n.reset();
            (0..steps)
                .map(|t| n.step_clamped(x.column(t), y.column(t)).unwrap().readout_potential)
                .collect::<Vec<_>>()
        };
        let (a, b) = (potentials(&x), potentials(&x2));
        assert_ne!(a[t0 + 1], b[t0 + 1]);
        for t in t0 + tau_e + 1..steps {
            assert_eq!(a[t], b[t], "step {t}");
        }
    }

    #[test]
    fn hidden_potential_uses_ar_trace() {
        // One hidden neuron with one input: u_t = w · (h ∗ x)_t + w̄.
        let filter = FilterParams::default();
        let hidden = NeuronLayer {
            kind: LayerKind::HiddenDeterministic,
            n_pre: 1,
            n_post: 1,
            weights: Matrix::from_vec(1, 1, vec![0.5]).unwrap(),
            feedback_weights: vec![0.0],
            biases: vec![-100.0],
            filter: filter.clone(),
        };
        let readout = NeuronLayer {
            kind: LayerKind::ReadoutStochastic,
            n_pre: 1,
            n_post: 1,
            weights: Matrix::zeros(1, 1),
            feedback_weights: vec![0.0],
            biases: vec![0.0],
            filter: filter.clone(),
        };
        let b = FeedbackMatrix::from_matrix(Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let mut net = EncoderNetwork::from_parts(vec![hidden, readout], vec![b], SurrogateKind::SigmoidPrime, 0.0).unwrap();
        let mut rng = Rng::new(0, 0);
        let xs = [1u8, 0, 1, 1, 0, 0, 0, 1, 0, 0];
        let kernel = ar_synaptic_kernel(&filter, xs.len() + 1).unwrap();
        for t in 0..xs.len() {
            let out = net.forward_step(&[xs[t]], &mut rng).unwrap();
            // Potential at step t sees inputs of steps < t.
            let trace: f64 = (1..=t).map(|d| kernel.tap(d) * f64::from(xs[t - d])).sum();
            let e = &out.eligibilities[0];
            assert!((e.syn[0] - trace).abs() < 1e-12);
        }
    }
}
