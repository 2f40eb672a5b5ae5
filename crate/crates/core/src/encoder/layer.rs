use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Result};
use crate::mathcore::{
    bernoulli_sample, log_bernoulli, nonzero_indices, sigmoid, surrogate_derivative, Matrix, Rng,
    SurrogateKind,
};

use super::filters::FilterParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    HiddenDeterministic,
    ReadoutStochastic,
}

/// Weights of one layer of spike-response-model neurons.
///
/// Synaptic weights are stored as `[post × (pre · K)]` with column `j * K + k`
/// for kernel `k` of pre-synaptic unit `j`; hidden layers have `K = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronLayer {
    pub kind: LayerKind,
    pub n_pre: usize,
    pub n_post: usize,
    pub weights: Matrix,
    pub feedback_weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub filter: FilterParams,
}

impl NeuronLayer {
    /// Kernels per synapse.
    pub fn kernels(&self) -> usize {
        match self.kind {
            LayerKind::HiddenDeterministic => 1,
            LayerKind::ReadoutStochastic => self.filter.num_kernels,
        }
    }

    /// Width of the synaptic trace vector this layer consumes.
    pub fn syn_width(&self) -> usize {
        self.n_pre * self.kernels()
    }

    /// Initialisation: weights uniform in `±sqrt(1/fan_in)`, biases at −1,
    /// feedback weights at `feedback_init`.
    pub fn init(
        kind: LayerKind,
        n_pre: usize,
        n_post: usize,
        filter: FilterParams,
        feedback_init: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        filter.validate()?;
        let k = match kind {
            LayerKind::HiddenDeterministic => 1,
            LayerKind::ReadoutStochastic => filter.num_kernels,
        };
        let fan_in = (n_pre * k).max(1);
        let bound = (1.0 / fan_in as f64).sqrt();
        Ok(NeuronLayer {
            kind,
            n_pre,
            n_post,
            weights: Matrix::uniform(n_post, n_pre * k, bound, rng),
            feedback_weights: vec![feedback_init; n_post],
            biases: vec![-1.0; n_post],
            filter,
        })
    }

    /// `u_i = Σ_c w_{ic} syn_c + w_i r_i + w̄_i`.
    pub fn membrane_potential(&self, syn: &[f64], refractory: &[f64]) -> Result<Vec<f64>> {
        ensure_len("synaptic traces", syn.len(), self.syn_width())?;
        ensure_len("refractory traces", refractory.len(), self.n_post)?;
        let active = nonzero_indices(syn);
        Ok(self.potential_sparse(syn, &active, refractory))
    }

    pub(crate) fn potential_sparse(&self, syn: &[f64], active: &[usize], refractory: &[f64]) -> Vec<f64> {
        (0..self.n_post)
            .map(|i| {
                let row = self.weights.row(i);
                let drive: f64 = active.iter().map(|&c| row[c] * syn[c]).sum();
                drive + self.feedback_weights[i] * refractory[i] + self.biases[i]
            })
            .collect()
    }

    /// `w ← w + scale · Δ` for an eligibility (or eligibility-weighted) set.
    pub(crate) fn apply(&mut self, scale: f64, e: &EligibilitySet) {
        if scale == 0.0 {
            return;
        }
        let active = nonzero_indices(&e.syn);
        for i in 0..self.n_post {
            let c = scale * e.post[i];
            if c == 0.0 {
                continue;
            }
            let row = self.weights.row_mut(i);
            for &col in &active {
                row[col] += c * e.syn[col];
            }
            self.feedback_weights[i] += c * e.refractory[i];
            self.biases[i] += c;
        }
    }

    pub(crate) fn apply_dense(&mut self, scale: f64, acc: &DenseEligibility) {
        if scale == 0.0 {
            return;
        }
        for (w, g) in self.weights.as_mut_slice().iter_mut().zip(acc.weights.as_slice()) {
            *w += scale * g;
        }
        for (w, g) in self.feedback_weights.iter_mut().zip(&acc.feedback) {
            *w += scale * g;
        }
        for (w, g) in self.biases.iter_mut().zip(&acc.bias) {
            *w += scale * g;
        }
    }

    /// Parameters flattened as `[weights (row-major), feedback, bias]`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.weights.as_slice().to_vec();
        v.extend_from_slice(&self.feedback_weights);
        v.extend_from_slice(&self.biases);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let nw = self.weights.as_slice().len();
        ensure_len("flat parameters", flat.len(), nw + 2 * self.n_post)?;
        self.weights.as_mut_slice().copy_from_slice(&flat[..nw]);
        self.feedback_weights.copy_from_slice(&flat[nw..nw + self.n_post]);
        self.biases.copy_from_slice(&flat[nw + self.n_post..]);
        Ok(())
    }
}

/// Deterministic threshold: `z_i = 1` iff `u_i > 0`.
pub fn hidden_step(u: &[f64]) -> Vec<u8> {
    u.iter().map(|&x| u8::from(x > 0.0)).collect()
}

/// Samples `y_i ~ Bernoulli(σ(u_i))` and returns the clamped log-probability
/// of each sampled outcome.
pub fn readout_step(u: &[f64], rng: &mut Rng) -> (Vec<u8>, Vec<f64>) {
    let mut y = Vec::with_capacity(u.len());
    let mut logprob = Vec::with_capacity(u.len());
    for &ui in u {
        let p = sigmoid(ui);
        let yi = bernoulli_sample(rng, p);
        y.push(yi);
        logprob.push(log_bernoulli(yi, p));
    }
    (y, logprob)
}

/// Per-step eligibility of one layer in factored form: the synaptic entry for
/// neuron `i`, column `c` is `post[i] · syn[c]`, the feedback entry
/// `post[i] · refractory[i]` and the bias entry `post[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EligibilitySet {
    pub post: Vec<f64>,
    pub syn: Vec<f64>,
    pub refractory: Vec<f64>,
}

impl EligibilitySet {
    #[inline]
    pub fn synaptic(&self, i: usize, col: usize) -> f64 {
        self.post[i] * self.syn[col]
    }

    #[inline]
    pub fn feedback(&self, i: usize) -> f64 {
        self.post[i] * self.refractory[i]
    }

    #[inline]
    pub fn bias(&self, i: usize) -> f64 {
        self.post[i]
    }

    /// Multiplies each neuron's eligibility by a per-neuron factor (the
    /// learning signal for hidden neurons).
    pub fn scaled(&self, factors: &[f64]) -> EligibilitySet {
        EligibilitySet {
            post: self.post.iter().zip(factors).map(|(e, l)| e * l).collect(),
            syn: self.syn.clone(),
            refractory: self.refractory.clone(),
        }
    }

    /// Flattened in the layout of [`NeuronLayer::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let n = self.post.len();
        let mut v = Vec::with_capacity(n * self.syn.len() + 2 * n);
        for i in 0..n {
            v.extend(self.syn.iter().map(|s| self.post[i] * s));
        }
        v.extend((0..n).map(|i| self.feedback(i)));
        v.extend_from_slice(&self.post);
        v
    }
}

/// `e_ic = syn_c (y_i − σ(u_i))`, `e_i = r_i (y_i − σ(u_i))`, `ē_i = y_i − σ(u_i)`.
pub fn readout_eligibility(syn: &[f64], refractory: &[f64], u: &[f64], y: &[u8]) -> EligibilitySet {
    EligibilitySet {
        post: u.iter().zip(y).map(|(&ui, &yi)| f64::from(yi) - sigmoid(ui)).collect(),
        syn: syn.to_vec(),
        refractory: refractory.to_vec(),
    }
}

/// `e_ic = Θ'(u_i − ϑ) syn_c` and likewise for the feedback and bias terms.
pub fn hidden_eligibility(
    syn: &[f64],
    refractory: &[f64],
    u: &[f64],
    kind: SurrogateKind,
    threshold: f64,
) -> EligibilitySet {
    EligibilitySet {
        post: u.iter().map(|&ui| surrogate_derivative(ui - threshold, kind)).collect(),
        syn: syn.to_vec(),
        refractory: refractory.to_vec(),
    }
}

/// Random feedback matrix `B` (`[hidden × readout]`), fixed at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackMatrix {
    b: Matrix,
}

impl FeedbackMatrix {
    /// Entries uniform in `[-1, 1) / sqrt(n_readout)`.
    pub fn random(n_hidden: usize, n_readout: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / (n_readout.max(1) as f64).sqrt();
        let mut b = Matrix::uniform(n_hidden, n_readout, 1.0, rng);
        for v in b.as_mut_slice() {
            *v *= scale;
        }
        FeedbackMatrix { b }
    }

    pub fn from_matrix(b: Matrix) -> Self {
        FeedbackMatrix { b }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.b
    }
}

/// `L_i = Σ_k B_ik (y_k − σ(u_k))`, given `sigma_u = σ(u)`.
pub fn learning_signal(feedback: &FeedbackMatrix, y: &[u8], sigma_u: &[f64]) -> Result<Vec<f64>> {
    ensure_len("readout spikes", y.len(), feedback.b.cols())?;
    ensure_len("readout probabilities", sigma_u.len(), feedback.b.cols())?;
    let err: Vec<f64> = y.iter().zip(sigma_u).map(|(&yk, &s)| f64::from(yk) - s).collect();
    Ok(feedback.b.mul_vec(&err))
}

/// Eligibilities summed over an episode, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseEligibility {
    pub weights: Matrix,
    pub feedback: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseEligibility {
    pub fn zeros(layer: &NeuronLayer) -> Self {
        DenseEligibility {
            weights: Matrix::zeros(layer.n_post, layer.syn_width()),
            feedback: vec![0.0; layer.n_post],
            bias: vec![0.0; layer.n_post],
        }
    }

    pub fn add(&mut self, scale: f64, e: &EligibilitySet) {
        let active = nonzero_indices(&e.syn);
        for i in 0..e.post.len() {
            let c = scale * e.post[i];
            if c != 0.0 {
                let row = self.weights.row_mut(i);
                for &col in &active {
                    row[col] += c * e.syn[col];
                }
            }
            self.feedback[i] += scale * e.feedback(i);
            self.bias[i] += scale * e.bias(i);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.weights.as_slice().to_vec();
        v.extend_from_slice(&self.feedback);
        v.extend_from_slice(&self.bias);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_layer(kind: LayerKind) -> NeuronLayer {
        NeuronLayer {
            kind,
            n_pre: 2,
            n_post: 1,
            weights: Matrix::from_vec(1, 2, vec![0.3, -0.7]).unwrap(),
            feedback_weights: vec![0.0],
            biases: vec![-0.1],
            filter: FilterParams::default(),
        }
    }

    #[test]
    fn potential_examples() {
        let layer = toy_layer(LayerKind::HiddenDeterministic);
        assert_eq!(layer.membrane_potential(&[0.0, 0.0], &[0.0]).unwrap(), vec![-0.1]);
        let u = layer.membrane_potential(&[1.0, 0.0], &[0.0]).unwrap();
        assert!((u[0] - 0.2).abs() < 1e-15);

        let mut doubled = layer.clone();
        doubled.weights.as_mut_slice().iter_mut().for_each(|w| *w *= 2.0);
        doubled.biases[0] *= 2.0;
        doubled.feedback_weights[0] = 0.0;
        let syn = [0.4, 1.3];
        let a = layer.membrane_potential(&syn, &[0.5]).unwrap()[0];
        let b = doubled.membrane_potential(&syn, &[0.5]).unwrap()[0];
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert!(layer.membrane_potential(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn hidden_threshold_is_strict() {
        assert_eq!(hidden_step(&[-0.5, 0.5]), vec![0, 1]);
        assert_eq!(hidden_step(&[0.0]), vec![0]);
        assert_eq!(hidden_step(&[1e-12]), vec![1]);
    }

    #[test]
    fn readout_step_examples() {
        let mut rng = Rng::new(3, 0);
        let (y, lp) = readout_step(&[0.0; 200], &mut rng);
        for (yi, l) in y.iter().zip(&lp) {
            let _ = yi;
            assert!((l - 0.5f64.ln()).abs() < 1e-15);
        }
        let (y, lp) = readout_step(&[-50.0; 100], &mut rng);
        assert!(y.iter().all(|&v| v == 0));
        assert!(lp.iter().all(|l| l.is_finite()));

        let n = 100_000;
        let (y, _) = readout_step(&vec![1.0; n], &mut rng);
        let freq = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        // σ(1) at 30 digits.
        let p = 0.731_058_578_630_004_9;
        assert!((freq - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{freq}");
    }

    #[test]
    fn eligibility_examples() {
        let e = readout_eligibility(&[0.0], &[0.0], &[0.3], &[1]);
        assert_eq!(e.synaptic(0, 0), 0.0);
        let e = readout_eligibility(&[1.0], &[0.0], &[0.0], &[1]);
        assert_eq!(e.synaptic(0, 0), 0.5);

        let h = hidden_eligibility(&[1.0], &[0.0], &[0.0], SurrogateKind::SigmoidPrime, 0.0);
        assert_eq!(h.synaptic(0, 0), 0.25);
        let h = hidden_eligibility(&[0.0], &[0.0], &[0.7], SurrogateKind::SigmoidPrime, 0.0);
        assert_eq!(h.synaptic(0, 0), 0.0);
        let h = hidden_eligibility(&[1.0, 1.0], &[1.0, 1.0], &[30.0, -30.0], SurrogateKind::SigmoidPrime, 0.0);
        assert!(h.synaptic(0, 0) < 1e-12 && h.synaptic(1, 1) < 1e-12);
    }

    #[test]
    fn readout_eligibility_matches_finite_differences() {
        let mut rng = Rng::new(5, 1);
        let layer = NeuronLayer::init(
            LayerKind::ReadoutStochastic,
            3,
            2,
            FilterParams {
                tau_e: 4,
                num_kernels: 2,
                ..FilterParams::default()
            },
            0.4,
            &mut rng,
        )
        .unwrap();
        let syn: Vec<f64> = (0..6).map(|_| rng.uniform_range(0.0, 2.0)).collect();
        let refr = vec![0.8, 1.7];
        let y = [1u8, 0];
        let step_ll = |l: &NeuronLayer| -> f64 {
            let u = l.membrane_potential(&syn, &refr).unwrap();
            u.iter().zip(&y).map(|(&ui, &yi)| log_bernoulli(yi, sigmoid(ui))).sum()
        };
        let u = layer.membrane_potential(&syn, &refr).unwrap();
        let analytic = readout_eligibility(&syn, &refr, &u, &y).flat();
        let base = layer.flat_params();
        let h = 1e-5;
        for (idx, a) in analytic.iter().enumerate() {
            let mut plus = layer.clone();
            let mut minus = layer.clone();
            let mut p = base.clone();
            p[idx] += h;
            plus.set_flat_params(&p).unwrap();
            p[idx] -= 2.0 * h;
            minus.set_flat_params(&p).unwrap();
            let fd = (step_ll(&plus) - step_ll(&minus)) / (2.0 * h);
            assert!((fd - a).abs() < 1e-6, "param {idx}: fd {fd} vs {a}");
        }
    }

    #[test]
    fn learning_signal_examples() {
        let b = FeedbackMatrix::from_matrix(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let l = learning_signal(&b, &[1, 0], &[0.25, 0.5]).unwrap();
        assert_eq!(l, vec![0.75, -0.5]);
        let zero = learning_signal(&b, &[1, 0], &[1.0, 0.0]).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        let ones = FeedbackMatrix::from_matrix(Matrix::from_vec(3, 2, vec![1.0; 6]).unwrap());
        // errors 0.5 and −0.3
        let l = learning_signal(&ones, &[1, 0], &[0.5, 0.3]).unwrap();
        assert!(l.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(learning_signal(&ones, &[1], &[0.5]).is_err());
    }

    #[test]
    fn dense_accumulator_matches_factored_sum() {
        let layer = toy_layer(LayerKind::ReadoutStochastic);
        let e1 = readout_eligibility(&[0.5, 1.0], &[0.2], &[0.1], &[1]);
        let e2 = readout_eligibility(&[0.0, 2.0], &[0.4], &[-0.3], &[0]);
        let mut acc = DenseEligibility::zeros(&layer);
        acc.add(1.0, &e1);
        acc.add(2.0, &e2);
        let expected: Vec<f64> = e1.flat().iter().zip(e2.flat()).map(|(a, b)| a + 2.0 * b).collect();
        for (a, b) in acc.flat().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
