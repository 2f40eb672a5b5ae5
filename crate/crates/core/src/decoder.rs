//! Windowed feed-forward decoder with hand-written backpropagation.
//!
//! The decoder sees the last `τ_d` readout spike vectors (or their per-unit
//! sums, for the rate baseline) and outputs the parameters of a likelihood
//! over the reference sample `r_t`.

use std::collections::VecDeque;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::mathcore::{log_sum_exp, nonzero_indices, sigmoid, softmax, softplus, Matrix, Rng};

/// The last `capacity` readout vectors, zero-padded before the first push.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBuffer {
    capacity: usize,
    width: usize,
    recent: VecDeque<Vec<u8>>,
}

impl WindowBuffer {
    pub fn new(capacity: usize, width: usize) -> Self {
        WindowBuffer {
            capacity,
            width,
            recent: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pushed (non-padding) entries.
    pub fn filled(&self) -> usize {
        self.recent.len()
    }

    pub fn reset(&mut self) {
        self.recent.clear();
    }

    pub fn push(&mut self, y_t: &[u8]) -> Result<()> {
        ensure_len("window entry", y_t.len(), self.width)?;
        if self.capacity == 0 {
            return Ok(());
        }
        if self.recent.len() == self.capacity {
            let mut oldest = self.recent.pop_front().expect("full window");
            oldest.copy_from_slice(y_t);
            self.recent.push_back(oldest);
        } else {
            self.recent.push_back(y_t.to_vec());
        }
        Ok(())
    }

    /// Flattened window, oldest slot first: entry `s * width + i` is unit `i`
    /// at slot `s`, where slot `capacity − 1` holds the newest vector.
    pub fn features(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.capacity * self.width];
        let pad = self.capacity - self.recent.len();
        for (s, v) in self.recent.iter().enumerate() {
            let base = (pad + s) * self.width;
            for (o, &y) in out[base..base + self.width].iter_mut().zip(v) {
                *o = f64::from(y);
            }
        }
        out
    }
}

/// Per-unit spike counts over the window.
pub fn rate_pool(buf: &WindowBuffer) -> Vec<f64> {
    let mut out = vec![0.0; buf.width];
    for v in &buf.recent {
        for (o, &y) in out.iter_mut().zip(v) {
            *o += f64::from(y);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    LinearSoftmax,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Categorical,
    BernoulliPixel,
    /// Unit-variance Gaussian; the `½ log 2π` constant is dropped.
    GaussianUnit,
}

/// What the decoder reads from the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderInput {
    /// The full window, `N_Y · τ_d` features.
    Window,
    /// Per-unit spike counts, `N_Y` features.
    Rate,
}

macro_rules! snake_case_from_str {
    ($ty:ty, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

snake_case_from_str!(DecoderKind, "linear_softmax" => DecoderKind::LinearSoftmax, "mlp" => DecoderKind::Mlp);
snake_case_from_str!(
    Likelihood,
    "categorical" => Likelihood::Categorical,
    "bernoulli_pixel" => Likelihood::BernoulliPixel,
    "gaussian_unit" => Likelihood::GaussianUnit,
);
snake_case_from_str!(DecoderInput, "window" => DecoderInput::Window, "rate" => DecoderInput::Rate);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(n_out: usize, n_in: usize) -> Self {
        Dense {
            weights: Matrix::zeros(n_out, n_in),
            biases: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let active = nonzero_indices(x);
        let mut out = self.biases.clone();
        if active.len() * 2 < x.len() {
            for (i, o) in out.iter_mut().enumerate() {
                let row = self.weights.row(i);
                *o += active.iter().map(|&j| row[j] * x[j]).sum::<f64>();
            }
        } else {
            for (o, wx) in out.iter_mut().zip(self.weights.mul_vec(x)) {
                *o += wx;
            }
        }
        out
    }
}

/// Feed-forward decoder: either one affine map, or one ReLU hidden layer
/// followed by an affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderModel {
    pub kind: DecoderKind,
    pub likelihood: Likelihood,
    pub input: DecoderInput,
    /// Readout units `N_Y`.
    pub n_units: usize,
    /// Window length `τ_d`.
    pub window: usize,
    pub n_out: usize,
    /// Affine maps, input side first. One for the linear model, two for the MLP.
    pub layers: Vec<Dense>,
}

/// Gradients with the same layout as [`DecoderModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderGradients {
    pub layers: Vec<Dense>,
}

impl DecoderGradients {
    pub fn zeros_like(model: &DecoderModel) -> Self {
        DecoderGradients {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, scale: f64, other: &DecoderGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += scale * y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += scale * y;
            }
        }
    }

    /// All entries, layer by layer as `[weights, biases]`.
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|g| g.is_finite())
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weights.as_slice());
        out.extend_from_slice(&l.biases);
    }
    out
}

impl DecoderModel {
    /// Linear layers start at zero (uniform prediction); MLP layers are
    /// uniform in `±sqrt(1/fan_in)` with zero biases. The MLP hidden width is
    /// `(N_Y · τ_d) / 2` for both input modes.
    pub fn new(
        kind: DecoderKind,
        likelihood: Likelihood,
        input: DecoderInput,
        n_units: usize,
        window: usize,
        n_out: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_units == 0 || window == 0 || n_out == 0 {
            return Err(Error::config("decoder sizes must be positive"));
        }
        let n_in = match input {
            DecoderInput::Window => n_units * window,
            DecoderInput::Rate => n_units,
        };
        let layers = match kind {
            DecoderKind::LinearSoftmax => vec![Dense::zeros(n_out, n_in)],
            DecoderKind::Mlp => {
                let hidden = ((n_units * window) / 2).max(1);
                let init = |rows: usize, cols: usize, rng: &mut Rng| Dense {
                    weights: Matrix::uniform(rows, cols, (1.0 / cols as f64).sqrt(), rng),
                    biases: vec![0.0; rows],
                };
                vec![init(hidden, n_in, rng), init(n_out, hidden, rng)]
            }
        };
        Ok(DecoderModel {
            kind,
            likelihood,
            input,
            n_units,
            window,
            n_out,
            layers,
        })
    }

    /// Checks layer shapes against the declared sizes, e.g. after deserialisation.
    pub fn validate(&self) -> Result<()> {
        let n_in = match self.input {
            DecoderInput::Window => self.n_units * self.window,
            DecoderInput::Rate => self.n_units,
        };
        let expected_layers = match self.kind {
            DecoderKind::LinearSoftmax => 1,
            DecoderKind::Mlp => 2,
        };
        ensure_len("decoder layers", self.layers.len(), expected_layers)?;
        ensure_len("decoder input width", self.layers[0].weights.cols(), n_in)?;
        for pair in self.layers.windows(2) {
            ensure_len("decoder hidden width", pair[1].weights.cols(), pair[0].weights.rows())?;
        }
        for l in &self.layers {
            ensure_len("decoder biases", l.biases.len(), l.weights.rows())?;
        }
        ensure_len("decoder outputs", self.layers[expected_layers - 1].weights.rows(), self.n_out)
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn hidden_size(&self) -> Option<usize> {
        match self.kind {
            DecoderKind::LinearSoftmax => None,
            DecoderKind::Mlp => Some(self.layers[0].weights.rows()),
        }
    }

    /// Features of `buf` according to the input mode.
    pub fn features(&self, buf: &WindowBuffer) -> Result<Vec<f64>> {
        ensure_len("window width", buf.width(), self.n_units)?;
        ensure_len("window length", buf.capacity(), self.window)?;
        Ok(match self.input {
            DecoderInput::Window => buf.features(),
            DecoderInput::Rate => rate_pool(buf),
        })
    }

    /// Output parameters: logits (categorical, Bernoulli) or means (Gaussian).
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        ensure_len("decoder features", features.len(), self.n_in())?;
        Ok(self.forward_cached(features).1)
    }

    fn forward_cached(&self, features: &[f64]) -> (Option<Vec<f64>>, Vec<f64>) {
        match self.kind {
            DecoderKind::LinearSoftmax => (None, self.layers[0].forward(features)),
            DecoderKind::Mlp => {
                let mut h = self.layers[0].forward(features);
                for v in &mut h {
                    *v = v.max(0.0);
                }
                let out = self.layers[1].forward(&h);
                (Some(h), out)
            }
        }
    }

    /// Probabilities (categorical, Bernoulli) or means (Gaussian) of the outputs.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        let o = self.forward(features)?;
        Ok(match self.likelihood {
            Likelihood::Categorical => softmax(&o),
            Likelihood::BernoulliPixel => o.iter().map(|&v| sigmoid(v)).collect(),
            Likelihood::GaussianUnit => o,
        })
    }

    /// Loss and gradients of `−log q(r_t | features)`.
    pub fn backprop(&self, features: &[f64], r_t: &[f64]) -> Result<(DecoderGradients, f64)> {
        ensure_len("decoder features", features.len(), self.n_in())?;
        let (hidden, out) = self.forward_cached(features);
        let (loss, d_out) = loss_and_grad(&out, r_t, self.likelihood)?;
        let mut grads = DecoderGradients::zeros_like(self);
        match hidden {
            None => {
                let g = &mut grads.layers[0];
                add_outer_sparse(&mut g.weights, &d_out, features);
                g.biases.copy_from_slice(&d_out);
            }
            Some(h) => {
                {
                    let g = &mut grads.layers[1];
                    g.weights.add_outer(1.0, &d_out, &h);
                    g.biases.copy_from_slice(&d_out);
                }
                let mut d_h = self.layers[1].weights.mul_transpose_vec(&d_out);
                for (d, &hv) in d_h.iter_mut().zip(&h) {
                    if hv <= 0.0 {
                        *d = 0.0;
                    }
                }
                let g = &mut grads.layers[0];
                add_outer_sparse(&mut g.weights, &d_h, features);
                g.biases.copy_from_slice(&d_h);
            }
        }
        Ok((grads, loss))
    }

    /// `θ ← θ − η · g`.
    pub fn apply_gradients(&mut self, eta: f64, grads: &DecoderGradients) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in l.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                *w -= eta * d;
            }
            for (b, d) in l.biases.iter_mut().zip(&g.biases) {
                *b -= eta * d;
            }
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self
            .layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum();
        ensure_len("decoder parameters", flat.len(), total)?;
        let mut rest = flat;
        for l in &mut self.layers {
            let n = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&rest[..n]);
            rest = &rest[n..];
            let m = l.biases.len();
            l.biases.copy_from_slice(&rest[..m]);
            rest = &rest[m..];
        }
        Ok(())
    }
}

fn add_outer_sparse(m: &mut Matrix, a: &[f64], b: &[f64]) {
    let active = nonzero_indices(b);
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let row = m.row_mut(i);
        for &j in &active {
            row[j] += ai * b[j];
        }
    }
}

fn check_reference(r_t: &[f64], likelihood: Likelihood) -> Result<()> {
    match likelihood {
        Likelihood::Categorical => {
            let ones = r_t.iter().filter(|&&v| v == 1.0).count();
            let zeros = r_t.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != r_t.len() {
                return Err(Error::invalid("categorical reference must be one-hot"));
            }
        }
        Likelihood::BernoulliPixel => {
            if r_t.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("bernoulli reference must lie in [0, 1]"));
            }
        }
        Likelihood::GaussianUnit => {
            if r_t.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("gaussian reference must be finite"));
            }
        }
    }
    Ok(())
}

/// `−log q(r_t | o)` for output parameters `o`.
pub fn logloss(o: &[f64], r_t: &[f64], likelihood: Likelihood) -> Result<f64> {
    loss_and_grad(o, r_t, likelihood).map(|(l, _)| l)
}

/// Loss and its gradient with respect to the output parameters.
pub fn loss_and_grad(o: &[f64], r_t: &[f64], likelihood: Likelihood) -> Result<(f64, Vec<f64>)> {
    ensure_len("reference sample", r_t.len(), o.len())?;
    check_reference(r_t, likelihood)?;
    Ok(match likelihood {
        Likelihood::Categorical => {
            let c = r_t.iter().position(|&v| v == 1.0).expect("checked one-hot");
            let loss = (log_sum_exp(o) - o[c]).max(0.0);
            let mut g = softmax(o);
            g[c] -= 1.0;
            (loss, g)
        }
        Likelihood::BernoulliPixel => {
            let loss = o.iter().zip(r_t).map(|(&oi, &ri)| softplus(oi) - ri * oi).sum();
            let g = o.iter().zip(r_t).map(|(&oi, &ri)| sigmoid(oi) - ri).collect();
            (loss, g)
        }
        Likelihood::GaussianUnit => {
            let g: Vec<f64> = o.iter().zip(r_t).map(|(&oi, &ri)| oi - ri).collect();
            (0.5 * g.iter().map(|d| d * d).sum::<f64>(), g)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn window_padding_eviction_and_order() {
        let mut w = WindowBuffer::new(3, 2);
        w.push(&[1, 0]).unwrap();
        assert_eq!(w.features(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        w.push(&[0, 1]).unwrap();
        w.push(&[1, 1]).unwrap();
        assert_eq!(w.features(), vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        w.push(&[0, 0]).unwrap();
        assert_eq!(w.features(), vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(w.filled(), 3);
        assert!(w.push(&[1]).is_err());
    }

    #[test]
    fn rate_pool_counts() {
        let mut w = WindowBuffer::new(5, 2);
        assert_eq!(rate_pool(&w), vec![0.0, 0.0]);
        for _ in 0..7 {
            w.push(&[1, 0]).unwrap();
        }
        assert_eq!(rate_pool(&w), vec![5.0, 0.0]);
    }

    #[test]
    fn zero_model_gives_uniform_categorical() {
        let mut rng = Rng::new(0, 0);
        let m = DecoderModel::new(
            DecoderKind::LinearSoftmax,
            Likelihood::Categorical,
            DecoderInput::Window,
            3,
            2,
            4,
            &mut rng,
        )
        .unwrap();
        let o = m.forward(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(o, vec![0.0; 4]);
        let r = [0.0, 0.0, 1.0, 0.0];
        assert!((logloss(&o, &r, Likelihood::Categorical).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn linear_selects_weight_column() {
        let mut rng = Rng::new(1, 0);
        let mut m = DecoderModel::new(
            DecoderKind::LinearSoftmax,
            Likelihood::GaussianUnit,
            DecoderInput::Rate,
            3,
            4,
            2,
            &mut rng,
        )
        .unwrap();
        let flat: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        m.set_flat_params(&flat).unwrap();
        // weights [[0, .5, 1], [1.5, 2, 2.5]], biases [3, 3.5]
        assert_eq!(m.forward(&[0.0, 1.0, 0.0]).unwrap(), vec![3.5, 5.5]);
    }

    #[test]
    fn mlp_with_dead_hidden_layer_outputs_bias() {
        let mut rng = Rng::new(2, 0);
        let mut m = DecoderModel::new(
            DecoderKind::Mlp,
            Likelihood::BernoulliPixel,
            DecoderInput::Window,
            2,
            2,
            3,
            &mut rng,
        )
        .unwrap();
        assert_eq!(m.hidden_size(), Some(2));
        for w in m.layers[0].weights.as_mut_slice() {
            *w = -w.abs();
        }
        m.layers[0].biases.fill(-0.1);
        m.layers[1].biases = vec![0.3, -0.2, 0.7];
        assert_eq!(m.forward(&[1.0, 0.0, 1.0, 1.0]).unwrap(), vec![0.3, -0.2, 0.7]);
    }

    #[test]
    fn loss_examples() {
        let o = vec![0.0; 5];
        let half = vec![0.5; 5];
        let l = logloss(&o, &half, Likelihood::BernoulliPixel).unwrap();
        assert!((l - 5.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(logloss(&half, &half, Likelihood::GaussianUnit).unwrap(), 0.0);
        assert!(logloss(&o, &[0.0, 2.0, 0.0, 0.0, 0.0], Likelihood::Categorical).is_err());
        assert!(logloss(&o, &[0.0, 1.0, 1.0, 0.0, 0.0], Likelihood::Categorical).is_err());
        assert!(logloss(&o, &[0.0, 1.5, 0.0, 0.0, 0.0], Likelihood::BernoulliPixel).is_err());
        assert!(logloss(&o, &[0.0; 4], Likelihood::GaussianUnit).is_err());
    }

    #[test]
    fn saturated_categorical_has_zero_loss_and_gradient() {
        let o = [800.0, 0.0, -3.0];
        let (l, g) = loss_and_grad(&o, &[1.0, 0.0, 0.0], Likelihood::Categorical).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn gaussian_linear_gradient_is_outer_product() {
        let mut rng = Rng::new(3, 0);
        let mut m = DecoderModel::new(
            DecoderKind::LinearSoftmax,
            Likelihood::GaussianUnit,
            DecoderInput::Window,
            2,
            2,
            3,
            &mut rng,
        )
        .unwrap();
        let p: Vec<f64> = (0..15).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        m.set_flat_params(&p).unwrap();
        let x = [1.0, 0.0, 0.3, -2.0];
        let r = [0.1, 0.2, -0.5];
        let o = m.forward(&x).unwrap();
        let (g, _) = m.backprop(&x, &r).unwrap();
        for i in 0..3 {
            for (j, &xj) in x.iter().enumerate() {
                assert!((g.layers[0].weights.get(i, j) - (o[i] - r[i]) * xj).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rate_pool_equals_tied_window_model() {
        let mut rng = Rng::new(4, 0);
        let (n_y, tau_d, n_out) = (3, 4, 5);
        let mut rate = DecoderModel::new(
            DecoderKind::LinearSoftmax,
            Likelihood::Categorical,
            DecoderInput::Rate,
            n_y,
            tau_d,
            n_out,
            &mut rng,
        )
        .unwrap();
        let p: Vec<f64> = (0..n_out * n_y + n_out).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        rate.set_flat_params(&p).unwrap();
        let mut tied = DecoderModel::new(
            DecoderKind::LinearSoftmax,
            Likelihood::Categorical,
            DecoderInput::Window,
            n_y,
            tau_d,
            n_out,
            &mut rng,
        )
        .unwrap();
        for i in 0..n_out {
            for s in 0..tau_d {
                for u in 0..n_y {
                    tied.layers[0].weights.set(i, s * n_y + u, rate.layers[0].weights.get(i, u));
                }
            }
        }
        tied.layers[0].biases = rate.layers[0].biases.clone();
        let mut buf = WindowBuffer::new(tau_d, n_y);
        for _ in 0..7 {
            let y: Vec<u8> = (0..n_y).map(|_| u8::from(rng.uniform() < 0.5)).collect();
            buf.push(&y).unwrap();
            let a = rate.forward(&rate.features(&buf).unwrap()).unwrap();
            let b = tied.forward(&tied.features(&buf).unwrap()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn window_features_keep_fixed_length(pushes in 0usize..12, cap in 1usize..6) {
            let mut w = WindowBuffer::new(cap, 3);
            for k in 0..pushes {
                w.push(&[(k % 2) as u8, 1, 0]).unwrap();
            }
            prop_assert_eq!(w.features().len(), cap * 3);
            prop_assert_eq!(w.filled(), pushes.min(cap));
            let sums = rate_pool(&w);
            let f = w.features();
            for u in 0..3 {
                let col: f64 = (0..cap).map(|s| f[s * 3 + u]).sum();
                prop_assert_eq!(col, sums[u]);
            }
        }

        #[test]
        fn categorical_loss_nonnegative(o in proptest::collection::vec(-30.0f64..30.0, 2..8), c in 0usize..8) {
            let c = c % o.len();
            let mut r = vec![0.0; o.len()];
            r[c] = 1.0;
            prop_assert!(logloss(&o, &r, Likelihood::Categorical).unwrap() >= 0.0);
        }
    }
}
