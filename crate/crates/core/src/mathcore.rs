//! Numerical primitives shared across the crate: activations, surrogate
//! derivatives, causal convolution, sampling and log-probabilities.
//!
//! Everything is `f64`. Probabilities that go into a logarithm are clamped to
//! `[PROB_EPS, 1 - PROB_EPS]` first.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Distance kept from 0 and 1 before taking logs of probabilities.
pub const PROB_EPS: f64 = 1e-7;

/// Seedable random source with independent substreams.
///
/// Identical `(seed, stream_id)` pairs produce identical draw sequences on
/// every platform. A single instance is owned by one worker at a time.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Rng {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Logistic sigmoid, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    /// Derivative of the logistic sigmoid, `σ(x)(1 − σ(x))`.
    #[default]
    SigmoidPrime,
}

impl std::str::FromStr for SurrogateKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid_prime" => Ok(SurrogateKind::SigmoidPrime),
            other => Err(crate::Error::config(format!("unknown surrogate kind `{other}`"))),
        }
    }
}

/// Pseudo-derivative of the Heaviside step used for hidden-neuron credit assignment.
pub fn surrogate_derivative(x: f64, kind: SurrogateKind) -> f64 {
    match kind {
        SurrogateKind::SigmoidPrime => {
            let s = sigmoid(-x.abs());
            s * (1.0 - s)
        }
    }
}

/// Finite causal filter `f_0..f_τ`; taps past the memory are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalFilter {
    taps: Vec<f64>,
}

impl CausalFilter {
    /// Builds a filter from its taps. An empty list is treated as the single tap `0`.
    pub fn new(taps: Vec<f64>) -> Self {
        if taps.is_empty() {
            CausalFilter { taps: vec![0.0] }
        } else {
            CausalFilter { taps }
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Largest delay with a (possibly) non-zero tap.
    pub fn memory(&self) -> usize {
        self.taps.len() - 1
    }

    /// Tap at delay `delta`, zero beyond the memory.
    pub fn tap(&self, delta: usize) -> f64 {
        self.taps.get(delta).copied().unwrap_or(0.0)
    }
}

/// `Σ_{δ=0}^{min(τ, t−1)} f_δ · g_{t−δ}` with 1-based `t`; samples before
/// the start of `signal` are zero.
///
/// # Panics
/// If `t` is 0 or exceeds `signal.len()`.
pub fn causal_convolve(filter: &CausalFilter, signal: &[f64], t: usize) -> f64 {
    assert!(
        t >= 1 && t <= signal.len(),
        "causal_convolve: t={t} outside 1..={}",
        signal.len()
    );
    let max_delay = filter.memory().min(t - 1);
    (0..=max_delay)
        .map(|delta| filter.taps[delta] * signal[t - 1 - delta])
        .sum()
}

/// Max-shifted softmax.
///
/// # Panics
/// If `v` is empty.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "softmax of an empty vector");
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    out
}

/// `log Σ exp(v_i)`, stabilised by the maximum.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Draws `1` with probability `prob`.
///
/// # Panics
/// If `prob` is outside `[0, 1]` (NaN included).
pub fn bernoulli_sample(rng: &mut Rng, prob: f64) -> u8 {
    assert!(
        (0.0..=1.0).contains(&prob),
        "bernoulli_sample: probability {prob} outside [0, 1]"
    );
    u8::from(rng.uniform() < prob)
}

pub fn clamp_prob(prob: f64) -> f64 {
    prob.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `y·log p + (1−y)·log(1−p)` with `p` clamped away from 0 and 1.
pub fn log_bernoulli(y: u8, prob: f64) -> f64 {
    let p = clamp_prob(prob);
    if y != 0 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> crate::Result<Self> {
        crate::error::ensure_len("matrix data", data.len(), rows * cols)?;
        Ok(Matrix { rows, cols, data })
    }

    /// Entries drawn uniformly from `[-bound, bound)`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · v`.
    pub fn mul_transpose_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// `self += scale · a ⊗ b`.
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let s = scale * ai;
            if s == 0.0 {
                continue;
            }
            for (w, &bj) in self.row_mut(i).iter_mut().zip(b) {
                *w += s * bj;
            }
        }
    }
}

/// Indices of the non-zero entries of `v`.
pub(crate) fn nonzero_indices(v: &[f64]) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
