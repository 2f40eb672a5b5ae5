use std::collections::VecDeque;

use crate::error::{ensure_len, Result};

use super::filters::FilterParams;
use crate::mathcore::CausalFilter;

/// Autoregressive filter state of one layer.
///
/// `p`/`q` are the second-order synaptic traces (one per pre-synaptic unit),
/// `r` the first-order refractory trace (one per neuron of the layer).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    /// Spikes the layer emitted at the most recent step.
    pub last_spikes: Vec<u8>,
}

impl TraceState {
    pub fn new(n_pre: usize, n_post: usize) -> Self {
        TraceState {
            p: vec![0.0; n_pre],
            q: vec![0.0; n_pre],
            r: vec![0.0; n_post],
            last_spikes: vec![0; n_post],
        }
    }

    pub fn reset(&mut self) {
        self.p.fill(0.0);
        self.q.fill(0.0);
        self.r.fill(0.0);
        self.last_spikes.fill(0);
    }

    /// In-place version of [`trace_step`] with precomputed decays.
    pub(crate) fn advance(&mut self, spikes_pre: &[u8], spikes_post: &[u8], decays: (f64, f64, f64)) {
        let (a, b, c) = decays;
        for ((p, q), &s) in self.p.iter_mut().zip(self.q.iter_mut()).zip(spikes_pre) {
            *p = a * *p + *q;
            *q = b * *q + f64::from(s);
        }
        self.advance_refractory(spikes_post, c);
    }

    /// Advances using this layer's own `last_spikes` as the post-synaptic input.
    pub(crate) fn advance_own(&mut self, spikes_pre: &[u8], decays: (f64, f64, f64)) {
        let (a, b, c) = decays;
        for ((p, q), &s) in self.p.iter_mut().zip(self.q.iter_mut()).zip(spikes_pre) {
            *p = a * *p + *q;
            *q = b * *q + f64::from(s);
        }
        for (r, &s) in self.r.iter_mut().zip(&self.last_spikes) {
            *r = c * *r + f64::from(s);
        }
    }

    pub(crate) fn advance_refractory(&mut self, spikes_post: &[u8], decay: f64) {
        for (r, &s) in self.r.iter_mut().zip(spikes_post) {
            *r = decay * *r + f64::from(s);
        }
    }
}

/// One step of the AR recursions: from the state at `t−1` and the spikes
/// emitted at `t−1`, returns the state at `t`.
///
/// ```text
/// p_t = e^{-1/τ_mem} p_{t−1} + q_{t−1}
/// q_t = e^{-1/τ_syn} q_{t−1} + s^{pre}_{t−1}
/// r_t = e^{-1/τ_ref} r_{t−1} + s^{post}_{t−1}
/// ```
pub fn trace_step(
    state: &TraceState,
    spikes_pre: &[u8],
    spikes_post: &[u8],
    params: &FilterParams,
) -> Result<TraceState> {
    ensure_len("pre-synaptic spikes", spikes_pre.len(), state.p.len())?;
    ensure_len("post-synaptic spikes", spikes_post.len(), state.r.len())?;
    let mut next = state.clone();
    next.advance(spikes_pre, spikes_post, params.decays());
    Ok(next)
}

/// Window of the last `capacity` pre-synaptic spike vectors, newest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpikeHistory {
    capacity: usize,
    width: usize,
    recent: VecDeque<Vec<u8>>,
}

impl SpikeHistory {
    pub fn new(capacity: usize, width: usize) -> Self {
        SpikeHistory {
            capacity,
            width,
            recent: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn reset(&mut self) {
        self.recent.clear();
    }

    pub fn push(&mut self, spikes: &[u8]) {
        debug_assert_eq!(spikes.len(), self.width);
        if self.recent.len() == self.capacity {
            if let Some(mut oldest) = self.recent.pop_back() {
                oldest.copy_from_slice(spikes);
                self.recent.push_front(oldest);
                return;
            }
        }
        self.recent.push_front(spikes.to_vec());
    }

    /// Filtered traces `Σ_{δ=1}^{capacity} f^k_δ s_{j,t−δ}`, laid out as
    /// `[j * K + k]`, where the newest stored vector is `s_{t−1}`.
    pub fn kernel_traces(&self, kernels: &[CausalFilter]) -> Vec<f64> {
        let k_count = kernels.len();
        let mut out = vec![0.0; self.width * k_count];
        for (age, spikes) in self.recent.iter().enumerate() {
            let delta = age + 1;
            for (k, kernel) in kernels.iter().enumerate() {
                let tap = kernel.tap(delta);
                if tap == 0.0 {
                    continue;
                }
                for (j, &s) in spikes.iter().enumerate() {
                    if s != 0 {
                        out[j * k_count + k] += tap;
                    }
                }
            }
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn len(&self) -> usize {
        self.recent.len()
    }
}
