//! Spike-response and feedback kernels.
//!
//! Hidden layers run the second-order autoregressive traces of [`super::traces`],
//! whose impulse response is [`ar_synaptic_kernel`]. Readout layers convolve an
//! explicit window of past spikes with the truncated kernels of
//! [`build_readout_kernels`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::CausalFilter;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub tau_ref: f64,
    /// Truncation window: taps beyond this delay are zero.
    pub tau_e: usize,
    /// Delayed kernels per synapse (readout layers only).
    pub num_kernels: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            tau_mem: 20.0,
            tau_syn: 5.0,
            tau_ref: 10.0,
            tau_e: 5,
            num_kernels: 1,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        for (name, tau) in [
            ("tau_mem", self.tau_mem),
            ("tau_syn", self.tau_syn),
            ("tau_ref", self.tau_ref),
        ] {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {tau}")));
            }
        }
        if (self.tau_mem - self.tau_syn).abs() < 1e-12 {
            return Err(Error::config(
                "tau_mem and tau_syn must differ (alpha kernel is degenerate)",
            ));
        }
        if self.tau_e < 1 {
            return Err(Error::config("tau_e must be at least 1"));
        }
        if self.num_kernels < 1 {
            return Err(Error::config("num_kernels must be at least 1"));
        }
        if self.num_kernels > self.tau_e {
            return Err(Error::config(format!(
                "num_kernels ({}) exceeds tau_e ({})",
                self.num_kernels, self.tau_e
            )));
        }
        Ok(())
    }

    /// Per-step decay factors `(e^{-1/τ_mem}, e^{-1/τ_syn}, e^{-1/τ_ref})`.
    pub fn decays(&self) -> (f64, f64, f64) {
        (
            (-1.0 / self.tau_mem).exp(),
            (-1.0 / self.tau_syn).exp(),
            (-1.0 / self.tau_ref).exp(),
        )
    }

    fn alpha(&self, delta: usize) -> f64 {
        let d = delta as f64;
        (-d / self.tau_mem).exp() - (-d / self.tau_syn).exp()
    }
}

/// Alpha-function kernel `e^{-δ/τ_mem} − e^{-δ/τ_syn}` for `δ = 1..=τ_e`, with
/// `tap[0] = 0` so that a spike reaches the potential on the next step.
pub fn build_alpha_kernel(params: &FilterParams) -> Result<CausalFilter> {
    params.validate()?;
    let mut taps = vec![0.0; params.tau_e + 1];
    for (delta, tap) in taps.iter_mut().enumerate().skip(1) {
        *tap = params.alpha(delta);
    }
    Ok(CausalFilter::new(taps))
}

/// `K_a` copies of the alpha kernel, the `k`-th delayed by `k` steps and
/// truncated at `τ_e`.
pub fn build_readout_kernels(params: &FilterParams) -> Result<Vec<CausalFilter>> {
    let base = build_alpha_kernel(params)?;
    Ok((0..params.num_kernels)
        .map(|k| {
            let taps = (0..=params.tau_e)
                .map(|delta| if delta < k { 0.0 } else { base.tap(delta - k) })
                .collect();
            CausalFilter::new(taps)
        })
        .collect())
}

/// Impulse response of the synaptic AR recursion over `len` delays:
/// `h_δ = α_{δ−1} / (e^{-1/τ_mem} − e^{-1/τ_syn})`, i.e. the alpha kernel
/// delayed by one step and rescaled.
pub fn ar_synaptic_kernel(params: &FilterParams, len: usize) -> Result<CausalFilter> {
    let wide = FilterParams {
        tau_e: len.max(1),
        num_kernels: 1,
        ..params.clone()
    };
    let alpha = build_alpha_kernel(&wide)?;
    let (a, b, _) = params.decays();
    let gain = 1.0 / (a - b);
    let taps = (0..=len)
        .map(|delta| if delta == 0 { 0.0 } else { gain * alpha.tap(delta - 1) })
        .collect();
    Ok(CausalFilter::new(taps))
}

/// Impulse response of the refractory AR recursion: `e^{-(δ−1)/τ_ref}` for `δ ≥ 1`.
pub fn ar_feedback_kernel(params: &FilterParams, len: usize) -> CausalFilter {
    let taps = (0..=len)
        .map(|delta| {
            if delta == 0 {
                0.0
            } else {
                (-((delta - 1) as f64) / params.tau_ref).exp()
            }
        })
        .collect();
    CausalFilter::new(taps)
}
