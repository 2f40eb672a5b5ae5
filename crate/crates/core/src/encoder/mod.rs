//! Spiking encoder: layered spike-response-model neurons with deterministic
//! hidden layers and a stochastic-threshold readout layer, plus the local
//! eligibility traces and feedback-alignment learning signals used to train it.

pub mod filters;
pub mod layer;
pub mod network;
pub mod traces;

pub use filters::{
    ar_feedback_kernel, ar_synaptic_kernel, build_alpha_kernel, build_readout_kernels, FilterParams,
};
pub use layer::{
    hidden_eligibility, hidden_step, learning_signal, readout_eligibility, readout_step,
    DenseEligibility, EligibilitySet, FeedbackMatrix, LayerKind, NeuronLayer,
};
pub use network::{EncoderArchitecture, EncoderNetwork, SampledSequence, StepOutput};
pub use traces::{trace_step, SpikeHistory, TraceState};
