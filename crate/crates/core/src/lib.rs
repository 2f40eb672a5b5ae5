//! Hybrid autoencoder with a spiking encoder and a conventional decoder,
//! trained with a variational directed information bottleneck.

pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod mathcore;
pub mod spikes;
pub mod trainer;

pub use error::{Error, Result};
