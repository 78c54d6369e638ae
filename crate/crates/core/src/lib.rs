//! Frequency-domain two-photon interference with a Bragg-scattering
//! four-wave-mixing frequency beam splitter.

pub mod analysis;
pub mod analytic;
pub mod bsfwm;
pub mod error;
pub mod interferometer;
pub mod source;
pub mod spectral;

pub use error::{Error, Result};
