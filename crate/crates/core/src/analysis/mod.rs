//! Fits of interference observables, counting statistics and Fisher bounds.

pub mod counts;
pub mod fisher;
pub mod fit;
mod lm;

pub use counts::{poisson_errors, subtract_accidentals, NetCounts};
pub use fisher::{fisher_information, single_photon_bound, supersensitivity, FisherReport, Supersensitivity};
pub use fit::{
    fit_hom_dip, fit_sinusoid, fit_splitting_curve, harmonic_distortion, max_depletion_power, raw_visibility,
    FitModel, FitResult,
};
