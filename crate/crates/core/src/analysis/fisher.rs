//! Phase-estimation bounds from the quantum Fisher information.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    pub n_photons: u32,
    pub visibility: f64,
    pub system_efficiency: f64,
    pub generation_efficiency: f64,
    pub repetitions: u64,
    /// `F_Q = N²V²η_sys η_g`
    pub fisher_information: f64,
    /// `Δφ_low = 1/√(q F_Q)`; infinite when `F_Q = 0`.
    pub phase_lower_bound: f64,
    pub bound_is_infinite: bool,
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

pub fn fisher_information(n: u32, v: f64, eta_sys: f64, eta_g: f64, q: u64) -> Result<FisherReport> {
    if n == 0 || q == 0 {
        return Err(Error::InvalidArgument("photon number and repetitions must be at least 1".into()));
    }
    unit_interval("visibility", v)?;
    unit_interval("system efficiency", eta_sys)?;
    unit_interval("generation efficiency", eta_g)?;
    let f = (n as f64).powi(2) * v * v * eta_sys * eta_g;
    let bound = if f > 0.0 { 1.0 / (q as f64 * f).sqrt() } else { f64::INFINITY };
    Ok(FisherReport {
        n_photons: n,
        visibility: v,
        system_efficiency: eta_sys,
        generation_efficiency: eta_g,
        repetitions: q,
        fisher_information: f,
        phase_lower_bound: bound,
        bound_is_infinite: bound.is_infinite(),
    })
}

/// `1/(V√(η_sys η_g))`; infinite when any factor vanishes.
pub fn single_photon_bound(v: f64, eta_sys: f64, eta_g: f64) -> Result<f64> {
    unit_interval("visibility", v)?;
    unit_interval("system efficiency", eta_sys)?;
    unit_interval("generation efficiency", eta_g)?;
    let d = v * (eta_sys * eta_g).sqrt();
    Ok(if d > 0.0 { 1.0 / d } else { f64::INFINITY })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Supersensitivity {
    pub noon_bound: f64,
    pub single_bound: f64,
    /// The NOON bound beats the single-photon bound.
    pub attainable: bool,
}

pub fn supersensitivity(noon: &FisherReport, single_bound: f64) -> Supersensitivity {
    Supersensitivity {
        noon_bound: noon.phase_lower_bound,
        single_bound,
        attainable: noon.phase_lower_bound < single_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_noon_numbers() {
        let r = fisher_information(2, 0.67, 3.9e-5, 1.0, 1).unwrap();
        assert!((r.fisher_information - 7.0e-5).abs() < 0.02 * 7.0e-5);
        assert!((r.phase_lower_bound - 120.0).abs() < 1.0);
        let single = single_photon_bound(0.70, 0.012, 1.0).unwrap();
        assert!((single - 13.0).abs() < 0.1);
        assert!(!supersensitivity(&r, single).attainable);
    }

    #[test]
    fn identities() {
        let r = fisher_information(1, 1.0, 1.0, 1.0, 1).unwrap();
        assert_eq!((r.fisher_information, r.phase_lower_bound), (1.0, 1.0));
        assert_eq!(single_photon_bound(1.0, 1.0, 1.0).unwrap(), 1.0);
        let q = fisher_information(2, 0.67, 3.9e-5, 1.0, 100).unwrap();
        let one = fisher_information(2, 0.67, 3.9e-5, 1.0, 1).unwrap();
        assert!((one.phase_lower_bound / q.phase_lower_bound - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_information_is_flagged() {
        let r = fisher_information(2, 0.0, 0.5, 1.0, 1).unwrap();
        assert!(r.bound_is_infinite);
        assert!(single_photon_bound(0.0, 1.0, 1.0).unwrap().is_infinite());
        assert!(fisher_information(2, 1.2, 0.5, 1.0, 1).is_err());
    }
}
