//! Counting statistics: Poisson uncertainties and accidental subtraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCounts {
    pub counts: Vec<f64>,
    /// `√(raw + accidental)`
    pub uncertainties: Vec<f64>,
    /// Entries where the accidentals exceeded the raw counts.
    pub clamped: Vec<bool>,
}

fn check_counts(name: &str, c: &[f64]) -> Result<()> {
    if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("{name} must be finite and nonnegative")));
    }
    Ok(())
}

/// `√n`, with one count of uncertainty assigned to empty bins.
pub fn poisson_errors(counts: &[f64]) -> Vec<f64> {
    counts.iter().map(|&n| if n > 0.0 { n.sqrt() } else { 1.0 }).collect()
}

pub fn subtract_accidentals(raw: &[f64], accidental: &[f64]) -> Result<NetCounts> {
    if raw.len() != accidental.len() {
        return Err(Error::InvalidArgument(format!(
            "{} raw counts but {} accidental counts",
            raw.len(),
            accidental.len()
        )));
    }
    check_counts("raw counts", raw)?;
    check_counts("accidental counts", accidental)?;
    Ok(NetCounts {
        counts: raw.iter().zip(accidental).map(|(r, a)| (r - a).max(0.0)).collect(),
        uncertainties: raw.iter().zip(accidental).map(|(r, a)| (r + a).sqrt()).collect(),
        clamped: raw.iter().zip(accidental).map(|(r, a)| a > r).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::fit::raw_visibility;

    #[test]
    fn examples() {
        let n = subtract_accidentals(&[100.0, 5.0], &[20.0, 9.0]).unwrap();
        assert_eq!(n.counts, vec![80.0, 0.0]);
        assert_eq!(n.uncertainties[0], 120f64.sqrt());
        assert_eq!(n.clamped, vec![false, true]);
        assert_eq!(poisson_errors(&[100.0, 0.0, 400.0]), vec![10.0, 1.0, 20.0]);
        assert!(subtract_accidentals(&[1.0], &[]).is_err());
        assert!(subtract_accidentals(&[-1.0], &[0.0]).is_err());
    }

    #[test]
    fn subtraction_raises_visibility() {
        let raw: Vec<f64> = (0..40).map(|j| 200.0 + 150.0 * (j as f64 * 0.4).cos()).collect();
        let net = subtract_accidentals(&raw, &[30.0; 40]).unwrap();
        assert!(raw_visibility(&net.counts).unwrap() >= raw_visibility(&raw).unwrap());
    }
}
