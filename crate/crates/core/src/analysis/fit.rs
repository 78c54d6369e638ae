//! Least-squares fits of fringes, HOM dips and splitting-ratio curves.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, uncertainties, LmOptions, LmOutcome};
use crate::error::{Error, Result};
use crate::source::sinc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `o + a·cos(2πx/p + θ)`
    Sinusoid,
    /// `C₀[1 − V·exp(−u²)·sinc(s·u)]`, `u = (x − x₀)/w`
    GaussianSincDip,
    /// `a·cos²(b·x) + c·x`
    Cos2Envelope,
    /// `a·sin²(b·x) + c·x`
    Sin2Envelope,
    /// `a·x`
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    pub param_uncertainties: Vec<f64>,
    pub residual_rms: f64,
    pub visibility: Option<f64>,
    pub visibility_uncertainty: Option<f64>,
    /// In the units of the fitted x values.
    pub period: Option<f64>,
    pub period_uncertainty: Option<f64>,
    /// `(max − min)/(max + min)` of the data themselves.
    pub raw_visibility: Option<f64>,
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.param_names.iter().position(|n| n == name).map(|k| self.params[k])
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.param_names.iter().position(|n| n == name).map(|k| self.param_uncertainties[k])
    }

    fn new(model: FitModel, names: &[&str], outcome: &LmOutcome, n_points: usize) -> Self {
        Self {
            model,
            param_names: names.iter().map(|s| s.to_string()).collect(),
            params: outcome.params.clone(),
            param_uncertainties: uncertainties(outcome, n_points),
            residual_rms: (outcome.cost / n_points as f64).sqrt(),
            visibility: None,
            visibility_uncertainty: None,
            period: None,
            period_uncertainty: None,
            raw_visibility: None,
            flags: Vec::new(),
        }
    }
}

/// `(max − min)/(max + min)`, or `None` when undefined.
pub fn raw_visibility(y: &[f64]) -> Option<f64> {
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    if y.is_empty() || !(max + min > 0.0) {
        None
    } else {
        Some((max - min) / (max + min))
    }
}

/// Power outside the dominant non-DC Fourier component relative to that
/// component, for a trace sampled uniformly over whole periods.
pub fn harmonic_distortion(y: &[f64]) -> f64 {
    let n = y.len();
    if n < 4 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let power: Vec<f64> = (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in y.iter().enumerate() {
                let ph = 2.0 * PI * (k * j) as f64 / n as f64;
                re += (v - mean) * ph.cos();
                im -= (v - mean) * ph.sin();
            }
            re * re + im * im
        })
        .collect();
    let (kmax, pmax) = power
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (k, &p)| if p > best.1 { (k, p) } else { best });
    if pmax == 0.0 {
        return 0.0;
    }
    let rest: f64 = power.iter().enumerate().filter(|(k, _)| *k != kmax).map(|(_, p)| p).sum();
    rest / pmax
}

fn check_xy(x: &[f64], y: &[f64], min_points: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} x values but {} y values", x.len(), y.len())));
    }
    if x.len() < min_points {
        return Err(Error::InvalidArgument(format!("need at least {min_points} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite data".into()));
    }
    Ok(())
}

fn wrap_phase(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

fn sinusoid(p: &[f64], x: f64) -> f64 {
    p[0] + p[1] * (2.0 * PI * x / p[2] + p[3]).cos()
}

/// Fits `y = o + a·cos(2πx/p + θ)`. A constant signal yields visibility 0
/// with the period left unidentified and flagged.
pub fn fit_sinusoid(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(x, y, 8)?;
    let n = x.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = xmax - xmin;
    if !(span > 0.0) {
        return Err(Error::InvalidArgument("x values must span a nonzero range".into()));
    }
    if var.sqrt() <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
        return Ok(FitResult {
            model: FitModel::Sinusoid,
            param_names: ["offset", "amplitude", "period", "phase"].iter().map(|s| s.to_string()).collect(),
            params: vec![mean, 0.0, f64::NAN, 0.0],
            param_uncertainties: vec![0.0, 0.0, f64::NAN, f64::NAN],
            residual_rms: var.sqrt(),
            visibility: Some(0.0),
            visibility_uncertainty: None,
            period: None,
            period_uncertainty: None,
            raw_visibility: raw_visibility(y),
            flags: vec!["constant signal: period unidentifiable".into()],
        });
    }
    let mid = 0.5 * (xmin + xmax);
    let xc: Vec<f64> = x.iter().map(|v| v - mid).collect();

    // Periodogram peak on a zero-padded frequency grid up to the mean Nyquist rate.
    let f_max = (n - 1) as f64 / (2.0 * span);
    let n_freq = 16 * n;
    let (f0, _) = (1..=n_freq)
        .map(|k| {
            let f = f_max * k as f64 / n_freq as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (xi, yi) in xc.iter().zip(y) {
                let ph = 2.0 * PI * f * xi;
                re += (yi - mean) * ph.cos();
                im += (yi - mean) * ph.sin();
            }
            (f, re * re + im * im)
        })
        .fold((f_max, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });

    let amp = (2.0 * var).sqrt();
    let options = LmOptions {
        max_iterations: 200,
        typical: vec![mean.abs().max(amp), amp, 1.0 / f0, 1.0],
    };
    let mut best: Option<LmOutcome> = None;
    for scale in [0.95, 1.0, 1.05] {
        for k in 0..4 {
            let start = [mean, amp, scale / f0, k as f64 * PI / 2.0];
            let Ok(mut out) = levenberg_marquardt(&sinusoid, &xc, y, &start, &options) else {
                continue;
            };
            if out.params[1] < 0.0 {
                out.params[1] = -out.params[1];
                out.params[3] += PI;
            }
            out.params[2] = out.params[2].abs();
            out.params[3] = wrap_phase(out.params[3]);
            let better = match &best {
                None => true,
                Some(b) => {
                    let tol = 1e-10 * b.cost.max(1e-300);
                    out.cost < b.cost - tol || ((out.cost - b.cost).abs() <= tol && out.params[2] < b.params[2])
                }
            };
            if better {
                best = Some(out);
            }
        }
    }
    let mut out = best.ok_or_else(|| Error::FitFailed("no start converged".into()))?;
    out.params[3] = wrap_phase(out.params[3] - 2.0 * PI * mid / out.params[2]);
    let mut fit = FitResult::new(FitModel::Sinusoid, &["offset", "amplitude", "period", "phase"], &out, n);
    let [o, a, p, _] = [out.params[0], out.params[1], out.params[2], out.params[3]];
    fit.period = Some(p);
    fit.period_uncertainty = Some(fit.param_uncertainties[2]);
    if o > 0.0 {
        fit.visibility = Some((a / o).clamp(0.0, 1.0));
        let (so, sa) = (fit.param_uncertainties[0], fit.param_uncertainties[1]);
        fit.visibility_uncertainty = Some((a / o) * ((sa / a.max(1e-300)).powi(2) + (so / o).powi(2)).sqrt());
        if a > o {
            fit.flags.push("amplitude exceeds offset: visibility clamped".into());
        }
    } else {
        fit.flags.push("nonpositive offset: visibility undefined".into());
    }
    if p > span {
        fit.flags.push("data span less than one fitted period".into());
    }
    fit.raw_visibility = raw_visibility(y);
    Ok(fit)
}

fn dip(p: &[f64], x: f64) -> f64 {
    let u = (x - p[2]) / p[3];
    p[0] * (1.0 - p[1] * (-u * u).exp() * sinc(p[4] * u))
}

/// Fits `C₀[1 − V·exp(−u²)·sinc(s·u)]` with `u = (x − x₀)/w`.
pub fn fit_hom_dip(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(x, y, 6)?;
    let n = x.len();
    // Baseline from the outer fifth of the points on each side.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let edge = (n / 5).max(1);
    let wings: Vec<f64> = order[..edge].iter().chain(&order[n - edge..]).map(|&j| y[j]).collect();
    let baseline = wings.iter().sum::<f64>() / wings.len() as f64;
    let (jmin, ymin) = y
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, &v)| if v < best.1 { (j, v) } else { best });
    if !(baseline > 0.0) || ymin >= 0.9 * baseline {
        return Err(Error::NoDip { min: ymin, baseline });
    }
    let depth = baseline - ymin;
    let half: Vec<f64> = (0..n).filter(|&j| y[j] < baseline - depth / 2.0).map(|j| x[j]).collect();
    let fwhm = half.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - half.iter().cloned().fold(f64::INFINITY, f64::min);
    let step = (x[order[n - 1]] - x[order[0]]) / (n - 1) as f64;
    let w0 = (fwhm.max(step) / (2.0 * LN2_SQRT)).max(step / 2.0);
    let options = LmOptions {
        max_iterations: 300,
        typical: vec![baseline, 1.0, w0, w0, 1.0],
    };
    let mut best: Option<LmOutcome> = None;
    for s0 in [0.0, 0.5, 1.5, 3.0] {
        let start = [baseline, depth / baseline, x[jmin], w0, s0];
        let Ok(mut out) = levenberg_marquardt(&dip, x, y, &start, &options) else {
            continue;
        };
        out.params[3] = out.params[3].abs();
        out.params[4] = out.params[4].abs();
        if best.as_ref().is_none_or(|b| out.cost < b.cost) {
            best = Some(out);
        }
    }
    let out = best.ok_or_else(|| Error::FitFailed("dip fit did not converge".into()))?;
    let mut fit = FitResult::new(
        FitModel::GaussianSincDip,
        &["baseline", "visibility", "center", "width", "sinc_scale"],
        &out,
        n,
    );
    let v = out.params[1];
    if !(0.0..=1.0).contains(&v) {
        fit.flags.push(format!("fitted dip depth {v:.4} outside [0, 1]: clamped"));
    }
    fit.visibility = Some(v.clamp(0.0, 1.0));
    fit.visibility_uncertainty = Some(fit.param_uncertainties[1]);
    fit.raw_visibility = Some(1.0 - ymin / baseline);
    Ok(fit)
}

const LN2_SQRT: f64 = 0.832_554_611_157_697_8;

fn cos2(p: &[f64], x: f64) -> f64 {
    p[0] * (p[1] * x).cos().powi(2) + p[2] * x
}

fn sin2(p: &[f64], x: f64) -> f64 {
    p[0] * (p[1] * x).sin().powi(2) + p[2] * x
}

fn fit_envelope(model: FitModel, x: &[f64], y: &[f64]) -> Result<FitResult> {
    let n = x.len();
    let ymax = y.iter().cloned().fold(0.0, f64::max);
    if !(ymax > 0.0) {
        return Err(Error::FitFailed("all counts are zero".into()));
    }
    let xmax = x.iter().cloned().fold(0.0, f64::max);
    let f: &dyn Fn(&[f64], f64) -> f64 = match model {
        FitModel::Cos2Envelope => &cos2,
        _ => &sin2,
    };
    let options = LmOptions {
        max_iterations: 300,
        typical: vec![ymax, 1.0 / xmax, ymax / xmax],
    };
    let mut best: Option<LmOutcome> = None;
    for reach in [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0] {
        // Start with the first extremum of the envelope at `reach·max(x)`.
        let b0 = PI / (2.0 * reach * xmax);
        let Ok(mut out) = levenberg_marquardt(f, x, y, &[ymax, b0, 0.0], &options) else {
            continue;
        };
        out.params[1] = out.params[1].abs();
        if best.as_ref().is_none_or(|b| out.cost < b.cost) {
            best = Some(out);
        }
    }
    let out = best.ok_or_else(|| Error::FitFailed("envelope fit did not converge".into()))?;
    let mut fit = FitResult::new(model, &["a", "b", "c"], &out, n);
    fit.period = Some(PI / out.params[1]);
    fit.period_uncertainty = Some(PI * fit.param_uncertainties[1] / out.params[1].powi(2));
    Ok(fit)
}

fn fit_linear(x: &[f64], y: &[f64]) -> Result<FitResult> {
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    if !(sxx > 0.0) || y.iter().all(|v| *v == 0.0) {
        return Err(Error::FitFailed("degenerate linear fit".into()));
    }
    let a = sxy / sxx;
    let cost: f64 = x.iter().zip(y).map(|(xi, yi)| (a * xi - yi).powi(2)).sum();
    let n = x.len();
    let s2 = cost / (n.saturating_sub(1).max(1)) as f64;
    Ok(FitResult {
        model: FitModel::Linear,
        param_names: vec!["a".into()],
        params: vec![a],
        param_uncertainties: vec![(s2 / sxx).sqrt()],
        residual_rms: (cost / n as f64).sqrt(),
        visibility: None,
        visibility_uncertainty: None,
        period: None,
        period_uncertainty: None,
        raw_visibility: None,
        flags: Vec::new(),
    })
}

/// Fits the input-band, translated-band and background counts against pump
/// power with `a·cos²(bp)+cp`, `a·sin²(bp)+cp` and `ap`.
pub fn fit_splitting_curve(
    powers: &[f64],
    counts_in: &[f64],
    counts_out: &[f64],
    counts_bg: &[f64],
) -> Result<(FitResult, FitResult, FitResult)> {
    check_xy(powers, counts_in, 5)?;
    check_xy(powers, counts_out, 5)?;
    check_xy(powers, counts_bg, 5)?;
    Ok((
        fit_envelope(FitModel::Cos2Envelope, powers, counts_in)?,
        fit_envelope(FitModel::Sin2Envelope, powers, counts_out)?,
        fit_linear(powers, counts_bg)?,
    ))
}

/// Power of full depletion of the input band, `π/(2b)`.
pub fn max_depletion_power(fit: &FitResult) -> Option<f64> {
    fit.param("b").map(|b| PI / (2.0 * b))
}
