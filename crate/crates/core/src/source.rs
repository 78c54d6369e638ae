//! Spontaneous four-wave-mixing photon pairs: joint spectral amplitude,
//! bandpass filtering and Schmidt decomposition.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{
    angular_frequency_from_wavelength, Band, FrequencyGrid, SpectralAmplitude, SPEED_OF_LIGHT,
};

/// Optical fiber with a third-order Taylor dispersion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec {
    /// m
    pub length: f64,
    /// γ in 1/(W·m)
    pub nonlinear_coefficient: f64,
    /// rad/s
    pub dispersion_reference_frequency: f64,
    /// β₁ (s/m), β₂ (s²/m), β₃ (s³/m) at the reference frequency.
    pub beta_coefficients: [f64; 3],
    /// Zero-group-velocity-dispersion frequency, if known independently.
    pub zgvd_frequency: Option<f64>,
}

/// Zero-dispersion wavelength of the SMF-28 dispersion equation (m).
pub const SMF28_ZERO_DISPERSION_WAVELENGTH: f64 = 1313e-9;
/// Zero-dispersion slope, 0.092 ps/(nm²·km), in s/m³.
pub const SMF28_ZERO_DISPERSION_SLOPE: f64 = 0.092e3;
/// Typical SMF-28 nonlinear coefficient near 1.27 µm, 1/(W·m).
pub const SMF28_NONLINEAR_COEFFICIENT: f64 = 1.6e-3;

impl FiberSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "fiber length must be positive, got {}",
                self.length
            )));
        }
        if !(self.nonlinear_coefficient >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "nonlinear coefficient must be nonnegative, got {}",
                self.nonlinear_coefficient
            )));
        }
        if self.beta_coefficients.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("dispersion coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Dispersion-free fiber.
    pub fn dispersionless(length: f64, nonlinear_coefficient: f64, reference: f64) -> Self {
        Self {
            length,
            nonlinear_coefficient,
            dispersion_reference_frequency: reference,
            beta_coefficients: [0.0; 3],
            zgvd_frequency: None,
        }
    }

    /// SMF-28 around `reference_wavelength`, with β₂ and β₃ from the
    /// standard dispersion equation `D = S₀/4·(λ − λ₀⁴/λ³)`.
    ///
    /// These are modelling assumptions, not measured values for any
    /// particular spool.
    pub fn smf28(length: f64, reference_wavelength: f64) -> Self {
        let lambda = reference_wavelength;
        let l0 = SMF28_ZERO_DISPERSION_WAVELENGTH;
        let s0 = SMF28_ZERO_DISPERSION_SLOPE;
        let d = s0 / 4.0 * (lambda - l0.powi(4) / lambda.powi(3));
        let slope = s0 / 4.0 * (1.0 + 3.0 * l0.powi(4) / lambda.powi(4));
        let k = lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT);
        let beta2 = -d * k;
        let beta3 = k * k * (slope + 2.0 * d / lambda);
        // Group index ≈ 1.468.
        let beta1 = 1.468 / SPEED_OF_LIGHT;
        Self {
            length,
            nonlinear_coefficient: SMF28_NONLINEAR_COEFFICIENT,
            dispersion_reference_frequency: angular_frequency_from_wavelength(lambda),
            beta_coefficients: [beta1, beta2, beta3],
            zgvd_frequency: None,
        }
    }

    /// `β(ω) − β(ω_ref)` in 1/m.
    pub fn beta(&self, omega: f64) -> f64 {
        self.beta_from_detuning(omega - self.dispersion_reference_frequency)
    }

    /// Same as [`beta`](Self::beta) with the detuning from the reference given
    /// directly, which avoids cancellation for nearby frequencies.
    pub fn beta_from_detuning(&self, x: f64) -> f64 {
        let [b1, b2, b3] = self.beta_coefficients;
        x * (b1 + x * (b2 / 2.0 + x * b3 / 6.0))
    }

    /// Inverse group velocity β₁(ω) in s/m.
    pub fn beta1(&self, omega: f64) -> f64 {
        let x = omega - self.dispersion_reference_frequency;
        let [b1, b2, b3] = self.beta_coefficients;
        b1 + x * (b2 + x * b3 / 2.0)
    }

    /// Group-velocity dispersion β₂(ω) in s²/m.
    pub fn beta2(&self, omega: f64) -> f64 {
        let x = omega - self.dispersion_reference_frequency;
        let [_, b2, b3] = self.beta_coefficients;
        b2 + x * b3
    }

    /// ZGVD frequency, either as given or from `β₂ + β₃x = 0`.
    pub fn zgvd(&self) -> Option<f64> {
        if self.zgvd_frequency.is_some() {
            return self.zgvd_frequency;
        }
        let [_, b2, b3] = self.beta_coefficients;
        if b3 == 0.0 {
            None
        } else {
            Some(self.dispersion_reference_frequency - b2 / b3)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PumpShape {
    Gaussian,
    /// Constant envelope; used for idealised beam-splitter checks.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpPulse {
    /// rad/s
    pub center_frequency: f64,
    /// Intensity FWHM in seconds (ignored for continuous pumps).
    pub fwhm_duration: f64,
    /// W
    pub peak_power: f64,
    pub shape: PumpShape,
    /// Constant carrier phase (rad).
    #[serde(default)]
    pub phase: f64,
}

impl PumpPulse {
    pub fn gaussian(center_frequency: f64, fwhm_duration: f64, peak_power: f64) -> Self {
        Self {
            center_frequency,
            fwhm_duration,
            peak_power,
            shape: PumpShape::Gaussian,
            phase: 0.0,
        }
    }

    pub fn continuous(center_frequency: f64, power: f64) -> Self {
        Self {
            center_frequency,
            fwhm_duration: f64::INFINITY,
            peak_power: power,
            shape: PumpShape::Continuous,
            phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency > 0.0) {
            return Err(Error::InvalidArgument("pump frequency must be positive".into()));
        }
        if self.shape == PumpShape::Gaussian && !(self.fwhm_duration > 0.0 && self.fwhm_duration.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pump duration must be positive and finite, got {}",
                self.fwhm_duration
            )));
        }
        if !(self.peak_power >= 0.0) || !self.peak_power.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pump power must be nonnegative, got {}",
                self.peak_power
            )));
        }
        Ok(())
    }

    /// Field envelope in √W at time `t` relative to the pulse peak.
    pub fn field(&self, t: f64) -> Complex64 {
        let amp = match self.shape {
            PumpShape::Gaussian => {
                let ratio = t / self.fwhm_duration;
                self.peak_power.sqrt() * (-2.0 * LN_2 * ratio * ratio).exp()
            }
            PumpShape::Continuous => self.peak_power.sqrt(),
        };
        Complex64::from_polar(amp, self.phase)
    }

    /// Two-photon pump envelope at sum-frequency detuning `sigma`: the
    /// spectrum of the squared field, `exp(−σ²T²/(16 ln 2))`, peak 1.
    pub fn pair_envelope(&self, sigma: f64) -> f64 {
        let t = self.fwhm_duration;
        (-sigma * sigma * t * t / (16.0 * LN_2)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandpassFilter {
    /// rad/s
    pub center_frequency: f64,
    /// Intensity FWHM in rad/s; `INFINITY` passes everything.
    pub fwhm: f64,
    /// Super-Gaussian order; 1 is Gaussian.
    pub shape_order: u32,
}

impl BandpassFilter {
    pub fn gaussian(center_frequency: f64, fwhm: f64) -> Self {
        Self {
            center_frequency,
            fwhm,
            shape_order: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm > 0.0) {
            return Err(Error::InvalidArgument(format!("filter FWHM must be positive, got {}", self.fwhm)));
        }
        if self.shape_order == 0 {
            return Err(Error::InvalidArgument("filter shape order must be at least 1".into()));
        }
        Ok(())
    }

    /// Intensity transmission at absolute angular frequency `omega`.
    pub fn intensity(&self, omega: f64) -> f64 {
        if self.fwhm.is_infinite() {
            return 1.0;
        }
        let x = 2.0 * (omega - self.center_frequency) / self.fwhm;
        (-LN_2 * x.powi(2 * self.shape_order as i32)).exp()
    }

    pub fn amplitude(&self, omega: f64) -> f64 {
        self.intensity(omega).sqrt()
    }
}

/// `F(ω_s, ω_i)` with rows over the signal grid and columns over the idler grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpectralAmplitude {
    pub signal_grid: FrequencyGrid,
    pub idler_grid: FrequencyGrid,
    pub values: Array2<Complex64>,
    pub normalized: bool,
}

impl JointSpectralAmplitude {
    pub fn new(signal_grid: FrequencyGrid, idler_grid: FrequencyGrid, values: Array2<Complex64>) -> Result<Self> {
        if values.dim() != (signal_grid.n_points(), idler_grid.n_points()) {
            return Err(Error::InvalidArgument(format!(
                "JSA of shape {:?} for grids of {} x {} points",
                values.dim(),
                signal_grid.n_points(),
                idler_grid.n_points()
            )));
        }
        Ok(Self {
            signal_grid,
            idler_grid,
            values,
            normalized: false,
        })
    }

    pub fn from_fn(
        signal_grid: FrequencyGrid,
        idler_grid: FrequencyGrid,
        f: impl Fn(f64, f64) -> Complex64,
    ) -> Self {
        let ws = signal_grid.offsets();
        let wi = idler_grid.offsets();
        let values = Array2::from_shape_fn((ws.len(), wi.len()), |(a, b)| f(ws[a], wi[b]));
        Self {
            signal_grid,
            idler_grid,
            values,
            normalized: false,
        }
    }

    fn cell(&self) -> f64 {
        self.signal_grid.spacing() * self.idler_grid.spacing()
    }

    /// `ΣΣ|F|² Δω_s Δω_i`
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.cell()
    }

    pub fn normalize(mut self) -> Result<Self> {
        let n2 = self.norm_sqr();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::ZeroState("joint spectral amplitude vanishes".into()));
        }
        let s = 1.0 / n2.sqrt();
        self.values.mapv_inplace(|v| v * s);
        self.normalized = true;
        Ok(self)
    }

    /// Multiplies by a delay phase on the idler photon.
    pub fn with_idler_delay(&self, delay: f64) -> Self {
        let mut out = self.clone();
        for (b, mut col) in out.values.columns_mut().into_iter().enumerate() {
            let ph = Complex64::from_polar(1.0, self.idler_grid.absolute(b) * delay);
            col.mapv_inplace(|v| v * ph);
        }
        out
    }
}

pub fn jsi(jsa: &JointSpectralAmplitude) -> Array2<f64> {
    jsa.values.mapv(|v| v.norm_sqr())
}

/// `Σ|J − Jᵀ| / Σ J` for a JSI on identically sampled bands: how far the
/// intensity is from symmetric under exchange of the photon offsets.
pub fn asymmetry(jsa: &JointSpectralAmplitude) -> Result<f64> {
    if !jsa.signal_grid.same_sampling(&jsa.idler_grid) {
        return Err(Error::GridMismatch("asymmetry needs identically sampled bands".into()));
    }
    let j = jsi(jsa);
    let total: f64 = j.sum();
    if !(total > 0.0) {
        return Err(Error::ZeroState("empty JSI".into()));
    }
    let diff: f64 = j.iter().zip(j.t().iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(diff / total)
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Phase mismatch of degenerate-pump SFWM for absolute signal and idler
/// frequencies: `β(ω_s) + β(ω_i) − 2β((ω_s+ω_i)/2) + 2γP`.
pub fn sfwm_phase_mismatch(fiber: &FiberSpec, pump: &PumpPulse, omega_s: f64, omega_i: f64) -> f64 {
    let reference = fiber.dispersion_reference_frequency;
    let xs = omega_s - reference;
    let xi = omega_i - reference;
    let xp = 0.5 * (xs + xi);
    fiber.beta_from_detuning(xs) + fiber.beta_from_detuning(xi) - 2.0 * fiber.beta_from_detuning(xp)
        + 2.0 * fiber.nonlinear_coefficient * pump.peak_power
}

/// Unnormalized JSA `α(ω_s+ω_i−2ω_p)·sinc(ΔβL/2)·exp(iΔβL/2)`.
pub fn sfwm_jsa(
    fiber: &FiberSpec,
    pump: &PumpPulse,
    signal_grid: &FrequencyGrid,
    idler_grid: &FrequencyGrid,
) -> Result<JointSpectralAmplitude> {
    fiber.validate()?;
    pump.validate()?;
    if pump.shape != PumpShape::Gaussian {
        return Err(Error::InvalidArgument("pair generation needs a pulsed (Gaussian) pump".into()));
    }
    let detuning = signal_grid.center_frequency() + idler_grid.center_frequency() - 2.0 * pump.center_frequency;
    let reach = 0.5 * (signal_grid.span() + idler_grid.span());
    if detuning.abs() > reach {
        return Err(Error::InvalidArgument(format!(
            "energy conservation line misses the grids: carrier detuning {detuning:.3e} rad/s exceeds {reach:.3e}"
        )));
    }
    let half_length = 0.5 * fiber.length;
    let ws0 = signal_grid.center_frequency();
    let wi0 = idler_grid.center_frequency();
    Ok(JointSpectralAmplitude::from_fn(signal_grid.clone(), idler_grid.clone(), |ws, wi| {
        let sigma = detuning + ws + wi;
        let alpha = pump.pair_envelope(sigma);
        let dk = sfwm_phase_mismatch(fiber, pump, ws0 + ws, wi0 + wi);
        let arg = dk * half_length;
        Complex64::from_polar(alpha * sinc(arg), arg)
    }))
}

/// Applies amplitude transmissions of both filters and renormalizes.
pub fn apply_filters(
    jsa: &JointSpectralAmplitude,
    filter_s: &BandpassFilter,
    filter_i: &BandpassFilter,
) -> Result<JointSpectralAmplitude> {
    filter_s.validate()?;
    filter_i.validate()?;
    for (f, g, name) in [(filter_s, &jsa.signal_grid, "signal"), (filter_i, &jsa.idler_grid, "idler")] {
        let lo = g.absolute(0);
        let hi = g.absolute(g.n_points() - 1);
        if f.center_frequency < lo || f.center_frequency > hi {
            return Err(Error::InvalidArgument(format!("{name} filter centre lies outside its grid")));
        }
    }
    let before = jsa.norm_sqr();
    let ts: Vec<f64> = (0..jsa.signal_grid.n_points())
        .map(|a| filter_s.amplitude(jsa.signal_grid.absolute(a)))
        .collect();
    let ti: Vec<f64> = (0..jsa.idler_grid.n_points())
        .map(|b| filter_i.amplitude(jsa.idler_grid.absolute(b)))
        .collect();
    let mut out = jsa.clone();
    for ((a, b), v) in out.values.indexed_iter_mut() {
        *v *= ts[a] * ti[b];
    }
    if !(out.norm_sqr() > 1e-24 * before) {
        return Err(Error::ZeroState("filters do not overlap the joint spectrum".into()));
    }
    out.normalize()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtDecomposition {
    /// `r_k`, descending.
    pub amplitudes: Vec<f64>,
    pub signal_modes: Vec<SpectralAmplitude>,
    pub idler_modes: Vec<SpectralAmplitude>,
    /// Weight `1 − Σ r_k²` not represented by the kept modes.
    pub truncation_residual: f64,
}

impl SchmidtDecomposition {
    /// A separable pair `f(ω_s)·g(ω_i)`.
    pub fn single_mode(signal: SpectralAmplitude, idler: SpectralAmplitude) -> Result<Self> {
        Ok(Self {
            amplitudes: vec![1.0],
            signal_modes: vec![signal.normalized()?],
            idler_modes: vec![idler.normalized()?],
            truncation_residual: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// `K = (Σr²)² / Σr⁴`
    pub fn schmidt_number(&self) -> f64 {
        let s2: f64 = self.amplitudes.iter().map(|r| r * r).sum();
        let s4: f64 = self.amplitudes.iter().map(|r| r.powi(4)).sum();
        s2 * s2 / s4
    }

    /// Keeps the `k` strongest modes, moving the rest into the residual.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len());
        let dropped: f64 = self.amplitudes[k..].iter().map(|r| r * r).sum();
        Self {
            amplitudes: self.amplitudes[..k].to_vec(),
            signal_modes: self.signal_modes[..k].to_vec(),
            idler_modes: self.idler_modes[..k].to_vec(),
            truncation_residual: self.truncation_residual + dropped,
        }
    }

    /// `Σ r_k F_k(ω_s) G_k(ω_i)`
    pub fn reconstruct(&self) -> Result<JointSpectralAmplitude> {
        let (sg, ig) = match (self.signal_modes.first(), self.idler_modes.first()) {
            (Some(f), Some(g)) => (f.grid.clone(), g.grid.clone()),
            _ => return Err(Error::ZeroState("no Schmidt modes".into())),
        };
        let mut values = Array2::zeros((sg.n_points(), ig.n_points()));
        for ((r, f), g) in self.amplitudes.iter().zip(&self.signal_modes).zip(&self.idler_modes) {
            for ((a, b), v) in values.indexed_iter_mut() {
                *v += *r * f.values[a] * g.values[b];
            }
        }
        JointSpectralAmplitude::new(sg, ig, values)
    }
}

/// Singular value decomposition of `√Δω_s·F·√Δω_i`. Modes with
/// `r_k² < keep_threshold·r_0²` are dropped into the truncation residual.
/// `H m` for the Householder reflection `H = I − 2vvᴴ` with `v` the
/// normalized all-ones vector. `H` is unitary and its own inverse.
fn reflect_rows(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() * (2.0 / n);
        col.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

/// Unordered `m = U Σ Vᴴ` as `(U, Vᴴ, Σ)`. When the iteration on `m`
/// yields non-finite values or loses the Frobenius norm `Σσ² = ‖m‖²`, `mᴴ`
/// and a reflected copy of `m` are decomposed as well and the most accurate
/// result is kept.
fn svd_with_vectors(m: DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>, DVector<f64>)> {
    let frobenius: f64 = m.iter().map(|v| v.norm_sqr()).sum();
    let attempt = |m: DMatrix<Complex64>| {
        let svd = nalgebra::linalg::SVD::try_new_unordered(m, true, true, 1e-15, 0)?;
        let (u, v_t) = (svd.u?, svd.v_t?);
        let finite = svd.singular_values.iter().all(|s| s.is_finite())
            && u.iter().chain(v_t.iter()).all(|v| v.re.is_finite() && v.im.is_finite());
        let norm_error = (svd.singular_values.iter().map(|s| s * s).sum::<f64>() - frobenius).abs() / frobenius;
        finite.then_some((norm_error, (u, v_t, svd.singular_values)))
    };
    let accurate = |found: &Option<(f64, _)>| found.as_ref().is_some_and(|(err, _)| *err < 1e-13);
    let mut candidates = vec![attempt(m.clone())];
    if !accurate(&candidates[0]) {
        candidates.push(attempt(m.adjoint()).map(|(err, (u, v_t, sv))| (err, (v_t.adjoint(), u.adjoint(), sv))));
    }
    if !candidates.iter().any(accurate) {
        candidates.push(attempt(reflect_rows(&m)).map(|(err, (u, v_t, sv))| (err, (reflect_rows(&u), v_t, sv))));
    }
    candidates
        .into_iter()
        .flatten()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, found)| found)
        .ok_or_else(|| Error::DecompositionFailed("SVD did not converge to finite values".into()))
}

pub fn schmidt_decompose(jsa: &JointSpectralAmplitude, keep_threshold: f64) -> Result<SchmidtDecomposition> {
    if !jsa.normalized {
        return Err(Error::InvalidArgument("Schmidt decomposition needs a normalized JSA".into()));
    }
    if !(keep_threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("keep threshold must be nonnegative, got {keep_threshold}")));
    }
    let ds = jsa.signal_grid.spacing();
    let di = jsa.idler_grid.spacing();
    let scale = (ds * di).sqrt();
    let (ns, ni) = jsa.values.dim();
    let m = DMatrix::from_fn(ns, ni, |a, b| jsa.values[[a, b]] * scale);
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::DecompositionFailed("JSA contains non-finite values".into()));
    }
    let (u, v_t, sv) = svd_with_vectors(m)?;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let r0 = sv[order[0]];
    if !(r0 > 0.0) {
        return Err(Error::ZeroState("JSA has no nonzero singular values".into()));
    }

    let mut amplitudes = Vec::new();
    let mut signal_modes = Vec::new();
    let mut idler_modes = Vec::new();
    for &k in &order {
        let r = sv[k];
        if r * r < keep_threshold * r0 * r0 {
            break;
        }
        // Gauge: the largest signal-mode sample is real and positive.
        let (imax, _) = u
            .column(k)
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (a, v)| if v.norm() > best.1 { (a, v.norm()) } else { best });
        let phase = Complex64::from_polar(1.0, -u[(imax, k)].arg());
        let f: Vec<Complex64> = u.column(k).iter().map(|v| v * phase / ds.sqrt()).collect();
        let g: Vec<Complex64> = v_t.row(k).iter().map(|v| v / phase / di.sqrt()).collect();
        amplitudes.push(r);
        signal_modes.push(SpectralAmplitude::new(Band::Signal, jsa.signal_grid.clone(), f)?);
        idler_modes.push(SpectralAmplitude::new(Band::Idler, jsa.idler_grid.clone(), g)?);
    }
    let kept: f64 = amplitudes.iter().map(|r| r * r).sum();
    Ok(SchmidtDecomposition {
        amplitudes,
        signal_modes,
        idler_modes,
        truncation_residual: (total - kept).max(0.0),
    })
}
