//! Frequency grids, spectral amplitudes and the operators shared by every
//! other module.
//!
//! All frequencies are angular (rad/s). A grid stores offsets relative to
//! the band carrier; the carrier itself only enters through delay phases.
//! Quadrature is the uniform rectangle rule `Σ f(ω_j) Δω`, which is the
//! weighting the FFT-based propagator conserves exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Angular frequency (rad/s) of a vacuum wavelength given in metres.
pub fn angular_frequency_from_wavelength(wavelength: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / wavelength
}

/// Angular bandwidth of a wavelength bandwidth `dl` centred at `wavelength`.
pub fn angular_bandwidth_from_wavelength(wavelength: f64, dl: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT * dl / (wavelength * wavelength)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Signal,
    Idler,
}

impl Band {
    pub fn other(self) -> Band {
        match self {
            Band::Signal => Band::Idler,
            Band::Idler => Band::Signal,
        }
    }
}

/// Uniform, symmetric grid of angular-frequency offsets around a carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    center_frequency: f64,
    span: f64,
    n_points: usize,
}

pub fn make_grid(center_frequency: f64, span: f64, n_points: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::new(center_frequency, span, n_points)
}

impl FrequencyGrid {
    pub fn new(center_frequency: f64, span: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 points, got {n_points}"
            )));
        }
        if !(span > 0.0) || !span.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid span must be positive, got {span}"
            )));
        }
        if !(center_frequency > 0.0) || !center_frequency.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "carrier frequency must be positive, got {center_frequency}"
            )));
        }
        Ok(Self {
            center_frequency,
            span,
            n_points,
        })
    }

    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.span / (self.n_points - 1) as f64
    }

    pub fn offset(&self, j: usize) -> f64 {
        -0.5 * self.span + j as f64 * self.spacing()
    }

    pub fn offsets(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.offset(j)).collect()
    }

    /// Absolute angular frequency of sample `j`.
    pub fn absolute(&self, j: usize) -> f64 {
        self.center_frequency + self.offset(j)
    }

    /// Same carrier and sampling as `other`, to a relative tolerance of 1e-12.
    pub fn same_as(&self, other: &FrequencyGrid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        self.n_points == other.n_points
            && close(self.center_frequency, other.center_frequency)
            && close(self.span, other.span)
    }

    /// Same offsets as `other`, regardless of carrier.
    pub fn same_sampling(&self, other: &FrequencyGrid) -> bool {
        self.n_points == other.n_points
            && (self.span - other.span).abs() <= 1e-12 * self.span.max(other.span)
    }

    pub(crate) fn check_same(&self, other: &FrequencyGrid, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: grid ({:.6e}, {:.6e}, {}) vs ({:.6e}, {:.6e}, {})",
                self.center_frequency,
                self.span,
                self.n_points,
                other.center_frequency,
                other.span,
                other.n_points
            )))
        }
    }

    /// Sample spacing of the conjugate time grid.
    pub fn time_step(&self) -> f64 {
        2.0 * PI / (self.n_points as f64 * self.spacing())
    }

    /// Times of the conjugate grid in the order produced by [`TimeTransform`].
    pub fn times(&self) -> Vec<f64> {
        let dt = self.time_step();
        let half = self.n_points as f64 / 2.0;
        (0..self.n_points).map(|m| (m as f64 - half) * dt).collect()
    }
}

/// Complex amplitude sampled on a grid, in (rad/s)^(-1/2).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAmplitude {
    pub band: Band,
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
}

impl SpectralAmplitude {
    pub fn new(band: Band, grid: FrequencyGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {}-point grid",
                values.len(),
                grid.n_points()
            )));
        }
        Ok(Self { band, grid, values })
    }

    pub fn zeros(band: Band, grid: FrequencyGrid) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); grid.n_points()];
        Self { band, grid, values }
    }

    /// Builds an amplitude from a function of the offset frequency.
    pub fn from_fn(band: Band, grid: FrequencyGrid, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.offsets().into_iter().map(f).collect();
        Self { band, grid, values }
    }

    /// `Σ|a(ω_j)|² Δω`
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.spacing()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= 1e-9
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroState("cannot normalize a zero amplitude".into()));
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            band: self.band,
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// `Σ conj(a)·b·Δω`
pub fn inner_product(a: &SpectralAmplitude, b: &SpectralAmplitude) -> Result<Complex64> {
    a.grid.check_same(&b.grid, "inner product")?;
    Ok(dot(&a.values, &b.values) * a.grid.spacing())
}

/// Unweighted `Σ conj(a)·b`.
pub(crate) fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Delays the wavepacket by `delay` seconds: multiplies by
/// `exp[i(ω_carrier + ω)·delay]`.
pub fn apply_delay(a: &SpectralAmplitude, delay: f64) -> SpectralAmplitude {
    let mut out = a.clone();
    delay_in_place(&a.grid, &mut out.values, delay);
    out
}

pub(crate) fn delay_in_place(grid: &FrequencyGrid, values: &mut [Complex64], delay: f64) {
    if delay == 0.0 {
        return;
    }
    for (j, v) in values.iter_mut().enumerate() {
        *v *= Complex64::from_polar(1.0, grid.absolute(j) * delay);
    }
}

/// Order and characteristic time of a Hermite-Gaussian basis function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermiteGaussianSpec {
    pub order: usize,
    pub characteristic_time: f64,
}

/// `HG_n(ω) ∝ H_n(ωτ)·exp(−ω²τ²/2)`, renormalized on the grid.
pub fn hg_mode(spec: HermiteGaussianSpec, grid: &FrequencyGrid, band: Band) -> Result<SpectralAmplitude> {
    if !(spec.characteristic_time > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "characteristic time must be positive, got {}",
            spec.characteristic_time
        )));
    }
    let tau = spec.characteristic_time;
    let values = grid
        .offsets()
        .into_iter()
        .map(|w| Complex64::new(hermite_functions(w * tau, spec.order)[spec.order], 0.0))
        .collect();
    SpectralAmplitude::new(band, grid.clone(), values)?.normalized()
}

/// Hermite functions `ψ_0..ψ_n` at `x` via the stable three-term recurrence.
pub(crate) fn hermite_functions(x: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let psi0 = PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(psi0);
    if n >= 1 {
        out.push(2f64.sqrt() * x * psi0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
        out.push(next);
    }
    out
}

/// Columns `0..count` of the Hermite-Gaussian family sampled on the grid,
/// each scaled so `Σ|h|²Δω = 1` when the function fits the grid.
pub(crate) fn hg_columns(grid: &FrequencyGrid, tau: f64, count: usize) -> Vec<Vec<f64>> {
    let scale = tau.sqrt();
    let mut cols = vec![Vec::with_capacity(grid.n_points()); count];
    for w in grid.offsets() {
        let psi = hermite_functions(w * tau, count.saturating_sub(1));
        for (col, p) in cols.iter_mut().zip(psi) {
            col.push(p * scale);
        }
    }
    cols
}

/// Maps grid samples to the conjugate time grid and back.
///
/// `to_time` evaluates `E(t_m) = Σ_j a_j exp(−i ω_j t_m)` up to a phase
/// `exp(−i ω_0 t_m)` that is common to every band sharing the sampling, so
/// pointwise products between bands are unaffected.
#[derive(Clone)]
pub(crate) struct TimeTransform {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    alternating: Vec<f64>,
    scratch_len: usize,
}

impl TimeTransform {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let alternating = (0..n).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        Self {
            forward,
            inverse,
            alternating,
            scratch_len,
        }
    }

    pub fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.scratch_len]
    }

    pub fn to_time(&self, values: &mut [Complex64], scratch: &mut [Complex64]) {
        for (v, s) in values.iter_mut().zip(&self.alternating) {
            *v *= s;
        }
        self.forward.process_with_scratch(values, scratch);
    }

    pub fn to_freq(&self, values: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inverse.process_with_scratch(values, scratch);
        let n = values.len() as f64;
        for (v, s) in values.iter_mut().zip(&self.alternating) {
            *v *= s / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THZ: f64 = 2.0 * PI * 1e12;

    fn grid(n: usize) -> FrequencyGrid {
        make_grid(236.45 * THZ, 0.8 * THZ, n).unwrap()
    }

    #[test]
    fn five_point_grid_offsets() {
        let g = grid(5);
        let expected = [-0.4, -0.2, 0.0, 0.2, 0.4];
        for (o, e) in g.offsets().iter().zip(expected) {
            assert!((o - e * THZ).abs() < 1e-3, "{o} vs {}", e * THZ);
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(matches!(make_grid(1.0, 1.0, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_grid(1.0, 0.0, 8), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_grid(1.0, -2.0, 8), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn default_grid_spacing() {
        let g = make_grid(235.85 * THZ, 0.8 * THZ, 1024).unwrap();
        assert!((g.spacing() - 0.8 * THZ / 1023.0).abs() < 1e-6);
        assert_eq!(g.offsets()[0], -0.4 * THZ);
        assert!((g.offsets()[1023] - 0.4 * THZ).abs() < 1e-3);
    }

    #[test]
    fn hg_modes_are_orthonormal() {
        let tau = 29e-12;
        // ±72/τ: comfortably beyond 12/τ.
        let g = grid(1024);
        let modes: Vec<_> = (0..10)
            .map(|n| {
                hg_mode(HermiteGaussianSpec { order: n, characteristic_time: tau }, &g, Band::Signal)
                    .unwrap()
            })
            .collect();
        for m in 0..10 {
            for n in 0..10 {
                let ip = inner_product(&modes[m], &modes[n]).unwrap();
                let expected = if m == n { 1.0 } else { 0.0 };
                assert!((ip - expected).norm() < 1e-6, "<{m},{n}> = {ip}");
            }
        }
    }

    #[test]
    fn hg_parity() {
        // Odd point count puts a sample at ω = 0.
        let g = grid(257);
        let spec = |order| HermiteGaussianSpec { order, characteristic_time: 1e-11 };
        let h0 = hg_mode(spec(0), &g, Band::Signal).unwrap();
        let h1 = hg_mode(spec(1), &g, Band::Signal).unwrap();
        let n = g.n_points();
        for j in 0..n {
            let v = h0.values[j];
            assert_eq!(v.im, 0.0);
            assert!(v.re >= 0.0);
            assert!((v - h0.values[n - 1 - j]).norm() < 1e-12);
            assert!((h1.values[j] + h1.values[n - 1 - j]).norm() < 1e-12);
        }
        assert!(h1.values[n / 2].norm() < 1e-15);
        assert!(inner_product(&h0, &h1).unwrap().norm() < 1e-6);
    }

    #[test]
    fn inner_product_linearity_and_mismatch() {
        let g = grid(128);
        let x = hg_mode(HermiteGaussianSpec { order: 2, characteristic_time: 5e-12 }, &g, Band::Signal)
            .unwrap();
        assert!((inner_product(&x, &x).unwrap() - 1.0).norm() < 1e-9);
        let ix = x.scaled(Complex64::i());
        assert!((inner_product(&x, &ix).unwrap() - Complex64::i()).norm() < 1e-9);

        let other = SpectralAmplitude::zeros(Band::Idler, make_grid(235.85 * THZ, 0.8 * THZ, 128).unwrap());
        assert!(matches!(inner_product(&x, &other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn zero_delay_is_identity() {
        let g = grid(64);
        let x = hg_mode(HermiteGaussianSpec { order: 1, characteristic_time: 5e-12 }, &g, Band::Idler)
            .unwrap();
        assert_eq!(apply_delay(&x, 0.0), x);
    }

    /// Overlap of HG_0 with its 10 ps delayed copy, computed by direct
    /// quadrature of the continuous Gaussian on a much finer grid.
    #[test]
    fn gaussian_delay_overlap_regression() {
        let tau = 29e-12;
        let dt = 10e-12;
        let g = grid(1024);
        let h0 = hg_mode(HermiteGaussianSpec { order: 0, characteristic_time: tau }, &g, Band::Signal)
            .unwrap();
        let overlap = inner_product(&h0, &apply_delay(&h0, dt)).unwrap().norm();

        // Independent oracle: |∫ |ψ0(ωτ)|² τ e^{iωΔt} dω| with Simpson's rule.
        let n = 20_000;
        let lim = 12.0 / tau;
        let h = 2.0 * lim / n as f64;
        let mut re = 0.0;
        let mut im = 0.0;
        for k in 0..=n {
            let w = -lim + k as f64 * h;
            let weight = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let dens = (-(w * tau).powi(2)).exp() * tau / PI.sqrt();
            re += weight * dens * (w * dt).cos();
            im += weight * dens * (w * dt).sin();
        }
        let oracle = (re * h / 3.0).hypot(im * h / 3.0);
        // Closed form for reference: exp(−Δt²/(4τ²)).
        assert!((oracle - (-(dt * dt) / (4.0 * tau * tau)).exp()).abs() < 1e-10);
        assert!((overlap - oracle).abs() < 1e-9, "{overlap} vs {oracle}");
        assert!((overlap - 0.970_710_971_118_8).abs() < 1e-9, "{overlap}");
    }

    #[test]
    fn time_transform_round_trip_and_shift() {
        let g = grid(256);
        let t = TimeTransform::new(256);
        let mut scratch = t.scratch();
        let x = hg_mode(HermiteGaussianSpec { order: 0, characteristic_time: 3e-12 }, &g, Band::Signal)
            .unwrap();
        let mut v = x.values.clone();
        t.to_time(&mut v, &mut scratch);
        // Centred Gaussian pulse peaks at t = 0, i.e. index n/2.
        let peak = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 128);
        t.to_freq(&mut v, &mut scratch);
        for (a, b) in v.iter().zip(&x.values) {
            assert!((a - b).norm() < 1e-12);
        }
        // A positive delay moves the peak to later times.
        let step = g.time_step();
        let mut d = apply_delay(&x, 5.0 * step).values;
        t.to_time(&mut d, &mut scratch);
        let peak = d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 133);
    }
}
