//! Bragg-scattering four-wave mixing as a frequency beam splitter: a
//! split-step propagator for single-photon spectral amplitudes and the
//! Green-function kernels assembled from it.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::analytic::{fbs_matrix, FbsSetting};
use crate::error::{Error, Result};
use crate::source::{FiberSpec, PumpPulse, PumpShape};
use crate::spectral::{
    angular_frequency_from_wavelength, hg_columns, Band, FrequencyGrid, SpectralAmplitude, TimeTransform,
};

/// Default BS-FWM fiber length (m).
pub const NZDSF_LENGTH: f64 = 100.0;
/// Default BS-FWM nonlinear coefficient, 1/(W·m).
pub const NZDSF_NONLINEAR_COEFFICIENT: f64 = 1.51e-3;
/// Idler delay inserted between the stages to realign the interfering paths (s).
pub const COMPENSATION_DELAY: f64 = 3.23e-12;
/// Signal–idler group-delay difference accumulated over the default fiber (s).
///
/// Coupling stretches the delay between the persisting and the translated
/// path by `tan(gL)/gL`, which is `4/π` at balanced splitting, so this fiber
/// walk-off produces a path delay of exactly [`COMPENSATION_DELAY`] there.
pub const NZDSF_WALKOFF: f64 = COMPENSATION_DELAY * std::f64::consts::FRAC_PI_4;
pub const PUMP1_WAVELENGTH: f64 = 1546.36e-9;
pub const PUMP2_WAVELENGTH: f64 = 1551.16e-9;
pub const PUMP_DURATION: f64 = 0.5e-9;
/// Default Hermite-Gaussian characteristic time (s).
pub const DEFAULT_TAU: f64 = 29e-12;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Fiber with zero GVD at the mean of the four carrier frequencies, so that
/// the Bragg-scattering process is phase matched at the carriers, and with
/// β₃ set so the signal–idler group-delay difference over `length` equals
/// `walkoff`.
pub fn nzdsf_fiber(
    length: f64,
    nonlinear_coefficient: f64,
    walkoff: f64,
    signal_center: f64,
    idler_center: f64,
    pump1: f64,
    pump2: f64,
) -> Result<FiberSpec> {
    let reference = 0.25 * (signal_center + idler_center + pump1 + pump2);
    let xs = signal_center - reference;
    let xi = idler_center - reference;
    let denom = xs * xs - xi * xi;
    if denom == 0.0 {
        return Err(Error::InvalidArgument("signal and idler equidistant from the ZGVD point".into()));
    }
    let beta3 = 2.0 * walkoff / (length * denom);
    let fiber = FiberSpec {
        length,
        nonlinear_coefficient,
        dispersion_reference_frequency: reference,
        beta_coefficients: [1.47 / crate::spectral::SPEED_OF_LIGHT, 0.0, beta3],
        zgvd_frequency: Some(reference),
    };
    fiber.validate()?;
    Ok(fiber)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsfwmPumpPair {
    /// Higher-frequency pump.
    pub pump1: PumpPulse,
    pub pump2: PumpPulse,
    /// Delay of pump2 relative to pump1 (s).
    pub relative_timing: f64,
}

impl BsfwmPumpPair {
    pub fn new(pump1: PumpPulse, pump2: PumpPulse, relative_timing: f64) -> Result<Self> {
        let pair = Self {
            pump1,
            pump2,
            relative_timing,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Gaussian pumps at the default wavelengths and duration sharing
    /// `total_power` equally.
    pub fn pulsed(total_power: f64) -> Self {
        Self {
            pump1: PumpPulse::gaussian(angular_frequency_from_wavelength(PUMP1_WAVELENGTH), PUMP_DURATION, total_power / 2.0),
            pump2: PumpPulse::gaussian(angular_frequency_from_wavelength(PUMP2_WAVELENGTH), PUMP_DURATION, total_power / 2.0),
            relative_timing: 0.0,
        }
    }

    /// Flat pumps at the default wavelengths with phase difference `pump_phase`.
    pub fn continuous(total_power: f64, pump_phase: f64) -> Self {
        let mut p1 = PumpPulse::continuous(angular_frequency_from_wavelength(PUMP1_WAVELENGTH), total_power / 2.0);
        p1.phase = pump_phase;
        let p2 = PumpPulse::continuous(angular_frequency_from_wavelength(PUMP2_WAVELENGTH), total_power / 2.0);
        Self {
            pump1: p1,
            pump2: p2,
            relative_timing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pump1.validate()?;
        self.pump2.validate()?;
        let (a, b) = (self.pump1.peak_power, self.pump2.peak_power);
        if (a - b).abs() > 1e-12 * a.max(b) {
            return Err(Error::InvalidArgument(format!("pump powers must be equal, got {a} W and {b} W")));
        }
        if self.pump1.shape != self.pump2.shape {
            return Err(Error::InvalidArgument("pumps must share a temporal shape".into()));
        }
        Ok(())
    }

    pub fn total_power(&self) -> f64 {
        self.pump1.peak_power + self.pump2.peak_power
    }

    pub fn with_total_power(&self, total_power: f64) -> Self {
        let mut out = self.clone();
        out.pump1.peak_power = total_power / 2.0;
        out.pump2.peak_power = total_power / 2.0;
        out
    }

    /// Retunes pump2 so that `ω_p1 − ω_p2` equals the band separation exactly.
    pub fn tuned_to(mut self, signal_center: f64, idler_center: f64) -> Self {
        self.pump2.center_frequency = self.pump1.center_frequency - (signal_center - idler_center);
        self
    }

    /// φ = phase(A₁) − phase(A₂)
    pub fn pump_phase(&self) -> f64 {
        self.pump1.phase - self.pump2.phase
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub n_steps: usize,
    /// Let the pump envelopes walk off and disperse.
    pub include_pump_dispersion: bool,
    /// Cross-phase modulation of the sidebands and SPM/XPM of the pumps.
    pub include_xpm: bool,
    /// Keep the group-delay difference between each band and the pump frame.
    pub sideband_walkoff: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            n_steps: 200,
            include_pump_dispersion: true,
            include_xpm: true,
            sideband_walkoff: true,
        }
    }
}

impl PropagationConfig {
    /// No XPM and static pumps; the idealised beam-splitter model.
    pub fn ideal(n_steps: usize) -> Self {
        Self {
            n_steps,
            include_pump_dispersion: false,
            include_xpm: false,
            sideband_walkoff: true,
        }
    }
}

/// Per-step exact solution of the nonlinear sub-step, sampled on the time grid.
struct StepCoupling {
    cos: Vec<f64>,
    /// `i e^{iθ} sin κh`; the idler-to-signal element.
    cross: Vec<Complex64>,
    /// `e^{iXh}`
    xpm: Vec<Complex64>,
}

/// Precomputed propagator for one fiber, pump pair and band pair.
pub struct BsfwmSolver {
    signal_grid: FrequencyGrid,
    idler_grid: FrequencyGrid,
    n_steps: usize,
    lin_half: [Vec<Complex64>; 2],
    lin_full: [Vec<Complex64>; 2],
    steps: Vec<StepCoupling>,
    transform: TimeTransform,
}

impl BsfwmSolver {
    pub fn new(
        signal_grid: &FrequencyGrid,
        idler_grid: &FrequencyGrid,
        pumps: &BsfwmPumpPair,
        fiber: &FiberSpec,
        config: &PropagationConfig,
    ) -> Result<Self> {
        pumps.validate()?;
        fiber.validate()?;
        if config.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
        }
        if !signal_grid.same_sampling(idler_grid) {
            return Err(Error::GridMismatch("signal and idler grids must share spacing and size".into()));
        }
        let n = signal_grid.n_points();
        let h = fiber.length / config.n_steps as f64;
        let reference = fiber.dispersion_reference_frequency;
        let [_, b2, b3] = fiber.beta_coefficients;
        let wp1 = pumps.pump1.center_frequency;
        let wp2 = pumps.pump2.center_frequency;

        // Group delay of the pump frame relative to β₁ at the reference.
        let rel_beta1 = |w: f64| {
            let x = w - reference;
            x * (b2 + x * b3 / 2.0)
        };
        let frame = 0.5 * (rel_beta1(wp1) + rel_beta1(wp2));
        // Propagation constant in the pump frame, without the β₁(ω_ref) term.
        let k = |w: f64| {
            let x = w - reference;
            -frame * x + x * x * (b2 / 2.0 + x * b3 / 6.0)
        };

        let mut lin_half = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut lin_full = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for (b, grid) in [signal_grid, idler_grid].into_iter().enumerate() {
            let w0 = grid.center_frequency();
            let slope = if config.sideband_walkoff { 0.0 } else { rel_beta1(w0) - frame };
            for j in 0..n {
                let w = grid.offset(j);
                let d = k(w0 + w) - slope * w;
                lin_half[b].push(Complex64::from_polar(1.0, d * h / 2.0));
                lin_full[b].push(Complex64::from_polar(1.0, d * h));
            }
        }

        let times: Vec<f64> = (0..n).map(|m| (m as f64 - (n / 2) as f64) * signal_grid.time_step()).collect();
        let fields = pump_fields(pumps, fiber, config, &times, h, &k)?;

        let gamma = fiber.nonlinear_coefficient;
        let delta = idler_grid.center_frequency() + wp1 - wp2 - signal_grid.center_frequency();
        let steps = fields
            .iter()
            .map(|(a1, a2)| {
                let mut cos = Vec::with_capacity(n);
                let mut cross = Vec::with_capacity(n);
                let mut xpm = Vec::with_capacity(n);
                for m in 0..n {
                    let kk = 2.0 * gamma * a1[m] * a2[m].conj() * Complex64::from_polar(1.0, -delta * times[m]);
                    let kappa = kk.norm();
                    let theta = kk.arg();
                    cos.push((kappa * h).cos());
                    cross.push(Complex64::new(0.0, 1.0) * Complex64::from_polar((kappa * h).sin(), theta));
                    let x = if config.include_xpm {
                        2.0 * gamma * (a1[m].norm_sqr() + a2[m].norm_sqr())
                    } else {
                        0.0
                    };
                    xpm.push(Complex64::from_polar(1.0, x * h));
                }
                StepCoupling { cos, cross, xpm }
            })
            .collect();

        Ok(Self {
            signal_grid: signal_grid.clone(),
            idler_grid: idler_grid.clone(),
            n_steps: config.n_steps,
            lin_half,
            lin_full,
            steps,
            transform: TimeTransform::new(n),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn grid(&self, band: Band) -> &FrequencyGrid {
        match band {
            Band::Signal => &self.signal_grid,
            Band::Idler => &self.idler_grid,
        }
    }

    /// Propagates sample vectors `(signal, idler)` in place.
    pub fn propagate_values(&self, signal: &mut [Complex64], idler: &mut [Complex64], scratch: &mut [Complex64]) {
        let tr = &self.transform;
        mul_in_place(signal, &self.lin_half[0]);
        mul_in_place(idler, &self.lin_half[1]);
        for (n, step) in self.steps.iter().enumerate() {
            tr.to_time(signal, scratch);
            tr.to_time(idler, scratch);
            for m in 0..signal.len() {
                let (s, i) = (signal[m], idler[m]);
                let c = step.cos[m];
                let x = step.cross[m];
                let ph = step.xpm[m];
                signal[m] = ph * (c * s + x * i);
                idler[m] = ph * (c * i - x.conj() * s);
            }
            tr.to_freq(signal, scratch);
            tr.to_freq(idler, scratch);
            let lin = if n + 1 == self.steps.len() { &self.lin_half } else { &self.lin_full };
            mul_in_place(signal, &lin[0]);
            mul_in_place(idler, &lin[1]);
        }
    }

    pub fn scratch(&self) -> Vec<Complex64> {
        self.transform.scratch()
    }

    /// Propagates one band-resolved amplitude; returns `(signal_out, idler_out)`.
    pub fn propagate(&self, input: &SpectralAmplitude) -> Result<(SpectralAmplitude, SpectralAmplitude)> {
        input.grid.check_same(self.grid(input.band), "propagation input")?;
        let n = input.values.len();
        let mut s = vec![ZERO; n];
        let mut i = vec![ZERO; n];
        match input.band {
            Band::Signal => s.copy_from_slice(&input.values),
            Band::Idler => i.copy_from_slice(&input.values),
        }
        self.propagate_values(&mut s, &mut i, &mut self.scratch());
        let out_s = SpectralAmplitude::new(Band::Signal, self.signal_grid.clone(), s)?;
        let out_i = SpectralAmplitude::new(Band::Idler, self.idler_grid.clone(), i)?;
        let before = input.norm_sqr();
        let after = out_s.norm_sqr() + out_i.norm_sqr();
        let drift = if before > 0.0 { (after - before).abs() / before } else { 0.0 };
        if drift > 1e-4 {
            return Err(Error::Accuracy {
                drift,
                n_steps: self.n_steps,
            });
        }
        Ok((out_s, out_i))
    }
}

fn mul_in_place(v: &mut [Complex64], w: &[Complex64]) {
    for (a, b) in v.iter_mut().zip(w) {
        *a *= b;
    }
}

type PumpFields = Vec<(Vec<Complex64>, Vec<Complex64>)>;

/// Pump envelopes at the midpoint of every z-step, including the carrier
/// phase `e^{iK(ω_p)z}`.
fn pump_fields(
    pumps: &BsfwmPumpPair,
    fiber: &FiberSpec,
    config: &PropagationConfig,
    times: &[f64],
    h: f64,
    k: &dyn Fn(f64) -> f64,
) -> Result<PumpFields> {
    let n = times.len();
    let dt = times[1] - times[0];
    let mut a1: Vec<Complex64> = times.iter().map(|&t| pumps.pump1.field(t)).collect();
    let mut a2: Vec<Complex64> = times.iter().map(|&t| pumps.pump2.field(t - pumps.relative_timing)).collect();
    let k1 = k(pumps.pump1.center_frequency);
    let k2 = k(pumps.pump2.center_frequency);

    let disperse = config.include_pump_dispersion && pumps.pump1.shape != PumpShape::Continuous;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut scratch = vec![ZERO; fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
    // Half-substep linear factors, FFT frequency ordering, Ω_k = −2π·freq_k/dt.
    let quarter = h / 4.0;
    let lin = |wp: f64, kp: f64| -> Vec<Complex64> {
        (0..n)
            .map(|q| {
                let f = if q <= (n - 1) / 2 { q as f64 } else { q as f64 - n as f64 };
                let omega = -2.0 * PI * f / (n as f64 * dt);
                Complex64::from_polar(1.0 / n as f64, (k(wp + omega) - kp) * quarter)
            })
            .collect()
    };
    let (l1, l2) = if disperse {
        (lin(pumps.pump1.center_frequency, k1), lin(pumps.pump2.center_frequency, k2))
    } else {
        (Vec::new(), Vec::new())
    };
    let gamma = fiber.nonlinear_coefficient;
    let mut linear = |a: &mut Vec<Complex64>, l: &[Complex64]| {
        if disperse {
            fwd.process_with_scratch(a, &mut scratch);
            mul_in_place(a, l);
            inv.process_with_scratch(a, &mut scratch);
        }
    };

    let mut out = Vec::with_capacity(config.n_steps);
    for step in 0..config.n_steps {
        // Two Strang substeps of h/2 each; the state after the first is the midpoint.
        for sub in 0..2 {
            linear(&mut a1, &l1);
            linear(&mut a2, &l2);
            if config.include_xpm {
                for m in 0..n {
                    let (p1, p2) = (a1[m].norm_sqr(), a2[m].norm_sqr());
                    a1[m] *= Complex64::from_polar(1.0, gamma * (p1 + 2.0 * p2) * h / 2.0);
                    a2[m] *= Complex64::from_polar(1.0, gamma * (p2 + 2.0 * p1) * h / 2.0);
                }
            }
            linear(&mut a1, &l1);
            linear(&mut a2, &l2);
            if sub == 0 {
                let z = (step as f64 + 0.5) * h;
                let c1 = Complex64::from_polar(1.0, k1 * z);
                let c2 = Complex64::from_polar(1.0, k2 * z);
                out.push((a1.iter().map(|v| v * c1).collect(), a2.iter().map(|v| v * c2).collect()));
            }
        }
    }
    Ok(out)
}

/// Propagates `input` together with an empty partner band on `other_grid`.
/// Returns `(signal_out, idler_out)`.
pub fn propagate(
    input: &SpectralAmplitude,
    other_grid: &FrequencyGrid,
    pumps: &BsfwmPumpPair,
    fiber: &FiberSpec,
    config: &PropagationConfig,
) -> Result<(SpectralAmplitude, SpectralAmplitude)> {
    let (sg, ig) = match input.band {
        Band::Signal => (&input.grid, other_grid),
        Band::Idler => (other_grid, &input.grid),
    };
    BsfwmSolver::new(sg, ig, pumps, fiber, config)?.propagate(input)
}

/// Discretized Green-function kernels. `g_xy[[i, j]]` couples input band
/// `x` at sample `i` to output band `y` at sample `j`, so that
/// `out_y[j] = Σ_i g_xy[[i, j]]·in_x[i]·Δω`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenFunction {
    pub g_ss: Array2<Complex64>,
    pub g_si: Array2<Complex64>,
    pub g_is: Array2<Complex64>,
    pub g_ii: Array2<Complex64>,
    pub signal_grid: FrequencyGrid,
    pub idler_grid: FrequencyGrid,
    pub pump_power: f64,
    /// Relative norm of a broadband probe outside the span of the basis.
    pub basis_residual: f64,
    pub warnings: Vec<String>,
}

impl GreenFunction {
    /// Kernels of an empty fiber (no pump, no dispersion).
    pub fn identity(signal_grid: &FrequencyGrid, idler_grid: &FrequencyGrid) -> Result<Self> {
        cw_analytic_green(0.0, 0.0, signal_grid, idler_grid)
    }

    pub fn n_points(&self) -> usize {
        self.signal_grid.n_points()
    }

    pub fn spacing(&self) -> f64 {
        self.signal_grid.spacing()
    }

    fn kernels_from(&self, band: Band) -> (&Array2<Complex64>, &Array2<Complex64>) {
        match band {
            Band::Signal => (&self.g_ss, &self.g_si),
            Band::Idler => (&self.g_is, &self.g_ii),
        }
    }

    pub fn grid(&self, band: Band) -> &FrequencyGrid {
        match band {
            Band::Signal => &self.signal_grid,
            Band::Idler => &self.idler_grid,
        }
    }

    /// Applies the kernels to the columns of `inputs` (samples × modes) in
    /// `band`; returns the outputs in the signal and idler bands.
    pub fn apply_batch(&self, band: Band, inputs: &Array2<Complex64>) -> Result<(Array2<Complex64>, Array2<Complex64>)> {
        if inputs.nrows() != self.n_points() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a {}-point green function",
                inputs.nrows(),
                self.n_points()
            )));
        }
        let (to_s, to_i) = self.kernels_from(band);
        let dw = Complex64::new(self.spacing(), 0.0);
        let out_s = to_s.t().dot(inputs) * dw;
        let out_i = to_i.t().dot(inputs) * dw;
        Ok((out_s, out_i))
    }

    pub fn apply(&self, input: &SpectralAmplitude) -> Result<(SpectralAmplitude, SpectralAmplitude)> {
        input.grid.check_same(self.grid(input.band), "green function input")?;
        let col = Array2::from_shape_vec((input.values.len(), 1), input.values.clone())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let (s, i) = self.apply_batch(input.band, &col)?;
        Ok((
            SpectralAmplitude::new(Band::Signal, self.signal_grid.clone(), s.column(0).to_vec())?,
            SpectralAmplitude::new(Band::Idler, self.idler_grid.clone(), i.column(0).to_vec())?,
        ))
    }

    /// Input-to-output operator on orthonormal grid coordinates, ordered
    /// (signal, idler) for both inputs and outputs.
    pub fn transfer_matrix(&self) -> Array2<Complex64> {
        let n = self.n_points();
        let dw = self.spacing();
        let mut u = Array2::zeros((2 * n, 2 * n));
        u.slice_mut(s![..n, ..n]).assign(&self.g_ss.t());
        u.slice_mut(s![..n, n..]).assign(&self.g_is.t());
        u.slice_mut(s![n.., ..n]).assign(&self.g_si.t());
        u.slice_mut(s![n.., n..]).assign(&self.g_ii.t());
        u.mapv_inplace(|v| v * dw);
        u
    }

    /// `‖U†U − I‖_max` of [`transfer_matrix`](Self::transfer_matrix).
    pub fn unitarity_defect(&self) -> f64 {
        let u = self.transfer_matrix();
        let uh = u.t().mapv(|v| v.conj());
        let p = uh.dot(&u);
        p.indexed_iter()
            .map(|((a, b), v)| (v - if a == b { 1.0 } else { 0.0 }).norm())
            .fold(0.0, f64::max)
    }
}

/// Kernels of the ideal single-mode splitter, `fbs_matrix` times `δ(ω−ω′)`.
pub fn cw_analytic_green(
    gl: f64,
    pump_phase: f64,
    signal_grid: &FrequencyGrid,
    idler_grid: &FrequencyGrid,
) -> Result<GreenFunction> {
    if !signal_grid.same_sampling(idler_grid) {
        return Err(Error::GridMismatch("signal and idler grids must share spacing and size".into()));
    }
    let m = fbs_matrix(FbsSetting::new(gl, pump_phase));
    let n = signal_grid.n_points();
    let inv = 1.0 / signal_grid.spacing();
    let diag = |v: Complex64| Array2::from_diag(&ndarray::Array1::from_elem(n, v * inv));
    Ok(GreenFunction {
        // Heisenberg form: out_s = m00 in_s + m01 in_i, out_i = m10 in_s + m11 in_i.
        g_ss: diag(m[0][0]),
        g_si: diag(m[1][0]),
        g_is: diag(m[0][1]),
        g_ii: diag(m[1][1]),
        signal_grid: signal_grid.clone(),
        idler_grid: idler_grid.clone(),
        pump_power: 0.0,
        basis_residual: 0.0,
        warnings: Vec::new(),
    })
}

/// Real orthonormal basis (columns, `Σ φ_a φ_b Δω = δ_ab`) starting from
/// Hermite-Gaussian functions and completed with unit vectors when the
/// sampled functions become linearly dependent.
pub fn orthonormal_basis(grid: &FrequencyGrid, tau: f64, count: usize) -> Result<Array2<f64>> {
    let n = grid.n_points();
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!("basis size must be in 1..={n}, got {count}")));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("characteristic time must be positive, got {tau}")));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    let push = |mut v: Vec<f64>, basis: &mut Vec<Vec<f64>>| {
        let start = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if start == 0.0 {
            return;
        }
        for _ in 0..2 {
            for q in basis.iter() {
                let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, qv) in v.iter_mut().zip(q) {
                    *x -= c * qv;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 * start {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    };
    for col in hg_columns(grid, tau, count) {
        if basis.len() == count {
            break;
        }
        push(col, &mut basis);
    }
    // Unit vectors ordered from the grid centre outwards.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| (2 * j as i64 - n as i64 + 1).abs());
    for j in order {
        if basis.len() == count {
            break;
        }
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        push(e, &mut basis);
    }
    let scale = 1.0 / grid.spacing().sqrt();
    Ok(Array2::from_shape_fn((n, count), |(j, b)| basis[b][j] * scale))
}

/// Propagates every basis function in both bands and assembles the kernels
/// `G_xy = Φ·Y_xᵀ`, where `Y_x` holds the band-`y` outputs for inputs in band `x`.
pub fn build_green(
    signal_grid: &FrequencyGrid,
    idler_grid: &FrequencyGrid,
    pumps: &BsfwmPumpPair,
    fiber: &FiberSpec,
    basis_size: usize,
    tau: f64,
    config: &PropagationConfig,
) -> Result<GreenFunction> {
    let phi = orthonormal_basis(signal_grid, tau, basis_size)?;
    let n = signal_grid.n_points();
    let mut config = *config;
    let mut warnings = Vec::new();
    let outputs = loop {
        let solver = BsfwmSolver::new(signal_grid, idler_grid, pumps, fiber, &config)?;
        let results: Vec<Result<[Vec<Complex64>; 4]>> = (0..basis_size)
            .into_par_iter()
            .map_init(
                || solver.scratch(),
                |scratch, b| {
                    let col: Vec<Complex64> = phi.column(b).iter().map(|&x| Complex64::new(x, 0.0)).collect();
                    let mut ss = col.clone();
                    let mut si = vec![ZERO; n];
                    solver.propagate_values(&mut ss, &mut si, scratch);
                    let mut is = vec![ZERO; n];
                    let mut ii = col;
                    solver.propagate_values(&mut is, &mut ii, scratch);
                    let dw = signal_grid.spacing();
                    for (a, c) in [(&ss, &si), (&is, &ii)] {
                        let norm: f64 = (a.iter().chain(c.iter()).map(|v| v.norm_sqr()).sum::<f64>()) * dw;
                        let drift = (norm - 1.0).abs();
                        if drift > 1e-4 {
                            return Err(Error::Accuracy {
                                drift,
                                n_steps: config.n_steps,
                            });
                        }
                    }
                    Ok([ss, si, is, ii])
                },
            )
            .collect();
        match results.into_iter().collect::<Result<Vec<_>>>() {
            Ok(v) => break v,
            Err(Error::Accuracy { drift, n_steps }) if n_steps < 64 * 200 => {
                warnings.push(format!("norm drift {drift:.2e} at {n_steps} steps; doubling"));
                config.n_steps *= 2;
            }
            Err(e) => return Err(e),
        }
    };

    let phi_c = phi.mapv(|x| Complex64::new(x, 0.0));
    let gather = |which: usize| -> Array2<Complex64> {
        // Rows are basis indices, columns are output samples: Yᵀ.
        Array2::from_shape_fn((basis_size, n), |(b, j)| outputs[b][which][j])
    };
    let g_ss = phi_c.dot(&gather(0));
    let g_si = phi_c.dot(&gather(1));
    let g_is = phi_c.dot(&gather(2));
    let g_ii = phi_c.dot(&gather(3));

    // Probe: Gaussian filling a quarter of the span.
    let width = signal_grid.span() / 8.0;
    let probe: Vec<f64> = signal_grid.offsets().iter().map(|w| (-(w / width).powi(2)).exp()).collect();
    let dw = signal_grid.spacing();
    let coeff = phi.t().dot(&ndarray::Array1::from(probe.clone())) * dw;
    let projected = phi.dot(&coeff);
    let p2: f64 = probe.iter().map(|x| x * x).sum();
    let r2: f64 = probe.iter().zip(projected.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let basis_residual = (r2 / p2).sqrt();
    if basis_residual > 1e-3 {
        warnings.push(format!("basis incomplete: probe reconstruction residual {basis_residual:.2e}"));
    }

    Ok(GreenFunction {
        g_ss,
        g_si,
        g_is,
        g_ii,
        signal_grid: signal_grid.clone(),
        idler_grid: idler_grid.clone(),
        pump_power: pumps.total_power(),
        basis_residual,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplittingRatio {
    /// Probability of staying in the input band.
    pub transmission: f64,
    /// `1 − transmission`
    pub reflection: f64,
    /// Probability found in neither band.
    pub leakage: f64,
}

pub fn splitting_ratio(green: &GreenFunction, probe: &SpectralAmplitude) -> Result<SplittingRatio> {
    if !probe.is_normalized() {
        return Err(Error::InvalidArgument("probe must be normalized".into()));
    }
    let (s, i) = green.apply(probe)?;
    let (same, other) = match probe.band {
        Band::Signal => (s.norm_sqr(), i.norm_sqr()),
        Band::Idler => (i.norm_sqr(), s.norm_sqr()),
    };
    Ok(SplittingRatio {
        transmission: same,
        reflection: 1.0 - same,
        leakage: 1.0 - same - other,
    })
}

/// Fraction of the probe found in the other band after propagation.
pub fn translation_efficiency(
    probe: &SpectralAmplitude,
    other_grid: &FrequencyGrid,
    pumps: &BsfwmPumpPair,
    fiber: &FiberSpec,
    config: &PropagationConfig,
) -> Result<f64> {
    let (s, i) = propagate(probe, other_grid, pumps, fiber, config)?;
    let total = probe.norm_sqr();
    Ok(match probe.band {
        Band::Signal => i.norm_sqr(),
        Band::Idler => s.norm_sqr(),
    } / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{hg_mode, inner_product, make_grid, HermiteGaussianSpec};

    const THZ: f64 = 2.0 * PI * 1e12;

    fn grids(n: usize) -> (FrequencyGrid, FrequencyGrid) {
        (
            make_grid(236.45 * THZ, 0.8 * THZ, n).unwrap(),
            make_grid(235.85 * THZ, 0.8 * THZ, n).unwrap(),
        )
    }

    fn flat_fiber() -> FiberSpec {
        FiberSpec::dispersionless(NZDSF_LENGTH, NZDSF_NONLINEAR_COEFFICIENT, 214.86 * THZ)
    }

    fn power_for(gl: f64) -> f64 {
        gl / (NZDSF_NONLINEAR_COEFFICIENT * NZDSF_LENGTH)
    }

    fn default_fiber() -> FiberSpec {
        let (sg, ig) = grids(8);
        nzdsf_fiber(
            NZDSF_LENGTH,
            NZDSF_NONLINEAR_COEFFICIENT,
            NZDSF_WALKOFF,
            sg.center_frequency(),
            ig.center_frequency(),
            angular_frequency_from_wavelength(PUMP1_WAVELENGTH),
            angular_frequency_from_wavelength(PUMP2_WAVELENGTH),
        )
        .unwrap()
    }

    fn photon(grid: &FrequencyGrid, band: Band, tau: f64) -> SpectralAmplitude {
        hg_mode(HermiteGaussianSpec { order: 0, characteristic_time: tau }, grid, band).unwrap()
    }

    #[test]
    fn nzdsf_walkoff_and_phase_matching() {
        let f = default_fiber();
        let (sg, ig) = grids(8);
        let walk = (f.beta1(sg.center_frequency()) - f.beta1(ig.center_frequency())) * f.length;
        assert!((walk - NZDSF_WALKOFF).abs() < 1e-18);
        assert!(f.beta2(f.zgvd().unwrap()).abs() < 1e-40);
        // The common group delay drops out in the co-moving frame.
        let mut f = f;
        f.beta_coefficients[0] = 0.0;
        let mismatch = f.beta(sg.center_frequency()) - f.beta(ig.center_frequency())
            - f.beta(angular_frequency_from_wavelength(PUMP1_WAVELENGTH))
            + f.beta(angular_frequency_from_wavelength(PUMP2_WAVELENGTH));
        assert!(mismatch.abs() * f.length < 0.05, "{mismatch}");
    }

    #[test]
    fn pump_pair_requires_equal_powers() {
        let mut p = BsfwmPumpPair::pulsed(5.2);
        p.pump2.peak_power = 1.0;
        assert!(p.validate().is_err());
        assert!((BsfwmPumpPair::pulsed(5.2).total_power() - 5.2).abs() < 1e-15);
    }

    #[test]
    fn zero_power_only_disperses() {
        let (sg, ig) = grids(128);
        let fiber = default_fiber();
        let input = photon(&sg, Band::Signal, 5e-12);
        let (s, i) = propagate(&input, &ig, &BsfwmPumpPair::pulsed(0.0), &fiber, &PropagationConfig::default()).unwrap();
        assert!(i.norm_sqr() < 1e-28);
        for (a, b) in s.values.iter().zip(&input.values) {
            assert!((a.norm() - b.norm()).abs() < 1e-9 * input.values.iter().map(|v| v.norm()).fold(0.0, f64::max));
        }
    }

    #[test]
    fn cw_full_translation() {
        let (sg, ig) = grids(64);
        let input = photon(&sg, Band::Signal, 5e-12);
        let pumps = BsfwmPumpPair::continuous(power_for(PI / 2.0), 0.0);
        let (s, i) = propagate(&input, &ig, &pumps, &flat_fiber(), &PropagationConfig::ideal(50)).unwrap();
        assert!((i.norm_sqr() - 1.0).abs() < 1e-4);
        assert!(s.norm_sqr() < 1e-4);
    }

    #[test]
    fn cw_balanced_matches_fbs_matrix_pointwise() {
        let (sg, ig) = grids(64);
        let input = photon(&ig, Band::Idler, 5e-12);
        let phase = 0.7;
        let pumps = BsfwmPumpPair::continuous(power_for(PI / 4.0), phase)
            .tuned_to(sg.center_frequency(), ig.center_frequency());
        let (s, i) = propagate(&input, &sg, &pumps, &flat_fiber(), &PropagationConfig::ideal(50)).unwrap();
        let m = fbs_matrix(FbsSetting::new(PI / 4.0, phase));
        for j in 0..64 {
            assert!((s.values[j] - m[0][1] * input.values[j]).norm() < 1e-4 * input.values[32].norm());
            assert!((i.values[j] - m[1][1] * input.values[j]).norm() < 1e-4 * input.values[32].norm());
        }
    }

    #[test]
    fn propagation_is_linear() {
        let (sg, ig) = grids(128);
        let fiber = default_fiber();
        let pumps = BsfwmPumpPair::pulsed(5.2);
        let solver = BsfwmSolver::new(&sg, &ig, &pumps, &fiber, &PropagationConfig::default()).unwrap();
        let x = photon(&sg, Band::Signal, 5e-12);
        let y = hg_mode(HermiteGaussianSpec { order: 3, characteristic_time: 3e-12 }, &sg, Band::Signal).unwrap();
        let (alpha, beta) = (Complex64::new(0.3, -1.2), Complex64::new(-0.7, 0.4));
        let combo = SpectralAmplitude::new(
            Band::Signal,
            sg.clone(),
            x.values.iter().zip(&y.values).map(|(a, b)| alpha * a + beta * b).collect(),
        )
        .unwrap();
        let (cs, ci) = solver.propagate(&combo).unwrap();
        let (xs, xi) = solver.propagate(&x).unwrap();
        let (ys, yi) = solver.propagate(&y).unwrap();
        for j in 0..128 {
            assert!((cs.values[j] - alpha * xs.values[j] - beta * ys.values[j]).norm() < 1e-8);
            assert!((ci.values[j] - alpha * xi.values[j] - beta * yi.values[j]).norm() < 1e-8);
        }
    }

    #[test]
    fn split_step_is_second_order() {
        let (sg, ig) = grids(128);
        let fiber = default_fiber();
        let pumps = BsfwmPumpPair::pulsed(5.2);
        let input = photon(&sg, Band::Signal, 3e-12);
        let run = |steps: usize| {
            let cfg = PropagationConfig {
                n_steps: steps,
                ..PropagationConfig::default()
            };
            let (s, i) = propagate(&input, &ig, &pumps, &fiber, &cfg).unwrap();
            [s.values, i.values].concat()
        };
        let (a, b, c) = (run(10), run(20), run(40));
        let diff = |u: &[Complex64], v: &[Complex64]| u.iter().zip(v).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        let order = (diff(&a, &b) / diff(&b, &c)).log2();
        assert!(order >= 1.8, "observed order {order}");
        let norm: f64 = c.iter().map(|v| v.norm_sqr()).sum::<f64>() * sg.spacing();
        assert!((norm - 1.0).abs() < 1e-10);
    }

    #[test]
    fn basis_is_orthonormal_and_complete() {
        let (sg, _) = grids(96);
        let phi = orthonormal_basis(&sg, DEFAULT_TAU, 96).unwrap();
        let gram = phi.t().dot(&phi) * sg.spacing();
        for ((a, b), v) in gram.indexed_iter() {
            assert!((v - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
        let first = phi.column(0);
        let hg0 = photon(&sg, Band::Signal, DEFAULT_TAU);
        let ov: f64 = first.iter().zip(&hg0.values).map(|(a, b)| a * b.re).sum::<f64>() * sg.spacing();
        assert!((ov.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_power_green_is_dispersion_only() {
        let (sg, ig) = grids(64);
        let g = build_green(&sg, &ig, &BsfwmPumpPair::pulsed(0.0), &default_fiber(), 64, DEFAULT_TAU, &PropagationConfig::default())
            .unwrap();
        assert!(g.g_si.iter().chain(g.g_is.iter()).all(|v| v.norm() * sg.spacing() < 1e-10));
        for ((a, b), v) in g.g_ss.indexed_iter() {
            let expect = if a == b { 1.0 } else { 0.0 };
            assert!((v.norm() * sg.spacing() - expect).abs() < 1e-9);
        }
        assert!(g.unitarity_defect() < 1e-9);
        assert!(g.basis_residual < 1e-10 && g.warnings.is_empty());
    }

    #[test]
    fn cw_green_matches_analytic_kernels() {
        let (sg, ig) = grids(64);
        for gl in [0.0, PI / 8.0, PI / 4.0, PI / 2.0] {
            let pumps = BsfwmPumpPair::continuous(power_for(gl), 0.3).tuned_to(sg.center_frequency(), ig.center_frequency());
            let g = build_green(&sg, &ig, &pumps, &flat_fiber(), 64, DEFAULT_TAU, &PropagationConfig::ideal(40)).unwrap();
            let oracle = cw_analytic_green(gl, 0.3, &sg, &ig).unwrap();
            let dw = sg.spacing();
            for (k, o) in [(&g.g_ss, &oracle.g_ss), (&g.g_si, &oracle.g_si), (&g.g_is, &oracle.g_is), (&g.g_ii, &oracle.g_ii)] {
                for (a, b) in k.iter().zip(o.iter()) {
                    assert!((a - b).norm() * dw < 1e-4, "gl={gl}");
                }
            }
            assert!(g.unitarity_defect() < 1e-3);
        }
    }

    #[test]
    fn analytic_green_properties() {
        let (sg, ig) = grids(16);
        let id = cw_analytic_green(0.0, 0.0, &sg, &ig).unwrap();
        assert!(id.g_si.iter().all(|v| v.norm() == 0.0));
        let half = cw_analytic_green(PI / 4.0, 1.0, &sg, &ig).unwrap();
        assert!((half.g_ss[[3, 3]].norm() * sg.spacing() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(half.unitarity_defect() < 1e-12);
        let probe = photon(&sg, Band::Signal, 5e-12);
        let r = splitting_ratio(&half, &probe).unwrap();
        assert!((r.transmission - 0.5).abs() < 1e-6);
        assert!(r.leakage.abs() < 1e-9);
        assert!((splitting_ratio(&id, &probe).unwrap().transmission - 1.0).abs() < 1e-12);
    }

    #[test]
    fn band_exchange_transposes_kernels() {
        let (sg, ig) = grids(48);
        let fiber = default_fiber();
        let pumps = BsfwmPumpPair::pulsed(5.2);
        let mut swapped = pumps.clone();
        std::mem::swap(&mut swapped.pump1, &mut swapped.pump2);
        let cfg = PropagationConfig::default();
        let g = build_green(&sg, &ig, &pumps, &fiber, 48, DEFAULT_TAU, &cfg).unwrap();
        let gs = build_green(&ig, &sg, &swapped, &fiber, 48, DEFAULT_TAU, &cfg).unwrap();
        let dw = sg.spacing();
        for (a, b) in gs.g_si.iter().zip(g.g_is.iter()) {
            assert!((a - b).norm() * dw < 1e-6);
        }
        for (a, b) in gs.g_ss.iter().zip(g.g_ii.iter()) {
            assert!((a - b).norm() * dw < 1e-6);
        }
    }

    #[test]
    fn shorter_pumps_translate_less() {
        let (sg, ig) = grids(256);
        let fiber = default_fiber();
        let input = photon(&sg, Band::Signal, 100e-12);
        let mut last = f64::INFINITY;
        for duration in [2.0e-9, 1.0e-9, 0.5e-9, 0.3e-9, 0.2e-9] {
            let mut pumps = BsfwmPumpPair::pulsed(power_for(PI / 2.0));
            pumps.pump1.fwhm_duration = duration;
            pumps.pump2.fwhm_duration = duration;
            let eff = translation_efficiency(&input, &ig, &pumps, &fiber, &PropagationConfig::ideal(100)).unwrap();
            assert!(eff < last, "{duration}: {eff} !< {last}");
            last = eff;
        }
        let cw = translation_efficiency(
            &input,
            &ig,
            &BsfwmPumpPair::continuous(power_for(PI / 2.0), 0.0),
            &flat_fiber(),
            &PropagationConfig::ideal(100),
        )
        .unwrap();
        assert!(last < cw);
    }

    #[test]
    fn green_reproduces_direct_propagation() {
        let (sg, ig) = grids(64);
        let fiber = default_fiber();
        let pumps = BsfwmPumpPair::pulsed(5.2);
        let cfg = PropagationConfig::default();
        let g = build_green(&sg, &ig, &pumps, &fiber, 64, DEFAULT_TAU, &cfg).unwrap();
        let probe = hg_mode(HermiteGaussianSpec { order: 2, characteristic_time: 4e-12 }, &ig, Band::Idler).unwrap();
        let (ds, di) = propagate(&probe, &sg, &pumps, &fiber, &cfg).unwrap();
        let (gs, gi) = g.apply(&probe).unwrap();
        assert!((inner_product(&ds, &gs).unwrap() - ds.norm_sqr()).norm() < 1e-9);
        assert!((inner_product(&di, &gi).unwrap() - di.norm_sqr()).norm() < 1e-9);
    }
}
