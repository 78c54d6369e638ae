//! Scenario configuration: strict TOML with nested sections, presets and
//! `section.key=value` overrides.
//!
//! Units at this boundary are nm, W, ps, m and THz (ordinary, not angular,
//! frequency); everything handed to the core crate is in SI base units with
//! angular frequencies.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use freqnoon_core::bsfwm::{
    nzdsf_fiber, BsfwmPumpPair, PropagationConfig, COMPENSATION_DELAY, NZDSF_LENGTH, NZDSF_NONLINEAR_COEFFICIENT,
    NZDSF_WALKOFF, PUMP1_WAVELENGTH, PUMP2_WAVELENGTH, PUMP_DURATION,
};
use freqnoon_core::source::{BandpassFilter, FiberSpec, PumpPulse, PumpShape, SMF28_NONLINEAR_COEFFICIENT};
use freqnoon_core::spectral::{
    angular_bandwidth_from_wavelength, angular_frequency_from_wavelength, make_grid, FrequencyGrid,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const PS: f64 = 1e-12;
const NM: f64 = 1e-9;
const THZ: f64 = 2.0 * PI * 1e12;

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Seed for any injected noise; no scenario injects noise by default.
    pub seed: u64,
    pub grid: GridConfig,
    pub source: SourceConfig,
    pub bsfwm: BsfwmConfig,
    pub scan: ScanConfig,
    pub analysis: AnalysisConfig,
    pub fisher: FisherConfig,
    pub fit: FitConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub signal_center_thz: f64,
    pub idler_center_thz: f64,
    pub span_thz: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub fiber_length_m: f64,
    pub nonlinear_coefficient_per_w_m: f64,
    /// Overrides the standard single-mode-fiber dispersion model.
    pub beta2_ps2_per_km: Option<f64>,
    pub beta3_ps3_per_km: Option<f64>,
    pub pump_wavelength_nm: f64,
    pub pump_duration_ps: f64,
    pub pump_peak_power_w: f64,
    pub signal_filter_nm: f64,
    pub idler_filter_nm: f64,
    pub filter_fwhm_nm: f64,
    pub filter_shape_order: u32,
    /// Schmidt modes with `r_k/r_0` below this are dropped.
    pub schmidt_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsfwmConfig {
    pub fiber_length_m: f64,
    pub nonlinear_coefficient_per_w_m: f64,
    pub walkoff_ps: f64,
    pub pump1_wavelength_nm: f64,
    pub pump2_wavelength_nm: f64,
    pub pump_duration_ps: f64,
    pub pump_shape: PumpShape,
    pub pump_phase_rad: f64,
    /// Retune pump 2 so the pump separation equals the band separation.
    pub tune_pumps: bool,
    /// Total pump power of each stage.
    pub stage1_power_w: f64,
    pub stage2_power_w: f64,
    pub n_steps: usize,
    pub include_pump_dispersion: bool,
    pub include_xpm: bool,
    pub sideband_walkoff: bool,
    /// Defaults to the number of grid points (a complete basis).
    pub basis_size: Option<usize>,
    pub basis_tau_ps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub hom_start_ps: f64,
    pub hom_stop_ps: f64,
    pub hom_points: usize,
    /// First-stage idler delay for NOON scans; defaults to the HOM dip.
    pub dt1_ps: Option<f64>,
    pub delay_start_ps: f64,
    pub delay_stop_ps: f64,
    pub delay_points: usize,
    pub double_pass: bool,
    pub idler_compensation_ps: f64,
    pub splitting_max_power_w: f64,
    pub splitting_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub fit_traces: bool,
    /// Starting Schmidt truncation K.
    pub schmidt_modes: usize,
    pub truncation_guard: bool,
    pub truncation_step: usize,
    pub truncation_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FisherConfig {
    pub n_photons: u32,
    pub visibility: f64,
    pub system_efficiency: f64,
    pub generation_efficiency: f64,
    pub repetitions: u64,
    pub single_visibility: f64,
    pub single_system_efficiency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Sinusoid,
    HomDip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// CSV with a header row; lines starting with `#` are skipped.
    pub input: Option<PathBuf>,
    pub model: FitKind,
    pub x_column: String,
    pub y_column: String,
    /// Accidental coincidences subtracted from `y_column` before fitting.
    pub accidentals_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Write the four Green kernels as complex CSV matrices.
    pub kernel_csv: bool,
    /// Write the joint spectral intensity matrix.
    pub jsi_csv: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            signal_center_thz: 236.45,
            idler_center_thz: 235.85,
            span_thz: 0.8,
            n_points: 1024,
        }
    }
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            fiber_length_m: 50.0,
            nonlinear_coefficient_per_w_m: SMF28_NONLINEAR_COEFFICIENT,
            beta2_ps2_per_km: None,
            beta3_ps3_per_km: None,
            pump_wavelength_nm: 1269.5,
            pump_duration_ps: 100.0,
            pump_peak_power_w: 1.0,
            signal_filter_nm: 1267.89,
            idler_filter_nm: 1271.11,
            filter_fwhm_nm: 0.7,
            filter_shape_order: 1,
            schmidt_threshold: 1e-4,
        }
    }
}

impl Default for BsfwmConfig {
    fn default() -> Self {
        Self {
            fiber_length_m: NZDSF_LENGTH,
            nonlinear_coefficient_per_w_m: NZDSF_NONLINEAR_COEFFICIENT,
            walkoff_ps: NZDSF_WALKOFF / PS,
            pump1_wavelength_nm: PUMP1_WAVELENGTH / NM,
            pump2_wavelength_nm: PUMP2_WAVELENGTH / NM,
            pump_duration_ps: PUMP_DURATION / PS,
            pump_shape: PumpShape::Gaussian,
            pump_phase_rad: 0.0,
            tune_pumps: false,
            stage1_power_w: 5.20,
            stage2_power_w: 5.20,
            n_steps: 200,
            include_pump_dispersion: true,
            include_xpm: true,
            sideband_walkoff: true,
            basis_size: None,
            basis_tau_ps: freqnoon_core::bsfwm::DEFAULT_TAU / PS,
        }
    }
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            hom_start_ps: -15.0,
            hom_stop_ps: 15.0,
            hom_points: 301,
            dt1_ps: None,
            delay_start_ps: 0.0,
            delay_stop_ps: 10.0 / 3.0,
            delay_points: 200,
            double_pass: true,
            idler_compensation_ps: COMPENSATION_DELAY / PS,
            splitting_max_power_w: 10.4,
            splitting_points: 10,
        }
    }
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            fit_traces: true,
            schmidt_modes: 8,
            truncation_guard: true,
            truncation_step: 4,
            truncation_tolerance: 1e-3,
        }
    }
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            n_photons: 2,
            visibility: 0.67,
            system_efficiency: 3.9e-5,
            generation_efficiency: 1.0,
            repetitions: 1,
            single_visibility: 0.70,
            single_system_efficiency: 0.012,
        }
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            input: None,
            model: FitKind::Sinusoid,
            x_column: "delay_ps".into(),
            y_column: "p_ss".into(),
            accidentals_column: None,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            kernel_csv: true,
            jsi_csv: true,
        }
    }
}

/// Shipped presets as `(name, TOML text)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("paper-200m", include_str!("../presets/paper-200m.toml")),
    ("mitigated-50m", include_str!("../presets/mitigated-50m.toml")),
];

pub fn preset_text(name: &str) -> Result<&'static str, CliError> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        CliError::Config(format!("unknown preset '{name}'; available: {}", names.join(", ")))
    })
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, CliError> {
    text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Parses `section.key=value`. The value is read as a TOML value, falling
/// back to a bare string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not of the form key=value")))?;
    let path: Vec<String> = path.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override '{spec}' has an empty key segment")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        let entry = node.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override path '{}' crosses a non-table key", path.join(".")))),
        };
    }
    node.insert(last.clone(), value);
    Ok(())
}

/// Where a configuration came from, recorded in every output snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub preset: Option<String>,
    pub config_file: Option<String>,
    pub overrides: Vec<String>,
}

/// Layers defaults, an optional preset, an optional file and the overrides,
/// then deserializes strictly.
pub fn load(
    preset: Option<&str>,
    file: Option<&Path>,
    overrides: &[String],
) -> Result<(ScenarioConfig, Provenance), CliError> {
    let mut table = toml::Table::new();
    if let Some(name) = preset {
        merge(&mut table, parse_table(preset_text(name)?, &format!("preset {name}"))?);
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        merge(&mut table, parse_table(&text, &path.display().to_string())?);
    }
    for spec in overrides {
        let (path, value) = parse_override(spec)?;
        apply_override(&mut table, &path, value)?;
    }
    let config: ScenarioConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok((
        config,
        Provenance {
            preset: preset.map(str::to_string),
            config_file: file.map(|p| p.display().to_string()),
            overrides: overrides.to_vec(),
        },
    ))
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::Config(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

fn non_negative(name: &str, v: f64) -> Result<(), CliError> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(CliError::Config(format!("{name} must be non-negative and finite, got {v}")));
    }
    Ok(())
}

fn finite(name: &str, v: f64) -> Result<(), CliError> {
    if !v.is_finite() {
        return Err(CliError::Config(format!("{name} must be finite, got {v}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        positive("grid.signal_center_thz", g.signal_center_thz)?;
        positive("grid.idler_center_thz", g.idler_center_thz)?;
        positive("grid.span_thz", g.span_thz)?;
        if g.n_points < 2 {
            return Err(CliError::Config("grid.n_points must be at least 2".into()));
        }
        let s = &self.source;
        positive("source.fiber_length_m", s.fiber_length_m)?;
        non_negative("source.nonlinear_coefficient_per_w_m", s.nonlinear_coefficient_per_w_m)?;
        for (n, v) in [("source.beta2_ps2_per_km", s.beta2_ps2_per_km), ("source.beta3_ps3_per_km", s.beta3_ps3_per_km)] {
            if let Some(v) = v {
                finite(n, v)?;
            }
        }
        positive("source.pump_wavelength_nm", s.pump_wavelength_nm)?;
        positive("source.pump_duration_ps", s.pump_duration_ps)?;
        positive("source.pump_peak_power_w", s.pump_peak_power_w)?;
        positive("source.signal_filter_nm", s.signal_filter_nm)?;
        positive("source.idler_filter_nm", s.idler_filter_nm)?;
        positive("source.filter_fwhm_nm", s.filter_fwhm_nm)?;
        if s.filter_shape_order == 0 {
            return Err(CliError::Config("source.filter_shape_order must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&s.schmidt_threshold) {
            return Err(CliError::Config("source.schmidt_threshold must lie in [0, 1)".into()));
        }
        let b = &self.bsfwm;
        positive("bsfwm.fiber_length_m", b.fiber_length_m)?;
        non_negative("bsfwm.nonlinear_coefficient_per_w_m", b.nonlinear_coefficient_per_w_m)?;
        finite("bsfwm.walkoff_ps", b.walkoff_ps)?;
        positive("bsfwm.pump1_wavelength_nm", b.pump1_wavelength_nm)?;
        positive("bsfwm.pump2_wavelength_nm", b.pump2_wavelength_nm)?;
        positive("bsfwm.pump_duration_ps", b.pump_duration_ps)?;
        finite("bsfwm.pump_phase_rad", b.pump_phase_rad)?;
        non_negative("bsfwm.stage1_power_w", b.stage1_power_w)?;
        non_negative("bsfwm.stage2_power_w", b.stage2_power_w)?;
        if b.n_steps == 0 {
            return Err(CliError::Config("bsfwm.n_steps must be at least 1".into()));
        }
        if let Some(k) = b.basis_size {
            if k == 0 || k > g.n_points {
                return Err(CliError::Config(format!("bsfwm.basis_size must lie in 1..={}", g.n_points)));
            }
        }
        positive("bsfwm.basis_tau_ps", b.basis_tau_ps)?;
        let sc = &self.scan;
        finite("scan.hom_start_ps", sc.hom_start_ps)?;
        finite("scan.hom_stop_ps", sc.hom_stop_ps)?;
        finite("scan.delay_start_ps", sc.delay_start_ps)?;
        finite("scan.delay_stop_ps", sc.delay_stop_ps)?;
        finite("scan.idler_compensation_ps", sc.idler_compensation_ps)?;
        if let Some(d) = sc.dt1_ps {
            finite("scan.dt1_ps", d)?;
        }
        non_negative("scan.splitting_max_power_w", sc.splitting_max_power_w)?;
        let a = &self.analysis;
        if a.schmidt_modes == 0 || a.truncation_step == 0 {
            return Err(CliError::Config("analysis.schmidt_modes and analysis.truncation_step must be positive".into()));
        }
        positive("analysis.truncation_tolerance", a.truncation_tolerance)?;
        let f = &self.fisher;
        if f.n_photons == 0 || f.repetitions == 0 {
            return Err(CliError::Config("fisher.n_photons and fisher.repetitions must be positive".into()));
        }
        Ok(())
    }

    pub fn signal_grid(&self) -> Result<FrequencyGrid, CliError> {
        Ok(make_grid(self.grid.signal_center_thz * THZ, self.grid.span_thz * THZ, self.grid.n_points)?)
    }

    pub fn idler_grid(&self) -> Result<FrequencyGrid, CliError> {
        Ok(make_grid(self.grid.idler_center_thz * THZ, self.grid.span_thz * THZ, self.grid.n_points)?)
    }

    pub fn source_fiber(&self) -> FiberSpec {
        let s = &self.source;
        let mut fiber = FiberSpec::smf28(s.fiber_length_m, s.pump_wavelength_nm * NM);
        fiber.nonlinear_coefficient = s.nonlinear_coefficient_per_w_m;
        if let Some(b2) = s.beta2_ps2_per_km {
            fiber.beta_coefficients[1] = b2 * PS * PS / 1e3;
        }
        if let Some(b3) = s.beta3_ps3_per_km {
            fiber.beta_coefficients[2] = b3 * PS * PS * PS / 1e3;
        }
        fiber
    }

    pub fn source_pump(&self) -> PumpPulse {
        let s = &self.source;
        PumpPulse::gaussian(
            angular_frequency_from_wavelength(s.pump_wavelength_nm * NM),
            s.pump_duration_ps * PS,
            s.pump_peak_power_w,
        )
    }

    pub fn filters(&self) -> (BandpassFilter, BandpassFilter) {
        let s = &self.source;
        let make = |nm: f64| BandpassFilter {
            center_frequency: angular_frequency_from_wavelength(nm * NM),
            fwhm: angular_bandwidth_from_wavelength(nm * NM, s.filter_fwhm_nm * NM),
            shape_order: s.filter_shape_order,
        };
        (make(s.signal_filter_nm), make(s.idler_filter_nm))
    }

    pub fn bsfwm_fiber(&self) -> Result<FiberSpec, CliError> {
        let b = &self.bsfwm;
        let sg = self.signal_grid()?;
        let ig = self.idler_grid()?;
        Ok(nzdsf_fiber(
            b.fiber_length_m,
            b.nonlinear_coefficient_per_w_m,
            b.walkoff_ps * PS,
            sg.center_frequency(),
            ig.center_frequency(),
            angular_frequency_from_wavelength(b.pump1_wavelength_nm * NM),
            angular_frequency_from_wavelength(b.pump2_wavelength_nm * NM),
        )?)
    }

    /// Pump pair carrying `total_power` split equally.
    pub fn pumps(&self, total_power: f64) -> Result<BsfwmPumpPair, CliError> {
        let b = &self.bsfwm;
        let w1 = angular_frequency_from_wavelength(b.pump1_wavelength_nm * NM);
        let w2 = angular_frequency_from_wavelength(b.pump2_wavelength_nm * NM);
        let make = |w: f64| match b.pump_shape {
            PumpShape::Gaussian => PumpPulse::gaussian(w, b.pump_duration_ps * PS, total_power / 2.0),
            PumpShape::Continuous => PumpPulse::continuous(w, total_power / 2.0),
        };
        let mut p1 = make(w1);
        p1.phase = b.pump_phase_rad;
        let mut pair = BsfwmPumpPair {
            pump1: p1,
            pump2: make(w2),
            relative_timing: 0.0,
        };
        if b.tune_pumps {
            let sg = self.signal_grid()?;
            let ig = self.idler_grid()?;
            pair = pair.tuned_to(sg.center_frequency(), ig.center_frequency());
        }
        pair.validate()?;
        Ok(pair)
    }

    pub fn propagation(&self) -> PropagationConfig {
        let b = &self.bsfwm;
        PropagationConfig {
            n_steps: b.n_steps,
            include_pump_dispersion: b.include_pump_dispersion,
            include_xpm: b.include_xpm,
            sideband_walkoff: b.sideband_walkoff,
        }
    }

    pub fn basis_size(&self) -> usize {
        self.bsfwm.basis_size.unwrap_or(self.grid.n_points)
    }

    pub fn hom_delays(&self) -> Vec<f64> {
        let s = &self.scan;
        linspace(s.hom_start_ps, s.hom_stop_ps, s.hom_points).into_iter().map(|d| d * PS).collect()
    }

    pub fn scan_delays(&self) -> Vec<f64> {
        let s = &self.scan;
        linspace(s.delay_start_ps, s.delay_stop_ps, s.delay_points).into_iter().map(|d| d * PS).collect()
    }
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|j| a + (b - a) * j as f64 / (n - 1) as f64).collect(),
    }
}
