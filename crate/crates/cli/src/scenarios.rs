//! The named end-to-end scenarios.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use freqnoon_core::analysis::{
    fisher_information, fit_hom_dip, fit_sinusoid, fit_splitting_curve, harmonic_distortion, max_depletion_power,
    raw_visibility, single_photon_bound, subtract_accidentals, supersensitivity, FitResult,
};
use freqnoon_core::bsfwm::{build_green, propagate, splitting_ratio, GreenFunction};
use freqnoon_core::interferometer::{
    converged_truncation, delay_to_mm, hom_dip_position, hom_scan, noon_scan, single_photon_scan, CoincidenceTrace,
};
use freqnoon_core::source::{
    apply_filters, asymmetry, jsi, schmidt_decompose, sfwm_jsa, JointSpectralAmplitude, SchmidtDecomposition,
};
use freqnoon_core::spectral::{inner_product, Band, SpectralAmplitude};
use freqnoon_core::Error;
use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{linspace, FitKind, Provenance, ScenarioConfig};
use crate::error::CliError;
use crate::output::{
    emit_trace, parse_csv, write_columns, write_complex_matrix, write_json, write_real_matrix,
};

const PS: f64 = 1e-12;
const THZ: f64 = 2.0 * std::f64::consts::PI * 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scenario {
    Jsa,
    Schmidt,
    Green,
    SplittingRatio,
    HomScan,
    NoonScan,
    SingleScan,
    Fisher,
    Fit,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Jsa => "jsa",
            Scenario::Schmidt => "schmidt",
            Scenario::Green => "green",
            Scenario::SplittingRatio => "splitting-ratio",
            Scenario::HomScan => "hom-scan",
            Scenario::NoonScan => "noon-scan",
            Scenario::SingleScan => "single-scan",
            Scenario::Fisher => "fisher",
            Scenario::Fit => "fit",
        }
    }
}

/// Ordered summary values of one scenario run plus the files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scenario: Scenario,
    pub entries: Vec<(String, Value)>,
    pub files: Vec<PathBuf>,
}

impl Report {
    fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            entries: Vec::new(),
            files: Vec::new(),
        }
    }

    fn push(&mut self, key: &str, value: impl Into<Value>) {
        self.entries.push((key.to_string(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(Value::as_f64)
    }

    /// Two aligned columns, one entry per line.
    pub fn table(&self) -> String {
        let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = format!("scenario: {}\n", self.scenario.name());
        for (k, v) in &self.entries {
            let shown = match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => match n.as_f64() {
                    Some(x) if n.is_f64() => format_number(x),
                    _ => n.to_string(),
                },
                other => other.to_string(),
            };
            out.push_str(&format!("  {k:<width$}  {shown}\n"));
        }
        out
    }

    fn summary_map(&self) -> Map<String, Value> {
        self.entries.iter().cloned().collect()
    }
}

fn format_number(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-3..1e5).contains(&a) {
        format!("{x:.6}")
    } else {
        format!("{x:.4e}")
    }
}

fn cached<T>(cell: &OnceLock<Arc<T>>, make: impl FnOnce() -> Result<T, CliError>) -> Result<Arc<T>, CliError> {
    if let Some(v) = cell.get() {
        return Ok(v.clone());
    }
    let v = Arc::new(make()?);
    Ok(cell.get_or_init(|| v).clone())
}

/// A validated configuration with lazily computed, reusable intermediates.
pub struct Session {
    pub config: ScenarioConfig,
    pub provenance: Provenance,
    pub out_dir: PathBuf,
    raw_jsa: OnceLock<Arc<JointSpectralAmplitude>>,
    jsa: OnceLock<Arc<JointSpectralAmplitude>>,
    schmidt: OnceLock<Arc<SchmidtDecomposition>>,
    greens: Mutex<Vec<(u64, Arc<GreenFunction>)>>,
}

impl Session {
    pub fn new(config: ScenarioConfig, provenance: Provenance, out_dir: PathBuf) -> Self {
        Self {
            config,
            provenance,
            out_dir,
            raw_jsa: OnceLock::new(),
            jsa: OnceLock::new(),
            schmidt: OnceLock::new(),
            greens: Mutex::new(Vec::new()),
        }
    }

    /// Configuration snapshot carried in every artifact header.
    pub fn snapshot(&self, scenario: Scenario) -> Value {
        json!({
            "scenario": scenario.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "provenance": self.provenance,
            "config": self.config,
        })
    }

    /// Normalized, unfiltered pair-generation JSA.
    pub fn raw_jsa(&self) -> Result<Arc<JointSpectralAmplitude>, CliError> {
        cached(&self.raw_jsa, || {
            let c = &self.config;
            let jsa = sfwm_jsa(&c.source_fiber(), &c.source_pump(), &c.signal_grid()?, &c.idler_grid()?)?;
            Ok(jsa.normalize()?)
        })
    }

    /// JSA after the band-pass filters.
    pub fn jsa(&self) -> Result<Arc<JointSpectralAmplitude>, CliError> {
        cached(&self.jsa, || {
            let (fs, fi) = self.config.filters();
            Ok(apply_filters(&*self.raw_jsa()?, &fs, &fi)?)
        })
    }

    pub fn schmidt(&self) -> Result<Arc<SchmidtDecomposition>, CliError> {
        cached(&self.schmidt, || Ok(schmidt_decompose(&*self.jsa()?, self.config.source.schmidt_threshold)?))
    }

    /// Green function of one stage at total pump power `power` (W).
    pub fn green(&self, power: f64) -> Result<Arc<GreenFunction>, CliError> {
        let key = power.to_bits();
        if let Some((_, g)) = self.greens.lock().expect("green cache").iter().find(|(k, _)| *k == key) {
            return Ok(g.clone());
        }
        let c = &self.config;
        let g = Arc::new(build_green(
            &c.signal_grid()?,
            &c.idler_grid()?,
            &c.pumps(power)?,
            &c.bsfwm_fiber()?,
            c.basis_size(),
            c.bsfwm.basis_tau_ps * PS,
            &c.propagation(),
        )?);
        self.greens.lock().expect("green cache").push((key, g.clone()));
        Ok(g)
    }

    /// Reuses the Green functions of `other` when both sessions share the
    /// grid and every BS-FWM setting other than the stage powers. Returns
    /// whether the caches were merged.
    pub fn adopt_greens(&self, other: &Session) -> bool {
        let without_powers = |c: &ScenarioConfig| {
            let mut b = c.bsfwm.clone();
            b.stage1_power_w = 0.0;
            b.stage2_power_w = 0.0;
            b
        };
        if self.config.grid != other.config.grid || without_powers(&self.config) != without_powers(&other.config) {
            return false;
        }
        let theirs = other.greens.lock().expect("green cache").clone();
        let mut mine = self.greens.lock().expect("green cache");
        for (key, g) in theirs {
            if !mine.iter().any(|(k, _)| *k == key) {
                mine.push((key, g));
            }
        }
        true
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn run(&self, scenario: Scenario) -> Result<Report, CliError> {
        let mut report = match scenario {
            Scenario::Jsa => self.run_jsa(),
            Scenario::Schmidt => self.run_schmidt(),
            Scenario::Green => self.run_green(),
            Scenario::SplittingRatio => self.run_splitting(),
            Scenario::HomScan => self.run_hom(),
            Scenario::NoonScan => self.run_noon(),
            Scenario::SingleScan => self.run_single(),
            Scenario::Fisher => self.run_fisher(),
            Scenario::Fit => self.run_fit(),
        }?;
        let summary = self.path("summary.json");
        let files: Vec<String> = report
            .files
            .iter()
            .map(|p| p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()))
            .collect();
        write_json(
            &summary,
            &json!({
                "snapshot": self.snapshot(scenario),
                "summary": report.summary_map(),
                "files": files,
            }),
        )?;
        report.files.push(summary);
        Ok(report)
    }

    fn run_jsa(&self) -> Result<Report, CliError> {
        let mut r = Report::new(Scenario::Jsa);
        let raw = self.raw_jsa()?;
        let filtered = self.jsa()?;
        let header = self.snapshot(Scenario::Jsa);
        let intensity = jsi(&filtered);
        let dw = filtered.signal_grid.spacing();
        let signal_marginal: Vec<f64> = intensity.rows().into_iter().map(|row| row.sum() * dw).collect();
        let idler_marginal: Vec<f64> = intensity.columns().into_iter().map(|col| col.sum() * dw).collect();
        let offsets: Vec<f64> = filtered.signal_grid.offsets().iter().map(|w| w / THZ).collect();
        r.push("n_points", filtered.signal_grid.n_points());
        r.push("asymmetry_unfiltered", asymmetry(&raw)?);
        r.push("asymmetry_filtered", asymmetry(&filtered)?);
        r.push("filtered_norm", filtered.norm_sqr());
        let path = self.path("marginals.csv");
        write_columns(
            &path,
            &header,
            &["offset_thz", "signal_marginal", "idler_marginal"],
            &[&offsets, &signal_marginal, &idler_marginal],
        )?;
        r.files.push(path);
        if self.config.output.jsi_csv {
            let path = self.path("jsi.csv");
            write_real_matrix(&path, &header, &intensity)?;
            r.files.push(path);
        }
        Ok(r)
    }

    fn run_schmidt(&self) -> Result<Report, CliError> {
        let mut r = Report::new(Scenario::Schmidt);
        let sd = self.schmidt()?;
        let header = self.snapshot(Scenario::Schmidt);
        let k: Vec<f64> = (0..sd.len()).map(|k| k as f64).collect();
        let weights: Vec<f64> = sd.amplitudes.iter().map(|a| a * a).collect();
        let cumulative: Vec<f64> = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let path = self.path("schmidt.csv");
        write_columns(&path, &header, &["k", "r_k", "r_k_sq", "cumulative"], &[&k, &sd.amplitudes, &weights, &cumulative])?;
        r.files.push(path);

        let shown = sd.len().min(4);
        let grid = &sd.signal_modes[0].grid;
        let offsets: Vec<f64> = grid.offsets().iter().map(|w| w / THZ).collect();
        let mut names = vec!["offset_thz".to_string()];
        let mut cols = vec![offsets];
        for m in 0..shown {
            names.push(format!("signal_{m}_abs2"));
            cols.push(sd.signal_modes[m].values.iter().map(|v| v.norm_sqr()).collect());
            names.push(format!("idler_{m}_abs2"));
            cols.push(sd.idler_modes[m].values.iter().map(|v| v.norm_sqr()).collect());
        }
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let path = self.path("schmidt_modes.csv");
        write_columns(&path, &header, &name_refs, &col_refs)?;
        r.files.push(path);

        r.push("kept_modes", sd.len());
        r.push("schmidt_number", sd.schmidt_number());
        r.push("r0", sd.amplitudes[0]);
        r.push("kept_weight", cumulative.last().copied().unwrap_or(0.0));
        r.push("truncation_residual", sd.truncation_residual);
        r.push("orthonormality_error", orthonormality_error(&sd)?);
        Ok(r)
    }

    fn filter_probe(&self) -> Result<SpectralAmplitude, CliError> {
        let grid = self.config.signal_grid()?;
        let (fs, _) = self.config.filters();
        let probe = SpectralAmplitude::from_fn(Band::Signal, grid.clone(), |w| {
            Complex64::new(fs.amplitude(grid.center_frequency() + w), 0.0)
        });
        Ok(probe.normalized()?)
    }

    fn run_green(&self) -> Result<Report, CliError> {
        let mut r = Report::new(Scenario::Green);
        let power = self.config.bsfwm.stage1_power_w;
        let g = self.green(power)?;
        let ratio = splitting_ratio(&g, &self.filter_probe()?)?;
        r.push("pump_power_w", power);
        r.push("n_points", g.n_points());
        r.push("unitarity_defect", g.unitarity_defect());
        r.push("basis_residual", g.basis_residual);
        r.push("probe_transmission", ratio.transmission);
        r.push("probe_reflection", ratio.reflection);
        r.push("probe_leakage", ratio.leakage);
        r.push("warnings", g.warnings.len());
        let meta = json!({
            "snapshot": self.snapshot(Scenario::Green),
            "layout": "entry [i][j] couples input sample i of the first band to output sample j of the second; out_y = G^T in * spacing",
            "units": "s/rad",
            "signal_center_rad_per_s": g.signal_grid.center_frequency(),
            "idler_center_rad_per_s": g.idler_grid.center_frequency(),
            "span_rad_per_s": g.signal_grid.span(),
            "spacing_rad_per_s": g.spacing(),
            "n_points": g.n_points(),
            "pump_power_w": g.pump_power,
            "basis_residual": g.basis_residual,
            "warnings": g.warnings,
        });
        let path = self.path("green.json");
        write_json(&path, &meta)?;
        r.files.push(path);
        if self.config.output.kernel_csv {
            let header = self.snapshot(Scenario::Green);
            for (name, m) in [("ss", &g.g_ss), ("si", &g.g_si), ("is", &g.g_is), ("ii", &g.g_ii)] {
                let path = self.path(&format!("green_{name}.csv"));
                write_complex_matrix(&path, &header, m)?;
                r.files.push(path);
            }
        }
        Ok(r)
    }

    fn run_splitting(&self) -> Result<Report, CliError> {
        let mut r = Report::new(Scenario::SplittingRatio);
        let c = &self.config;
        let probe = self.filter_probe()?;
        let idler_grid = c.idler_grid()?;
        let fiber = c.bsfwm_fiber()?;
        let prop = c.propagation();
        let measure = |power: f64| -> Result<[f64; 3], CliError> {
            let (s, i) = propagate(&probe, &idler_grid, &c.pumps(power)?, &fiber, &prop)?;
            let t = s.norm_sqr();
            let refl = i.norm_sqr();
            Ok([t, refl, 1.0 - t - refl])
        };
        let powers = linspace(0.0, c.scan.splitting_max_power_w, c.scan.splitting_points);
        let mut cols = [Vec::new(), Vec::new(), Vec::new()];
        for &p in &powers {
            for (col, v) in cols.iter_mut().zip(measure(p)?) {
                col.push(v);
            }
        }
        let (fit_t, fit_r, fit_l) = fit_splitting_curve(&powers, &cols[0], &cols[1], &cols[2])?;
        let fitted: Vec<f64> = powers
            .iter()
            .map(|&p| {
                let (a, b, cc) = (fit_t.params[0], fit_t.params[1], fit_t.params[2]);
                a * (b * p).cos().powi(2) + cc * p
            })
            .collect();
        let path = self.path("splitting.csv");
        write_columns(
            &path,
            &self.snapshot(Scenario::SplittingRatio),
            &["power_w", "transmission", "reflection", "leakage", "fit_transmission"],
            &[&powers, &cols[0], &cols[1], &cols[2], &fitted],
        )?;
        r.files.push(path);
        let stage = measure(c.bsfwm.stage1_power_w)?;
        let gl = c.bsfwm.nonlinear_coefficient_per_w_m * c.bsfwm.fiber_length_m * c.bsfwm.stage1_power_w;
        r.push("points", powers.len());
        r.push("fit_a", fit_t.params[0]);
        r.push("fit_b_per_w", fit_t.params[1]);
        r.push("fit_c_per_w", fit_t.params[2]);
        r.push("fit_residual_rms", fit_t.residual_rms);
        r.push("reflection_fit_residual_rms", fit_r.residual_rms);
        r.push("leakage_slope_per_w", fit_l.params[0]);
        if let Some(p) = max_depletion_power(&fit_t) {
            r.push("max_depletion_power_w", p);
        }
        r.push("stage1_power_w", c.bsfwm.stage1_power_w);
        r.push("stage1_gl", gl);
        r.push("stage1_transmission", stage[0]);
        r.push("stage1_leakage", stage[2]);
        Ok(r)
    }

    /// Runs `scan` over growing truncations until the fitted visibilities
    /// settle, and returns the truncation, trace and fits of the last run.
    fn guarded<F>(&self, scan: F) -> Result<(usize, CoincidenceTrace, Vec<TraceFit>), CliError>
    where
        F: Fn(&SchmidtDecomposition) -> Result<(CoincidenceTrace, Vec<TraceFit>), CliError>,
    {
        let a = &self.config.analysis;
        let sd = self.schmidt()?;
        let mut last = None;
        let mut failure = None;
        let evaluate = |s: &SchmidtDecomposition| -> freqnoon_core::Result<Vec<f64>> {
            match scan(s) {
                Ok((trace, fits)) => {
                    let v = fits.iter().map(|f| f.visibility).collect();
                    last = Some((s.len(), trace, fits));
                    Ok(v)
                }
                Err(e) => {
                    failure = Some(e);
                    Err(Error::InvalidArgument("scan failed".into()))
                }
            }
        };
        let result = if a.truncation_guard {
            converged_truncation(&sd, a.schmidt_modes, a.truncation_step, a.truncation_tolerance, evaluate).map(|_| ())
        } else {
            let mut evaluate = evaluate;
            evaluate(&sd.truncated(a.schmidt_modes)).map(|_| ())
        };
        if let Err(e) = result {
            return Err(failure.unwrap_or(CliError::Physics(e)));
        }
        let (k, trace, fits) = last.expect("at least one evaluation");
        Ok((k, trace, fits))
    }

    fn write_trace(&self, scenario: Scenario, name: &str, trace: &CoincidenceTrace, fits: &[TraceFit], k: usize) -> Result<Vec<PathBuf>, CliError> {
        let header = self.snapshot(scenario);
        let csv = self.path(&format!("{name}.csv"));
        emit_trace(trace, header.clone(), &csv)?;
        let sidecar = self.path(&format!("{name}.json"));
        write_json(
            &sidecar,
            &json!({
                "snapshot": header,
                "kind": trace.kind,
                "double_pass": trace.double_pass,
                "schmidt_modes": k,
                "parameters": trace.parameters,
                "max_probability_deviation": trace.max_total_deviation(),
                "fits": fits,
            }),
        )?;
        Ok(vec![csv, sidecar])
    }

    fn run_hom(&self) -> Result<Report, CliError> {
        let mut r = Report::new(Scenario::HomScan);
        let green = self.green(self.config.bsfwm.stage1_power_w)?;
        let delays = self.config.hom_delays();
        let fit = self.config.analysis.fit_traces;
        let (k, trace, fits) = self.guarded(|s| {
            let trace = hom_scan(s, &green, &delays)?;
            let f = dip_fit(&trace, fit)?;
            Ok((trace, vec![f]))
        })?;
        r.files = self.write_trace(Scenario::HomScan, "hom", &trace, &fits, k)?;
        let f = &fits[0];
        r.push("schmidt_modes", k);
        r.push("hom_visibility", f.visibility);
        r.push("dip_position_ps", hom_dip_position(&trace) / PS);
        if let Some(fit) = &f.fit {
            r.push("fit_center_ps", fit.param("center").unwrap_or(f64::NAN));
            r.push("fit_width_ps", fit.param("width").unwrap_or(f64::NAN));
            r.push("fit_baseline", fit.param("baseline").unwrap_or(f64::NAN));
            r.push("fit_residual_rms", fit.residual_rms);
            r.push("dip_depth", fit.raw_visibility.unwrap_or(f64::NAN));
        }
        r.push("min_p_si", trace.p_si.iter().copied().fold(f64::INFINITY, f64::min));
        r.push("max_probability_deviation", trace.max_total_deviation());
        r.push("flags", f.flags.join("; "));
        Ok(r)
    }

    /// First-stage idler delay: configured, or the HOM dip of the starting truncation.
    pub fn dt1(&self) -> Result<f64, CliError> {
        if let Some(d) = self.config.scan.dt1_ps {
            return Ok(d * PS);
        }
        let green = self.green(self.config.bsfwm.stage1_power_w)?;
        let sd = self.schmidt()?.truncated(self.config.analysis.schmidt_modes);
        Ok(hom_dip_position(&hom_scan(&sd, &green, &self.config.hom_delays())?))
    }

    fn fringe_report(&self, r: &mut Report, trace: &CoincidenceTrace, fits: &[TraceFit]) {
        for (band, f) in ["signal", "idler"].iter().zip(fits) {
            r.push(&format!("visibility_{band}"), f.visibility);
            if let Some(fit) = &f.fit {
                if let Some(p) = fit.period {
                    r.push(&format!("period_{band}_ps"), p);
                    r.push(&format!("period_{band}_mm"), delay_to_mm(p * PS, trace.double_pass));
                }
                r.push(&format!("visibility_{band}_uncertainty"), fit.visibility_uncertainty.unwrap_or(f64::NAN));
                r.push(&format!("raw_visibility_{band}"), fit.raw_visibility.unwrap_or(f64::NAN));
            }
            r.push(&format!("harmonic_distortion_{band}"), f.harmonic_distortion);
        }
        r.push("max_probability_deviation", trace.max_total_deviation());
        let flags: Vec<String> = fits.iter().flat_map(|f| f.flags.iter().cloned()).collect();
        r.push("flags", flags.join("; "));
    }

    fn run_noon(&self) -> Result<Report, CliError> {
        let mut r = Report::new(Scenario::NoonScan);
        let c = &self.config;
        let g1 = self.green(c.bsfwm.stage1_power_w)?;
        let g2 = self.green(c.bsfwm.stage2_power_w)?;
        let dt1 = self.dt1()?;
        let delays = c.scan_delays();
        let comp = c.scan.idler_compensation_ps * PS;
        let fit = c.analysis.fit_traces;
        let (k, trace, fits) = self.guarded(|s| {
            let trace = noon_scan(s, &g1, &g2, dt1, &delays, comp)?.with_double_pass(c.scan.double_pass);
            let fits = vec![fringe_fit(&trace, &trace.p_ss, fit)?, fringe_fit(&trace, &trace.p_ii, fit)?];
            Ok((trace, fits))
        })?;
        r.files = self.write_trace(Scenario::NoonScan, "noon", &trace, &fits, k)?;
        r.push("schmidt_modes", k);
        r.push("dt1_ps", dt1 / PS);
        r.push("idler_compensation_ps", c.scan.idler_compensation_ps);
        self.fringe_report(&mut r, &trace, &fits);
        Ok(r)
    }

    fn run_single(&self) -> Result<Report, CliError> {
        let mut r = Report::new(Scenario::SingleScan);
        let c = &self.config;
        let g1 = self.green(c.bsfwm.stage1_power_w)?;
        let g2 = self.green(c.bsfwm.stage2_power_w)?;
        let delays = c.scan_delays();
        let comp = c.scan.idler_compensation_ps * PS;
        let fit = c.analysis.fit_traces;
        let (k, trace, fits) = self.guarded(|s| {
            let trace = single_photon_scan(s, &g1, &g2, &delays, comp)?.with_double_pass(c.scan.double_pass);
            let fits = vec![fringe_fit(&trace, &trace.p_ss, fit)?, fringe_fit(&trace, &trace.p_ii, fit)?];
            Ok((trace, fits))
        })?;
        r.files = self.write_trace(Scenario::SingleScan, "single", &trace, &fits, k)?;
        r.push("schmidt_modes", k);
        r.push("idler_compensation_ps", c.scan.idler_compensation_ps);
        self.fringe_report(&mut r, &trace, &fits);
        Ok(r)
    }

    fn run_fisher(&self) -> Result<Report, CliError> {
        let mut r = Report::new(Scenario::Fisher);
        let f = &self.config.fisher;
        let report = fisher_information(f.n_photons, f.visibility, f.system_efficiency, f.generation_efficiency, f.repetitions)?;
        let single = single_photon_bound(f.single_visibility, f.single_system_efficiency, f.generation_efficiency)?;
        let verdict = supersensitivity(&report, single);
        r.push("fisher_information", report.fisher_information);
        r.push("phase_lower_bound", report.phase_lower_bound);
        r.push("single_photon_bound", single);
        r.push("supersensitivity", if verdict.attainable { "attainable" } else { "no supersensitivity" });
        let path = self.path("fisher.json");
        write_json(
            &path,
            &json!({ "snapshot": self.snapshot(Scenario::Fisher), "report": report, "supersensitivity": verdict }),
        )?;
        r.files.push(path);
        Ok(r)
    }

    fn run_fit(&self) -> Result<Report, CliError> {
        let mut r = Report::new(Scenario::Fit);
        let f = &self.config.fit;
        let input = f
            .input
            .as_deref()
            .ok_or_else(|| CliError::Config("fit.input must name a CSV file".into()))?;
        let text = std::fs::read_to_string(input).map_err(|e| CliError::Io(format!("{}: {e}", input.display())))?;
        let table = parse_csv(&text, &input.display().to_string())?;
        let column = |name: &str| {
            table
                .column(name)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| CliError::Config(format!("{}: no column '{name}'", input.display())))
        };
        let x = column(&f.x_column)?;
        let mut y = column(&f.y_column)?;
        if let Some(acc) = &f.accidentals_column {
            let net = subtract_accidentals(&y, &column(acc)?)?;
            r.push("clamped_points", net.clamped.iter().filter(|c| **c).count());
            y = net.counts;
        }
        let fit = match f.model {
            FitKind::Sinusoid => fit_sinusoid(&x, &y)?,
            FitKind::HomDip => fit_hom_dip(&x, &y)?,
        };
        r.push("points", x.len());
        for (name, (v, u)) in fit.param_names.iter().zip(fit.params.iter().zip(&fit.param_uncertainties)) {
            r.push(name, *v);
            r.push(&format!("{name}_uncertainty"), *u);
        }
        if let Some(v) = fit.visibility {
            r.push("visibility", v);
        }
        if let Some(p) = fit.period {
            r.push("period", p);
        }
        r.push("residual_rms", fit.residual_rms);
        r.push("flags", fit.flags.join("; "));
        let path = self.path("fit.json");
        write_json(&path, &json!({ "snapshot": self.snapshot(Scenario::Fit), "fit": fit }))?;
        r.files.push(path);
        Ok(r)
    }
}

/// Fit of one trace column with the visibility used for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceFit {
    pub visibility: f64,
    pub harmonic_distortion: f64,
    pub fit: Option<FitResult>,
    pub flags: Vec<String>,
}

fn fringe_fit(trace: &CoincidenceTrace, y: &[f64], fit: bool) -> Result<TraceFit, CliError> {
    let distortion = harmonic_distortion(y);
    if !fit {
        return Ok(TraceFit {
            visibility: raw_visibility(y).unwrap_or(0.0),
            harmonic_distortion: distortion,
            fit: None,
            flags: vec!["unfitted: raw visibility".into()],
        });
    }
    let x: Vec<f64> = trace.delays.iter().map(|d| d / PS).collect();
    let result = fit_sinusoid(&x, y)?;
    Ok(TraceFit {
        visibility: result.visibility.unwrap_or(0.0),
        harmonic_distortion: distortion,
        flags: result.flags.clone(),
        fit: Some(result),
    })
}

fn dip_depth(trace: &CoincidenceTrace) -> f64 {
    let n = trace.len();
    let edge = (n / 5).max(1);
    let base = trace.p_si[..edge].iter().chain(&trace.p_si[n - edge..]).sum::<f64>() / (2 * edge) as f64;
    let min = trace.p_si.iter().copied().fold(f64::INFINITY, f64::min);
    if base > 0.0 {
        1.0 - min / base
    } else {
        0.0
    }
}

fn dip_fit(trace: &CoincidenceTrace, fit: bool) -> Result<TraceFit, CliError> {
    if !fit {
        return Ok(TraceFit {
            visibility: dip_depth(trace),
            harmonic_distortion: f64::NAN,
            fit: None,
            flags: vec!["unfitted: dip depth against the scan edges".into()],
        });
    }
    let x: Vec<f64> = trace.delays.iter().map(|d| d / PS).collect();
    match fit_hom_dip(&x, &trace.p_si).and_then(|full| refit_dip_core(&x, &trace.p_si, full)) {
        Ok(result) => Ok(TraceFit {
            visibility: result.visibility.unwrap_or(0.0),
            harmonic_distortion: f64::NAN,
            flags: result.flags.clone(),
            fit: Some(result),
        }),
        Err(Error::NoDip { min, baseline }) => Ok(TraceFit {
            visibility: 0.0,
            harmonic_distortion: f64::NAN,
            fit: None,
            flags: vec![format!("no dip: minimum {min:.4} against baseline {baseline:.4}")],
        }),
        Err(e) => Err(e.into()),
    }
}

/// Refits a dip whose full-range depth left `[0, 1]` using only the points
/// within one fitted width of the fitted centre.
fn refit_dip_core(x: &[f64], y: &[f64], full: FitResult) -> Result<FitResult, Error> {
    let raw = full.params[1];
    if (0.0..=1.0).contains(&raw) {
        return Ok(full);
    }
    let (center, width) = (full.params[2], full.params[3]);
    let (wx, wy): (Vec<f64>, Vec<f64>) =
        x.iter().zip(y).filter(|(&xj, _)| (xj - center).abs() <= width).map(|(&a, &b)| (a, b)).unzip();
    let Ok(mut core) = fit_hom_dip(&wx, &wy) else {
        return Ok(full);
    };
    if !(0.0..=1.0).contains(&core.params[1]) {
        return Ok(full);
    }
    core.raw_visibility = full.raw_visibility;
    core.flags.insert(
        0,
        format!("full-range dip depth {raw:.4} outside [0, 1]: refit within {width:.3} ps of {center:.3} ps"),
    );
    Ok(core)
}

/// `max |⟨u_j, u_k⟩ − δ_jk|` over the kept signal and idler modes.
fn orthonormality_error(sd: &SchmidtDecomposition) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for modes in [&sd.signal_modes, &sd.idler_modes] {
        let n = modes.len();
        let mut gram = Array2::<Complex64>::zeros((n, n));
        for j in 0..n {
            for k in j..n {
                let v = inner_product(&modes[j], &modes[k])?;
                gram[[j, k]] = v;
            }
        }
        for j in 0..n {
            for k in j..n {
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((gram[[j, k]] - target).norm());
            }
        }
    }
    Ok(worst)
}

/// Output directory: flag, then environment, then config, then a default.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, config: &ScenarioConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("freqnoon-out"))
}
