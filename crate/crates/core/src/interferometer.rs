//! Two-photon and heralded single-photon interference through one or two
//! frequency-beam-splitter stages.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsfwm::GreenFunction;
use crate::error::{Error, Result};
use crate::source::SchmidtDecomposition;
use crate::spectral::{Band, FrequencyGrid, SpectralAmplitude, SPEED_OF_LIGHT};

/// Amplitudes after a stage, one column per Schmidt mode. The signal photon
/// occupies `a` (signal band) and `b` (idler band); the idler photon
/// occupies `c` (signal band) and `d` (idler band).
#[derive(Debug, Clone, PartialEq)]
pub struct StageAmplitudes {
    pub a: Array2<Complex64>,
    pub b: Array2<Complex64>,
    pub c: Array2<Complex64>,
    pub d: Array2<Complex64>,
    /// Normalized so that `Σ r_k² = 1`.
    pub schmidt_weights: Vec<f64>,
    pub signal_grid: FrequencyGrid,
    pub idler_grid: FrequencyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coincidences {
    pub p_si: f64,
    pub p_ss: f64,
    pub p_ii: f64,
}

impl Coincidences {
    pub fn total(&self) -> f64 {
        self.p_si + self.p_ss + self.p_ii
    }
}

impl StageAmplitudes {
    pub fn n_modes(&self) -> usize {
        self.schmidt_weights.len()
    }

    /// `(a_k, b_k, c_k, d_k)` as band-resolved amplitudes.
    pub fn mode(&self, k: usize) -> Result<[SpectralAmplitude; 4]> {
        let col = |m: &Array2<Complex64>| m.column(k).to_vec();
        Ok([
            SpectralAmplitude::new(Band::Signal, self.signal_grid.clone(), col(&self.a))?,
            SpectralAmplitude::new(Band::Idler, self.idler_grid.clone(), col(&self.b))?,
            SpectralAmplitude::new(Band::Signal, self.signal_grid.clone(), col(&self.c))?,
            SpectralAmplitude::new(Band::Idler, self.idler_grid.clone(), col(&self.d))?,
        ])
    }

    /// `Σ_k r_k² (‖a_k‖² + ‖b_k‖²)(‖c_k‖² + ‖d_k‖²)`
    pub fn conserved_norm(&self) -> f64 {
        let dw = self.signal_grid.spacing();
        let col_norm = |m: &Array2<Complex64>, k: usize| m.column(k).iter().map(|v| v.norm_sqr()).sum::<f64>() * dw;
        self.schmidt_weights
            .iter()
            .enumerate()
            .map(|(k, r)| r * r * (col_norm(&self.a, k) + col_norm(&self.b, k)) * (col_norm(&self.c, k) + col_norm(&self.d, k)))
            .sum()
    }
}

/// Multiplies every column by `exp[i(ω + ω₀)Δt]`.
fn delay_columns(grid: &FrequencyGrid, mut m: ArrayViewMut2<Complex64>, delay: f64) {
    if delay == 0.0 {
        return;
    }
    for (j, mut row) in m.axis_iter_mut(Axis(0)).enumerate() {
        let ph = Complex64::from_polar(1.0, grid.absolute(j) * delay);
        row.mapv_inplace(|v| v * ph);
    }
}

/// Target column count of one batched kernel product.
const BATCH_COLUMNS: usize = 256;

/// Number of delays stacked into one kernel product for `columns` inputs.
fn delays_per_batch(columns: usize) -> usize {
    BATCH_COLUMNS.div_ceil(columns.max(1))
}

/// Applies `green` from `band` to `inputs` delayed by each of `delays`,
/// as one stacked product. Returns the (signal, idler) outputs per delay.
fn apply_delayed(
    green: &GreenFunction,
    band: Band,
    inputs: &Array2<Complex64>,
    delays: &[f64],
) -> Result<Vec<(Array2<Complex64>, Array2<Complex64>)>> {
    let k = inputs.ncols();
    let grid = green.grid(band);
    let mut stacked = Array2::zeros((inputs.nrows(), k * delays.len()));
    for (j, &d) in delays.iter().enumerate() {
        let mut block = stacked.slice_mut(s![.., j * k..(j + 1) * k]);
        block.assign(inputs);
        delay_columns(grid, block, d);
    }
    let (out_s, out_i) = green.apply_batch(band, &stacked)?;
    Ok((0..delays.len())
        .map(|j| {
            let cols = s![.., j * k..(j + 1) * k];
            (out_s.slice(cols).to_owned(), out_i.slice(cols).to_owned())
        })
        .collect())
}

/// Evaluates `point` on batches of `delays` in parallel, keeping their order.
fn scan_batches<T: Send>(
    delays: &[f64],
    columns: usize,
    point: impl Fn(&[f64]) -> Result<Vec<T>> + Sync + Send,
) -> Result<Vec<T>> {
    let batches = delays.par_chunks(delays_per_batch(columns)).map(point).collect::<Result<Vec<_>>>()?;
    Ok(batches.into_iter().flatten().collect())
}

fn modes_matrix(modes: &[SpectralAmplitude]) -> Array2<Complex64> {
    let n = modes[0].values.len();
    Array2::from_shape_fn((n, modes.len()), |(j, k)| modes[k].values[j])
}

fn normalized_weights(schmidt: &SchmidtDecomposition) -> Result<Vec<f64>> {
    let total: f64 = schmidt.amplitudes.iter().map(|r| r * r).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroState("Schmidt decomposition has no weight".into()));
    }
    let s = total.sqrt();
    Ok(schmidt.amplitudes.iter().map(|r| r / s).collect())
}

fn check_grids(schmidt: &SchmidtDecomposition, green: &GreenFunction) -> Result<()> {
    let (f, g) = match (schmidt.signal_modes.first(), schmidt.idler_modes.first()) {
        (Some(f), Some(g)) => (f, g),
        _ => return Err(Error::ZeroState("no Schmidt modes".into())),
    };
    f.grid.check_same(&green.signal_grid, "signal modes vs green function")?;
    g.grid.check_same(&green.idler_grid, "idler modes vs green function")
}

/// Delays the idler photon by `dt1` and sends both photons through `green`.
pub fn first_stage(schmidt: &SchmidtDecomposition, green: &GreenFunction, dt1: f64) -> Result<StageAmplitudes> {
    check_grids(schmidt, green)?;
    let f = modes_matrix(&schmidt.signal_modes);
    let mut g = modes_matrix(&schmidt.idler_modes);
    delay_columns(&green.idler_grid, g.view_mut(), dt1);
    let (a, b) = green.apply_batch(Band::Signal, &f)?;
    let (c, d) = green.apply_batch(Band::Idler, &g)?;
    Ok(StageAmplitudes {
        a,
        b,
        c,
        d,
        schmidt_weights: normalized_weights(schmidt)?,
        signal_grid: green.signal_grid.clone(),
        idler_grid: green.idler_grid.clone(),
    })
}

/// Applies the delay line `dt2` to both bands, an extra delay
/// `idler_compensation` to the idler band only, then `green2`.
pub fn second_stage(
    stage: &StageAmplitudes,
    green2: &GreenFunction,
    dt2: f64,
    idler_compensation: f64,
) -> Result<StageAmplitudes> {
    let mut out = second_stages(stage, green2, &[dt2], idler_compensation)?;
    Ok(out.remove(0))
}

/// [`second_stage`] for each of `dt2_values`.
pub fn second_stages(
    stage: &StageAmplitudes,
    green2: &GreenFunction,
    dt2_values: &[f64],
    idler_compensation: f64,
) -> Result<Vec<StageAmplitudes>> {
    stage.signal_grid.check_same(&green2.signal_grid, "stage vs second green function")?;
    stage.idler_grid.check_same(&green2.idler_grid, "stage vs second green function")?;
    let k = stage.n_modes();
    // Signal-band inputs [a | c], idler-band inputs [b | d].
    let in_s = concatenate![Axis(1), stage.a, stage.c];
    let in_i = concatenate![Axis(1), stage.b, stage.d];
    let idler_delays: Vec<f64> = dt2_values.iter().map(|d| d + idler_compensation).collect();
    let from_s = apply_delayed(green2, Band::Signal, &in_s, dt2_values)?;
    let from_i = apply_delayed(green2, Band::Idler, &in_i, &idler_delays)?;
    Ok(from_s
        .into_iter()
        .zip(from_i)
        .map(|((ss, si), (is, ii))| {
            let out_s = ss + is;
            let out_i = si + ii;
            StageAmplitudes {
                a: out_s.slice(s![.., ..k]).to_owned(),
                c: out_s.slice(s![.., k..]).to_owned(),
                b: out_i.slice(s![.., ..k]).to_owned(),
                d: out_i.slice(s![.., k..]).to_owned(),
                schmidt_weights: stage.schmidt_weights.clone(),
                signal_grid: stage.signal_grid.clone(),
                idler_grid: stage.idler_grid.clone(),
            }
        })
        .collect())
}

/// `O[k′, k] = ⟨X_k′, Y_k⟩`
fn overlaps(x: &Array2<Complex64>, y: &Array2<Complex64>, dw: f64) -> Array2<Complex64> {
    x.t().mapv(|v| v.conj()).dot(y) * Complex64::new(dw, 0.0)
}

/// Time-averaged probabilities of one photon per band (`p_si`) and of both
/// photons in the signal (`p_ss`) or idler (`p_ii`) band. Each double
/// integral factorizes into products of single overlap integrals.
pub fn hom_coincidence(stage: &StageAmplitudes) -> Coincidences {
    let dw = stage.signal_grid.spacing();
    let o = |x: &Array2<Complex64>, y: &Array2<Complex64>| overlaps(x, y, dw);
    let (aa, cc, bb, dd) = (o(&stage.a, &stage.a), o(&stage.c, &stage.c), o(&stage.b, &stage.b), o(&stage.d, &stage.d));
    let (ac, ca, bd, db) = (o(&stage.a, &stage.c), o(&stage.c, &stage.a), o(&stage.b, &stage.d), o(&stage.d, &stage.b));
    let r = &stage.schmidt_weights;
    let k = r.len();
    let mut p = [Complex64::new(0.0, 0.0); 3];
    for kp in 0..k {
        for kk in 0..k {
            let w = r[kp] * r[kk];
            let idx = [kp, kk];
            p[0] += w * (aa[idx] * dd[idx] + ac[idx] * db[idx] + ca[idx] * bd[idx] + cc[idx] * bb[idx]);
            p[1] += w * (aa[idx] * cc[idx] + ac[idx] * ca[idx]);
            p[2] += w * (bb[idx] * dd[idx] + bd[idx] * db[idx]);
        }
    }
    Coincidences {
        p_si: p[0].re,
        p_ss: p[1].re,
        p_ii: p[2].re,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Hom,
    Noon,
    Single,
}

/// Probabilities over a delay scan. For heralded single-photon scans,
/// `p_ss` and `p_ii` hold the probabilities of finding the photon in the
/// signal and idler band and `p_si` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceTrace {
    pub kind: TraceKind,
    /// s
    pub delays: Vec<f64>,
    /// Delay-line travel in mm.
    pub delay_mm: Vec<f64>,
    pub double_pass: bool,
    pub p_si: Vec<f64>,
    pub p_ss: Vec<f64>,
    pub p_ii: Vec<f64>,
    pub parameters: BTreeMap<String, f64>,
}

/// Delay-line travel (mm) for a delay `dt` (s).
pub fn delay_to_mm(dt: f64, double_pass: bool) -> f64 {
    SPEED_OF_LIGHT * dt / if double_pass { 2.0 } else { 1.0 } * 1e3
}

impl CoincidenceTrace {
    fn new(kind: TraceKind, delays: &[f64], points: Vec<Coincidences>, double_pass: bool) -> Self {
        Self {
            kind,
            delays: delays.to_vec(),
            delay_mm: delays.iter().map(|&d| delay_to_mm(d, double_pass)).collect(),
            double_pass,
            p_si: points.iter().map(|p| p.p_si).collect(),
            p_ss: points.iter().map(|p| p.p_ss).collect(),
            p_ii: points.iter().map(|p| p.p_ii).collect(),
            parameters: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn with_double_pass(mut self, double_pass: bool) -> Self {
        self.double_pass = double_pass;
        self.delay_mm = self.delays.iter().map(|&d| delay_to_mm(d, double_pass)).collect();
        self
    }

    /// Largest deviation of the summed probabilities from one.
    pub fn max_total_deviation(&self) -> f64 {
        (0..self.len())
            .map(|j| (self.p_si[j] + self.p_ss[j] + self.p_ii[j] - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn nonempty(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("delay scan needs at least one value".into()));
    }
    Ok(())
}

pub fn hom_scan(schmidt: &SchmidtDecomposition, green: &GreenFunction, dt1_values: &[f64]) -> Result<CoincidenceTrace> {
    nonempty(dt1_values)?;
    check_grids(schmidt, green)?;
    let f = modes_matrix(&schmidt.signal_modes);
    let (a, b) = green.apply_batch(Band::Signal, &f)?;
    let g0 = modes_matrix(&schmidt.idler_modes);
    let weights = normalized_weights(schmidt)?;
    let points = scan_batches(dt1_values, g0.ncols(), |batch| {
        Ok(apply_delayed(green, Band::Idler, &g0, batch)?
            .into_iter()
            .map(|(c, d)| {
                hom_coincidence(&StageAmplitudes {
                    a: a.clone(),
                    b: b.clone(),
                    c,
                    d,
                    schmidt_weights: weights.clone(),
                    signal_grid: green.signal_grid.clone(),
                    idler_grid: green.idler_grid.clone(),
                })
            })
            .collect())
    })?;
    let mut trace = CoincidenceTrace::new(TraceKind::Hom, dt1_values, points, false);
    trace.parameters.insert("schmidt_modes".into(), schmidt.len() as f64);
    Ok(trace)
}

/// Delay of the deepest point of `p_si` in a HOM trace.
pub fn hom_dip_position(trace: &CoincidenceTrace) -> f64 {
    let j = (0..trace.len())
        .min_by(|&x, &y| trace.p_si[x].total_cmp(&trace.p_si[y]))
        .unwrap_or(0);
    trace.delays[j]
}

pub fn noon_scan(
    schmidt: &SchmidtDecomposition,
    green1: &GreenFunction,
    green2: &GreenFunction,
    dt1: f64,
    dt2_values: &[f64],
    idler_compensation: f64,
) -> Result<CoincidenceTrace> {
    nonempty(dt2_values)?;
    let stage = first_stage(schmidt, green1, dt1)?;
    let points = scan_batches(dt2_values, 2 * stage.n_modes(), |batch| {
        Ok(second_stages(&stage, green2, batch, idler_compensation)?.iter().map(hom_coincidence).collect())
    })?;
    let mut trace = CoincidenceTrace::new(TraceKind::Noon, dt2_values, points, true);
    trace.parameters.insert("dt1".into(), dt1);
    trace.parameters.insert("idler_compensation".into(), idler_compensation);
    trace.parameters.insert("schmidt_modes".into(), schmidt.len() as f64);
    Ok(trace)
}

/// Heralded scan: only the signal photon enters the interferometer.
pub fn single_photon_scan(
    schmidt: &SchmidtDecomposition,
    green1: &GreenFunction,
    green2: &GreenFunction,
    dt2_values: &[f64],
    idler_compensation: f64,
) -> Result<CoincidenceTrace> {
    nonempty(dt2_values)?;
    check_grids(schmidt, green1)?;
    let weights = normalized_weights(schmidt)?;
    let f = modes_matrix(&schmidt.signal_modes);
    let (a, b) = green1.apply_batch(Band::Signal, &f)?;
    let dw = green1.spacing();
    let weigh = |m: &Array2<Complex64>| -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(k, r)| r * r * m.column(k).iter().map(|v| v.norm_sqr()).sum::<f64>() * dw)
            .sum()
    };
    let points = scan_batches(dt2_values, a.ncols(), |batch| {
        let idler_delays: Vec<f64> = batch.iter().map(|d| d + idler_compensation).collect();
        let from_s = apply_delayed(green2, Band::Signal, &a, batch)?;
        let from_i = apply_delayed(green2, Band::Idler, &b, &idler_delays)?;
        Ok(from_s
            .into_iter()
            .zip(from_i)
            .map(|((ss, si), (is, ii))| Coincidences {
                p_si: 0.0,
                p_ss: weigh(&(ss + is)),
                p_ii: weigh(&(si + ii)),
            })
            .collect())
    })?;
    let mut trace = CoincidenceTrace::new(TraceKind::Single, dt2_values, points, true);
    trace.parameters.insert("idler_compensation".into(), idler_compensation);
    trace.parameters.insert("schmidt_modes".into(), schmidt.len() as f64);
    Ok(trace)
}

/// Grows the truncation from `start` in increments of `step` until one more
/// increment moves every value returned by `evaluate` by less than `tol`,
/// or all modes are used. Returns the larger truncation of the final pair
/// and its values.
pub fn converged_truncation(
    schmidt: &SchmidtDecomposition,
    start: usize,
    step: usize,
    tol: f64,
    mut evaluate: impl FnMut(&SchmidtDecomposition) -> Result<Vec<f64>>,
) -> Result<(usize, Vec<f64>)> {
    if start == 0 || step == 0 {
        return Err(Error::InvalidArgument("truncation start and step must be positive".into()));
    }
    let mut k = start.min(schmidt.len());
    let mut current = evaluate(&schmidt.truncated(k))?;
    loop {
        if k >= schmidt.len() {
            return Ok((k, current));
        }
        let next_k = (k + step).min(schmidt.len());
        let next = evaluate(&schmidt.truncated(next_k))?;
        let change = current.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < tol {
            return Ok((next_k, next));
        }
        k = next_k;
        current = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{noon_output, single_output};
    use crate::bsfwm::cw_analytic_green;
    use crate::spectral::{hg_mode, make_grid, HermiteGaussianSpec};
    use std::f64::consts::PI;

    const THZ: f64 = 2.0 * PI * 1e12;

    fn grids(n: usize) -> (FrequencyGrid, FrequencyGrid) {
        (
            make_grid(236.45 * THZ, 0.8 * THZ, n).unwrap(),
            make_grid(235.85 * THZ, 0.8 * THZ, n).unwrap(),
        )
    }

    fn rank_one(n: usize, tau: f64) -> SchmidtDecomposition {
        let (sg, ig) = grids(n);
        let spec = HermiteGaussianSpec { order: 0, characteristic_time: tau };
        SchmidtDecomposition::single_mode(
            hg_mode(spec, &sg, Band::Signal).unwrap(),
            hg_mode(spec, &ig, Band::Idler).unwrap(),
        )
        .unwrap()
    }

    /// Δφ accumulated by a common delay between the two carriers.
    fn carrier_phase(dt: f64) -> f64 {
        (236.45 - 235.85) * THZ * dt
    }

    #[test]
    fn identity_green_keeps_photons_apart() {
        let sd = rank_one(64, 3e-12);
        let (sg, ig) = grids(64);
        let id = GreenFunction::identity(&sg, &ig).unwrap();
        let st = first_stage(&sd, &id, 0.0).unwrap();
        let [a, b, c, d] = st.mode(0).unwrap();
        assert!(a.values.iter().zip(&sd.signal_modes[0].values).all(|(x, y)| (x - y).norm() < 1e-12));
        assert!(d.values.iter().zip(&sd.idler_modes[0].values).all(|(x, y)| (x - y).norm() < 1e-12));
        assert!(b.norm_sqr() == 0.0 && c.norm_sqr() == 0.0);
        let p = hom_coincidence(&st);
        assert!((p.p_si - 1.0).abs() < 1e-12 && p.p_ss.abs() < 1e-15 && p.p_ii.abs() < 1e-15);
    }

    #[test]
    fn balanced_stage_splits_evenly_and_bunches() {
        let sd = rank_one(64, 3e-12);
        let (sg, ig) = grids(64);
        let g = cw_analytic_green(PI / 4.0, 0.4, &sg, &ig).unwrap();
        let st = first_stage(&sd, &g, 0.0).unwrap();
        let [a, b, ..] = st.mode(0).unwrap();
        assert!((a.norm_sqr() - 0.5).abs() < 1e-12 && (b.norm_sqr() - 0.5).abs() < 1e-12);
        assert!((st.conserved_norm() - 1.0).abs() < 1e-12);
        let p = hom_coincidence(&st);
        assert!(p.p_si.abs() < 1e-4);
        assert!((p.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn long_delay_halves_coincidences() {
        let tau = 2e-12;
        let sd = rank_one(256, tau);
        let (sg, ig) = grids(256);
        let g = cw_analytic_green(PI / 4.0, 0.0, &sg, &ig).unwrap();
        let trace = hom_scan(&sd, &g, &[0.0, 20.0 * tau]).unwrap();
        let ratio = trace.p_si[1] / 1.0;
        let c2 = (PI / 4.0f64).cos().powi(2);
        assert!((ratio - (c2 * c2 + (1.0 - c2) * (1.0 - c2))).abs() < 1e-6, "{ratio}");
        let dip = 1.0 - trace.p_si[0] / trace.p_si[1];
        assert!(dip >= 0.999);
    }

    #[test]
    fn inverse_second_stage_restores_input() {
        let sd = rank_one(64, 3e-12);
        let (sg, ig) = grids(64);
        let g1 = cw_analytic_green(PI / 4.0, 0.2, &sg, &ig).unwrap();
        let g2 = cw_analytic_green(-PI / 4.0, 0.2, &sg, &ig).unwrap();
        let st = first_stage(&sd, &g1, 0.0).unwrap();
        let p = hom_coincidence(&second_stage(&st, &g2, 0.0, 0.0).unwrap());
        assert!((p.p_si - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scans_match_closed_forms() {
        let sd = rank_one(64, 3e-12);
        let (sg, ig) = grids(64);
        let phi = 0.9;
        let g = cw_analytic_green(PI / 4.0, phi, &sg, &ig).unwrap();
        let period = 1.0 / (2.0 * 0.6e12);
        let dt2: Vec<f64> = (0..100).map(|j| j as f64 * 3.0 * period / 99.0).collect();
        let noon = noon_scan(&sd, &g, &g, 0.0, &dt2, 0.0).unwrap();
        let single = single_photon_scan(&sd, &g, &g, &dt2, 0.0).unwrap();
        for (j, &t) in dt2.iter().enumerate() {
            let dphi = carrier_phase(t);
            let closed = noon_output(dphi, phi);
            assert!((noon.p_ss[j] - closed.p20()).abs() < 1e-4);
            assert!((noon.p_ii[j] - closed.p02()).abs() < 1e-4);
            assert!((noon.p_si[j] - closed.p11()).abs() < 1e-4);
            let one = single_output(dphi, phi);
            assert!((single.p_ss[j] - one.p_signal()).abs() < 1e-4);
            assert!((single.p_ii[j] - one.p_idler()).abs() < 1e-4);
        }
        assert!(noon.max_total_deviation() < 1e-10);
        assert!(single.max_total_deviation() < 1e-10);
    }

    #[test]
    fn weight_scaling_is_irrelevant() {
        let (sg, ig) = grids(64);
        let g = cw_analytic_green(0.7, 0.0, &sg, &ig).unwrap();
        let mut sd = rank_one(64, 3e-12);
        let mut other = rank_one(64, 1e-12);
        other.signal_modes[0] = hg_mode(HermiteGaussianSpec { order: 1, characteristic_time: 3e-12 }, &sg, Band::Signal).unwrap();
        other.idler_modes[0] = hg_mode(HermiteGaussianSpec { order: 1, characteristic_time: 3e-12 }, &ig, Band::Idler).unwrap();
        sd.amplitudes = vec![0.8, 0.6];
        sd.signal_modes.push(other.signal_modes[0].clone());
        sd.idler_modes.push(other.idler_modes[0].clone());
        let base = hom_scan(&sd, &g, &[0.0, 1e-12]).unwrap();
        let mut scaled = sd.clone();
        scaled.amplitudes.iter_mut().for_each(|r| *r *= 3.7);
        let again = hom_scan(&scaled, &g, &[0.0, 1e-12]).unwrap();
        for j in 0..2 {
            assert!((base.p_si[j] - again.p_si[j]).abs() < 1e-10);
            assert!((base.p_ss[j] - again.p_ss[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_empty_scans_and_grid_mismatch() {
        let sd = rank_one(64, 3e-12);
        let (sg, ig) = grids(32);
        let g = cw_analytic_green(0.7, 0.0, &sg, &ig).unwrap();
        assert!(matches!(hom_scan(&sd, &g, &[0.0]), Err(Error::GridMismatch(_))));
        let (sg, ig) = grids(64);
        let g = cw_analytic_green(0.7, 0.0, &sg, &ig).unwrap();
        assert!(matches!(hom_scan(&sd, &g, &[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn truncation_guard_stops_when_stable() {
        let mut sd = rank_one(32, 3e-12);
        for _ in 0..19 {
            sd.amplitudes.push(1e-3);
            sd.signal_modes.push(sd.signal_modes[0].clone());
            sd.idler_modes.push(sd.idler_modes[0].clone());
        }
        let (k, v) = converged_truncation(&sd, 1, 4, 1e-3, |t| Ok(vec![t.amplitudes.iter().map(|r| r * r).sum()])).unwrap();
        assert_eq!(k, 5);
        assert!((v[0] - 1.000004).abs() < 1e-12);
    }

    #[test]
    fn mm_conversion() {
        assert!((delay_to_mm(1.0 / 1.2e12, true) - 0.1249).abs() < 1e-4);
        assert!((delay_to_mm(1.0 / 0.6e12, true) - 0.2498).abs() < 1e-4);
    }
}
