use std::f64::consts::PI;

use freqnoon_core::analysis::{fit_hom_dip, fit_sinusoid};
use freqnoon_core::bsfwm::{build_green, BsfwmPumpPair, PropagationConfig};
use freqnoon_core::interferometer::{hom_scan, noon_scan, single_photon_scan};
use freqnoon_core::source::{
    apply_filters, asymmetry, schmidt_decompose, sfwm_jsa, BandpassFilter, FiberSpec, JointSpectralAmplitude,
    PumpPulse, SchmidtDecomposition,
};
use freqnoon_core::spectral::{
    angular_bandwidth_from_wavelength, angular_frequency_from_wavelength, hg_mode, make_grid, Band, FrequencyGrid,
    HermiteGaussianSpec,
};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

const THZ: f64 = 2.0 * PI * 1e12;

fn grids(n: usize) -> (FrequencyGrid, FrequencyGrid) {
    (make_grid(236.45 * THZ, 0.8 * THZ, n).unwrap(), make_grid(235.85 * THZ, 0.8 * THZ, n).unwrap())
}

fn filtered_source(length: f64, n: usize) -> JointSpectralAmplitude {
    let (sg, ig) = grids(n);
    let fiber = FiberSpec::smf28(length, 1269.5e-9);
    let pump = PumpPulse::gaussian(angular_frequency_from_wavelength(1269.5e-9), 100e-12, 1.0);
    let jsa = sfwm_jsa(&fiber, &pump, &sg, &ig).unwrap().normalize().unwrap();
    let filter = |nm: f64| {
        BandpassFilter::gaussian(
            angular_frequency_from_wavelength(nm * 1e-9),
            angular_bandwidth_from_wavelength(nm * 1e-9, 0.7e-9),
        )
    };
    apply_filters(&jsa, &filter(1267.89), &filter(1271.11)).unwrap()
}

/// Schmidt number from the eigenvalues of the reduced density matrix
/// `ρ = M Mᵀ` of a real sampled JSA.
fn eigen_schmidt_number(jsa: &JointSpectralAmplitude) -> f64 {
    let (ns, ni) = jsa.values.dim();
    let m = DMatrix::from_fn(ns, ni, |a, b| jsa.values[[a, b]].re);
    let rho = &m * m.transpose();
    let lambda = SymmetricEigen::new(rho).eigenvalues;
    let total: f64 = lambda.iter().sum();
    total * total / lambda.iter().map(|l| l * l).sum::<f64>()
}

#[test]
fn double_gaussian_schmidt_number_matches_eigen_oracle() {
    let (sg, ig) = grids(128);
    for (a, b) in [(0.05, 0.05), (0.02, 0.1), (0.08, 0.02)] {
        let (a, b) = (a * THZ, b * THZ);
        let jsa = JointSpectralAmplitude::from_fn(sg.clone(), ig.clone(), |x, y| {
            let amp = (-(x + y).powi(2) / (2.0 * a * a) - (x - y).powi(2) / (2.0 * b * b)).exp();
            Complex64::new(amp, 0.0)
        })
        .normalize()
        .unwrap();
        let sd = schmidt_decompose(&jsa, 0.0).unwrap();
        let oracle = eigen_schmidt_number(&jsa);
        let closed_form = 0.5 * (a / b + b / a);
        assert!((sd.schmidt_number() - oracle).abs() < 1e-8 * oracle, "{} vs {oracle}", sd.schmidt_number());
        assert!((sd.schmidt_number() - closed_form).abs() < 1e-6 * closed_form);
    }
}

/// Exchange asymmetry of the intensity, computed as a matrix expression.
fn oracle_asymmetry(jsa: &JointSpectralAmplitude) -> f64 {
    let (ns, ni) = jsa.values.dim();
    let m = DMatrix::from_fn(ns, ni, |a, b| jsa.values[[a, b]].norm_sqr());
    (&m - m.transpose()).abs().sum() / m.sum()
}

#[test]
fn longer_source_fiber_is_more_asymmetric() {
    let (short_jsa, long_jsa) = (filtered_source(50.0, 256), filtered_source(200.0, 256));
    let short = asymmetry(&short_jsa).unwrap();
    let long = asymmetry(&long_jsa).unwrap();
    assert!((short - oracle_asymmetry(&short_jsa)).abs() < 1e-12);
    assert!((long - oracle_asymmetry(&long_jsa)).abs() < 1e-12);
    assert!(short < long);
    assert!((short - 0.057_598_427_789_727_64).abs() < 1e-9, "{short}");
    assert!((long - 0.675_727_798_866_333_5).abs() < 1e-9, "{long}");
}

#[test]
fn idler_delay_leaves_schmidt_weights() {
    let jsa = filtered_source(50.0, 128);
    let a = schmidt_decompose(&jsa, 1e-6).unwrap();
    let b = schmidt_decompose(&jsa.with_idler_delay(2.3e-12), 1e-6).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.amplitudes.iter().zip(&b.amplitudes) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn leading_schmidt_weight_is_grid_converged() {
    let coarse = schmidt_decompose(&filtered_source(50.0, 256), 1e-4).unwrap();
    let fine = schmidt_decompose(&filtered_source(50.0, 512), 1e-4).unwrap();
    assert!((coarse.amplitudes[0] - fine.amplitudes[0]).abs() < 1e-6);
    assert!((coarse.schmidt_number() - fine.schmidt_number()).abs() < 1e-3 * fine.schmidt_number());
}

/// An identical Gaussian photon in each band through the simulated
/// continuous-pump splitter reproduces the single-mode interferometer.
#[test]
fn ideal_source_through_simulated_splitter() {
    let (sg, ig) = grids(128);
    let gamma = 1.51e-3;
    let length = 100.0;
    let power = PI / 4.0 / (gamma * length);
    let pumps = BsfwmPumpPair::continuous(power, 0.3).tuned_to(sg.center_frequency(), ig.center_frequency());
    let fiber = FiberSpec::dispersionless(length, gamma, sg.center_frequency());
    let green = build_green(&sg, &ig, &pumps, &fiber, 128, 29e-12, &PropagationConfig::ideal(100)).unwrap();
    let mode = |g: &FrequencyGrid, band| {
        hg_mode(HermiteGaussianSpec { order: 0, characteristic_time: 4e-12 }, g, band).unwrap()
    };
    let sd = SchmidtDecomposition::single_mode(mode(&sg, Band::Signal), mode(&ig, Band::Idler)).unwrap();

    let delays: Vec<f64> = (0..121).map(|j| (j as f64 - 60.0) * 0.25e-12).collect();
    let hom = hom_scan(&sd, &green, &delays).unwrap();
    let x: Vec<f64> = delays.iter().map(|d| d * 1e12).collect();
    let dip = fit_hom_dip(&x, &hom.p_si).unwrap();
    assert!(dip.visibility.unwrap() > 0.999);
    assert!(hom.p_si[60] < 1e-6);

    let dt2: Vec<f64> = (0..120).map(|j| j as f64 * 0.03e-12).collect();
    let noon = noon_scan(&sd, &green, &green, 0.0, &dt2, 0.0).unwrap();
    let single = single_photon_scan(&sd, &green, &green, &dt2, 0.0).unwrap();
    let x: Vec<f64> = dt2.iter().map(|d| d * 1e12).collect();
    let noon_fit = fit_sinusoid(&x, &noon.p_ss).unwrap();
    let single_fit = fit_sinusoid(&x, &single.p_ss).unwrap();
    let noon_period = noon_fit.period.unwrap();
    let single_period = single_fit.period.unwrap();
    assert!((noon_period - 1.0 / 1.2).abs() < 1e-4, "{noon_period}");
    assert!((single_period - 1.0 / 0.6).abs() < 1e-4, "{single_period}");
    assert!(noon_fit.visibility.unwrap() > 0.999);
    assert!(single_fit.visibility.unwrap() > 0.999);
    assert!(noon.max_total_deviation() < 1e-6);
}
