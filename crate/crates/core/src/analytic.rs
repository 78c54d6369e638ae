//! Single-frequency-mode model of the frequency beam splitter and of the
//! two-stage interferometer.
//!
//! Two matrix conventions appear here. [`fbs_matrix`] is the Heisenberg-picture
//! map of annihilation operators, `a_out = M a_in`. Creation operators of the
//! input map onto output creation operators through the transpose,
//! `a_k,in† → Σ_j M_jk a_j,out†`; [`compose_interferometer`] and
//! [`two_photon_probs`] work in that creation-operator form, with rows indexed
//! by the input mode (signal first).

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SPEED_OF_LIGHT;

pub type Mat2 = [[Complex64; 2]; 2];

/// Coupling strength `gL` (with `g = γP`) and pump phase difference `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbsSetting {
    pub gl: f64,
    pub pump_phase: f64,
}

impl FbsSetting {
    pub fn new(gl: f64, pump_phase: f64) -> Self {
        Self { gl, pump_phase }
    }

    /// The balanced splitter, `gL = π/4`.
    pub fn balanced(pump_phase: f64) -> Self {
        Self::new(PI / 4.0, pump_phase)
    }

    /// Probability of staying in the input band, `cos²(gL)`.
    pub fn transmittance(&self) -> f64 {
        self.gl.cos().powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferometerSetting {
    pub stage1: FbsSetting,
    pub stage2: FbsSetting,
    /// Relative phase `Δφ = 2πΔf L/c` picked up between the stages.
    pub delta_phi: f64,
    /// `Δf = f_s − f_i` in Hz.
    pub delta_f: f64,
}

impl InterferometerSetting {
    /// Phase accumulated by the signal/idler frequency difference over an
    /// optical path difference `path` (m).
    pub fn phase_for_path(delta_f: f64, path: f64) -> Result<f64> {
        if delta_f == 0.0 {
            return Err(Error::InvalidArgument(
                "Δf must be nonzero to convert paths to phases".into(),
            ));
        }
        Ok(2.0 * PI * delta_f * path / SPEED_OF_LIGHT)
    }

    /// Path difference producing `delta_phi`.
    pub fn path_for_phase(&self) -> Result<f64> {
        if self.delta_f == 0.0 {
            return Err(Error::InvalidArgument(
                "Δf must be nonzero to convert phases to paths".into(),
            ));
        }
        Ok(self.delta_phi * SPEED_OF_LIGHT / (2.0 * PI * self.delta_f))
    }
}

/// Fock amplitudes of `|2,0⟩`, `|0,2⟩` and `|1,1⟩` (signal, idler).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPhotonOutput {
    pub amp_20: Complex64,
    pub amp_02: Complex64,
    pub amp_11: Complex64,
}

impl TwoPhotonOutput {
    pub fn p20(&self) -> f64 {
        self.amp_20.norm_sqr()
    }

    pub fn p02(&self) -> f64 {
        self.amp_02.norm_sqr()
    }

    pub fn p11(&self) -> f64 {
        self.amp_11.norm_sqr()
    }

    pub fn total(&self) -> f64 {
        self.p20() + self.p02() + self.p11()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinglePhotonOutput {
    pub amp_s: Complex64,
    pub amp_i: Complex64,
}

impl SinglePhotonOutput {
    pub fn p_signal(&self) -> f64 {
        self.amp_s.norm_sqr()
    }

    pub fn p_idler(&self) -> f64 {
        self.amp_i.norm_sqr()
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

pub fn fbs_matrix(setting: FbsSetting) -> Mat2 {
    let (s, co) = setting.gl.sin_cos();
    let i = Complex64::i();
    [
        [c(co, 0.0), i * cis(setting.pump_phase) * s],
        [i * cis(-setting.pump_phase) * s, c(co, 0.0)],
    ]
}

pub fn transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            *cell = a[r][0] * b[0][k] + a[r][1] * b[1][k];
        }
    }
    out
}

/// Largest entry of `|M†M − I|`.
pub fn unitarity_defect(m: &Mat2) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..2 {
        for k in 0..2 {
            let v = m[0][r].conj() * m[0][k] + m[1][r].conj() * m[1][k];
            let target = if r == k { 1.0 } else { 0.0 };
            worst = worst.max((v - target).norm());
        }
    }
    worst
}

/// Creation-operator map of splitter 1, inter-stage phase, splitter 2, with
/// the global phase dropped.
pub fn compose_interferometer(setting: &InterferometerSetting) -> Mat2 {
    let first = transpose(&fbs_matrix(setting.stage1));
    let second = transpose(&fbs_matrix(setting.stage2));
    let phase = [
        [c(1.0, 0.0), c(0.0, 0.0)],
        [c(0.0, 0.0), cis(setting.delta_phi)],
    ];
    matmul(&matmul(&first, &phase), &second)
}

/// One signal and one idler photon through a single splitter.
pub fn hom_output(setting: FbsSetting) -> TwoPhotonOutput {
    let (s, co) = setting.gl.sin_cos();
    let i = Complex64::i();
    TwoPhotonOutput {
        amp_20: i * cis(setting.pump_phase) * SQRT_2 * co * s,
        amp_02: i * cis(-setting.pump_phase) * SQRT_2 * co * s,
        amp_11: c(co * co - s * s, 0.0),
    }
}

/// Two balanced splitters separated by the relative phase `delta_phi`.
pub fn noon_output(delta_phi: f64, pump_phase: f64) -> TwoPhotonOutput {
    let s = delta_phi.sin();
    TwoPhotonOutput {
        amp_20: cis(delta_phi + pump_phase) * FRAC_1_SQRT_2 * s,
        amp_02: -cis(delta_phi - pump_phase) * FRAC_1_SQRT_2 * s,
        amp_11: -cis(delta_phi) * delta_phi.cos(),
    }
}

/// A lone signal photon through two balanced splitters.
pub fn single_output(delta_phi: f64, pump_phase: f64) -> SinglePhotonOutput {
    let half = 0.5 * delta_phi;
    let i = Complex64::i();
    SinglePhotonOutput {
        amp_s: -i * cis(half) * half.sin(),
        amp_i: i * cis(half - pump_phase) * half.cos(),
    }
}

/// Expands `(W_s·a†)(W_i·a†)|0⟩` for a creation-operator matrix `W` whose
/// rows are the signal and idler inputs.
pub fn two_photon_probs(matrix: &Mat2) -> Result<TwoPhotonOutput> {
    let defect = unitarity_defect(matrix);
    if defect > 1e-9 {
        return Err(Error::NonUnitary(defect));
    }
    let [[ss, si], [is, ii]] = *matrix;
    Ok(TwoPhotonOutput {
        amp_20: SQRT_2 * ss * is,
        amp_02: SQRT_2 * si * ii,
        amp_11: ss * ii + si * is,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn sweep(n: usize, lo: f64, hi: f64) -> impl Iterator<Item = f64> {
        (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
    }

    #[test]
    fn fbs_identity_and_balanced() {
        let m = fbs_matrix(FbsSetting::new(0.0, 0.7));
        assert!(close(m[0][0], c(1.0, 0.0), 1e-15));
        assert!(close(m[0][1], c(0.0, 0.0), 1e-15));
        let h = FRAC_1_SQRT_2;
        let m = fbs_matrix(FbsSetting::balanced(0.0));
        let expected = [[c(h, 0.0), c(0.0, h)], [c(0.0, h), c(h, 0.0)]];
        for r in 0..2 {
            for k in 0..2 {
                assert!(close(m[r][k], expected[r][k], 1e-15));
            }
        }
    }

    #[test]
    fn fbs_unitary_everywhere() {
        for gl in sweep(41, -3.0, 3.0) {
            for phi in sweep(9, -PI, PI) {
                assert!(unitarity_defect(&fbs_matrix(FbsSetting::new(gl, phi))) < 1e-15);
            }
        }
    }

    #[test]
    fn balanced_composition_matches_closed_form() {
        for dphi in sweep(25, -PI, 2.0 * PI) {
            for phi in [0.0, 0.4, -2.2] {
                let setting = InterferometerSetting {
                    stage1: FbsSetting::balanced(phi),
                    stage2: FbsSetting::balanced(phi),
                    delta_phi: dphi,
                    delta_f: 600e9,
                };
                let m = compose_interferometer(&setting);
                let e = cis(dphi);
                let i = Complex64::i();
                let expected = [
                    [0.5 * (1.0 - e), 0.5 * i * cis(-phi) * (1.0 + e)],
                    [0.5 * i * cis(phi) * (1.0 + e), 0.5 * (e - 1.0)],
                ];
                for r in 0..2 {
                    for k in 0..2 {
                        assert!(close(m[r][k], expected[r][k], 1e-14));
                    }
                }
            }
        }
    }

    #[test]
    fn in_phase_stages_translate_fully() {
        let setting = InterferometerSetting {
            stage1: FbsSetting::balanced(0.3),
            stage2: FbsSetting::balanced(0.3),
            delta_phi: 0.0,
            delta_f: 600e9,
        };
        let m = compose_interferometer(&setting);
        assert!((m[0][1].norm() - 1.0).abs() < 1e-15);
        assert!((m[1][0].norm() - 1.0).abs() < 1e-15);
        assert!(m[0][0].norm() < 1e-15);
    }

    #[test]
    fn idle_second_stage_leaves_first_stage_and_phase() {
        let setting = InterferometerSetting {
            stage1: FbsSetting::balanced(0.0),
            stage2: FbsSetting::new(0.0, 0.0),
            delta_phi: 1.1,
            delta_f: 600e9,
        };
        let m = compose_interferometer(&setting);
        let first = transpose(&fbs_matrix(setting.stage1));
        assert!(close(m[0][0], first[0][0], 1e-15));
        assert!(close(m[0][1], first[0][1] * cis(1.1), 1e-15));
    }

    #[test]
    fn hom_reference_points() {
        let out = hom_output(FbsSetting::balanced(0.0));
        assert!((out.p20() - 0.5).abs() < 1e-15);
        assert!((out.p02() - 0.5).abs() < 1e-15);
        assert!(out.p11() < 1e-30);
        assert!((hom_output(FbsSetting::new(0.0, 0.0)).p11() - 1.0).abs() < 1e-15);
    }

    /// Brute-force expansion: apply the creation-operator map to each photon,
    /// collect the coefficients of every ordered output pair and fold them
    /// into Fock amplitudes with the bosonic √2 for doubly occupied modes.
    fn brute_force(w: &Mat2) -> [f64; 3] {
        let mut coeff = [[Complex64::new(0.0, 0.0); 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                coeff[a][b] += w[0][a] * w[1][b];
            }
        }
        let p20 = 2.0 * coeff[0][0].norm_sqr();
        let p02 = 2.0 * coeff[1][1].norm_sqr();
        let p11 = (coeff[0][1] + coeff[1][0]).norm_sqr();
        [p20, p02, p11]
    }

    #[test]
    fn hom_eighth_turn_matches_brute_force() {
        let setting = FbsSetting::new(PI / 8.0, 0.9);
        let out = hom_output(setting);
        let [p20, p02, p11] = brute_force(&transpose(&fbs_matrix(setting)));
        assert!((p20 - 0.25).abs() < 1e-15 && (out.p20() - p20).abs() < 1e-15);
        assert!((p02 - 0.25).abs() < 1e-15 && (out.p02() - p02).abs() < 1e-15);
        assert!((p11 - 0.5).abs() < 1e-15 && (out.p11() - p11).abs() < 1e-15);
    }

    #[test]
    fn noon_reference_points() {
        assert!((noon_output(0.0, 0.2).p11() - 1.0).abs() < 1e-15);
        let q = noon_output(PI / 2.0, 0.2);
        assert!((q.p20() - 0.5).abs() < 1e-15 && (q.p02() - 0.5).abs() < 1e-15);
        assert!(q.p11() < 1e-30);
        assert!((noon_output(PI / 4.0, 0.0).p11() - 0.5).abs() < 1e-15);
        // Period π in Δφ.
        for d in sweep(17, 0.0, PI) {
            assert!((noon_output(d, 0.0).p11() - noon_output(d + PI, 0.0).p11()).abs() < 1e-14);
        }
    }

    #[test]
    fn single_reference_points() {
        assert!((single_output(0.0, 0.0).p_idler() - 1.0).abs() < 1e-15);
        assert!((single_output(PI, 0.0).p_signal() - 1.0).abs() < 1e-15);
        let h = single_output(PI / 2.0, 1.0);
        assert!((h.p_signal() - 0.5).abs() < 1e-15 && (h.p_idler() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_photon_probs_special_matrices() {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let id = [[one, zero], [zero, one]];
        assert!((two_photon_probs(&id).unwrap().p11() - 1.0).abs() < 1e-15);
        let i = Complex64::i();
        let swap = [[zero, i], [i, zero]];
        assert!((two_photon_probs(&swap).unwrap().p11() - 1.0).abs() < 1e-15);
        let bad = [[one, one], [zero, one]];
        assert!(matches!(two_photon_probs(&bad), Err(Error::NonUnitary(_))));
    }

    #[test]
    fn two_photon_probs_reproduces_noon_sweep() {
        for dphi in sweep(100, -PI, PI) {
            let phi = 0.37;
            let setting = InterferometerSetting {
                stage1: FbsSetting::balanced(phi),
                stage2: FbsSetting::balanced(phi),
                delta_phi: dphi,
                delta_f: 600e9,
            };
            let via_matrix = two_photon_probs(&compose_interferometer(&setting)).unwrap();
            let closed = noon_output(dphi, phi);
            assert!(close(via_matrix.amp_20, closed.amp_20, 1e-14));
            assert!(close(via_matrix.amp_02, closed.amp_02, 1e-14));
            assert!(close(via_matrix.amp_11, closed.amp_11, 1e-14));
        }
    }

    #[test]
    fn path_phase_conversion() {
        let p = InterferometerSetting::phase_for_path(600e9, SPEED_OF_LIGHT / 600e9).unwrap();
        assert!((p - 2.0 * PI).abs() < 1e-12);
        assert!(InterferometerSetting::phase_for_path(0.0, 1.0).is_err());
    }
}
