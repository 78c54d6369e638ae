//! Damped least squares with Marquardt scaling and a central-difference Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    /// `(JᵀJ)⁻¹` at the optimum, if invertible.
    pub inverse_curvature: Option<DMatrix<f64>>,
}

pub(crate) struct LmOptions {
    pub max_iterations: usize,
    /// Per-parameter magnitude used for the finite-difference step when the
    /// parameter itself is near zero.
    pub typical: Vec<f64>,
}

fn residuals(model: &dyn Fn(&[f64], f64) -> f64, p: &[f64], x: &[f64], y: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().zip(y).map(|(&xi, &yi)| model(p, xi) - yi))
}

fn jacobian(model: &dyn Fn(&[f64], f64) -> f64, p: &[f64], x: &[f64], typical: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(x.len(), p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-6 * p[k].abs().max(typical[k]);
        q[k] = p[k] + h;
        let up: Vec<f64> = x.iter().map(|&xi| model(&q, xi)).collect();
        q[k] = p[k] - h;
        for (row, &xi) in x.iter().enumerate() {
            j[(row, k)] = (up[row] - model(&q, xi)) / (2.0 * h);
        }
        q[k] = p[k];
    }
    j
}

pub(crate) fn levenberg_marquardt(
    model: &dyn Fn(&[f64], f64) -> f64,
    x: &[f64],
    y: &[f64],
    start: &[f64],
    options: &LmOptions,
) -> Result<LmOutcome> {
    let mut p = start.to_vec();
    let mut r = residuals(model, &p, x, y);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::FitFailed("model is not finite at the starting point".into()));
    }
    let mut lambda = 1e-3;
    let mut stalled = 0;
    for _ in 0..options.max_iterations {
        let j = jacobian(model, &p, x, &options.typical);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..p.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let r_trial = residuals(model, &trial, x, y);
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial <= cost {
                let rel = (cost - c_trial) / cost.max(1e-300);
                let small_step = step
                    .iter()
                    .zip(&trial)
                    .zip(&options.typical)
                    .all(|((s, t), ty)| s.abs() <= 1e-12 * t.abs().max(*ty));
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                stalled = if rel < 1e-15 || small_step { stalled + 1 } else { 0 };
                break;
            }
            lambda *= 10.0;
            if lambda > 1e15 {
                break;
            }
        }
        if !improved || stalled >= 3 || cost == 0.0 {
            break;
        }
    }
    let j = jacobian(model, &p, x, &options.typical);
    let inverse_curvature = (j.transpose() * &j).try_inverse();
    Ok(LmOutcome {
        params: p,
        cost,
        inverse_curvature,
    })
}

/// One-sigma uncertainties `√diag(s²(JᵀJ)⁻¹)` with `s² = cost/(n − m)`.
pub(crate) fn uncertainties(outcome: &LmOutcome, n_points: usize) -> Vec<f64> {
    let m = outcome.params.len();
    let dof = n_points.saturating_sub(m).max(1) as f64;
    let s2 = outcome.cost / dof;
    match &outcome.inverse_curvature {
        Some(c) => (0..m).map(|k| (s2 * c[(k, k)]).max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; m],
    }
}
