use nalgebra::{DMatrix, DVector};

use super::{LearnerError, ModelParams, TrainingDiagnostics};
use crate::linalg::{center_columns, column_means, spd_solve};

pub(super) fn linear_predictor(x: &DMatrix<f64>, intercept: f64, coefficients: &[f64]) -> Vec<f64> {
    let beta = DVector::from_column_slice(coefficients);
    let eta = x * beta;
    eta.iter().map(|v| v + intercept).collect()
}

/// Ridge regression on centered data; the intercept is recovered afterwards
/// and never penalized. Objective reported: `||r||^2 + lambda ||beta||^2`.
pub(super) fn fit_ridge(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
) -> Result<(ModelParams, TrainingDiagnostics), LearnerError> {
    let n = x.nrows();
    let p = x.ncols();
    let means = column_means(x);
    let xc = center_columns(x, &means);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let mut gram = xc.tr_mul(&xc);
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let beta = if p == 0 { DVector::zeros(0) } else { spd_solve(&gram, &rhs).ok_or(LearnerError::SingularSystem)? };
    let intercept = y_mean - means.iter().zip(beta.iter()).map(|(m, b)| m * b).sum::<f64>();
    let resid = &yc - &xc * &beta;
    let objective = resid.norm_squared() + lambda * beta.norm_squared();
    Ok((
        ModelParams::Linear { intercept, coefficients: beta.iter().copied().collect() },
        TrainingDiagnostics { iterations: 1, objective, converged: true, warnings: vec![] },
    ))
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for
/// `(1 / 2n) ||y - b - X beta||^2 + lambda ||beta||_1`.
///
/// Stops when the largest coefficient change in a full sweep is below `tol`.
pub(super) fn fit_lasso(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> (ModelParams, TrainingDiagnostics) {
    let n = x.nrows();
    let p = x.ncols();
    let nf = n as f64;
    let means = column_means(x);
    let xc = center_columns(x, &means);
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let col_sq: Vec<f64> = xc.column_iter().map(|c| c.norm_squared() / nf).collect();
    let mut beta = vec![0.0; p];

    let mut iterations = 0;
    let mut converged = p == 0;
    while !converged && iterations < max_iter {
        iterations += 1;
        let mut max_change = 0.0_f64;
        for j in 0..p {
            if col_sq[j] <= 0.0 {
                continue;
            }
            let col = xc.column(j);
            let old = beta[j];
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            let delta = new - old;
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(col.iter()) {
                    *r -= a * delta;
                }
                beta[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        converged = max_change < tol;
    }

    let intercept = y_mean - means.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    let objective =
        resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * nf) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>();
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("lasso: reached max_iter={max_iter} without meeting tol={tol}"));
    }
    (
        ModelParams::Linear { intercept, coefficients: beta },
        TrainingDiagnostics { iterations, objective, converged, warnings },
    )
}
