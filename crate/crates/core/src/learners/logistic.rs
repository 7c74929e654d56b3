use nalgebra::{DMatrix, DVector};

use super::{ModelParams, TrainingDiagnostics};
use crate::linalg::{center_columns, column_means, spd_solve};

/// Logistic function, kept strictly inside (0, 1).
pub(super) fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) };
    p.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn objective(xc: &DMatrix<f64>, y: &[f64], intercept: f64, beta: &DVector<f64>, lambda: f64) -> f64 {
    let eta = xc * beta;
    let n = y.len() as f64;
    let nll = eta.iter().zip(y).map(|(e, yi)| softplus(e + intercept) - yi * (e + intercept)).sum::<f64>() / n;
    nll + 0.5 * lambda * beta.norm_squared()
}

/// L2-penalized logistic regression by damped Newton with Armijo
/// backtracking. Features are centered internally so the unpenalized
/// intercept decouples from the slopes.
pub(super) fn fit_logistic(
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

    let share = (y.iter().sum::<f64>() / nf).clamp(1e-6, 1.0 - 1e-6);
    let mut b0 = (share / (1.0 - share)).ln();
    let mut beta = DVector::<f64>::zeros(p);
    let mut obj = objective(&xc, y, b0, &beta, lambda);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let eta = &xc * &beta;
        let probs: Vec<f64> = eta.iter().map(|e| sigmoid(e + b0)).collect();
        let resid = DVector::from_iterator(n, probs.iter().zip(y).map(|(pi, yi)| pi - yi));
        let w: Vec<f64> = probs.iter().map(|pi| pi * (1.0 - pi)).collect();

        // Gradient and Hessian over theta = (b0, beta).
        let mut grad = DVector::<f64>::zeros(p + 1);
        grad[0] = resid.sum() / nf;
        let gx = xc.tr_mul(&resid) / nf + &beta * lambda;
        grad.rows_mut(1, p).copy_from(&gx);

        let mut weighted = xc.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut hess = DMatrix::<f64>::zeros(p + 1, p + 1);
        hess[(0, 0)] = w.iter().sum::<f64>() / nf;
        let cross = weighted.row_sum() / nf;
        for j in 0..p {
            hess[(0, j + 1)] = cross[j];
            hess[(j + 1, 0)] = cross[j];
        }
        let xwx = xc.tr_mul(&weighted) / nf;
        hess.view_mut((1, 1), (p, p)).copy_from(&xwx);
        for j in 0..p {
            hess[(j + 1, j + 1)] += lambda;
        }

        if grad.amax() < tol {
            converged = true;
            break;
        }

        let step = match spd_solve(&hess, &grad) {
            Some(s) => s,
            None => {
                let jitter = 1e-8 * (0..=p).map(|j| hess[(j, j)].abs()).fold(1e-12, f64::max);
                let mut h = hess.clone();
                for j in 0..=p {
                    h[(j, j)] += jitter;
                }
                match spd_solve(&h, &grad) {
                    Some(s) => s,
                    None => grad.clone(),
                }
            }
        };

        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand_b0 = b0 - t * step[0];
            let cand_beta = &beta - step.rows(1, p) * t;
            let cand_obj = objective(&xc, y, cand_b0, &cand_beta, lambda);
            if cand_obj <= obj - 1e-4 * t * slope {
                b0 = cand_b0;
                beta = cand_beta;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let moved = t * step.amax();
        if !accepted || moved < tol {
            converged = accepted || grad.amax() < tol.sqrt();
            break;
        }
    }

    let intercept = b0 - means.iter().zip(beta.iter()).map(|(m, b)| m * b).sum::<f64>();
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("logistic: stopped after {iterations} Newton iterations without meeting tol={tol}"));
    }
    (
        ModelParams::Logistic { intercept, coefficients: beta.iter().copied().collect() },
        TrainingDiagnostics { iterations, objective: obj, converged, warnings },
    )
}

#[cfg(test)]
mod tests {
    use super::super::{fit, predict, LearnerSpec};
    use super::*;
    use crate::rng::SeededRng;

    fn overlapping(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = SeededRng::new(seed, 0);
        let x = DMatrix::from_fn(n, 3, |_, _| rng.normal());
        let y = (0..n)
            .map(|i| {
                let eta = 0.3 + 0.8 * x[(i, 0)] - 0.5 * x[(i, 2)];
                (rng.uniform() < sigmoid(eta)) as u8 as f64
            })
            .collect();
        (x, y)
    }

    #[test]
    fn separable_data_saturates_towards_treated_side() {
        let x = DMatrix::from_row_slice(8, 1, &[-4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0]);
        let y = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let m = fit(&LearnerSpec::logistic(0.0), &x, &y, 0).unwrap();
        let far = DMatrix::from_row_slice(1, 1, &[10.0]);
        let p = predict(&m, &far).unwrap()[0];
        assert!(p > 0.99 && p < 1.0, "p = {p}");
    }

    #[test]
    fn probabilities_stay_inside_unit_interval() {
        let (x, y) = overlapping(200, 1);
        let m = fit(&LearnerSpec::logistic(0.1), &x, &y, 0).unwrap();
        assert!(m.diagnostics.converged);
        assert!(predict(&m, &x).unwrap().iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let (x, y) = overlapping(300, 2);
        let lambda = 0.05;
        let m = fit(&LearnerSpec::logistic(lambda), &x, &y, 0).unwrap();
        let (b0, beta) = m.linear_parts().unwrap();
        let p = predict(&m, &x).unwrap();
        let n = y.len() as f64;
        let g0: f64 = p.iter().zip(&y).map(|(a, b)| a - b).sum::<f64>() / n;
        assert!(g0.abs() < 1e-9);
        for j in 0..3 {
            let g = (0..y.len()).map(|i| x[(i, j)] * (p[i] - y[i])).sum::<f64>() / n + lambda * beta[j];
            assert!(g.abs() < 1e-9, "coordinate {j}: {g}");
        }
        assert!(b0.is_finite());
    }

    #[test]
    fn shift_invariance_with_intercept() {
        let (x, y) = overlapping(250, 3);
        let mut shifted = x.clone();
        shifted.column_mut(1).add_scalar_mut(17.0);
        let a = predict(&fit(&LearnerSpec::logistic(0.0), &x, &y, 0).unwrap(), &x).unwrap();
        let b = predict(&fit(&LearnerSpec::logistic(0.0), &shifted, &y, 0).unwrap(), &shifted).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-8);
        }
    }
}
