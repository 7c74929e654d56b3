//! Multi-way fixed-effects absorption by alternating projections, followed
//! by least squares on the demeaned regressors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DidError;
use crate::linalg::spd_solve;

pub const DEMEAN_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 10_000;

/// Group labels per observation, one vector per fixed-effect dimension.
#[derive(Debug, Clone)]
pub struct Demeaner {
    dims: Vec<Vec<usize>>,
    counts: Vec<Vec<f64>>,
}

impl Demeaner {
    pub fn new(dims: Vec<Vec<usize>>) -> Self {
        let counts = dims
            .iter()
            .map(|labels| {
                let g = labels.iter().copied().max().map_or(0, |m| m + 1);
                let mut c = vec![0.0; g];
                labels.iter().for_each(|&l| c[l] += 1.0);
                c
            })
            .collect();
        Self { dims, counts }
    }

    fn group_means(&self, d: usize, v: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.counts[d].len()];
        for (l, x) in self.dims[d].iter().zip(v) {
            sums[*l] += x;
        }
        sums.iter().zip(&self.counts[d]).map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 }).collect()
    }

    /// Largest absolute group mean across all dimensions.
    pub fn max_group_mean(&self, v: &[f64]) -> f64 {
        (0..self.dims.len())
            .flat_map(|d| self.group_means(d, v))
            .fold(0.0_f64, |a, m| a.max(m.abs()))
    }

    /// Sweeps until every group mean is below `tol * max(1, max|v|)`.
    /// Returns the number of sweeps and the final max group mean.
    pub fn demean(&self, v: &mut [f64], tol: f64, max_sweeps: usize) -> Result<(usize, f64), DidError> {
        let scale = v.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
        let target = tol * scale;
        let mut residual = self.max_group_mean(v);
        let mut sweeps = 0;
        while residual >= target {
            if sweeps == max_sweeps {
                return Err(DidError::NonConvergence { sweeps, residual });
            }
            for d in 0..self.dims.len() {
                let means = self.group_means(d, v);
                for (x, l) in v.iter_mut().zip(&self.dims[d]) {
                    *x -= means[*l];
                }
            }
            sweeps += 1;
            residual = self.max_group_mean(v);
        }
        Ok((sweeps, residual))
    }

    pub fn n_groups(&self) -> usize {
        self.counts.iter().map(|c| c.iter().filter(|&&n| n > 0.0).count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectsSolution {
    pub coefficients: BTreeMap<String, f64>,
    pub demeaning_iterations: usize,
    pub demeaning_residual: f64,
    pub dof: i64,
    /// Regressors dropped because they vanish after demeaning.
    pub dropped: Vec<String>,
    /// Residuals of the demeaned regression, in input order.
    pub residuals: Vec<f64>,
    /// Demeaned regressors that were kept, in coefficient-name order.
    pub demeaned_regressors: BTreeMap<String, Vec<f64>>,
}

/// Least squares of `y` on `regressors` after absorbing the fixed effects in
/// `demeaner`.
pub fn solve_fixed_effects(
    y: &[f64],
    regressors: &[(String, Vec<f64>)],
    demeaner: &Demeaner,
) -> Result<FixedEffectsSolution, DidError> {
    let n = y.len();
    let mut y_dm = y.to_vec();
    let (mut iterations, mut residual) = demeaner.demean(&mut y_dm, DEMEAN_TOL, MAX_SWEEPS)?;

    let mut kept: Vec<(String, Vec<f64>)> = Vec::new();
    let mut dropped = Vec::new();
    for (name, col) in regressors {
        let raw_norm = col.iter().map(|v| v * v).sum::<f64>();
        let mut z = col.clone();
        let (it, res) = demeaner.demean(&mut z, DEMEAN_TOL, MAX_SWEEPS)?;
        iterations = iterations.max(it);
        residual = residual.max(res);
        let norm = z.iter().map(|v| v * v).sum::<f64>();
        if raw_norm == 0.0 || norm <= 1e-12 * raw_norm {
            dropped.push(name.clone());
        } else {
            kept.push((name.clone(), z));
        }
    }

    let k = kept.len();
    let x = DMatrix::from_fn(n, k, |i, j| kept[j].1[i]);
    let yv = DVector::from_column_slice(&y_dm);
    let beta = if k == 0 {
        DVector::zeros(0)
    } else {
        spd_solve(&x.tr_mul(&x), &x.tr_mul(&yv))
            .ok_or_else(|| DidError::Degenerate("interaction columns are collinear after demeaning".into()))?
    };
    let fitted = &x * &beta;
    let residuals: Vec<f64> = y_dm.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let dof = n as i64 - k as i64 - demeaner.n_groups() as i64 + (demeaner.dims.len() as i64 - 1).max(0);

    Ok(FixedEffectsSolution {
        coefficients: kept.iter().map(|(name, _)| name.clone()).zip(beta.iter().copied()).collect(),
        demeaning_iterations: iterations,
        demeaning_residual: residual,
        dof,
        dropped,
        residuals,
        demeaned_regressors: kept.into_iter().collect(),
    })
}
