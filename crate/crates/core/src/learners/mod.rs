//! Supervised learners for the nuisance functions `E[Y | X]` and `E[D | X]`.
//!
//! All learners fit an unpenalized intercept and are deterministic given
//! `(spec, data, seed)`. The seed only matters for boosted trees with row
//! subsampling switched on.

mod linear;
mod logistic;
mod trees;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use trees::{Tree, TreeNode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("singular system: the design is rank deficient and lambda is 0")]
    SingularSystem,
    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),
    #[error("logistic targets must be 0 or 1")]
    NonBinaryTarget,
    #[error("no training rows")]
    EmptyInput,
}

fn default_max_iter() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-8
}

fn default_min_leaf() -> usize {
    5
}

/// Learner family and hyperparameters.
///
/// Serialized with a `kind` tag, e.g. `{"kind":"ridge","lambda":1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Mean,
    Ridge {
        lambda: f64,
    },
    Lasso {
        lambda: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    #[serde(rename = "gbt", alias = "gradient_boosted_trees")]
    GradientBoostedTrees {
        n_trees: usize,
        max_depth: usize,
        learning_rate: f64,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
        /// Row fraction drawn without replacement per tree. Off when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subsample: Option<f64>,
    },
    Logistic {
        lambda: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

impl LearnerSpec {
    pub fn ridge(lambda: f64) -> Self {
        LearnerSpec::Ridge { lambda }
    }

    pub fn lasso(lambda: f64) -> Self {
        LearnerSpec::Lasso { lambda, max_iter: 10_000, tol: 1e-10 }
    }

    pub fn logistic(lambda: f64) -> Self {
        LearnerSpec::Logistic { lambda, max_iter: 100, tol: 1e-10 }
    }

    pub fn gbt(n_trees: usize, max_depth: usize, learning_rate: f64, min_leaf: usize) -> Self {
        LearnerSpec::GradientBoostedTrees { n_trees, max_depth, learning_rate, min_leaf, subsample: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Mean => "mean",
            LearnerSpec::Ridge { .. } => "ridge",
            LearnerSpec::Lasso { .. } => "lasso",
            LearnerSpec::GradientBoostedTrees { .. } => "gbt",
            LearnerSpec::Logistic { .. } => "logistic",
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |msg: String| Err(LearnerError::InvalidSpec(msg));
        match *self {
            LearnerSpec::Mean => Ok(()),
            LearnerSpec::Ridge { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return bad(format!("ridge lambda must be finite and >= 0, got {lambda}"));
                }
                Ok(())
            }
            LearnerSpec::Lasso { lambda, max_iter, tol } | LearnerSpec::Logistic { lambda, max_iter, tol } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return bad(format!("{} lambda must be finite and >= 0, got {lambda}", self.name()));
                }
                if max_iter == 0 {
                    return bad("max_iter must be positive".into());
                }
                if !(tol > 0.0) {
                    return bad(format!("tol must be positive, got {tol}"));
                }
                Ok(())
            }
            LearnerSpec::GradientBoostedTrees { n_trees, max_depth, learning_rate, min_leaf, subsample } => {
                if n_trees == 0 || max_depth == 0 || min_leaf == 0 {
                    return bad("n_trees, max_depth and min_leaf must be positive".into());
                }
                if !(learning_rate > 0.0 && learning_rate <= 1.0) {
                    return bad(format!("learning_rate must lie in (0, 1], got {learning_rate}"));
                }
                if let Some(s) = subsample {
                    if !(s > 0.0 && s <= 1.0) {
                        return bad(format!("subsample must lie in (0, 1], got {s}"));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Constant { value: f64 },
    Linear { intercept: f64, coefficients: Vec<f64> },
    Logistic { intercept: f64, coefficients: Vec<f64> },
    Ensemble { base_score: f64, learning_rate: f64, trees: Vec<Tree> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: LearnerSpec,
    pub params: ModelParams,
    pub n_features: usize,
    pub diagnostics: TrainingDiagnostics,
}

impl FittedModel {
    /// Intercept and coefficients for the linear families.
    pub fn linear_parts(&self) -> Option<(f64, &[f64])> {
        match &self.params {
            ModelParams::Linear { intercept, coefficients } | ModelParams::Logistic { intercept, coefficients } => {
                Some((*intercept, coefficients.as_slice()))
            }
            _ => None,
        }
    }

    pub fn trees(&self) -> Option<&[Tree]> {
        match &self.params {
            ModelParams::Ensemble { trees, .. } => Some(trees),
            _ => None,
        }
    }
}

/// Fits `spec` on `features` (n x p) and `targets` (n).
///
/// Hitting `max_iter` is not an error: the model is returned with
/// `diagnostics.converged == false` and a warning attached.
pub fn fit(spec: &LearnerSpec, features: &DMatrix<f64>, targets: &[f64], seed: u64) -> Result<FittedModel, LearnerError> {
    spec.validate()?;
    let n = features.nrows();
    if targets.len() != n {
        return Err(LearnerError::DimensionMismatch { expected: n, found: targets.len() });
    }
    if n == 0 {
        return Err(LearnerError::EmptyInput);
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::NonFiniteInput("features"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::NonFiniteInput("targets"));
    }
    let (params, diagnostics) = match *spec {
        LearnerSpec::Mean => {
            let value = targets.iter().sum::<f64>() / n as f64;
            let objective = targets.iter().map(|y| (y - value).powi(2)).sum::<f64>();
            (ModelParams::Constant { value }, TrainingDiagnostics { iterations: 0, objective, converged: true, warnings: vec![] })
        }
        LearnerSpec::Ridge { lambda } => linear::fit_ridge(features, targets, lambda)?,
        LearnerSpec::Lasso { lambda, max_iter, tol } => linear::fit_lasso(features, targets, lambda, max_iter, tol),
        LearnerSpec::Logistic { lambda, max_iter, tol } => {
            if targets.iter().any(|&y| y != 0.0 && y != 1.0) {
                return Err(LearnerError::NonBinaryTarget);
            }
            logistic::fit_logistic(features, targets, lambda, max_iter, tol)
        }
        LearnerSpec::GradientBoostedTrees { n_trees, max_depth, learning_rate, min_leaf, subsample } => {
            let opts = trees::BoostOptions { n_trees, max_depth, learning_rate, min_leaf, subsample };
            trees::fit_boosted(features, targets, &opts, seed)
        }
    };
    Ok(FittedModel { spec: spec.clone(), params, n_features: features.ncols(), diagnostics })
}

/// Predictions for each row of `features`. Logistic models return
/// probabilities.
pub fn predict(model: &FittedModel, features: &DMatrix<f64>) -> Result<Vec<f64>, LearnerError> {
    if features.ncols() != model.n_features {
        return Err(LearnerError::DimensionMismatch { expected: model.n_features, found: features.ncols() });
    }
    let m = features.nrows();
    Ok(match &model.params {
        ModelParams::Constant { value } => vec![*value; m],
        ModelParams::Linear { intercept, coefficients } => linear::linear_predictor(features, *intercept, coefficients),
        ModelParams::Logistic { intercept, coefficients } => linear::linear_predictor(features, *intercept, coefficients)
            .into_iter()
            .map(logistic::sigmoid)
            .collect(),
        ModelParams::Ensemble { base_score, learning_rate, trees } => {
            let mut out = vec![*base_score; m];
            for tree in trees {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += learning_rate * tree.predict_row(features, i);
                }
            }
            out
        }
    })
}
