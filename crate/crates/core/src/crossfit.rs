//! K-fold cross-fitting of the nuisance functions and double residualization.
//!
//! Folds are assigned at the unit level, so all periods of a unit share a
//! fold and every prediction comes from models that never saw that unit.
//! Nuisance features are the standardized covariates plus one-hot period
//! indicators; cohort labels are never used as features.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::{fit, predict, LearnerError, LearnerSpec};
use crate::linalg::select_rows;
use crate::panel::{PanelDataset, UnitId};
use crate::rng::{streams, SeededRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrossfitError {
    #[error("{k} folds requested but the panel has only {units} units")]
    TooManyFolds { k: usize, units: usize },
    #[error("fold count must be at least 1")]
    ZeroFolds,
    #[error("clip_eps must lie in [0, 0.5), got {0}")]
    InvalidClip(f64),
    #[error("{0}")]
    InvalidLearner(String),
    #[error("fold {fold}, {nuisance} model: {source}")]
    Learner {
        fold: usize,
        nuisance: &'static str,
        #[source]
        source: LearnerError,
    },
    #[error("fold {fold}: no training rows for the {nuisance} model")]
    EmptyTrainingSet { fold: usize, nuisance: &'static str },
    #[error("nuisance predictions cover {found} observations but the panel has {expected}")]
    AlignmentMismatch { expected: usize, found: usize },
}

/// Which observations train the outcome model.
///
/// `All` fits `E[Y | X, t]` on every training observation. `Untreated`
/// restricts training to observations with `D = 0`, so the outcome model
/// targets the untreated outcome and does not absorb treatment effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSample {
    All,
    #[default]
    Untreated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of_unit: BTreeMap<UnitId, usize>,
}

impl FoldAssignment {
    /// Fold index of every observation, in panel order.
    pub fn fold_of_obs(&self, panel: &PanelDataset) -> Vec<usize> {
        let by_unit: Vec<usize> = panel.units().iter().map(|u| self.fold_of_unit[u]).collect();
        panel.unit_of_obs().iter().map(|&u| by_unit[u]).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.fold_of_unit.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Out-of-fold nuisance predictions aligned to panel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFits {
    pub g_hat: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub folds: FoldAssignment,
    pub g_spec: LearnerSpec,
    pub m_spec: LearnerSpec,
    pub outcome_sample: OutcomeSample,
    pub clip_eps: f64,
    pub n_clipped: usize,
    pub warnings: Vec<String>,
}

/// `y_tilde = Y - g_hat`, `d_tilde = D - m_hat`, entrywise in panel order.
#[derive(Debug, Clone)]
pub struct ResidualPanel {
    pub panel: Arc<PanelDataset>,
    pub fits: Option<Arc<NuisanceFits>>,
    pub y_tilde: Vec<f64>,
    pub d_tilde: Vec<f64>,
}

impl ResidualPanel {
    /// Residuals supplied directly, e.g. by a resampling scheme.
    pub fn from_parts(
        panel: impl Into<Arc<PanelDataset>>,
        y_tilde: Vec<f64>,
        d_tilde: Vec<f64>,
    ) -> Result<Self, CrossfitError> {
        let panel = panel.into();
        for len in [y_tilde.len(), d_tilde.len()] {
            if len != panel.len() {
                return Err(CrossfitError::AlignmentMismatch { expected: panel.len(), found: len });
            }
        }
        Ok(Self { panel, fits: None, y_tilde, d_tilde })
    }

    /// No covariate adjustment: `y_tilde = Y`, `d_tilde = D`.
    pub fn unadjusted(panel: impl Into<Arc<PanelDataset>>) -> Self {
        let panel = panel.into();
        let y_tilde = panel.outcomes();
        let d_tilde = panel.treatments();
        Self { panel, fits: None, y_tilde, d_tilde }
    }

    /// Restricts to (or resamples) units; see [`PanelDataset::select_units`].
    pub fn select_units(&self, picks: &[usize], fresh_ids: bool) -> ResidualPanel {
        let (panel, source) = self.panel.select_units(picks, fresh_ids);
        ResidualPanel {
            panel: Arc::new(panel),
            fits: None,
            y_tilde: source.iter().map(|&k| self.y_tilde[k]).collect(),
            d_tilde: source.iter().map(|&k| self.d_tilde[k]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_tilde.is_empty()
    }
}

/// Unit-level folds: sorted unit ids are shuffled with the seed and dealt
/// round-robin, so fold sizes differ by at most one.
pub fn assign_folds(panel: &PanelDataset, k: usize, seed: u64) -> Result<FoldAssignment, CrossfitError> {
    if k == 0 {
        return Err(CrossfitError::ZeroFolds);
    }
    let units = panel.units();
    if k > units.len() {
        return Err(CrossfitError::TooManyFolds { k, units: units.len() });
    }
    let mut order: Vec<usize> = (0..units.len()).collect();
    SeededRng::new(seed, streams::FOLDS).shuffle(&mut order);
    let mut fold_of_unit = BTreeMap::new();
    for (rank, &u) in order.iter().enumerate() {
        fold_of_unit.insert(units[u].clone(), rank % k);
    }
    Ok(FoldAssignment { k, fold_of_unit })
}

/// Standardized covariates followed by period indicators (first period is
/// the reference).
pub fn nuisance_features(panel: &PanelDataset) -> DMatrix<f64> {
    let covs = panel.feature_matrix(true).matrix;
    let periods = panel.period_indicators();
    let n = panel.len();
    let p = covs.ncols();
    DMatrix::from_fn(n, p + periods.ncols(), |i, j| if j < p { covs[(i, j)] } else { periods[(i, j - p)] })
}

/// Cross-fits both nuisances with the outcome model trained on all rows.
pub fn crossfit_nuisance(
    panel: &PanelDataset,
    g_spec: &LearnerSpec,
    m_spec: &LearnerSpec,
    folds: &FoldAssignment,
    clip_eps: f64,
    seed: u64,
) -> Result<NuisanceFits, CrossfitError> {
    crossfit_nuisance_on(panel, g_spec, m_spec, folds, clip_eps, seed, OutcomeSample::All)
}

/// Cross-fits both nuisances, choosing the outcome model's training rows.
///
/// With `K >= 2`, fold `k` is predicted by models trained on the other
/// folds. With `K = 1` the models train and predict on the full sample.
pub fn crossfit_nuisance_on(
    panel: &PanelDataset,
    g_spec: &LearnerSpec,
    m_spec: &LearnerSpec,
    folds: &FoldAssignment,
    clip_eps: f64,
    seed: u64,
    outcome_sample: OutcomeSample,
) -> Result<NuisanceFits, CrossfitError> {
    if !(0.0..0.5).contains(&clip_eps) {
        return Err(CrossfitError::InvalidClip(clip_eps));
    }
    if matches!(g_spec, LearnerSpec::Logistic { .. }) {
        return Err(CrossfitError::InvalidLearner("logistic is only valid for the treatment model".into()));
    }
    for spec in [g_spec, m_spec] {
        spec.validate().map_err(|e| CrossfitError::InvalidLearner(e.to_string()))?;
    }
    if folds.k == 0 {
        return Err(CrossfitError::ZeroFolds);
    }

    let features = nuisance_features(panel);
    let y = panel.outcomes();
    let d = panel.treatments();
    let fold_of_obs = folds.fold_of_obs(panel);
    let n = panel.len();

    let per_fold: Vec<Result<FoldOutput, CrossfitError>> = (0..folds.k)
        .into_par_iter()
        .map(|k| {
            let holdout: Vec<usize> = (0..n).filter(|&i| folds.k == 1 || fold_of_obs[i] == k).collect();
            let train: Vec<usize> = (0..n).filter(|&i| folds.k == 1 || fold_of_obs[i] != k).collect();
            let g_train: Vec<usize> = match outcome_sample {
                OutcomeSample::All => train.clone(),
                OutcomeSample::Untreated => train.iter().copied().filter(|&i| d[i] == 0.0).collect(),
            };
            if g_train.is_empty() {
                return Err(CrossfitError::EmptyTrainingSet { fold: k, nuisance: "outcome" });
            }
            if train.is_empty() {
                return Err(CrossfitError::EmptyTrainingSet { fold: k, nuisance: "treatment" });
            }
            let x_hold = select_rows(&features, &holdout);
            let fold_seed = seed.wrapping_add(k as u64);

            let xg = select_rows(&features, &g_train);
            let yg: Vec<f64> = g_train.iter().map(|&i| y[i]).collect();
            let g_model = fit(g_spec, &xg, &yg, fold_seed)
                .map_err(|source| CrossfitError::Learner { fold: k, nuisance: "outcome", source })?;
            let g_pred = predict(&g_model, &x_hold)
                .map_err(|source| CrossfitError::Learner { fold: k, nuisance: "outcome", source })?;

            let xm = if g_train.len() == train.len() { xg } else { select_rows(&features, &train) };
            let dm: Vec<f64> = train.iter().map(|&i| d[i]).collect();
            let m_model = fit(m_spec, &xm, &dm, fold_seed)
                .map_err(|source| CrossfitError::Learner { fold: k, nuisance: "treatment", source })?;
            let m_pred = predict(&m_model, &x_hold)
                .map_err(|source| CrossfitError::Learner { fold: k, nuisance: "treatment", source })?;

            let mut warnings = Vec::new();
            for (name, model) in [("outcome", &g_model), ("treatment", &m_model)] {
                for w in &model.diagnostics.warnings {
                    warnings.push(format!("fold {k}, {name} model: {w}"));
                }
            }
            Ok(FoldOutput { holdout, g_pred, m_pred, warnings })
        })
        .collect();

    let mut g_hat = vec![f64::NAN; n];
    let mut m_hat = vec![f64::NAN; n];
    let mut warnings = Vec::new();
    for out in per_fold {
        let out = out?;
        for (j, &i) in out.holdout.iter().enumerate() {
            g_hat[i] = out.g_pred[j];
            m_hat[i] = out.m_pred[j];
        }
        warnings.extend(out.warnings);
    }

    let (lo, hi) = (clip_eps, 1.0 - clip_eps);
    let mut n_clipped = 0;
    for m in m_hat.iter_mut() {
        let c = m.clamp(lo, hi);
        if c != *m {
            n_clipped += 1;
            *m = c;
        }
    }

    Ok(NuisanceFits {
        g_hat,
        m_hat,
        folds: folds.clone(),
        g_spec: g_spec.clone(),
        m_spec: m_spec.clone(),
        outcome_sample,
        clip_eps,
        n_clipped,
        warnings,
    })
}

struct FoldOutput {
    holdout: Vec<usize>,
    g_pred: Vec<f64>,
    m_pred: Vec<f64>,
    warnings: Vec<String>,
}

/// Exact entrywise residualization.
pub fn residualize(
    panel: impl Into<Arc<PanelDataset>>,
    fits: impl Into<Arc<NuisanceFits>>,
) -> Result<ResidualPanel, CrossfitError> {
    let panel = panel.into();
    let fits = fits.into();
    for len in [fits.g_hat.len(), fits.m_hat.len()] {
        if len != panel.len() {
            return Err(CrossfitError::AlignmentMismatch { expected: panel.len(), found: len });
        }
    }
    let y_tilde = panel.observations().iter().zip(&fits.g_hat).map(|(o, g)| o.outcome - g).collect();
    let d_tilde = panel.observations().iter().zip(&fits.m_hat).map(|(o, m)| o.treatment as f64 - m).collect();
    Ok(ResidualPanel { panel, fits: Some(fits), y_tilde, d_tilde })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{build_panel, RawRecord};

    /// Ten units over two periods; units u0..u2 adopt at t = 2.
    fn toy_panel() -> PanelDataset {
        let mut rows = Vec::new();
        for u in 0..10 {
            for t in 1..=2 {
                let treated = u < 3 && t == 2;
                let x = u as f64 * 0.5 + t as f64;
                rows.push(RawRecord::complete(&format!("u{u}"), t, u as f64 + 10.0 * t as f64, treated as u8, &[x]));
            }
        }
        build_panel(&rows, &["x".to_string()]).unwrap()
    }

    #[test]
    fn fold_assignment_shapes() {
        let panel = toy_panel();
        let one = assign_folds(&panel, 1, 3).unwrap();
        assert!(one.fold_of_unit.values().all(|&f| f == 0));
        let five = assign_folds(&panel, 5, 3).unwrap();
        assert_eq!(five.fold_sizes(), vec![2; 5]);
        assert_eq!(five, assign_folds(&panel, 5, 3).unwrap());
        assert_eq!(
            assign_folds(&panel, 11, 0).unwrap_err(),
            CrossfitError::TooManyFolds { k: 11, units: 10 }
        );
    }

    #[test]
    fn mean_learner_uses_complement_fold() {
        let panel = toy_panel();
        let folds = assign_folds(&panel, 2, 7).unwrap();
        let fits = crossfit_nuisance(&panel, &LearnerSpec::Mean, &LearnerSpec::Mean, &folds, 0.01, 0).unwrap();
        let fold_of_obs = folds.fold_of_obs(&panel);
        let y = panel.outcomes();
        let d = panel.treatments();
        for k in 0..2 {
            let other: Vec<usize> = (0..panel.len()).filter(|&i| fold_of_obs[i] != k).collect();
            let y_mean = other.iter().map(|&i| y[i]).sum::<f64>() / other.len() as f64;
            let d_mean = other.iter().map(|&i| d[i]).sum::<f64>() / other.len() as f64;
            for i in (0..panel.len()).filter(|&i| fold_of_obs[i] == k) {
                assert!((fits.g_hat[i] - y_mean).abs() < 1e-12);
                assert!((fits.m_hat[i] - d_mean.clamp(0.01, 0.99)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn treated_share_by_hand() {
        // 3 of 10 units adopt at t = 2, so 3 of 20 observations are treated.
        // With K = 2 each fold's prediction is the treated share of the
        // other fold's 10 observations.
        let panel = toy_panel();
        let folds = assign_folds(&panel, 2, 7).unwrap();
        let fits = crossfit_nuisance(&panel, &LearnerSpec::Mean, &LearnerSpec::Mean, &folds, 0.01, 0).unwrap();
        let treated_units_in_fold = |k: usize| (0..3).filter(|u| folds.fold_of_unit[&format!("u{u}")] == k).count();
        for k in 0..2 {
            let share = treated_units_in_fold(1 - k) as f64 / 10.0;
            let unit = folds.fold_of_unit.iter().find(|(_, &f)| f == k).unwrap().0;
            let i = panel.unit_range(panel.unit_index(unit).unwrap()).start;
            assert!((fits.m_hat[i] - share.max(0.01)).abs() < 1e-12);
        }
        assert_eq!(fits.n_clipped, if treated_units_in_fold(0) == 0 || treated_units_in_fold(1) == 0 { 10 } else { 0 });
    }

    #[test]
    fn clipping_counts_moved_entries() {
        // Only one treated observation out of 20 under K = 1: m_hat = 0.05.
        let mut rows = Vec::new();
        for u in 0..10 {
            for t in 1..=2 {
                rows.push(RawRecord::complete(&format!("u{u}"), t, 0.0, (u == 0 && t == 2) as u8, &[]));
            }
        }
        let panel = build_panel(&rows, &[]).unwrap();
        let folds = assign_folds(&panel, 1, 0).unwrap();
        let loose = crossfit_nuisance(&panel, &LearnerSpec::Mean, &LearnerSpec::Mean, &folds, 0.01, 0).unwrap();
        assert_eq!(loose.n_clipped, 0);
        let tight = crossfit_nuisance(&panel, &LearnerSpec::Mean, &LearnerSpec::Mean, &folds, 0.1, 0).unwrap();
        assert_eq!(tight.n_clipped, 20);
        assert!(tight.m_hat.iter().all(|&m| m == 0.1));
        assert!(matches!(
            crossfit_nuisance(&panel, &LearnerSpec::Mean, &LearnerSpec::Mean, &folds, 0.5, 0),
            Err(CrossfitError::InvalidClip(_))
        ));
    }

    #[test]
    fn residualize_is_entrywise() {
        let rows = vec![RawRecord::complete("a", 1, 1.0, 0, &[]), RawRecord::complete("b", 1, 2.0, 0, &[])];
        let panel = build_panel(&rows, &[]).unwrap();
        let folds = assign_folds(&panel, 1, 0).unwrap();
        let mut fits = crossfit_nuisance(&panel, &LearnerSpec::Mean, &LearnerSpec::Mean, &folds, 0.0, 0).unwrap();
        fits.g_hat = vec![0.5, 1.5];
        let r = residualize(panel.clone(), fits.clone()).unwrap();
        assert_eq!(r.y_tilde, vec![0.5, 0.5]);
        fits.g_hat = vec![0.0, 0.0];
        let r = residualize(panel.clone(), fits.clone()).unwrap();
        assert_eq!(r.y_tilde, vec![1.0, 2.0]);
        fits.g_hat = vec![0.0];
        assert!(matches!(residualize(panel, fits), Err(CrossfitError::AlignmentMismatch { .. })));
    }

    #[test]
    fn logistic_outcome_model_is_rejected() {
        let panel = toy_panel();
        let folds = assign_folds(&panel, 2, 0).unwrap();
        assert!(matches!(
            crossfit_nuisance(&panel, &LearnerSpec::logistic(0.0), &LearnerSpec::Mean, &folds, 0.01, 0),
            Err(CrossfitError::InvalidLearner(_))
        ));
    }
}
