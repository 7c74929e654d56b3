//! Steps 2 to 5 wired together: cross-fitted nuisances, residualization,
//! group-time estimation and aggregation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, AggregatedResults};
use crate::crossfit::{
    assign_folds, crossfit_nuisance_on, residualize, FoldAssignment, OutcomeSample, ResidualPanel,
};
use crate::didcore::{estimate_group_time, estimate_interacted_regression, ControlRule, Estimator, GroupTimeEffects};
use crate::error::Error;
use crate::learners::LearnerSpec;
use crate::panel::PanelDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub g_learner: LearnerSpec,
    pub m_learner: LearnerSpec,
    #[serde(rename = "K")]
    pub k: usize,
    pub clip_eps: f64,
    pub control_rule: ControlRule,
    pub anticipation: i64,
    pub estimator: Estimator,
    pub outcome_sample: OutcomeSample,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            g_learner: LearnerSpec::ridge(1.0),
            m_learner: LearnerSpec::logistic(1e-4),
            k: 5,
            clip_eps: 0.01,
            control_rule: ControlRule::NeverTreated,
            anticipation: 0,
            estimator: Estimator::Contrast,
            outcome_sample: OutcomeSample::Untreated,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct PointEstimate {
    pub resid: ResidualPanel,
    pub effects: GroupTimeEffects,
    pub aggregated: AggregatedResults,
}

/// Group-time effects on an already residualized panel.
pub fn effects_for(resid: &ResidualPanel, cfg: &PipelineConfig) -> Result<GroupTimeEffects, Error> {
    Ok(match cfg.estimator {
        Estimator::Contrast => estimate_group_time(resid, cfg.control_rule, cfg.anticipation)?,
        Estimator::InteractedRegression => estimate_interacted_regression(resid, cfg.anticipation)?,
    })
}

/// Runs the pipeline with folds drawn from `cfg.seed`.
pub fn estimate(panel: impl Into<Arc<PanelDataset>>, cfg: &PipelineConfig) -> Result<PointEstimate, Error> {
    let panel = panel.into();
    let folds = assign_folds(&panel, cfg.k, cfg.seed)?;
    estimate_with_folds(panel, cfg, &folds)
}

pub fn estimate_with_folds(
    panel: impl Into<Arc<PanelDataset>>,
    cfg: &PipelineConfig,
    folds: &FoldAssignment,
) -> Result<PointEstimate, Error> {
    let panel = panel.into();
    if !panel.has_control_pool() {
        return Err(crate::panel::PanelError::EmptyControlPool.into());
    }
    let fits = crossfit_nuisance_on(&panel, &cfg.g_learner, &cfg.m_learner, folds, cfg.clip_eps, cfg.seed, cfg.outcome_sample)?;
    let resid = residualize(panel, fits)?;
    let effects = effects_for(&resid, cfg)?;
    let aggregated = aggregate(&effects, 0.95)?;
    Ok(PointEstimate { resid, effects, aggregated })
}

/// Unadjusted DID: the same contrasts on raw outcomes.
pub fn unadjusted(panel: impl Into<Arc<PanelDataset>>, cfg: &PipelineConfig) -> Result<PointEstimate, Error> {
    let resid = ResidualPanel::unadjusted(panel);
    let effects = effects_for(&resid, cfg)?;
    let aggregated = aggregate(&effects, 0.95)?;
    Ok(PointEstimate { resid, effects, aggregated })
}
