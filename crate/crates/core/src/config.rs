//! Resolved run configuration, read from JSON with defaults for absent
//! fields. The resolved form is echoed into every results file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{BootstrapMode, Scheme};
use crate::crossfit::OutcomeSample;
use crate::didcore::{ControlRule, Estimator};
use crate::learners::LearnerSpec;
use crate::pipeline::PipelineConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(
        "K=1 disables cross-fitting: nuisances are trained and evaluated on the same units, which is a \
         diagnostic-only mode; pass --allow-no-crossfit to run it anyway"
    )]
    NoCrossfit,
    #[error("no input panel given (set input_path or pass it on the command line)")]
    MissingInput,
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Parse(_) => "config.parse",
            ConfigError::Read { .. } => "config.read",
            ConfigError::Invalid { .. } => "config.invalid",
            ConfigError::NoCrossfit => "config.no_crossfit",
            ConfigError::MissingInput => "config.missing_input",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(rename = "B")]
    pub b: usize,
    pub mode: BootstrapMode,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { b: 199, mode: BootstrapMode::Full }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_path: Option<PathBuf>,
    pub g_learner: LearnerSpec,
    pub m_learner: LearnerSpec,
    #[serde(rename = "K")]
    pub k: usize,
    pub clip_eps: f64,
    pub control_rule: ControlRule,
    pub anticipation: i64,
    pub estimator: Estimator,
    pub outcome_sample: OutcomeSample,
    pub aggregation: Vec<Scheme>,
    pub bootstrap: BootstrapConfig,
    pub ci_level: f64,
    /// Placebo adoption shift; `None` skips the placebo test.
    pub placebo_shift: Option<i64>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            input_path: None,
            g_learner: p.g_learner,
            m_learner: p.m_learner,
            k: p.k,
            clip_eps: p.clip_eps,
            control_rule: p.control_rule,
            anticipation: p.anticipation,
            estimator: p.estimator,
            outcome_sample: p.outcome_sample,
            aggregation: Scheme::ALL.to_vec(),
            bootstrap: BootstrapConfig::default(),
            ci_level: 0.95,
            placebo_shift: Some(1),
            seed: p.seed,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            g_learner: self.g_learner.clone(),
            m_learner: self.m_learner.clone(),
            k: self.k,
            clip_eps: self.clip_eps,
            control_rule: self.control_rule,
            anticipation: self.anticipation,
            estimator: self.estimator,
            outcome_sample: self.outcome_sample,
            seed: self.seed,
        }
    }

    pub fn wants(&self, scheme: Scheme) -> bool {
        self.aggregation.contains(&scheme)
    }

    pub fn validate(&self, allow_no_crossfit: bool) -> Result<(), ConfigError> {
        let invalid = |field, reason: String| Err(ConfigError::Invalid { field, reason });
        match self.k {
            0 => return invalid("K", "must be at least 1".into()),
            1 if !allow_no_crossfit => return Err(ConfigError::NoCrossfit),
            _ => {}
        }
        if !(0.0..0.5).contains(&self.clip_eps) {
            return invalid("clip_eps", format!("must lie in [0, 0.5), got {}", self.clip_eps));
        }
        if self.anticipation < 0 {
            return invalid("anticipation", format!("must be >= 0, got {}", self.anticipation));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return invalid("ci_level", format!("must lie in (0, 1), got {}", self.ci_level));
        }
        if self.bootstrap.b == 0 {
            return invalid("bootstrap.B", "must be at least 1".into());
        }
        if let Some(s) = self.placebo_shift {
            if s < 1 {
                return invalid("placebo_shift", format!("must be at least 1, got {s}"));
            }
        }
        if self.aggregation.is_empty() {
            return invalid("aggregation", "list at least one scheme".into());
        }
        if matches!(self.g_learner, LearnerSpec::Logistic { .. }) {
            return invalid("g_learner", "logistic is only valid for the treatment model".into());
        }
        self.g_learner.validate().or_else(|e| invalid("g_learner", e.to_string()))?;
        self.m_learner.validate().or_else(|e| invalid("m_learner", e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_documented_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.clip_eps, 0.01);
        assert_eq!(cfg.control_rule, ControlRule::NeverTreated);
        assert_eq!(cfg.anticipation, 0);
        assert_eq!(cfg.estimator, Estimator::Contrast);
        assert_eq!(cfg.bootstrap, BootstrapConfig { b: 199, mode: BootstrapMode::Full });
        assert_eq!(cfg.ci_level, 0.95);
        assert!(cfg.validate(false).is_ok());
    }

    #[test]
    fn single_fold_needs_override() {
        let cfg = RunConfig::from_json(r#"{"K": 1}"#).unwrap();
        assert_eq!(cfg.validate(false), Err(ConfigError::NoCrossfit));
        assert!(cfg.validate(true).is_ok());
    }

    #[test]
    fn unknown_and_out_of_range_fields() {
        assert!(matches!(RunConfig::from_json(r#"{"folds": 3}"#), Err(ConfigError::Parse(_))));
        let cfg = RunConfig::from_json(r#"{"ci_level": 1.5}"#).unwrap();
        assert!(matches!(cfg.validate(false), Err(ConfigError::Invalid { field: "ci_level", .. })));
        let cfg = RunConfig::from_json(r#"{"g_learner": {"kind": "logistic", "lambda": 0.1, "max_iter": 10, "tol": 1e-6}}"#).unwrap();
        assert!(matches!(cfg.validate(false), Err(ConfigError::Invalid { field: "g_learner", .. })));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig {
            bootstrap: BootstrapConfig { b: 50, mode: BootstrapMode::FixedNuisance },
            g_learner: LearnerSpec::lasso(0.1),
            seed: 17,
            ..Default::default()
        };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
