use thiserror::Error;

use crate::aggregate::AggregateError;
use crate::config::ConfigError;
use crate::crossfit::CrossfitError;
use crate::didcore::DidError;
use crate::learners::LearnerError;
use crate::panel::PanelError;
use crate::simulate::SimulateError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Crossfit(#[from] CrossfitError),
    #[error(transparent)]
    Did(#[from] DidError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Coarse failure class, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Estimation,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Estimation => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Config => "ConfigError",
            ErrorClass::Data => "DataError",
            ErrorClass::Estimation => "EstimationError",
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            Error::Panel(_) | Error::Io(_) => Data,
            Error::Learner(LearnerError::InvalidSpec(_)) => Config,
            Error::Learner(_) => Estimation,
            Error::Crossfit(e) => match e {
                CrossfitError::ZeroFolds | CrossfitError::InvalidClip(_) | CrossfitError::InvalidLearner(_) => Config,
                CrossfitError::TooManyFolds { .. } => Data,
                _ => Estimation,
            },
            Error::Did(DidError::InvalidAnticipation(_)) => Config,
            Error::Did(_) => Estimation,
            Error::Aggregate(e) => match e {
                AggregateError::InvalidCiLevel(_) | AggregateError::NoReplicates | AggregateError::InvalidShift(_) => {
                    Config
                }
                AggregateError::InsufficientPrePeriods { .. } => Data,
                _ => Estimation,
            },
            Error::Simulate(SimulateError::ReplicationsFailed { .. }) => Estimation,
            Error::Simulate(_) | Error::Config(_) => Config,
        }
    }

    /// Stable machine-readable code, e.g. `panel.missing_column`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Panel(e) => match e {
                PanelError::DuplicateIndex { .. } => "panel.duplicate_index",
                PanelError::NonAbsorbingTreatment { .. } => "panel.non_absorbing_treatment",
                PanelError::MissingField { .. } => "panel.missing_field",
                PanelError::NonFiniteValue { .. } => "panel.non_finite_value",
                PanelError::ParseValue { .. } => "panel.parse_value",
                PanelError::InvalidTreatment { .. } => "panel.invalid_treatment",
                PanelError::CovariateCount { .. } => "panel.covariate_count",
                PanelError::EmptyControlPool => "panel.empty_control_pool",
                PanelError::Empty => "panel.empty",
                PanelError::MissingColumn(_) => "panel.missing_column",
                PanelError::UnknownUnit(_) => "panel.unknown_unit",
                PanelError::UnknownPeriod(_) => "panel.unknown_period",
                PanelError::Csv(_) => "panel.csv",
            },
            Error::Learner(_) => "learner.failure",
            Error::Crossfit(e) => match e {
                CrossfitError::TooManyFolds { .. } => "crossfit.too_many_folds",
                CrossfitError::ZeroFolds => "crossfit.zero_folds",
                CrossfitError::InvalidClip(_) => "crossfit.invalid_clip",
                CrossfitError::InvalidLearner(_) => "crossfit.invalid_learner",
                CrossfitError::Learner { .. } => "crossfit.learner",
                CrossfitError::EmptyTrainingSet { .. } => "crossfit.empty_training_set",
                CrossfitError::AlignmentMismatch { .. } => "crossfit.alignment_mismatch",
            },
            Error::Did(e) => match e {
                DidError::EmptyResult => "did.empty_result",
                DidError::NonConvergence { .. } => "did.non_convergence",
                DidError::Degenerate(_) => "did.degenerate",
                DidError::MissingLabel(_) => "did.missing_label",
                DidError::InvalidAnticipation(_) => "did.invalid_anticipation",
                DidError::Csv(_) => "did.csv",
            },
            Error::Aggregate(e) => match e {
                AggregateError::EmptyResult => "aggregate.empty_result",
                AggregateError::InvalidCiLevel(_) => "aggregate.invalid_ci_level",
                AggregateError::NoReplicates => "aggregate.no_replicates",
                AggregateError::TooManyFailures { .. } => "aggregate.too_many_failures",
                AggregateError::NoPreCells => "aggregate.no_pre_cells",
                AggregateError::MissingStandardErrors => "aggregate.missing_standard_errors",
                AggregateError::InsufficientPrePeriods { .. } => "aggregate.insufficient_pre_periods",
                AggregateError::InvalidShift(_) => "aggregate.invalid_shift",
            },
            Error::Simulate(e) => match e {
                SimulateError::InvalidConfig(_) => "simulate.invalid_config",
                SimulateError::UnknownScenario(_) => "simulate.unknown_scenario",
                SimulateError::ReplicationsFailed { .. } => "simulate.replications_failed",
            },
            Error::Config(e) => e.code(),
            Error::Io(_) => "io",
        }
    }
}
