//! Staggered-adoption difference-in-differences with cross-fitted machine
//! learning nuisances.
//!
//! The pipeline residualizes outcome and treatment on covariates with
//! out-of-fold learners ([`crossfit`]), estimates group-time effects on the
//! residuals ([`didcore`]), aggregates them with non-negative count weights
//! and a cluster bootstrap ([`aggregate`]), and can be validated end to end
//! against synthetic panels with known effects ([`simulate`]).

pub mod aggregate;
pub mod config;
pub mod crossfit;
pub mod didcore;
pub mod error;
pub mod learners;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod simulate;

pub use aggregate::{
    aggregate, bootstrap, bootstrap_residuals, overlap_report, placebo_test, pretrend_test, AggregateError,
    AggregatedResults, AttEstimate, BootstrapMode, BootstrapSummary, DiagnosticsReport, Scheme,
};
pub use config::{BootstrapConfig, ConfigError, RunConfig};
pub use crossfit::{
    assign_folds, crossfit_nuisance, crossfit_nuisance_on, residualize, CrossfitError, FoldAssignment, NuisanceFits,
    OutcomeSample, ResidualPanel,
};
pub use didcore::{
    estimate_group_time, estimate_interacted_regression, subgroup_effects, twfe_baseline, ControlRule, DidError,
    Estimator, GroupTimeEffects,
};
pub use error::{Error, ErrorClass};
pub use learners::{fit, predict, FittedModel, LearnerError, LearnerSpec};
pub use panel::{build_panel, Cohort, PanelDataset, PanelError, PanelObservation, RawRecord, UnitId};
pub use pipeline::{estimate, PipelineConfig, PointEstimate};
pub use report::{analyze, write_outputs, RunOutput};
pub use simulate::{generate, monte_carlo, scenario, DGPConfig, EffectSpec, McConfig, McSummary, OraclePanel, Scenario};
