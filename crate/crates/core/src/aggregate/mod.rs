//! Aggregation of group-time effects into an overall ATT, an event-time
//! curve and per-cohort summaries, with cluster-bootstrap inference and the
//! robustness battery (pre-trend, placebo, overlap).
//!
//! Every scheme is a convex combination of cells with weights proportional
//! to the number of treated units in each cell, so no weight is ever
//! negative.

pub mod bootstrap;
pub mod diagnostics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::didcore::GroupTimeEffects;

pub use bootstrap::{bootstrap, bootstrap_residuals, BootstrapMode, BootstrapSummary, Interval};
pub use diagnostics::{
    overlap_report, placebo_panel, placebo_test, pretrend_test, DiagnosticsReport, EventTerm, OverlapReport,
    PlaceboReport, PretrendReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("no post-treatment cell to aggregate")]
    EmptyResult,
    #[error("ci_level must lie in (0, 1), got {0}")]
    InvalidCiLevel(f64),
    #[error("bootstrap needs at least one replicate")]
    NoReplicates,
    #[error("{failed} of {total} bootstrap replicates failed (first failure in replicate {first_index}: {first_error})")]
    TooManyFailures { failed: usize, total: usize, first_index: usize, first_error: String },
    #[error("no pre-treatment cell outside the anticipation window")]
    NoPreCells,
    #[error("pre-treatment event times lack bootstrap standard errors")]
    MissingStandardErrors,
    #[error("cohort {g} has {available} pre-treatment periods; placebo shift {shift} needs {needed}")]
    InsufficientPrePeriods { g: i64, available: usize, needed: usize, shift: i64 },
    #[error("placebo shift must be at least 1, got {0}")]
    InvalidShift(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Overall,
    EventTime,
    ByGroup,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Overall, Scheme::EventTime, Scheme::ByGroup];
}

/// A point estimate with optional bootstrap inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttEstimate {
    pub att: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl AttEstimate {
    fn point(att: f64) -> Self {
        Self { att, se: None, ci_low: None, ci_high: None }
    }

    fn attach(&mut self, interval: Option<&Interval>) {
        let iv = interval.copied().unwrap_or_default();
        self.se = iv.se;
        self.ci_low = iv.ci_low;
        self.ci_high = iv.ci_high;
    }
}

pub type CellWeights = BTreeMap<(i64, i64), f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedResults {
    pub overall: AttEstimate,
    /// Pre-treatment event times (e < 0) come from placebo cells.
    pub event_curve: BTreeMap<i64, AttEstimate>,
    pub groups: BTreeMap<i64, AttEstimate>,
    /// Weights behind `overall`, over post-treatment cells.
    pub weights_used: CellWeights,
    pub event_weights: BTreeMap<i64, CellWeights>,
    pub group_weights: BTreeMap<i64, CellWeights>,
    pub ci_level: f64,
}

impl AggregatedResults {
    pub fn overall_att(&self) -> f64 {
        self.overall.att
    }

    pub fn group_atts(&self) -> BTreeMap<i64, f64> {
        self.groups.iter().map(|(&g, e)| (g, e.att)).collect()
    }

    /// Every weight vector produced, one per reported quantity.
    pub fn all_weight_sets(&self) -> impl Iterator<Item = &CellWeights> {
        std::iter::once(&self.weights_used).chain(self.event_weights.values()).chain(self.group_weights.values())
    }

    pub fn attach_inference(&mut self, boot: &BootstrapSummary) {
        self.overall.attach(Some(&boot.overall));
        for (e, est) in self.event_curve.iter_mut() {
            est.attach(boot.event_curve.get(e));
        }
        for (g, est) in self.groups.iter_mut() {
            est.attach(boot.groups.get(g));
        }
    }
}

/// Count weights over `cells`: `n_treated / sum(n_treated)`.
fn count_weights<'a>(cells: impl Iterator<Item = (&'a (i64, i64), &'a crate::didcore::CellEffect)>) -> CellWeights {
    let cells: Vec<_> = cells.collect();
    let total: usize = cells.iter().map(|(_, c)| c.n_treated).sum();
    cells.into_iter().map(|(&k, c)| (k, c.n_treated as f64 / total as f64)).collect()
}

fn weighted(effects: &GroupTimeEffects, w: &CellWeights) -> f64 {
    w.iter().map(|(k, wk)| wk * effects.cells[k].tau).sum()
}

/// Weights for one scheme, keyed by the scheme's index (0 for `Overall`,
/// event time for `EventTime`, cohort for `ByGroup`).
pub fn scheme_weights(effects: &GroupTimeEffects, scheme: Scheme) -> BTreeMap<i64, CellWeights> {
    let mut buckets: BTreeMap<i64, Vec<(&(i64, i64), &crate::didcore::CellEffect)>> = BTreeMap::new();
    for (k, c) in &effects.cells {
        let key = match scheme {
            Scheme::Overall if c.event_time >= 0 => 0,
            Scheme::ByGroup if c.event_time >= 0 => k.0,
            Scheme::EventTime => c.event_time,
            _ => continue,
        };
        buckets.entry(key).or_default().push((k, c));
    }
    buckets.into_iter().map(|(key, cells)| (key, count_weights(cells.into_iter()))).collect()
}

/// Overall, event-time and by-group aggregation of `effects`.
pub fn aggregate(effects: &GroupTimeEffects, ci_level: f64) -> Result<AggregatedResults, AggregateError> {
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(AggregateError::InvalidCiLevel(ci_level));
    }
    let weights_used = scheme_weights(effects, Scheme::Overall).remove(&0).ok_or(AggregateError::EmptyResult)?;
    let event_weights = scheme_weights(effects, Scheme::EventTime);
    let group_weights = scheme_weights(effects, Scheme::ByGroup);
    Ok(AggregatedResults {
        overall: AttEstimate::point(weighted(effects, &weights_used)),
        event_curve: event_weights.iter().map(|(&e, w)| (e, AttEstimate::point(weighted(effects, w)))).collect(),
        groups: group_weights.iter().map(|(&g, w)| (g, AttEstimate::point(weighted(effects, w)))).collect(),
        weights_used,
        event_weights,
        group_weights,
        ci_level,
    })
}
