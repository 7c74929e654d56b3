//! Group-time treatment effects on the residualized panel.
//!
//! The default estimator is a 2x2 contrast per `(g, t)` cell: the change in
//! residualized outcome from the cohort's base period `g - 1 - anticipation`
//! to `t`, treated cohort minus control pool. Pre-treatment cells use the same
//! formula and serve as placebo contrasts. The interacted fixed-effects
//! regression and a static TWFE comparator live in [`regression`].

pub mod fixed_effects;
pub mod regression;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossfit::ResidualPanel;
use crate::panel::{Cohort, PanelDataset, UnitId};

pub use fixed_effects::{Demeaner, FixedEffectsSolution};
pub use regression::{estimate_interacted_regression, twfe_baseline, TwfeEstimate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DidError {
    #[error("no group-time cell could be estimated")]
    EmptyResult,
    #[error("fixed-effect demeaning did not converge after {sweeps} sweeps (max group mean {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error("unit {0:?} has no subgroup label")]
    MissingLabel(UnitId),
    #[error("anticipation must be non-negative, got {0}")]
    InvalidAnticipation(i64),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControlRule {
    #[default]
    NeverTreated,
    NotYetTreated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Contrast,
    InteractedRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEffect {
    pub tau: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub event_time: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmissionReason {
    NoControlPool,
    NoTreatedUnits,
    NoBasePeriod,
    CollinearCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Omission {
    pub g: i64,
    pub t: i64,
    pub reason: OmissionReason,
}

/// One row of the group-time export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupTimeRow {
    pub g: i64,
    pub t: i64,
    pub event_time: i64,
    pub tau: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupTimeEffects {
    /// Keyed by `(g, t)`.
    pub cells: BTreeMap<(i64, i64), CellEffect>,
    pub control_rule: ControlRule,
    pub anticipation: i64,
    pub estimator: Estimator,
    pub omitted: Vec<Omission>,
    pub warnings: Vec<String>,
}

impl GroupTimeEffects {
    pub fn base_period_rule(&self) -> String {
        format!("g - 1 - {}", self.anticipation)
    }

    pub fn rows(&self) -> Vec<GroupTimeRow> {
        self.cells
            .iter()
            .map(|(&(g, t), c)| GroupTimeRow {
                g,
                t,
                event_time: c.event_time,
                tau: c.tau,
                n_treated: c.n_treated,
                n_control: c.n_control,
            })
            .collect()
    }

    pub fn post_cells(&self) -> impl Iterator<Item = (&(i64, i64), &CellEffect)> {
        self.cells.iter().filter(|(_, c)| c.event_time >= 0)
    }

    /// CSV with columns `g,t,event_time,tau,n_treated,n_control`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DidError> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row).map_err(|e| DidError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| DidError::Csv(e.to_string()))
    }
}

/// Unit indices of the control pool for cell `(g, t)`.
pub(crate) fn control_units(panel: &PanelDataset, rule: ControlRule, g: i64, t: i64, anticipation: i64) -> Vec<usize> {
    let horizon = t.max(g) + anticipation;
    panel
        .cohorts()
        .iter()
        .enumerate()
        .filter(|(_, c)| match rule {
            ControlRule::NeverTreated => **c == Cohort::NeverTreated,
            ControlRule::NotYetTreated => c.adopts_after(horizon),
        })
        .map(|(u, _)| u)
        .collect()
}

/// Mean of `y[t] - y[b]` over `units` observed at both periods.
fn mean_change(panel: &PanelDataset, y: &[f64], units: &[usize], ti: usize, bi: usize) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for &u in units {
        if let (Some(kt), Some(kb)) = (panel.obs_at(u, ti), panel.obs_at(u, bi)) {
            sum += y[kt] - y[kb];
            n += 1;
        }
    }
    (if n > 0 { sum / n as f64 } else { f64::NAN }, n)
}

/// 2x2 contrasts on residualized outcomes for every cohort and period.
///
/// Cells lacking treated units, controls, or base-period observations are
/// recorded in `omitted` instead of failing the call.
pub fn estimate_group_time(
    resid: &ResidualPanel,
    control_rule: ControlRule,
    anticipation: i64,
) -> Result<GroupTimeEffects, DidError> {
    if anticipation < 0 {
        return Err(DidError::InvalidAnticipation(anticipation));
    }
    let panel = &*resid.panel;
    let y = &resid.y_tilde;
    let periods = panel.periods();

    let mut work = Vec::new();
    let mut omitted = Vec::new();
    for g in panel.adoption_dates() {
        let b = g - 1 - anticipation;
        let Some(bi) = panel.period_index(b) else {
            omitted.extend(periods.iter().filter(|&&t| t != b).map(|&t| Omission {
                g,
                t,
                reason: OmissionReason::NoBasePeriod,
            }));
            continue;
        };
        for (ti, &t) in periods.iter().enumerate() {
            if t != b {
                work.push((g, t, ti, bi));
            }
        }
    }

    let results: Vec<Result<((i64, i64), CellEffect), Omission>> = work
        .par_iter()
        .map(|&(g, t, ti, bi)| {
            let treated: Vec<usize> = panel
                .cohorts()
                .iter()
                .enumerate()
                .filter(|(_, c)| **c == Cohort::FirstTreatedAt(g))
                .map(|(u, _)| u)
                .collect();
            let controls = control_units(panel, control_rule, g, t, anticipation);
            let (mt, nt) = mean_change(panel, y, &treated, ti, bi);
            if nt == 0 {
                return Err(Omission { g, t, reason: OmissionReason::NoTreatedUnits });
            }
            let (mc, nc) = mean_change(panel, y, &controls, ti, bi);
            if nc == 0 {
                return Err(Omission { g, t, reason: OmissionReason::NoControlPool });
            }
            Ok(((g, t), CellEffect { tau: mt - mc, n_treated: nt, n_control: nc, event_time: t - g }))
        })
        .collect();

    let mut cells = BTreeMap::new();
    for r in results {
        match r {
            Ok((key, cell)) => {
                cells.insert(key, cell);
            }
            Err(o) => omitted.push(o),
        }
    }
    if cells.is_empty() {
        return Err(DidError::EmptyResult);
    }
    Ok(GroupTimeEffects {
        cells,
        control_rule,
        anticipation,
        estimator: Estimator::Contrast,
        omitted,
        warnings: vec![],
    })
}

/// Runs [`estimate_group_time`] separately within each labelled subgroup.
/// A subgroup with no estimable cell maps to `Err(EmptyResult)`.
pub fn subgroup_effects(
    resid: &ResidualPanel,
    subgroup_of_unit: &BTreeMap<UnitId, String>,
    control_rule: ControlRule,
    anticipation: i64,
) -> Result<BTreeMap<String, Result<GroupTimeEffects, DidError>>, DidError> {
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (u, id) in resid.panel.units().iter().enumerate() {
        let label = subgroup_of_unit.get(id).ok_or_else(|| DidError::MissingLabel(id.clone()))?;
        members.entry(label.clone()).or_default().push(u);
    }
    Ok(members
        .into_par_iter()
        .map(|(label, units)| {
            let sub = resid.select_units(&units, false);
            (label, estimate_group_time(&sub, control_rule, anticipation))
        })
        .collect())
}
