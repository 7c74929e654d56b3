//! Regression forms: the interacted residual regression with cohort and
//! period effects, and the static TWFE comparator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fixed_effects::{solve_fixed_effects, Demeaner};
use super::{CellEffect, ControlRule, DidError, Estimator, GroupTimeEffects, Omission, OmissionReason};
use crate::crossfit::ResidualPanel;
use crate::panel::{Cohort, PanelDataset};

fn cell_name(g: i64, t: i64) -> String {
    format!("tau[g={g},t={t}]")
}

/// Cohort label per observation, never-treated last.
fn cohort_labels(panel: &PanelDataset) -> Vec<usize> {
    let dates = panel.adoption_dates();
    let by_unit: Vec<usize> = panel
        .cohorts()
        .iter()
        .map(|c| match c {
            Cohort::FirstTreatedAt(g) => dates.binary_search(g).unwrap_or(dates.len()),
            Cohort::NeverTreated => dates.len(),
        })
        .collect();
    panel.unit_of_obs().iter().map(|&u| by_unit[u]).collect()
}

/// Regresses `y_tilde` on `d_tilde` interacted with cohort-by-period
/// indicators, absorbing cohort and period effects. The base period
/// `g - 1 - anticipation` is the omitted interaction for each cohort.
/// Interactions that vanish after demeaning are reported as collinear.
pub fn estimate_interacted_regression(resid: &ResidualPanel, anticipation: i64) -> Result<GroupTimeEffects, DidError> {
    if anticipation < 0 {
        return Err(DidError::InvalidAnticipation(anticipation));
    }
    let panel = &*resid.panel;
    let periods = panel.periods();
    let cohort_of_obs = cohort_labels(panel);
    let period_of_obs = panel.period_of_obs();
    let dates = panel.adoption_dates();
    let treatments = panel.treatments();
    let n = panel.len();

    let mut regressors = Vec::new();
    let mut meta = BTreeMap::new();
    let mut omitted = Vec::new();
    for (ci, &g) in dates.iter().enumerate() {
        let b = g - 1 - anticipation;
        if panel.period_index(b).is_none() {
            omitted.extend(periods.iter().filter(|&&t| t != b).map(|&t| Omission { g, t, reason: OmissionReason::NoBasePeriod }));
            continue;
        }
        for (ti, &t) in periods.iter().enumerate() {
            if t == b {
                continue;
            }
            let in_cell: Vec<bool> = (0..n).map(|k| cohort_of_obs[k] == ci && period_of_obs[k] == ti).collect();
            let n_treated = in_cell.iter().filter(|&&c| c).count();
            let n_control = (0..n)
                .filter(|&k| period_of_obs[k] == ti && cohort_of_obs[k] != ci && treatments[k] == 0.0)
                .count();
            if n_treated == 0 {
                omitted.push(Omission { g, t, reason: OmissionReason::NoTreatedUnits });
                continue;
            }
            if n_control == 0 {
                omitted.push(Omission { g, t, reason: OmissionReason::NoControlPool });
                continue;
            }
            let col = (0..n).map(|k| if in_cell[k] { resid.d_tilde[k] } else { 0.0 }).collect();
            let name = cell_name(g, t);
            meta.insert(name.clone(), (g, t, n_treated, n_control));
            regressors.push((name, col));
        }
    }

    let demeaner = Demeaner::new(vec![cohort_of_obs, period_of_obs.to_vec()]);
    let sol = solve_fixed_effects(&resid.y_tilde, &regressors, &demeaner)?;

    let mut warnings = Vec::new();
    for name in &sol.dropped {
        let (g, t, _, _) = meta[name];
        omitted.push(Omission { g, t, reason: OmissionReason::CollinearCell });
        warnings.push(format!("dropped collinear interaction {name}"));
    }
    let cells: BTreeMap<(i64, i64), CellEffect> = sol
        .coefficients
        .iter()
        .map(|(name, &tau)| {
            let (g, t, n_treated, n_control) = meta[name];
            ((g, t), CellEffect { tau, n_treated, n_control, event_time: t - g })
        })
        .collect();
    if cells.is_empty() {
        return Err(DidError::EmptyResult);
    }
    Ok(GroupTimeEffects {
        cells,
        control_rule: ControlRule::NotYetTreated,
        anticipation,
        estimator: Estimator::InteractedRegression,
        omitted,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwfeEstimate {
    pub tau: f64,
    /// Cluster-robust by unit.
    pub se: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
}

/// Static two-way fixed-effects regression of `Y` on `D` with unit and
/// period effects.
pub fn twfe_baseline(panel: &PanelDataset) -> Result<TwfeEstimate, DidError> {
    let units = panel.unit_of_obs().to_vec();
    let demeaner = Demeaner::new(vec![units.clone(), panel.period_of_obs().to_vec()]);
    let sol = solve_fixed_effects(&panel.outcomes(), &[("d".to_string(), panel.treatments())], &demeaner)?;
    let Some(&tau) = sol.coefficients.get("d") else {
        return Err(DidError::Degenerate("treatment is absorbed by the unit and period effects".into()));
    };
    let d = &sol.demeaned_regressors["d"];
    let sxx: f64 = d.iter().map(|v| v * v).sum();
    let mut scores = vec![0.0; panel.n_units()];
    for ((u, dv), e) in units.iter().zip(d).zip(&sol.residuals) {
        scores[*u] += dv * e;
    }
    let g = panel.n_units() as f64;
    let meat: f64 = scores.iter().map(|s| s * s).sum();
    let correction = if g > 1.0 { g / (g - 1.0) } else { f64::NAN };
    Ok(TwfeEstimate {
        tau,
        se: (correction * meat).sqrt() / sxx,
        n_obs: panel.len(),
        n_clusters: panel.n_units(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::didcore::estimate_group_time;
    use crate::panel::{build_panel, RawRecord};

    /// One cohort adopting at `g` plus never-treated units; outcome is a
    /// unit effect, a period effect, idiosyncratic noise, and `effect` on
    /// treated cells.
    fn single_cohort(g: i64, periods: i64, effect: f64) -> PanelDataset {
        let mut rows = Vec::new();
        for u in 0..8 {
            let treated = u < 3;
            for t in 1..=periods {
                let d = treated && t >= g;
                let noise = (((u * 31 + t * 17) % 11) as f64 - 5.0) * 0.05;
                let y = u as f64 * 0.9 + (t as f64).sqrt() + noise + if d { effect } else { 0.0 };
                rows.push(RawRecord::complete(&format!("u{u}"), t, y, d as u8, &[]));
            }
        }
        build_panel(&rows, &[]).unwrap()
    }

    #[test]
    fn regression_matches_contrast_with_single_pre_period() {
        let panel = single_cohort(2, 5, 1.3);
        let r = ResidualPanel::unadjusted(panel);
        let reg = estimate_interacted_regression(&r, 0).unwrap();
        let con = estimate_group_time(&r, ControlRule::NeverTreated, 0).unwrap();
        assert_eq!(reg.cells.len(), con.cells.len());
        for (k, c) in &con.cells {
            let rel = (reg.cells[k].tau - c.tau).abs() / c.tau.abs().max(1.0);
            assert!(rel < 1e-8, "{k:?}: {} vs {}", reg.cells[k].tau, c.tau);
        }
    }

    #[test]
    fn zero_pre_columns_are_reported_collinear() {
        let panel = single_cohort(4, 5, 0.5);
        let r = ResidualPanel::unadjusted(panel);
        let reg = estimate_interacted_regression(&r, 0).unwrap();
        // D is zero before adoption, so the t = 1, 2 interactions vanish.
        assert!(reg.omitted.contains(&Omission { g: 4, t: 1, reason: OmissionReason::CollinearCell }));
        assert!(reg.omitted.contains(&Omission { g: 4, t: 2, reason: OmissionReason::CollinearCell }));
        assert_eq!(reg.warnings.len(), 2);
        assert!(reg.cells.keys().all(|&(_, t)| t >= 4));
    }

    #[test]
    fn twfe_recovers_homogeneous_effect() {
        let panel = single_cohort(3, 6, 0.0);
        let base = twfe_baseline(&panel).unwrap();
        let shifted = single_cohort(3, 6, 2.0);
        let est = twfe_baseline(&shifted).unwrap();
        assert!((est.tau - base.tau - 2.0).abs() < 1e-9);
        assert!(est.se.is_finite() && est.se > 0.0);
        assert_eq!(est.n_clusters, 8);
    }

    #[test]
    fn twfe_single_unit_is_degenerate() {
        let rows: Vec<RawRecord> = (1..=3).map(|t| RawRecord::complete("a", t, t as f64, (t >= 2) as u8, &[])).collect();
        let panel = build_panel(&rows, &[]);
        // A lone treated unit has no control pool and is rejected upstream.
        assert!(panel.is_err());
        let mut rows = rows;
        rows.extend((1..=3).map(|t| RawRecord::complete("b", t, 0.0, (t >= 3) as u8, &[])));
        let panel = build_panel(&rows, &[]).unwrap();
        // Two units, staggered: unit and period effects leave one degree of
        // freedom, so the treatment column survives.
        assert!(twfe_baseline(&panel).is_ok());
    }
}
