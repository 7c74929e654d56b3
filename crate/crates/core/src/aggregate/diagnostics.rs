//! Robustness battery: pre-trend Wald test, placebo adoption dates and an
//! overlap summary of the treatment model.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::bootstrap::{bootstrap, bootstrap_residuals, BootstrapMode};
use super::{scheme_weights, AggregateError, Scheme};
use crate::crossfit::NuisanceFits;
use crate::didcore::GroupTimeEffects;
use crate::error::Error;
use crate::panel::{Cohort, PanelDataset, PanelObservation};
use crate::pipeline::{estimate, PipelineConfig};

pub const OVERLAP_BINS: usize = 20;
pub const OVERLAP_BAND: (f64, f64) = (0.05, 0.95);
/// Share of clipped observations above which overlap is flagged as weak.
pub const WEAK_OVERLAP_SHARE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTerm {
    pub e: i64,
    pub att: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrendReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub per_e: Vec<EventTerm>,
    /// The chi-square reference ignores estimation noise in the SEs and
    /// correlation between event times.
    pub approximate: bool,
}

impl PretrendReport {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Sum of squared z-scores over pre-treatment event times outside the
/// anticipation window, against a chi-square with one degree of freedom per
/// term. Event times without a positive standard error are reported but
/// left out of the statistic.
pub fn pretrend_test(effects: &GroupTimeEffects, boot_ses: &BTreeMap<i64, f64>) -> Result<PretrendReport, AggregateError> {
    let per_e: Vec<EventTerm> = scheme_weights(effects, Scheme::EventTime)
        .into_iter()
        .filter(|(e, _)| *e < -effects.anticipation)
        .map(|(e, w)| {
            let att: f64 = w.iter().map(|(k, wk)| wk * effects.cells[k].tau).sum();
            let se = boot_ses.get(&e).copied().filter(|s| s.is_finite() && *s > 0.0);
            EventTerm { e, att, se, z: se.map(|s| att / s) }
        })
        .collect();
    if per_e.is_empty() {
        return Err(AggregateError::NoPreCells);
    }
    let zs: Vec<f64> = per_e.iter().filter_map(|t| t.z).collect();
    if zs.is_empty() {
        return Err(AggregateError::MissingStandardErrors);
    }
    let statistic: f64 = zs.iter().map(|z| z * z).sum();
    let dof = zs.len();
    let chi2 = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(PretrendReport { statistic, dof, p_value: chi2.sf(statistic), per_e, approximate: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboReport {
    pub shift: i64,
    pub pseudo_att: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_obs: usize,
}

impl PlaceboReport {
    pub fn covers_zero(&self) -> Option<bool> {
        Some(self.ci_low? <= 0.0 && 0.0 <= self.ci_high?)
    }
}

/// Pre-treatment observations only, with each cohort's adoption moved to
/// `g - shift`. Never-treated units keep the periods before the last
/// adoption date.
pub fn placebo_panel(panel: &PanelDataset, shift: i64, anticipation: i64) -> Result<PanelDataset, Error> {
    if shift < 1 {
        return Err(AggregateError::InvalidShift(shift).into());
    }
    let dates = panel.adoption_dates();
    let needed = (shift + 1 + anticipation.max(0)) as usize;
    for &g in &dates {
        let available = panel.periods().iter().filter(|&&t| t < g).count();
        if available < needed {
            return Err(AggregateError::InsufficientPrePeriods { g, available, needed, shift }.into());
        }
    }
    let last = dates.iter().copied().max().unwrap_or(i64::MAX);
    let obs: Vec<PanelObservation> = panel
        .observations()
        .iter()
        .zip(panel.unit_of_obs())
        .filter_map(|(o, &u)| {
            let (keep, treated) = match panel.cohorts()[u] {
                Cohort::FirstTreatedAt(g) => (o.time < g, o.time >= g - shift),
                Cohort::NeverTreated => (o.time < last, false),
            };
            keep.then(|| PanelObservation { treatment: treated as u8, ..o.clone() })
        })
        .collect();
    Ok(PanelDataset::from_observations(obs, panel.covariate_names().to_vec())?)
}

/// Reruns the full pipeline (including the nuisance fits) on the placebo
/// panel and bootstraps the pseudo-ATT.
#[allow(clippy::too_many_arguments)]
pub fn placebo_test(
    panel: &PanelDataset,
    cfg: &PipelineConfig,
    shift: i64,
    b: usize,
    seed: u64,
    mode: BootstrapMode,
    ci_level: f64,
) -> Result<PlaceboReport, Error> {
    let pseudo = Arc::new(placebo_panel(panel, shift, cfg.anticipation)?);
    let point = estimate(pseudo.clone(), cfg)?;
    let boot = match mode {
        BootstrapMode::FixedNuisance => bootstrap_residuals(cfg, &point.resid, b, seed, ci_level)?,
        BootstrapMode::Full => bootstrap(cfg, pseudo.clone(), b, seed, mode, ci_level)?,
    };
    Ok(PlaceboReport {
        shift,
        pseudo_att: point.aggregated.overall.att,
        se: boot.overall.se,
        ci_low: boot.overall.ci_low,
        ci_high: boot.overall.ci_high,
        n_obs: pseudo.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Counts of `m_hat` in 20 equal-width bins over [0, 1].
    pub histogram: Vec<usize>,
    pub min: f64,
    pub max: f64,
    pub n: usize,
    pub n_clipped: usize,
    pub clip_eps: f64,
    pub share_outside: f64,
    pub weak_overlap: bool,
}

pub fn overlap_report(fits: &NuisanceFits) -> OverlapReport {
    let m = &fits.m_hat;
    let mut histogram = vec![0; OVERLAP_BINS];
    for &p in m {
        let bin = ((p * OVERLAP_BINS as f64).floor().max(0.0) as usize).min(OVERLAP_BINS - 1);
        histogram[bin] += 1;
    }
    let n = m.len();
    let outside = m.iter().filter(|&&p| p < OVERLAP_BAND.0 || p > OVERLAP_BAND.1).count();
    OverlapReport {
        histogram,
        min: m.iter().copied().fold(f64::INFINITY, f64::min),
        max: m.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        n,
        n_clipped: fits.n_clipped,
        clip_eps: fits.clip_eps,
        share_outside: if n > 0 { outside as f64 / n as f64 } else { 0.0 },
        weak_overlap: fits.n_clipped as f64 > WEAK_OVERLAP_SHARE * n as f64,
    }
}

/// A diagnostic that either ran or was skipped with a reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Section<T> {
    Ok(T),
    Skipped { reason: String },
}

impl<T> Section<T> {
    pub fn from_result<E: std::fmt::Display>(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Section::Ok(v),
            Err(e) => Section::Skipped { reason: e.to_string() },
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Section::Ok(v) => Some(v),
            Section::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub pretrend: Section<PretrendReport>,
    pub placebo: Section<PlaceboReport>,
    pub overlap: Section<OverlapReport>,
    pub warnings: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::tests::effects_from;
    use crate::crossfit::{FoldAssignment, OutcomeSample};
    use crate::learners::LearnerSpec;
    use crate::panel::{build_panel, RawRecord};

    fn fits_with(m_hat: Vec<f64>, n_clipped: usize) -> NuisanceFits {
        NuisanceFits {
            g_hat: vec![0.0; m_hat.len()],
            m_hat,
            folds: FoldAssignment { k: 1, fold_of_unit: BTreeMap::new() },
            g_spec: LearnerSpec::Mean,
            m_spec: LearnerSpec::Mean,
            outcome_sample: OutcomeSample::All,
            clip_eps: 0.01,
            n_clipped,
            warnings: vec![],
        }
    }

    #[test]
    fn zero_pre_effects_give_null_statistic() {
        let eff = effects_from(&[((4, 1), 0.0, 3), ((4, 2), 0.0, 3), ((4, 4), 1.0, 3)]);
        let ses = BTreeMap::from([(-3, 0.2), (-2, 0.1)]);
        let r = pretrend_test(&eff, &ses).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.dof, 2);
    }

    #[test]
    fn statistic_matches_hand_computation() {
        let eff = effects_from(&[((4, 1), 0.3, 3), ((4, 2), -0.2, 3), ((4, 4), 1.0, 3)]);
        let ses = BTreeMap::from([(-3, 0.1), (-2, 0.1)]);
        let r = pretrend_test(&eff, &ses).unwrap();
        assert!((r.statistic - 13.0).abs() < 1e-12);
        // Survival of chi-square(2) at 13 is exp(-6.5).
        assert!((r.p_value - (-6.5_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn relabeling_cohorts_keeps_statistic() {
        let a = effects_from(&[((4, 1), 0.3, 3), ((4, 2), -0.2, 5), ((4, 4), 1.0, 3)]);
        let b = effects_from(&[((6, 3), 0.3, 3), ((6, 4), -0.2, 5), ((6, 6), 1.0, 3)]);
        let ses = BTreeMap::from([(-3, 0.15), (-2, 0.4)]);
        assert_eq!(pretrend_test(&a, &ses).unwrap().statistic, pretrend_test(&b, &ses).unwrap().statistic);
    }

    #[test]
    fn pretrend_errors() {
        let post_only = effects_from(&[((2, 2), 1.0, 3)]);
        assert_eq!(pretrend_test(&post_only, &BTreeMap::new()).unwrap_err(), AggregateError::NoPreCells);
        let pre = effects_from(&[((4, 1), 0.3, 3), ((4, 4), 1.0, 3)]);
        assert_eq!(pretrend_test(&pre, &BTreeMap::new()).unwrap_err(), AggregateError::MissingStandardErrors);
        let mut anticipating = pre.clone();
        anticipating.anticipation = 3;
        assert_eq!(pretrend_test(&anticipating, &BTreeMap::from([(-3, 1.0)])).unwrap_err(), AggregateError::NoPreCells);
    }

    #[test]
    fn constant_propensity_occupies_one_bin() {
        let r = overlap_report(&fits_with(vec![0.5; 40], 0));
        assert_eq!(r.histogram.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(r.histogram[10], 40);
        assert_eq!(r.share_outside, 0.0);
        assert!(!r.weak_overlap);
    }

    #[test]
    fn uniform_on_clipped_support_tail_share() {
        // Exact grid on [0.01, 0.99]; the analytic tail mass is
        // (0.04 + 0.04) / 0.98.
        let n = 98_001;
        let m: Vec<f64> = (0..n).map(|i| 0.01 + 0.98 * i as f64 / (n - 1) as f64).collect();
        let r = overlap_report(&fits_with(m, 0));
        assert!((r.share_outside - 0.08 / 0.98).abs() < 1e-4);
        assert_eq!(r.histogram.iter().sum::<usize>(), n);
    }

    #[test]
    fn heavy_clipping_flags_weak_overlap() {
        assert!(overlap_report(&fits_with(vec![0.01; 10], 2)).weak_overlap);
        assert!(!overlap_report(&fits_with(vec![0.01; 10], 1)).weak_overlap);
    }

    fn staggered() -> PanelDataset {
        let mut rows = Vec::new();
        for (u, g) in [("a", Some(4)), ("b", Some(5)), ("c", None), ("d", None)] {
            for t in 1..=6 {
                let d = g.is_some_and(|g| t >= g);
                rows.push(RawRecord::complete(u, t, t as f64, d as u8, &[]));
            }
        }
        build_panel(&rows, &[]).unwrap()
    }

    #[test]
    fn placebo_panel_keeps_pre_period_only() {
        let p = placebo_panel(&staggered(), 2, 0).unwrap();
        assert_eq!(p.cohort("a"), Some(Cohort::FirstTreatedAt(2)));
        assert_eq!(p.cohort("b"), Some(Cohort::FirstTreatedAt(3)));
        assert_eq!(p.cohort("c"), Some(Cohort::NeverTreated));
        assert_eq!(p.periods(), &[1, 2, 3, 4]);
        assert!(p.observations().iter().all(|o| o.time < 5));
        assert_eq!(p.len(), 3 + 4 + 4 + 4);
    }

    #[test]
    fn placebo_shift_too_large() {
        let err = placebo_panel(&staggered(), 3, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::Aggregate(AggregateError::InsufficientPrePeriods { g: 4, available: 3, needed: 4, .. })
        ));
        assert!(placebo_panel(&staggered(), 0, 0).is_err());
    }
}
