//! Unit-level (cluster) bootstrap.
//!
//! `Full` refits the nuisances on every resample; `FixedNuisance` carries
//! each resampled unit's point-estimate residuals along and reruns only the
//! effect estimation and aggregation, which is faster but ignores nuisance
//! estimation noise.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, AggregateError, AggregatedResults};
use crate::crossfit::{CrossfitError, FoldAssignment, ResidualPanel};
use crate::error::Error;
use crate::linalg::{quantile_sorted, sample_sd};
use crate::panel::PanelDataset;
use crate::pipeline::{effects_for, estimate, estimate_with_folds, PipelineConfig};
use crate::rng::{streams, SeededRng};

/// Replicates may fail (e.g. a resample with no control units); more than
/// this share failing aborts the bootstrap.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    #[default]
    Full,
    FixedNuisance,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Interval {
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_draws: usize,
}

impl Interval {
    /// Standard deviation and percentile interval of `draws`; both absent
    /// with fewer than two draws.
    pub fn from_draws(draws: &[f64], ci_level: f64) -> Self {
        let n_draws = draws.len();
        if n_draws < 2 {
            return Self { n_draws, ..Self::default() };
        }
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let alpha = 1.0 - ci_level;
        Self {
            se: sample_sd(draws),
            ci_low: Some(quantile_sorted(&sorted, alpha / 2.0)),
            ci_high: Some(quantile_sorted(&sorted, 1.0 - alpha / 2.0)),
            n_draws,
        }
    }

    pub fn covers(&self, value: f64) -> Option<bool> {
        Some(self.ci_low? <= value && value <= self.ci_high?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub mode: BootstrapMode,
    pub replicates: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub failures: Vec<ReplicateFailure>,
    pub overall: Interval,
    pub event_curve: BTreeMap<i64, Interval>,
    pub groups: BTreeMap<i64, Interval>,
    pub cells: BTreeMap<(i64, i64), Interval>,
    /// Overall ATT of each successful replicate, in replicate order.
    pub overall_draws: Vec<f64>,
}

impl BootstrapSummary {
    pub fn n_succeeded(&self) -> usize {
        self.overall_draws.len()
    }

    /// `FixedNuisance` treats the nuisance predictions as known.
    pub fn is_approximate(&self) -> bool {
        self.mode == BootstrapMode::FixedNuisance
    }

    /// Bootstrap standard errors of the event curve, where available.
    pub fn event_ses(&self) -> BTreeMap<i64, f64> {
        self.event_curve.iter().filter_map(|(&e, iv)| iv.se.map(|s| (e, s))).collect()
    }
}

/// Unit indices drawn with replacement for replicate `r`.
pub fn resample_units(n_units: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = SeededRng::new(seed.wrapping_add(r as u64), streams::BOOTSTRAP);
    (0..n_units).map(|_| rng.below(n_units)).collect()
}

struct Draw {
    agg: AggregatedResults,
    cells: BTreeMap<(i64, i64), f64>,
}

fn summarize(
    draws: Vec<Result<Draw, Error>>,
    mode: BootstrapMode,
    seed: u64,
    ci_level: f64,
) -> Result<BootstrapSummary, Error> {
    let replicates = draws.len();
    let mut failures = Vec::new();
    let mut overall = Vec::new();
    let mut events: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    let mut cells: BTreeMap<(i64, i64), Vec<f64>> = BTreeMap::new();
    for (r, d) in draws.into_iter().enumerate() {
        match d {
            Ok(d) => {
                overall.push(d.agg.overall.att);
                for (e, v) in &d.agg.event_curve {
                    events.entry(*e).or_default().push(v.att);
                }
                for (g, v) in &d.agg.groups {
                    groups.entry(*g).or_default().push(v.att);
                }
                for (k, v) in d.cells {
                    cells.entry(k).or_default().push(v);
                }
            }
            Err(e) => failures.push(ReplicateFailure { replicate: r, message: e.to_string() }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * replicates as f64 {
        let first = &failures[0];
        return Err(AggregateError::TooManyFailures {
            failed: failures.len(),
            total: replicates,
            first_index: first.replicate,
            first_error: first.message.clone(),
        }
        .into());
    }
    Ok(BootstrapSummary {
        mode,
        replicates,
        seed,
        ci_level,
        failures,
        overall: Interval::from_draws(&overall, ci_level),
        event_curve: intervals(events, ci_level),
        groups: intervals(groups, ci_level),
        cells: intervals(cells, ci_level),
        overall_draws: overall,
    })
}

fn intervals<K: Ord>(m: BTreeMap<K, Vec<f64>>, ci_level: f64) -> BTreeMap<K, Interval> {
    m.into_iter().map(|(k, v)| (k, Interval::from_draws(&v, ci_level))).collect()
}

fn check(b: usize, ci_level: f64) -> Result<(), AggregateError> {
    if b == 0 {
        return Err(AggregateError::NoReplicates);
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(AggregateError::InvalidCiLevel(ci_level));
    }
    Ok(())
}

/// Cluster bootstrap of the full pipeline. In `FixedNuisance` mode the point
/// estimate is computed first and its residuals are resampled.
pub fn bootstrap(
    cfg: &PipelineConfig,
    panel: impl Into<Arc<PanelDataset>>,
    b: usize,
    seed: u64,
    mode: BootstrapMode,
    ci_level: f64,
) -> Result<BootstrapSummary, Error> {
    check(b, ci_level)?;
    let panel = panel.into();
    match mode {
        BootstrapMode::FixedNuisance => {
            let point = estimate(panel, cfg)?;
            bootstrap_residuals(cfg, &point.resid, b, seed, ci_level)
        }
        BootstrapMode::Full => {
            let draws = (0..b)
                .into_par_iter()
                .map(|r| {
                    let picks = resample_units(panel.n_units(), seed, r);
                    let (sub, source) = panel.select_units(&picks, true);
                    let rep_cfg = cfg.with_seed(cfg.seed.wrapping_add(r as u64));
                    let folds = clustered_folds(&panel, &sub, &source, cfg.k, rep_cfg.seed)?;
                    let est = estimate_with_folds(sub, &rep_cfg, &folds)?;
                    Ok(Draw { cells: cell_taus(&est.effects), agg: est.aggregated })
                })
                .collect();
            summarize(draws, mode, seed, ci_level)
        }
    }
}

/// `FixedNuisance` bootstrap over an existing residual panel.
pub fn bootstrap_residuals(
    cfg: &PipelineConfig,
    resid: &ResidualPanel,
    b: usize,
    seed: u64,
    ci_level: f64,
) -> Result<BootstrapSummary, Error> {
    check(b, ci_level)?;
    let draws = (0..b)
        .into_par_iter()
        .map(|r| {
            let picks = resample_units(resid.panel.n_units(), seed, r);
            let sub = resid.select_units(&picks, true);
            let effects = effects_for(&sub, cfg)?;
            let agg = aggregate(&effects, ci_level)?;
            Ok(Draw { cells: cell_taus(&effects), agg })
        })
        .collect();
    summarize(draws, BootstrapMode::FixedNuisance, seed, ci_level)
}

fn cell_taus(effects: &crate::didcore::GroupTimeEffects) -> BTreeMap<(i64, i64), f64> {
    effects.cells.iter().map(|(k, c)| (*k, c.tau)).collect()
}

/// Folds for a resampled panel that keep every copy of an original unit in
/// the same fold, so duplicated units never sit on both sides of a split.
fn clustered_folds(
    original: &PanelDataset,
    sub: &PanelDataset,
    source: &[usize],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, CrossfitError> {
    if k == 0 {
        return Err(CrossfitError::ZeroFolds);
    }
    let origin_of: Vec<usize> =
        (0..sub.n_units()).map(|u| original.unit_of_obs()[source[sub.unit_range(u).start]]).collect();
    let distinct: Vec<usize> = origin_of.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if k > distinct.len() {
        return Err(CrossfitError::TooManyFolds { k, units: distinct.len() });
    }
    let mut order: Vec<usize> = (0..distinct.len()).collect();
    SeededRng::new(seed, streams::FOLDS).shuffle(&mut order);
    let mut fold_of_origin = BTreeMap::new();
    for (rank, &i) in order.iter().enumerate() {
        fold_of_origin.insert(distinct[i], rank % k);
    }
    let fold_of_unit =
        sub.units().iter().zip(&origin_of).map(|(id, o)| (id.clone(), fold_of_origin[o])).collect();
    Ok(FoldAssignment { k, fold_of_unit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{build_panel, RawRecord};

    fn noisy_panel() -> PanelDataset {
        let mut rows = Vec::new();
        for u in 0..30 {
            let g = match u % 3 {
                0 => Some(3),
                1 => Some(4),
                _ => None,
            };
            for t in 1..=5 {
                let d = g.is_some_and(|g| t >= g);
                let noise = ((u * 37 + t * 11) % 13) as f64 / 13.0 - 0.5;
                let x = (u % 7) as f64 / 7.0;
                rows.push(RawRecord::complete(&format!("u{u:02}"), t, x + 0.2 * t as f64 + noise + d as u8 as f64, d as u8, &[x]));
            }
        }
        build_panel(&rows, &["x".to_string()]).unwrap()
    }

    #[test]
    fn percentile_interval_matches_type7() {
        let iv = Interval::from_draws(&[4.0, 1.0, 3.0, 2.0, 5.0], 0.5);
        assert_eq!(iv.ci_low, Some(2.0));
        assert_eq!(iv.ci_high, Some(4.0));
        assert!((iv.se.unwrap() - 2.5_f64.sqrt()).abs() < 1e-15);
        assert_eq!(Interval::from_draws(&[1.0], 0.95).se, None);
    }

    #[test]
    fn single_replicate_has_no_se() {
        let cfg = PipelineConfig { k: 2, ..Default::default() };
        let b = bootstrap(&cfg, noisy_panel(), 1, 9, BootstrapMode::FixedNuisance, 0.95).unwrap();
        assert_eq!(b.overall.se, None);
        assert_eq!(b.n_succeeded(), 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = PipelineConfig { k: 2, ..Default::default() };
        let panel = Arc::new(noisy_panel());
        let a = bootstrap(&cfg, panel.clone(), 20, 5, BootstrapMode::Full, 0.9).unwrap();
        let b = bootstrap(&cfg, panel.clone(), 20, 5, BootstrapMode::Full, 0.9).unwrap();
        assert_eq!(a, b);
        let c = bootstrap(&cfg, panel, 20, 6, BootstrapMode::Full, 0.9).unwrap();
        assert_ne!(a.overall_draws, c.overall_draws);
    }

    #[test]
    fn deterministic_outcomes_give_zero_se() {
        // Residuals that are exactly additive in unit, period and treatment:
        // every resample reproduces the same cell effects.
        let panel = Arc::new(noisy_panel());
        let y: Vec<f64> = panel
            .observations()
            .iter()
            .map(|o| o.covariates[0] + 0.3 * o.time as f64 + 1.5 * o.treatment as f64)
            .collect();
        let d = panel.treatments();
        let resid = ResidualPanel::from_parts(panel, y, d).unwrap();
        let b = bootstrap_residuals(&PipelineConfig::default(), &resid, 30, 1, 0.95).unwrap();
        assert!(b.overall.se.unwrap() < 1e-12);
        assert!(b.failures.is_empty());
    }

    #[test]
    fn folds_keep_duplicates_together() {
        let panel = noisy_panel();
        let picks = vec![0, 0, 1, 2, 2, 2, 5, 7, 9, 9];
        let (sub, source) = panel.select_units(&picks, true);
        let folds = clustered_folds(&panel, &sub, &source, 3, 4).unwrap();
        for (id, f) in &folds.fold_of_unit {
            let stem = id.split('#').next().unwrap();
            for (other, g) in &folds.fold_of_unit {
                if other.starts_with(&format!("{stem}#")) {
                    assert_eq!(f, g);
                }
            }
        }
        assert!(matches!(clustered_folds(&panel, &sub, &source, 7, 4), Err(CrossfitError::TooManyFolds { .. })));
    }

    #[test]
    fn zero_replicates_rejected() {
        let cfg = PipelineConfig::default();
        assert!(bootstrap(&cfg, noisy_panel(), 0, 0, BootstrapMode::Full, 0.95).is_err());
    }
}
