//! Repeated generate-and-estimate runs scored against the oracle.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, DGPConfig, SimulateError};
use crate::aggregate::{bootstrap, bootstrap_residuals, placebo_test, pretrend_test, BootstrapMode};
use crate::didcore::twfe_baseline;
use crate::error::Error;
use crate::linalg::sample_sd;
use crate::pipeline::{estimate, unadjusted, PipelineConfig};

/// Bootstrap seeds of consecutive replications are this far apart, so their
/// replicate seeds (`base + b`) never overlap for `B` below the stride.
pub const BOOTSTRAP_SEED_STRIDE: u64 = 1 << 20;

pub const PRETREND_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub pipeline: PipelineConfig,
    /// Bootstrap replicates per replication; 0 skips inference.
    #[serde(rename = "B")]
    pub bootstrap_b: usize,
    pub bootstrap_mode: BootstrapMode,
    pub ci_level: f64,
    pub placebo_shift: Option<i64>,
    pub pretrend: bool,
    /// Also score static TWFE and the unadjusted contrast on each draw.
    pub baselines: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            bootstrap_b: 199,
            bootstrap_mode: BootstrapMode::FixedNuisance,
            ci_level: 0.95,
            placebo_shift: None,
            pretrend: false,
            baselines: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub true_overall_att: f64,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub covered: Option<bool>,
    pub twfe: Option<f64>,
    pub unadjusted: Option<f64>,
    pub placebo_att: Option<f64>,
    pub placebo_covers_zero: Option<bool>,
    pub placebo_error: Option<String>,
    pub pretrend_p: Option<f64>,
    /// Smallest aggregation weight across all schemes of this replication.
    pub min_weight: f64,
    /// Largest `|sum(weights) - 1|` across all schemes of this replication.
    pub max_weight_sum_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Monte Carlo standard error of the bias.
    pub mc_se: f64,
}

impl MethodStats {
    fn from_errors(estimates: &[f64], truths: &[f64]) -> Self {
        let n = estimates.len() as f64;
        let errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e - t).collect();
        Self {
            mean_estimate: estimates.iter().sum::<f64>() / n,
            bias: errors.iter().sum::<f64>() / n,
            rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            mc_se: sample_sd(&errors).map_or(f64::NAN, |s| s / n.sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboStats {
    pub n: usize,
    pub mean: f64,
    pub mc_se: f64,
    pub coverage_of_zero: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub scenario: DGPConfig,
    pub reps: usize,
    pub seed: u64,
    pub sdidml: MethodStats,
    pub coverage: Option<f64>,
    pub twfe: Option<MethodStats>,
    pub unadjusted: Option<MethodStats>,
    pub placebo: Option<PlaceboStats>,
    pub pretrend_rejection_rate: Option<f64>,
    pub min_weight: f64,
    pub max_weight_sum_error: f64,
    pub records: Vec<RepRecord>,
}

fn share(flags: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let v: Vec<bool> = flags.flatten().collect();
    (!v.is_empty()).then(|| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64)
}

fn one_rep(scenario: &DGPConfig, mc: &McConfig, rep: usize, seed: u64) -> Result<RepRecord, Error> {
    let rep_seed = seed.wrapping_add(rep as u64);
    let boot_seed = rep_seed.wrapping_mul(BOOTSTRAP_SEED_STRIDE);
    let oracle = generate(&DGPConfig { seed: rep_seed, ..scenario.clone() })?;
    let panel = Arc::new(oracle.panel);
    let cfg = mc.pipeline.with_seed(rep_seed);
    let point = estimate(panel.clone(), &cfg)?;

    let boot = match (mc.bootstrap_b, mc.bootstrap_mode) {
        (0, _) => None,
        (b, BootstrapMode::FixedNuisance) => Some(bootstrap_residuals(&cfg, &point.resid, b, boot_seed, mc.ci_level)?),
        (b, BootstrapMode::Full) => Some(bootstrap(&cfg, panel.clone(), b, boot_seed, BootstrapMode::Full, mc.ci_level)?),
    };
    let truth = oracle.true_overall_att;
    let (se, ci_low, ci_high) = boot.as_ref().map_or((None, None, None), |b| (b.overall.se, b.overall.ci_low, b.overall.ci_high));

    let pretrend_p = match (&boot, mc.pretrend) {
        (Some(b), true) => pretrend_test(&point.effects, &b.event_ses()).ok().map(|r| r.p_value),
        _ => None,
    };
    let (placebo_att, placebo_covers_zero, placebo_error) = match mc.placebo_shift {
        Some(shift) => {
            match placebo_test(&panel, &cfg, shift, mc.bootstrap_b.max(1), boot_seed, mc.bootstrap_mode, mc.ci_level) {
                Ok(r) => (Some(r.pseudo_att), r.covers_zero(), None),
                Err(e) => (None, None, Some(e.to_string())),
            }
        }
        None => (None, None, None),
    };
    let (twfe, unadj) = if mc.baselines {
        (Some(twfe_baseline(&panel)?.tau), Some(unadjusted(panel.clone(), &cfg)?.aggregated.overall.att))
    } else {
        (None, None)
    };

    let mut min_weight = f64::INFINITY;
    let mut max_weight_sum_error: f64 = 0.0;
    for w in point.aggregated.all_weight_sets() {
        min_weight = w.values().copied().fold(min_weight, f64::min);
        max_weight_sum_error = max_weight_sum_error.max((w.values().sum::<f64>() - 1.0).abs());
    }

    Ok(RepRecord {
        rep,
        seed: rep_seed,
        true_overall_att: truth,
        estimate: point.aggregated.overall.att,
        se,
        ci_low,
        ci_high,
        covered: ci_low.zip(ci_high).map(|(lo, hi)| lo <= truth && truth <= hi),
        twfe,
        unadjusted: unadj,
        placebo_att,
        placebo_covers_zero,
        placebo_error,
        pretrend_p,
        min_weight,
        max_weight_sum_error,
    })
}

/// Replication `r` draws its panel and folds from seed `seed + r`.
/// Replications run in parallel and are reduced in index order.
pub fn monte_carlo(scenario: &DGPConfig, mc: &McConfig, reps: usize, seed: u64) -> Result<McSummary, Error> {
    if reps == 0 {
        return Err(SimulateError::InvalidConfig("reps must be at least 1".into()).into());
    }
    scenario.validate()?;
    let results: Vec<Result<RepRecord, Error>> = (0..reps).into_par_iter().map(|r| one_rep(scenario, mc, r, seed)).collect();

    let mut records = Vec::with_capacity(reps);
    let mut failed = Vec::new();
    let mut first_error = None;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => {
                failed.push(r);
                first_error.get_or_insert(e.to_string());
            }
        }
    }
    if !failed.is_empty() {
        return Err(SimulateError::ReplicationsFailed { indices: failed, first_error: first_error.unwrap_or_default() }.into());
    }

    let truths: Vec<f64> = records.iter().map(|r| r.true_overall_att).collect();
    let stats_of = |f: fn(&RepRecord) -> Option<f64>| {
        let est: Option<Vec<f64>> = records.iter().map(f).collect();
        est.map(|e| MethodStats::from_errors(&e, &truths))
    };
    let placebo_atts: Vec<f64> = records.iter().filter_map(|r| r.placebo_att).collect();
    let placebo = (!placebo_atts.is_empty()).then(|| PlaceboStats {
        n: placebo_atts.len(),
        mean: placebo_atts.iter().sum::<f64>() / placebo_atts.len() as f64,
        mc_se: sample_sd(&placebo_atts).map_or(f64::NAN, |s| s / (placebo_atts.len() as f64).sqrt()),
        coverage_of_zero: share(records.iter().map(|r| r.placebo_covers_zero)),
    });

    Ok(McSummary {
        scenario: scenario.clone(),
        reps,
        seed,
        sdidml: stats_of(|r| Some(r.estimate)).expect("every record has an estimate"),
        coverage: share(records.iter().map(|r| r.covered)),
        twfe: stats_of(|r| r.twfe),
        unadjusted: stats_of(|r| r.unadjusted),
        placebo,
        pretrend_rejection_rate: share(records.iter().map(|r| r.pretrend_p.map(|p| p < PRETREND_ALPHA))),
        min_weight: records.iter().map(|r| r.min_weight).fold(f64::INFINITY, f64::min),
        max_weight_sum_error: records.iter().map(|r| r.max_weight_sum_error).fold(0.0, f64::max),
        records,
    })
}
