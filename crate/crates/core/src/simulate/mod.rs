//! Synthetic staggered-adoption panels with known effects.
//!
//! Covariates are standard normal at baseline. A selection index
//! `s = (x0 + x1 - x2 + x3 + x4) / sqrt(5)` of baseline values raises the
//! probability of ever being treated. The first `n_time_varying` covariates
//! move away from their baseline value by an AR(1) deviation that drifts
//! along the same loadings at rate `covariate_drift * s`, so with a non-zero
//! drift the covariate paths of treated and never-treated units diverge and
//! an unadjusted comparison is biased. With zero drift the deviations are
//! pure noise.
//!
//! Untreated outcomes are
//! `Y(0) = f(X_it) + u_i + lambda_t + trend_violation * (t - 1) * ever_treated + noise_sd * e_it`
//! with `u_i ~ noise_sd * N(0, 1)` and `lambda_t = 0.25 (t - 1)`. Treated
//! outcomes add the configured effect. Oracle values are exact finite-sample
//! means of `Y(1) - Y(0)` over treated observations.

pub mod monte_carlo;

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::panel::{PanelDataset, PanelObservation, UnitId};
use crate::rng::{streams, SeededRng, GENERATOR_NAME, GENERATOR_VERSION};

pub use monte_carlo::{monte_carlo, McConfig, McSummary, MethodStats, RepRecord};

/// Coefficients of the linear outcome index on x0..x4.
pub const LINEAR_BETA: [f64; 5] = [1.0, -0.8, 0.6, 0.5, -0.4];
const AR_RHO: f64 = 0.8;
const SELECTION_LOADINGS: [f64; 5] = [1.0, 1.0, -1.0, 1.0, 1.0];
const TIME_EFFECT_SLOPE: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("unknown scenario {0:?}; valid scenarios: S1_homogeneous, S2_dynamic_heterogeneous, S3_highdim_nonlinear, S4_null, S5_pretrend_violation")]
    UnknownScenario(String),
    #[error("{} of the Monte Carlo replications failed (indices {indices:?}); first failure: {first_error}", indices.len())]
    ReplicationsFailed { indices: Vec<usize>, first_error: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confounding {
    None,
    Linear,
    SparseNonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectSpec {
    Null,
    Homogeneous { tau: f64 },
    /// Effect at event time `e` is `effects[min(e, len - 1)]`.
    DynamicByEventTime { effects: Vec<f64> },
    /// Units in subgroup "a" get `tau_a`, units in "b" get `tau_b`.
    SubgroupSplit { tau_a: f64, tau_b: f64 },
}

impl EffectSpec {
    pub fn value(&self, event_time: i64, subgroup_a: bool) -> f64 {
        match self {
            EffectSpec::Null => 0.0,
            EffectSpec::Homogeneous { tau } => *tau,
            EffectSpec::DynamicByEventTime { effects } => effects[(event_time.max(0) as usize).min(effects.len() - 1)],
            EffectSpec::SubgroupSplit { tau_a, tau_b } => {
                if subgroup_a {
                    *tau_a
                } else {
                    *tau_b
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DGPConfig {
    pub n_units: usize,
    pub n_periods: usize,
    pub p: usize,
    /// Adoption periods, each in `2..=n_periods`.
    pub cohort_times: Vec<i64>,
    /// Population share of each adoption cohort.
    pub cohort_shares: Vec<f64>,
    pub never_treated_share: f64,
    pub selection_strength: f64,
    pub confounding: Confounding,
    pub effect: EffectSpec,
    pub noise_sd: f64,
    pub trend_violation: f64,
    pub seed: u64,
    #[serde(default = "default_time_varying")]
    pub n_time_varying: usize,
    #[serde(default = "default_drift")]
    pub covariate_drift: f64,
}

fn default_time_varying() -> usize {
    2
}

fn default_drift() -> f64 {
    0.0
}

impl DGPConfig {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: String| Err(SimulateError::InvalidConfig(m));
        if self.n_units < 2 || self.n_periods < 2 {
            return bad("need at least 2 units and 2 periods".into());
        }
        if self.confounding != Confounding::None && self.p < 5 {
            return bad(format!("confounded outcomes use x0..x4, so p must be >= 5 (got {})", self.p));
        }
        if self.p < 5 && self.selection_strength != 0.0 {
            return bad("selection uses x0..x4, so p must be >= 5 when selection_strength != 0".into());
        }
        if self.n_time_varying > self.p {
            return bad(format!("n_time_varying {} exceeds p {}", self.n_time_varying, self.p));
        }
        if self.cohort_times.is_empty() || self.cohort_times.len() != self.cohort_shares.len() {
            return bad("cohort_times and cohort_shares must be non-empty and of equal length".into());
        }
        if self.cohort_times.windows(2).any(|w| w[0] >= w[1]) {
            return bad("cohort_times must be strictly increasing".into());
        }
        if self.cohort_times.iter().any(|&g| g < 2 || g > self.n_periods as i64) {
            return bad(format!("cohort_times must lie in (1, {}]", self.n_periods));
        }
        let shares = self.cohort_shares.iter().chain(std::iter::once(&self.never_treated_share));
        if shares.clone().any(|s| !(0.0..=1.0).contains(s)) {
            return bad("shares must lie in [0, 1]".into());
        }
        if (shares.sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("cohort shares plus never_treated_share must sum to 1".into());
        }
        if self.never_treated_share >= 1.0 {
            return bad("never_treated_share must be below 1".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd));
        }
        for (name, v) in [
            ("selection_strength", self.selection_strength),
            ("trend_violation", self.trend_violation),
            ("covariate_drift", self.covariate_drift),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if let EffectSpec::DynamicByEventTime { effects } = &self.effect {
            if effects.is_empty() {
                return bad("DynamicByEventTime needs at least one effect".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "S1_homogeneous")]
    S1Homogeneous,
    #[serde(rename = "S2_dynamic_heterogeneous")]
    S2DynamicHeterogeneous,
    #[serde(rename = "S3_highdim_nonlinear")]
    S3HighdimNonlinear,
    #[serde(rename = "S4_null")]
    S4Null,
    #[serde(rename = "S5_pretrend_violation")]
    S5PretrendViolation,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::S1Homogeneous,
        Scenario::S2DynamicHeterogeneous,
        Scenario::S3HighdimNonlinear,
        Scenario::S4Null,
        Scenario::S5PretrendViolation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::S1Homogeneous => "S1_homogeneous",
            Scenario::S2DynamicHeterogeneous => "S2_dynamic_heterogeneous",
            Scenario::S3HighdimNonlinear => "S3_highdim_nonlinear",
            Scenario::S4Null => "S4_null",
            Scenario::S5PretrendViolation => "S5_pretrend_violation",
        }
    }
}

impl FromStr for Scenario {
    type Err = SimulateError;

    /// Accepts the full name or its prefix, e.g. `S1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s) || sc.name()[..2].eq_ignore_ascii_case(s))
            .ok_or_else(|| SimulateError::UnknownScenario(s.to_string()))
    }
}

/// The fixed configurations behind each scenario name.
///
/// * S1: 200 units, 8 periods, 20 covariates, linear confounding, effect 1.
/// * S2: three early cohorts, few never-treated units and effects growing
///   with exposure, where static TWFE is badly biased.
/// * S3: 200 covariates, sparse nonlinear confounding, strong selection.
/// * S4: S1 with no effect.
/// * S5: S1 with a treated-group trend of 0.25 per period.
pub fn scenario(name: Scenario) -> DGPConfig {
    let s1 = DGPConfig {
        n_units: 200,
        n_periods: 8,
        p: 20,
        cohort_times: vec![3, 5, 7],
        cohort_shares: vec![0.2, 0.2, 0.2],
        never_treated_share: 0.4,
        selection_strength: 1.0,
        confounding: Confounding::Linear,
        effect: EffectSpec::Homogeneous { tau: 1.0 },
        noise_sd: 1.0,
        trend_violation: 0.0,
        seed: 1,
        n_time_varying: 2,
        covariate_drift: 0.0,
    };
    match name {
        Scenario::S1Homogeneous => s1,
        Scenario::S2DynamicHeterogeneous => DGPConfig {
            cohort_times: vec![2, 4, 6],
            cohort_shares: vec![0.35, 0.3, 0.2],
            never_treated_share: 0.15,
            selection_strength: 0.5,
            effect: EffectSpec::DynamicByEventTime { effects: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5] },
            ..s1
        },
        Scenario::S3HighdimNonlinear => DGPConfig {
            p: 200,
            selection_strength: 1.5,
            confounding: Confounding::SparseNonlinear,
            n_time_varying: 3,
            covariate_drift: 0.2,
            ..s1
        },
        Scenario::S4Null => DGPConfig { effect: EffectSpec::Null, ..s1 },
        Scenario::S5PretrendViolation => DGPConfig { trend_violation: 0.25, ..s1 },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePanel {
    pub panel: PanelDataset,
    pub true_att: BTreeMap<(i64, i64), f64>,
    pub true_overall_att: f64,
    pub true_event_curve: BTreeMap<i64, f64>,
    pub true_group_att: BTreeMap<i64, f64>,
    /// "a" or "b"; only meaningful for `SubgroupSplit`.
    pub subgroup_of_unit: BTreeMap<UnitId, String>,
    pub config: DGPConfig,
}

impl OraclePanel {
    /// The `oracle.json` sidecar.
    pub fn oracle_json(&self) -> Value {
        json!({
            "true_att": self.true_att.iter().map(|(&(g, t), v)| json!({"g": g, "t": t, "att": v})).collect::<Vec<_>>(),
            "true_overall_att": self.true_overall_att,
            "true_event_curve": self.true_event_curve.iter().map(|(e, v)| json!({"e": e, "att": v})).collect::<Vec<_>>(),
            "true_group_att": self.true_group_att.iter().map(|(g, v)| json!({"g": g, "att": v})).collect::<Vec<_>>(),
            "subgroup_of_unit": self.subgroup_of_unit,
            "config": self.config,
            "generator": { "name": GENERATOR_NAME, "version": GENERATOR_VERSION },
        })
    }
}

/// Outcome index of the untreated potential outcome.
pub fn outcome_index(confounding: Confounding, x: &[f64]) -> f64 {
    match confounding {
        Confounding::None => 0.0,
        Confounding::Linear => LINEAR_BETA.iter().zip(x).map(|(b, v)| b * v).sum(),
        Confounding::SparseNonlinear => {
            1.5 * (x[0] > 0.0) as u8 as f64 + 0.8 * x[1] - x[2] * (x[3] > 0.0) as u8 as f64 + 1.2 * x[3] * x[4]
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Sums {
    sum: f64,
    n: usize,
}

fn add<K: Ord>(map: &mut BTreeMap<K, Sums>, key: K, v: f64) {
    let s = map.entry(key).or_insert(Sums { sum: 0.0, n: 0 });
    s.sum += v;
    s.n += 1;
}

fn means<K: Ord + Copy>(m: &BTreeMap<K, Sums>) -> BTreeMap<K, f64> {
    m.iter().map(|(k, s)| (*k, s.sum / s.n as f64)).collect()
}

/// Draws one panel. A pure function of `config`, including its seed.
pub fn generate(config: &DGPConfig) -> Result<OraclePanel, SimulateError> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed, streams::DGP);
    let t_max = config.n_periods as i64;
    let width = (config.n_units - 1).to_string().len();
    let p = config.p;
    let p_ever = 1.0 - config.never_treated_share;
    let cohort_cum: Vec<f64> = config
        .cohort_shares
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s / p_ever;
            Some(*acc)
        })
        .collect();

    let mut obs = Vec::with_capacity(config.n_units * config.n_periods);
    let mut cells: BTreeMap<(i64, i64), Sums> = BTreeMap::new();
    let mut events: BTreeMap<i64, Sums> = BTreeMap::new();
    let mut groups: BTreeMap<i64, Sums> = BTreeMap::new();
    let mut overall = Sums { sum: 0.0, n: 0 };
    let mut subgroup_of_unit = BTreeMap::new();

    for i in 0..config.n_units {
        let id = format!("u{i:0width$}");
        let mut x: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
        let s = if p >= 5 { SELECTION_LOADINGS.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() / 5f64.sqrt() } else { 0.0 };
        let ever = rng.uniform() < sigmoid(logit(p_ever) + config.selection_strength * s);
        let u_cohort = rng.uniform();
        let cohort = ever.then(|| {
            let k = cohort_cum.iter().position(|&c| u_cohort < c).unwrap_or(cohort_cum.len() - 1);
            config.cohort_times[k]
        });
        let subgroup_a = rng.bernoulli(0.5);
        subgroup_of_unit.insert(id.clone(), if subgroup_a { "a" } else { "b" }.to_string());
        let unit_effect = config.noise_sd * rng.normal();
        let mut deviation = vec![0.0; config.n_time_varying];

        for t in 1..=t_max {
            if t > 1 {
                for (j, (xj, dj)) in x.iter_mut().zip(deviation.iter_mut()).enumerate() {
                    let direction = SELECTION_LOADINGS.get(j).copied().unwrap_or(1.0);
                    let next = AR_RHO * *dj
                        + config.covariate_drift * direction * s
                        + 0.5 * (1.0 - AR_RHO * AR_RHO).sqrt() * rng.normal();
                    *xj += next - *dj;
                    *dj = next;
                }
            }
            let eps = rng.normal();
            let y0 = outcome_index(config.confounding, &x)
                + unit_effect
                + TIME_EFFECT_SLOPE * (t - 1) as f64
                + config.trend_violation * (t - 1) as f64 * ever as u8 as f64
                + config.noise_sd * eps;
            let treated = cohort.is_some_and(|g| t >= g);
            let mut y = y0;
            if let (true, Some(g)) = (treated, cohort) {
                let effect = config.effect.value(t - g, subgroup_a);
                y += effect;
                add(&mut cells, (g, t), effect);
                add(&mut events, t - g, effect);
                add(&mut groups, g, effect);
                overall.sum += effect;
                overall.n += 1;
            }
            obs.push(PanelObservation { unit_id: id.clone(), time: t, outcome: y, treatment: treated as u8, covariates: x.clone() });
        }
    }

    let names = (0..p).map(|j| format!("x{j}")).collect();
    let panel = PanelDataset::from_observations(obs, names)
        .map_err(|e| SimulateError::InvalidConfig(format!("draw produced an unusable panel: {e}")))?;
    Ok(OraclePanel {
        panel,
        true_att: means(&cells),
        true_overall_att: if overall.n > 0 { overall.sum / overall.n as f64 } else { 0.0 },
        true_event_curve: means(&events),
        true_group_att: means(&groups),
        subgroup_of_unit,
        config: config.clone(),
    })
}
