//! A complete analysis run and the files it produces: `results.json`,
//! `group_time.csv`, `event_curve.csv` and `diagnostics.json`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::aggregate::{
    bootstrap, bootstrap_residuals, overlap_report, placebo_test, pretrend_test, AttEstimate, BootstrapMode,
    BootstrapSummary, DiagnosticsReport, Scheme,
};
use crate::aggregate::diagnostics::Section;
use crate::config::RunConfig;
use crate::error::Error;
use crate::panel::PanelDataset;
use crate::pipeline::{estimate, PointEstimate};
use crate::rng::{GENERATOR_NAME, GENERATOR_VERSION};

pub const RESULTS_FILE: &str = "results.json";
pub const GROUP_TIME_FILE: &str = "group_time.csv";
pub const EVENT_CURVE_FILE: &str = "event_curve.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub point: PointEstimate,
    pub bootstrap: BootstrapSummary,
    pub diagnostics: DiagnosticsReport,
}

/// Steps 2 to 5 plus bootstrap inference and the diagnostics battery.
/// The config is assumed validated.
pub fn analyze(config: &RunConfig, panel: impl Into<Arc<PanelDataset>>) -> Result<RunOutput, Error> {
    let panel = panel.into();
    let cfg = config.pipeline();
    let mut point = estimate(panel.clone(), &cfg)?;
    let b = config.bootstrap.b;
    let boot = match config.bootstrap.mode {
        BootstrapMode::FixedNuisance => bootstrap_residuals(&cfg, &point.resid, b, config.seed, config.ci_level)?,
        BootstrapMode::Full => bootstrap(&cfg, panel.clone(), b, config.seed, BootstrapMode::Full, config.ci_level)?,
    };
    point.aggregated.ci_level = config.ci_level;
    point.aggregated.attach_inference(&boot);

    let pretrend = Section::from_result(pretrend_test(&point.effects, &boot.event_ses()));
    let placebo = match config.placebo_shift {
        Some(shift) => Section::from_result(placebo_test(
            &panel,
            &cfg,
            shift,
            b,
            config.seed,
            config.bootstrap.mode,
            config.ci_level,
        )),
        None => Section::Skipped { reason: "disabled in config".into() },
    };
    let fits = point.resid.fits.as_ref().expect("pipeline residuals carry their fits");
    let overlap = overlap_report(fits);

    let mut warnings: Vec<String> = fits.warnings.clone();
    if overlap.weak_overlap {
        warnings.push(format!(
            "WeakOverlap: {} of {} treatment-model predictions were clipped to [{}, {}]",
            overlap.n_clipped,
            overlap.n,
            fits.clip_eps,
            1.0 - fits.clip_eps
        ));
    }
    warnings.extend(point.effects.warnings.iter().cloned());
    for o in &point.effects.omitted {
        warnings.push(format!("cell (g={}, t={}) omitted: {:?}", o.g, o.t, o.reason));
    }
    for f in &boot.failures {
        warnings.push(format!("bootstrap replicate {} failed: {}", f.replicate, f.message));
    }
    if boot.is_approximate() {
        warnings.push("fixed_nuisance bootstrap treats nuisance predictions as known; intervals are approximate".into());
    }

    Ok(RunOutput {
        config: config.clone(),
        point,
        bootstrap: boot,
        diagnostics: DiagnosticsReport { pretrend, placebo, overlap: Section::Ok(overlap), warnings },
    })
}

fn estimate_json(e: &AttEstimate) -> Value {
    json!({ "att": e.att, "se": e.se, "ci_low": e.ci_low, "ci_high": e.ci_high })
}

pub fn versions() -> Value {
    json!({
        "sdidml": env!("CARGO_PKG_VERSION"),
        "rng": { "name": GENERATOR_NAME, "version": GENERATOR_VERSION },
    })
}

/// The `results.json` document.
pub fn results_json(out: &RunOutput) -> Value {
    let agg = &out.point.aggregated;
    let boot = &out.bootstrap;
    let fits = out.point.resid.fits.as_ref();

    let mut overall = estimate_json(&agg.overall);
    overall["ci_level"] = json!(agg.ci_level);
    overall["weights"] = json!(agg
        .weights_used
        .iter()
        .map(|(&(g, t), w)| json!({ "g": g, "t": t, "weight": w }))
        .collect::<Vec<_>>());
    overall["inference"] = json!({
        "method": "cluster_bootstrap_percentile",
        "mode": boot.mode,
        "replicates": boot.replicates,
        "failed": boot.failures.len(),
        "approximate": boot.is_approximate(),
    });

    let event_curve: Vec<Value> = if out.config.wants(Scheme::EventTime) {
        agg.event_curve
            .iter()
            .map(|(&e, est)| {
                let mut v = estimate_json(est);
                v["e"] = json!(e);
                v["n_cells"] = json!(agg.event_weights.get(&e).map_or(0, |w| w.len()));
                v
            })
            .collect()
    } else {
        vec![]
    };
    let groups: Vec<Value> = if out.config.wants(Scheme::ByGroup) {
        agg.groups
            .iter()
            .map(|(&g, est)| {
                let mut v = estimate_json(est);
                v["g"] = json!(g);
                v
            })
            .collect()
    } else {
        vec![]
    };
    let group_time: Vec<Value> = out
        .point
        .effects
        .rows()
        .into_iter()
        .map(|r| {
            let iv = boot.cells.get(&(r.g, r.t)).copied().unwrap_or_default();
            json!({
                "g": r.g, "t": r.t, "event_time": r.event_time, "tau": r.tau,
                "n_treated": r.n_treated, "n_control": r.n_control,
                "se": iv.se, "ci_low": iv.ci_low, "ci_high": iv.ci_high,
            })
        })
        .collect();

    let mut diagnostics = serde_json::to_value(&out.diagnostics).expect("diagnostics serialize");
    diagnostics["nuisance"] = json!({
        "g_learner": fits.map(|f| &f.g_spec),
        "m_learner": fits.map(|f| &f.m_spec),
        "outcome_sample": fits.map(|f| f.outcome_sample),
        "n_clipped": fits.map(|f| f.n_clipped),
        "folds": fits.map(|f| &f.folds),
    });
    diagnostics["omitted_cells"] = json!(out.point.effects.omitted);

    json!({
        "overall": overall,
        "event_curve": event_curve,
        "groups": groups,
        "group_time": group_time,
        "diagnostics": diagnostics,
        "config_echo": out.config,
        "versions": versions(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Event-curve CSV with columns `e,att,ci_low,ci_high`.
pub fn write_event_curve<W: Write>(out: &RunOutput, writer: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["e", "att", "ci_low", "ci_high"]).map_err(io)?;
    for (e, est) in &out.point.aggregated.event_curve {
        w.write_record([e.to_string(), est.att.to_string(), opt(est.ci_low), opt(est.ci_high)]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    let pretty = |v: &Value| serde_json::to_string_pretty(v).expect("json values serialize") + "\n";
    fs::write(dir.join(RESULTS_FILE), pretty(&results_json(out)))?;
    out.point.effects.write_csv(fs::File::create(dir.join(GROUP_TIME_FILE))?)?;
    write_event_curve(out, fs::File::create(dir.join(EVENT_CURVE_FILE))?)?;
    let diagnostics = serde_json::to_value(&out.diagnostics).expect("diagnostics serialize");
    fs::write(dir.join(DIAGNOSTICS_FILE), pretty(&diagnostics))?;
    Ok(())
}
