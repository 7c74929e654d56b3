use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use sdidml::aggregate::diagnostics::Section;
use sdidml::config::ConfigError;
use sdidml::report::DIAGNOSTICS_FILE;
use sdidml::simulate::MethodStats;
use sdidml::{
    analyze, generate, monte_carlo, scenario, write_outputs, DGPConfig, DiagnosticsReport, Error, McConfig, McSummary,
    PanelDataset, RunConfig, Scenario,
};

use crate::failure::Failure;

pub const PANEL_FILE: &str = "panel.csv";
pub const ORACLE_FILE: &str = "oracle.json";
pub const BENCHMARK_CSV: &str = "benchmark.csv";
pub const BENCHMARK_JSON: &str = "benchmark.json";
const DEFAULT_OUTPUT_DIR: &str = "sdidml_results";

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::from(ConfigError::Read { path: path.display().to_string(), message: e.to_string() }))?;
    serde_json::from_str(&text).map_err(|e| Error::from(ConfigError::Parse(e.to_string())).into())
}

pub fn run(
    config: Option<PathBuf>,
    input: Option<PathBuf>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    allow_no_crossfit: bool,
) -> Result<(), Failure> {
    let mut cfg = match &config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if input.is_some() {
        cfg.input_path = input;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.output_dir = Some(output.or(cfg.output_dir.take()).unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into()));
    cfg.validate(allow_no_crossfit)?;
    let input_path = cfg.input_path.clone().ok_or(ConfigError::MissingInput)?;
    let out_dir = cfg.output_dir.clone().expect("output_dir resolved above");

    let panel = PanelDataset::read_csv(&input_path)?;
    let out = analyze(&cfg, panel)?;
    write_outputs(&out, &out_dir)?;

    let overall = &out.point.aggregated.overall;
    print!(
        "{}",
        pretty(&json!({
            "resolved_config": cfg,
            "seed": cfg.seed,
            "output_dir": out_dir,
            "overall_att": overall.att,
            "ci_low": overall.ci_low,
            "ci_high": overall.ci_high,
            "warnings": out.diagnostics.warnings.len(),
        }))
    );
    Ok(())
}

fn parse_scenario(name: &str) -> Result<Scenario, Failure> {
    Scenario::from_str(name).map_err(|e| Failure { code: "cli.unknown_scenario", ..Failure::from(e) })
}

pub fn simulate(name: Option<String>, config: Option<PathBuf>, seed: Option<u64>, output: &Path) -> Result<(), Failure> {
    let mut dgp: DGPConfig = match (name, config) {
        (_, Some(path)) => read_json(&path)?,
        (Some(name), None) => scenario(parse_scenario(&name)?),
        (None, None) => {
            return Err(Failure::usage(
                "give a scenario name or --config; valid scenarios: S1_homogeneous, S2_dynamic_heterogeneous, \
                 S3_highdim_nonlinear, S4_null, S5_pretrend_violation",
            ))
        }
    };
    if let Some(s) = seed {
        dgp.seed = s;
    }
    let oracle = generate(&dgp)?;
    fs::create_dir_all(output).map_err(Error::from)?;
    oracle.panel.write_csv_path(output.join(PANEL_FILE))?;
    fs::write(output.join(ORACLE_FILE), pretty(&oracle.oracle_json())).map_err(Error::from)?;
    println!(
        "wrote {} rows ({} units x {} periods) to {}; true overall ATT {}",
        oracle.panel.len(),
        oracle.panel.n_units(),
        oracle.panel.periods().len(),
        output.display(),
        oracle.true_overall_att
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TableRow {
    method: &'static str,
    mean_estimate: f64,
    bias: f64,
    rmse: f64,
    mc_se: f64,
    coverage: Option<f64>,
}

impl TableRow {
    fn new(method: &'static str, s: &MethodStats, coverage: Option<f64>) -> Self {
        Self { method, mean_estimate: s.mean_estimate, bias: s.bias, rmse: s.rmse, mc_se: s.mc_se, coverage }
    }
}

fn comparison_table(s: &McSummary) -> Vec<TableRow> {
    let mut rows = vec![TableRow::new("sdidml", &s.sdidml, s.coverage)];
    if let Some(t) = &s.twfe {
        rows.push(TableRow::new("twfe", t, None));
    }
    if let Some(u) = &s.unadjusted {
        rows.push(TableRow::new("unadjusted_did", u, None));
    }
    rows
}

fn write_table(rows: &[TableRow], path: &Path) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::from(Error::Io(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

pub fn benchmark(name: &str, reps: usize, seed: u64, config: Option<PathBuf>, output: &Path) -> Result<(), Failure> {
    if reps == 0 {
        return Err(Failure::usage("--reps must be at least 1"));
    }
    let which = parse_scenario(name)?;
    let mc: McConfig = match &config {
        Some(path) => read_json(path)?,
        None => McConfig::default(),
    };
    let summary = monte_carlo(&scenario(which), &mc, reps, seed)?;
    let table = comparison_table(&summary);

    fs::create_dir_all(output).map_err(Error::from)?;
    write_table(&table, &output.join(BENCHMARK_CSV))?;
    let doc = json!({
        "scenario": which,
        "reps": reps,
        "seed": seed,
        "table": table,
        "placebo": summary.placebo,
        "pretrend_rejection_rate": summary.pretrend_rejection_rate,
        "min_weight": summary.min_weight,
        "max_weight_sum_error": summary.max_weight_sum_error,
        "dgp": summary.scenario,
        "mc_config": mc,
        "replications": summary.records,
    });
    fs::write(output.join(BENCHMARK_JSON), pretty(&doc)).map_err(Error::from)?;

    println!("{:<16} {:>12} {:>10} {:>10} {:>10}", "method", "mean", "bias", "rmse", "coverage");
    for r in &table {
        let cov = r.coverage.map_or("-".to_string(), |c| format!("{c:.3}"));
        println!("{:<16} {:>12.4} {:>+10.4} {:>10.4} {:>10}", r.method, r.mean_estimate, r.bias, r.rmse, cov);
    }
    Ok(())
}

fn flag(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "WARN"
    }
}

fn diagnose_lines(report: &DiagnosticsReport, alpha: f64) -> Vec<String> {
    let mut lines = Vec::new();
    lines.push(match &report.pretrend {
        Section::Ok(p) => format!(
            "pretrend  {}  chi2 = {:.3} on {} dof, p = {:.4} (alpha {alpha}){}",
            flag(!p.rejects(alpha)),
            p.statistic,
            p.dof,
            p.p_value,
            if p.approximate { ", approximate" } else { "" }
        ),
        Section::Skipped { reason } => format!("pretrend  SKIP  {reason}"),
    });
    lines.push(match &report.placebo {
        Section::Ok(p) => {
            let ci = match (p.ci_low, p.ci_high) {
                (Some(lo), Some(hi)) => format!("[{lo:.4}, {hi:.4}]"),
                _ => "unavailable".into(),
            };
            format!(
                "placebo   {}  shift {}, pseudo ATT {:.4}, CI {ci}",
                flag(p.covers_zero().unwrap_or(false)),
                p.shift,
                p.pseudo_att
            )
        }
        Section::Skipped { reason } => format!("placebo   SKIP  {reason}"),
    });
    lines.push(match &report.overlap {
        Section::Ok(o) => format!(
            "overlap   {}  m_hat in [{:.4}, {:.4}], {} of {} clipped at {}",
            flag(!o.weak_overlap),
            o.min,
            o.max,
            o.n_clipped,
            o.n,
            o.clip_eps
        ),
        Section::Skipped { reason } => format!("overlap   SKIP  {reason}"),
    });
    lines.push(format!("warnings  {}", report.warnings.len()));
    lines.extend(report.warnings.iter().map(|w| format!("  - {w}")));
    lines
}

pub fn diagnose(dir: &Path, alpha: f64) -> Result<(), Failure> {
    let path = dir.join(DIAGNOSTICS_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::missing_artifacts(format!("cannot read {}: {e}", path.display())))?;
    let report: DiagnosticsReport = serde_json::from_str(&text).map_err(|e| Failure {
        code: "cli.corrupt_artifacts",
        ..Failure::missing_artifacts(format!("{} is not a diagnostics report: {e}", path.display()))
    })?;
    for line in diagnose_lines(&report, alpha) {
        println!("{line}");
    }
    Ok(())
}
