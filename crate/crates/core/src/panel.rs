//! Panel ingestion, validation and exposure encoding.
//!
//! A [`PanelDataset`] is a validated set of `(unit, time)` observations with
//! absorbing binary treatment. Construction derives each unit's adoption
//! cohort and puts observations in canonical order (unit, then time). The
//! dataset is immutable afterwards.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type UnitId = String;

const NO_OBS: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("duplicate observation for unit {unit:?} at time {time}")]
    DuplicateIndex { unit: UnitId, time: i64 },
    #[error("treatment for unit {unit:?} switches off after adoption; only absorbing treatment is supported")]
    NonAbsorbingTreatment { unit: UnitId },
    #[error("row {row}: missing field `{field}`")]
    MissingField { row: usize, field: String },
    #[error("row {row}: field `{field}` is not finite")]
    NonFiniteValue { row: usize, field: String },
    #[error("row {row}: field `{field}` has unparseable value {value:?}")]
    ParseValue { row: usize, field: String, value: String },
    #[error("row {row}: treatment must be 0 or 1, got {value}")]
    InvalidTreatment { row: usize, value: f64 },
    #[error("row {row}: expected {expected} covariates, found {found}")]
    CovariateCount { row: usize, expected: usize, found: usize },
    #[error("no never-treated or later-treated units: there is no valid control pool")]
    EmptyControlPool,
    #[error("panel has no observations")]
    Empty,
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unknown unit {0:?}")]
    UnknownUnit(UnitId),
    #[error("unknown period {0}")]
    UnknownPeriod(i64),
    #[error("csv: {0}")]
    Csv(String),
}

/// Adoption cohort of a unit.
///
/// The derived ordering puts every `FirstTreatedAt` before `NeverTreated`,
/// so "later than" comparisons treat never-treated units as adopting at
/// infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cohort {
    FirstTreatedAt(i64),
    NeverTreated,
}

impl Cohort {
    pub fn first_treated(&self) -> Option<i64> {
        match self {
            Cohort::FirstTreatedAt(g) => Some(*g),
            Cohort::NeverTreated => None,
        }
    }

    /// True when the unit is still untreated at every period `<= t`.
    pub fn adopts_after(&self, t: i64) -> bool {
        match self {
            Cohort::FirstTreatedAt(g) => *g > t,
            Cohort::NeverTreated => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub unit_id: UnitId,
    pub time: i64,
    pub outcome: f64,
    pub treatment: u8,
    pub covariates: Vec<f64>,
}

/// An unvalidated input row. `None` marks a missing field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawRecord {
    pub unit: Option<String>,
    pub time: Option<i64>,
    pub outcome: Option<f64>,
    pub treatment: Option<f64>,
    pub covariates: Vec<Option<f64>>,
}

impl RawRecord {
    pub fn complete(unit: &str, time: i64, outcome: f64, treatment: u8, covariates: &[f64]) -> Self {
        Self {
            unit: Some(unit.to_string()),
            time: Some(time),
            outcome: Some(outcome),
            treatment: Some(treatment as f64),
            covariates: covariates.iter().copied().map(Some).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    observations: Vec<PanelObservation>,
    units: Vec<UnitId>,
    periods: Vec<i64>,
    cohorts: Vec<Cohort>,
    covariate_names: Vec<String>,
    unit_of_obs: Vec<usize>,
    period_of_obs: Vec<usize>,
    unit_ranges: Vec<Range<usize>>,
    cell: Vec<usize>,
    unit_lookup: HashMap<UnitId, usize>,
}

/// Covariate matrix in canonical observation order, with the affine map used
/// to produce it (`z = (x - mean) / scale`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub matrix: DMatrix<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

/// Validates rows and builds the panel.
pub fn build_panel(records: &[RawRecord], covariate_names: &[String]) -> Result<PanelDataset, PanelError> {
    let p = covariate_names.len();
    let mut observations = Vec::with_capacity(records.len());
    for (idx, rec) in records.iter().enumerate() {
        let row = idx + 1;
        let missing = |field: &str| PanelError::MissingField { row, field: field.to_string() };
        let unit = rec.unit.clone().filter(|u| !u.is_empty()).ok_or_else(|| missing("unit"))?;
        let time = rec.time.ok_or_else(|| missing("time"))?;
        let outcome = rec.outcome.ok_or_else(|| missing("outcome"))?;
        if !outcome.is_finite() {
            return Err(PanelError::NonFiniteValue { row, field: "outcome".into() });
        }
        let treatment = rec.treatment.ok_or_else(|| missing("treatment"))?;
        let treatment = if treatment == 0.0 {
            0u8
        } else if treatment == 1.0 {
            1u8
        } else {
            return Err(PanelError::InvalidTreatment { row, value: treatment });
        };
        if rec.covariates.len() > p {
            return Err(PanelError::CovariateCount { row, expected: p, found: rec.covariates.len() });
        }
        let mut covariates = Vec::with_capacity(p);
        for (j, name) in covariate_names.iter().enumerate() {
            let v = rec.covariates.get(j).copied().flatten().ok_or_else(|| missing(name))?;
            if !v.is_finite() {
                return Err(PanelError::NonFiniteValue { row, field: name.clone() });
            }
            covariates.push(v);
        }
        observations.push(PanelObservation { unit_id: unit, time, outcome, treatment, covariates });
    }
    PanelDataset::from_observations(observations, covariate_names.to_vec())
}

impl PanelDataset {
    /// Validates a list of typed observations (any order).
    pub fn from_observations(
        mut observations: Vec<PanelObservation>,
        covariate_names: Vec<String>,
    ) -> Result<Self, PanelError> {
        if observations.is_empty() {
            return Err(PanelError::Empty);
        }
        let p = covariate_names.len();
        for (i, o) in observations.iter().enumerate() {
            if o.covariates.len() != p {
                return Err(PanelError::CovariateCount { row: i + 1, expected: p, found: o.covariates.len() });
            }
            if o.treatment > 1 {
                return Err(PanelError::InvalidTreatment { row: i + 1, value: o.treatment as f64 });
            }
        }
        observations.sort_by(|a, b| a.unit_id.cmp(&b.unit_id).then(a.time.cmp(&b.time)));
        for w in observations.windows(2) {
            if w[0].unit_id == w[1].unit_id && w[0].time == w[1].time {
                return Err(PanelError::DuplicateIndex { unit: w[0].unit_id.clone(), time: w[0].time });
            }
        }

        let mut cohorts_by_unit: BTreeMap<UnitId, Cohort> = BTreeMap::new();
        let mut start = 0;
        while start < observations.len() {
            let unit = &observations[start].unit_id;
            let mut end = start;
            while end < observations.len() && &observations[end].unit_id == unit {
                end += 1;
            }
            let mut cohort = Cohort::NeverTreated;
            for o in &observations[start..end] {
                match (cohort, o.treatment) {
                    (Cohort::NeverTreated, 1) => cohort = Cohort::FirstTreatedAt(o.time),
                    (Cohort::FirstTreatedAt(_), 0) => {
                        return Err(PanelError::NonAbsorbingTreatment { unit: unit.clone() })
                    }
                    _ => {}
                }
            }
            cohorts_by_unit.insert(unit.clone(), cohort);
            start = end;
        }

        let dataset = Self::assemble(observations, cohorts_by_unit, covariate_names);
        if !dataset.has_control_pool() {
            return Err(PanelError::EmptyControlPool);
        }
        Ok(dataset)
    }

    /// Builds indexes over observations that are already sorted and valid.
    fn assemble(
        observations: Vec<PanelObservation>,
        cohorts_by_unit: BTreeMap<UnitId, Cohort>,
        covariate_names: Vec<String>,
    ) -> Self {
        let units: Vec<UnitId> = cohorts_by_unit.keys().cloned().collect();
        let cohorts: Vec<Cohort> = cohorts_by_unit.values().copied().collect();
        let periods: Vec<i64> = observations.iter().map(|o| o.time).collect::<BTreeSet<_>>().into_iter().collect();
        let unit_lookup: HashMap<UnitId, usize> = units.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let period_lookup: HashMap<i64, usize> = periods.iter().enumerate().map(|(i, t)| (*t, i)).collect();

        let n_periods = periods.len();
        let mut unit_of_obs = Vec::with_capacity(observations.len());
        let mut period_of_obs = Vec::with_capacity(observations.len());
        let mut unit_ranges = vec![0..0; units.len()];
        let mut cell = vec![NO_OBS; units.len() * n_periods];
        for (k, o) in observations.iter().enumerate() {
            let u = unit_lookup[&o.unit_id];
            let t = period_lookup[&o.time];
            unit_of_obs.push(u);
            period_of_obs.push(t);
            if unit_ranges[u].is_empty() {
                unit_ranges[u] = k..k + 1;
            } else {
                unit_ranges[u].end = k + 1;
            }
            cell[u * n_periods + t] = k;
        }

        Self {
            observations,
            units,
            periods,
            cohorts,
            covariate_names,
            unit_of_obs,
            period_of_obs,
            unit_ranges,
            cell,
            unit_lookup,
        }
    }

    /// A control pool exists when some unit is never treated, or when at
    /// least two adoption dates exist so the later cohort serves as
    /// not-yet-treated controls for the earlier one.
    pub fn has_control_pool(&self) -> bool {
        let mut dates = BTreeSet::new();
        for c in &self.cohorts {
            match c {
                Cohort::NeverTreated => return true,
                Cohort::FirstTreatedAt(g) => {
                    dates.insert(*g);
                }
            }
        }
        dates.len() >= 2
    }

    pub fn observations(&self) -> &[PanelObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn units(&self) -> &[UnitId] {
        &self.units
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn unit_index(&self, unit: &str) -> Option<usize> {
        self.unit_lookup.get(unit).copied()
    }

    pub fn period_index(&self, t: i64) -> Option<usize> {
        self.periods.binary_search(&t).ok()
    }

    pub fn cohort(&self, unit: &str) -> Option<Cohort> {
        self.unit_index(unit).map(|u| self.cohorts[u])
    }

    /// Cohorts indexed like [`units`](Self::units).
    pub fn cohorts(&self) -> &[Cohort] {
        &self.cohorts
    }

    pub fn cohort_map(&self) -> BTreeMap<UnitId, Cohort> {
        self.units.iter().cloned().zip(self.cohorts.iter().copied()).collect()
    }

    /// Distinct adoption dates, ascending.
    pub fn adoption_dates(&self) -> Vec<i64> {
        self.cohorts
            .iter()
            .filter_map(Cohort::first_treated)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn unit_of_obs(&self) -> &[usize] {
        &self.unit_of_obs
    }

    pub fn period_of_obs(&self) -> &[usize] {
        &self.period_of_obs
    }

    /// Observation index range of unit `u` (by unit index).
    pub fn unit_range(&self, u: usize) -> Range<usize> {
        self.unit_ranges[u].clone()
    }

    /// Observation index of unit `u` at period index `t`, if observed.
    pub fn obs_at(&self, u: usize, t: usize) -> Option<usize> {
        let k = self.cell[u * self.periods.len() + t];
        (k != NO_OBS).then_some(k)
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.outcome).collect()
    }

    pub fn treatments(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.treatment as f64).collect()
    }

    pub fn is_balanced(&self) -> bool {
        self.observations.len() == self.units.len() * self.periods.len()
    }

    /// Event time `t - g(i)`; `None` for never-treated units.
    pub fn event_time(&self, unit: &str, t: i64) -> Result<Option<i64>, PanelError> {
        let u = self.unit_index(unit).ok_or_else(|| PanelError::UnknownUnit(unit.to_string()))?;
        if self.period_index(t).is_none() {
            return Err(PanelError::UnknownPeriod(t));
        }
        Ok(self.cohorts[u].first_treated().map(|g| t - g))
    }

    /// Covariates as an `n x p` matrix in canonical order.
    ///
    /// With `standardize`, columns are centered and divided by their
    /// population standard deviation (n denominator). Zero-variance columns
    /// are centered and keep scale 1.
    pub fn feature_matrix(&self, standardize: bool) -> FeatureMatrix {
        let n = self.observations.len();
        let p = self.n_covariates();
        let raw = DMatrix::from_fn(n, p, |i, j| self.observations[i].covariates[j]);
        if !standardize {
            return FeatureMatrix { matrix: raw, means: vec![0.0; p], scales: vec![1.0; p] };
        }
        let mut matrix = raw;
        let mut means = Vec::with_capacity(p);
        let mut scales = Vec::with_capacity(p);
        for mut col in matrix.column_iter_mut() {
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
            col.iter_mut().for_each(|v| *v = (*v - mean) / scale);
            means.push(mean);
            scales.push(scale);
        }
        FeatureMatrix { matrix, means, scales }
    }

    /// One-hot period indicators with the first period as the reference
    /// category (`n x (T - 1)`), so they are not collinear with an intercept.
    pub fn period_indicators(&self) -> DMatrix<f64> {
        let n = self.observations.len();
        let cols = self.periods.len().saturating_sub(1);
        DMatrix::from_fn(n, cols, |i, j| if self.period_of_obs[i] == j + 1 { 1.0 } else { 0.0 })
    }

    /// Builds a panel from the units at `picks` (unit indices, duplicates
    /// allowed). With `fresh_ids` each pick gets a distinct identity
    /// `"<id>#<position>"`, which is what a cluster bootstrap needs.
    ///
    /// Returns the new panel and, for each of its observations, the index of
    /// the source observation. The control-pool requirement is not checked;
    /// see [`has_control_pool`](Self::has_control_pool).
    pub fn select_units(&self, picks: &[usize], fresh_ids: bool) -> (PanelDataset, Vec<usize>) {
        let width = picks.len().to_string().len();
        let mut tagged: Vec<(UnitId, usize)> = picks
            .iter()
            .enumerate()
            .map(|(pos, &u)| {
                let id = if fresh_ids {
                    format!("{}#{:0width$}", self.units[u], pos, width = width)
                } else {
                    self.units[u].clone()
                };
                (id, u)
            })
            .collect();
        tagged.sort();
        tagged.dedup_by(|a, b| a.0 == b.0);

        let mut observations = Vec::new();
        let mut source = Vec::new();
        let mut cohorts = BTreeMap::new();
        for (id, u) in &tagged {
            cohorts.insert(id.clone(), self.cohorts[*u]);
            for k in self.unit_range(*u) {
                let mut o = self.observations[k].clone();
                o.unit_id = id.clone();
                observations.push(o);
                source.push(k);
            }
        }
        (Self::assemble(observations, cohorts, self.covariate_names.clone()), source)
    }

    /// Keeps only observations for which `keep` returns true, then
    /// re-derives cohorts from the retained treatment paths.
    pub fn filter_observations<F>(&self, mut keep: F) -> Result<PanelDataset, PanelError>
    where
        F: FnMut(&PanelObservation, Cohort) -> bool,
    {
        let obs = self
            .observations
            .iter()
            .enumerate()
            .filter(|(k, o)| keep(o, self.cohorts[self.unit_of_obs[*k]]))
            .map(|(_, o)| o.clone())
            .collect();
        Self::from_observations(obs, self.covariate_names.clone())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<PanelDataset, PanelError> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| PanelError::Csv(e.to_string()))?;
        Self::read_csv_from(file)
    }

    /// Parses the panel CSV layout: `unit,time,outcome,treatment` followed by
    /// covariate columns. Empty cells count as missing.
    pub fn read_csv_from<R: Read>(reader: R) -> Result<PanelDataset, PanelError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| PanelError::Csv(e.to_string()))?.clone();
        let position = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| PanelError::MissingColumn(name.to_string()))
        };
        let (iu, it, iy, id) = (position("unit")?, position("time")?, position("outcome")?, position("treatment")?);
        let cov_cols: Vec<usize> = (0..headers.len()).filter(|c| ![iu, it, iy, id].contains(c)).collect();
        let covariate_names: Vec<String> = cov_cols.iter().map(|&c| headers[c].to_string()).collect();

        let mut records = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let row = idx + 1;
            let rec = rec.map_err(|e| PanelError::Csv(e.to_string()))?;
            let cell = |c: usize| rec.get(c).filter(|s| !s.is_empty());
            let num = |c: usize, field: &str| -> Result<Option<f64>, PanelError> {
                cell(c)
                    .map(|s| {
                        s.parse::<f64>().map_err(|_| PanelError::ParseValue {
                            row,
                            field: field.to_string(),
                            value: s.to_string(),
                        })
                    })
                    .transpose()
            };
            let time = cell(it)
                .map(|s| {
                    s.parse::<i64>().map_err(|_| PanelError::ParseValue {
                        row,
                        field: "time".into(),
                        value: s.to_string(),
                    })
                })
                .transpose()?;
            let mut covariates = Vec::with_capacity(cov_cols.len());
            for (&c, name) in cov_cols.iter().zip(&covariate_names) {
                covariates.push(num(c, name)?);
            }
            records.push(RawRecord {
                unit: cell(iu).map(str::to_string),
                time,
                outcome: num(iy, "outcome")?,
                treatment: num(id, "treatment")?,
                covariates,
            });
        }
        build_panel(&records, &covariate_names)
    }

    /// Writes the panel in the same CSV layout it is read from. Floats use
    /// shortest round-trip formatting, so the output is lossless.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PanelError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["unit".to_string(), "time".into(), "outcome".into(), "treatment".into()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header).map_err(|e| PanelError::Csv(e.to_string()))?;
        for o in &self.observations {
            let mut row = vec![o.unit_id.clone(), o.time.to_string(), o.outcome.to_string(), o.treatment.to_string()];
            row.extend(o.covariates.iter().map(f64::to_string));
            w.write_record(&row).map_err(|e| PanelError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| PanelError::Csv(e.to_string()))
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<(), PanelError> {
        let file = std::fs::File::create(path.as_ref()).map_err(|e| PanelError::Csv(e.to_string()))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
