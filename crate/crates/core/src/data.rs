//! Data pipeline: FRED-style CSV ingestion, monthly-to-quarterly
//! aggregation, stationarity transforms, alignment, and standardization.
//!
//! Input files are two-column CSVs with header `DATE,VALUE`, ISO dates, and
//! `.` (or an empty field) marking missing observations — the format FRED
//! exports. A plain-text `key=value` config lists the series to assemble.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, Months, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stationarity transform applied to a raw series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Level,
    Diff,
    Log,
    LogDiff,
}

impl Transform {
    pub fn as_str(&self) -> &'static str {
        match self {
            Transform::Level => "level",
            Transform::Diff => "diff",
            Transform::Log => "log",
            Transform::LogDiff => "log_diff",
        }
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "level" => Ok(Transform::Level),
            "diff" => Ok(Transform::Diff),
            "log" => Ok(Transform::Log),
            "log_diff" => Ok(Transform::LogDiff),
            other => Err(Error::Config(format!(
                "unknown transform code `{other}` (expected level|diff|log|log_diff)"
            ))),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How monthly observations collapse into a quarter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Last,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "last" => Ok(Aggregation::Last),
            other => Err(Error::Config(format!(
                "unknown aggregation `{other}` (expected mean|last)"
            ))),
        }
    }
}

/// A raw series as loaded from disk: dated values with missing markers.
#[derive(Debug, Clone)]
pub struct RawSeries {
    pub id: String,
    pub rows: Vec<(NaiveDate, Option<f64>)>,
}

/// Parse one `DATE,VALUE` CSV. Missing values (`.` or empty) are preserved.
pub fn load_csv(path: &Path, series_id: &str) -> Result<RawSeries> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        message: "empty file".into(),
    })?;
    let header_fields: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if header_fields.len() < 2
        || !header_fields[0].eq_ignore_ascii_case("date")
        || !header_fields[1].eq_ignore_ascii_case("value")
    {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: format!("expected header `DATE,VALUE`, found `{header}`"),
        });
    }
    let mut rows = Vec::new();
    let mut prev: Option<NaiveDate> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.splitn(2, ',');
        let date_str = parts.next().unwrap_or("").trim();
        let value_str = parts.next().unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|e| Error::Parse {
            path: display.clone(),
            line: line_no,
            message: format!("bad date `{date_str}`: {e}"),
        })?;
        if let Some(p) = prev {
            if date <= p {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: line_no,
                    message: format!("dates not strictly increasing ({p} then {date})"),
                });
            }
        }
        prev = Some(date);
        let value = if value_str.is_empty() || value_str == "." {
            None
        } else {
            Some(value_str.parse::<f64>().map_err(|e| Error::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("bad value `{value_str}`: {e}"),
            })?)
        };
        rows.push((date, value));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(RawSeries {
        id: series_id.to_string(),
        rows,
    })
}

fn quarter_start(date: NaiveDate) -> NaiveDate {
    let month = 1 + 3 * ((date.month0()) / 3);
    NaiveDate::from_ymd_opt(date.year(), month, 1).expect("valid quarter start")
}

fn months_between(a: NaiveDate, b: NaiveDate) -> i64 {
    (b.year() as i64 - a.year() as i64) * 12 + (b.month() as i64 - a.month() as i64)
}

/// Collapse a monthly series to quarterly; quarterly input passes through
/// unchanged. Quarters missing any month (including incomplete first/last
/// quarters) are dropped with a warning.
pub fn to_quarterly(series: &RawSeries, method: Aggregation) -> Result<RawSeries> {
    if series.rows.len() >= 2 {
        let gaps: Vec<i64> = series
            .rows
            .windows(2)
            .map(|w| months_between(w[0].0, w[1].0))
            .collect();
        if gaps.iter().all(|&g| g == 3) {
            return Ok(series.clone());
        }
        if !gaps.iter().all(|&g| g == 1) {
            return Err(Error::Config(format!(
                "series {} is neither monthly nor quarterly (mixed date gaps)",
                series.id
            )));
        }
    } else {
        return Ok(series.clone());
    }
    let mut quarters: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for (date, value) in &series.rows {
        quarters.entry(quarter_start(*date)).or_default().push(*value);
    }
    let mut rows = Vec::with_capacity(quarters.len());
    for (q, months) in quarters {
        if months.len() != 3 {
            log::warn!(
                "series {}: dropping incomplete quarter starting {q} ({} of 3 months)",
                series.id,
                months.len()
            );
            continue;
        }
        let value = if months.iter().any(|m| m.is_none()) {
            None
        } else {
            let vals: Vec<f64> = months.into_iter().flatten().collect();
            Some(match method {
                Aggregation::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                Aggregation::Last => *vals.last().unwrap(),
            })
        };
        rows.push((q, value));
    }
    Ok(RawSeries {
        id: series.id.clone(),
        rows,
    })
}

/// A transformed, gap-free series.
#[derive(Debug, Clone)]
pub struct TransformedSeries {
    pub id: String,
    pub transform: Transform,
    pub rows: Vec<(NaiveDate, f64)>,
}

/// Apply a stationarity transform. Leading/trailing missing values are
/// trimmed; interior gaps and non-positive values under log codes are errors
/// naming the series and date.
pub fn apply_transform(series: &RawSeries, code: Transform) -> Result<TransformedSeries> {
    let first = series.rows.iter().position(|(_, v)| v.is_some());
    let last = series.rows.iter().rposition(|(_, v)| v.is_some());
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyInput(format!("series {}", series.id))),
    };
    let mut dense = Vec::with_capacity(last - first + 1);
    for (date, value) in &series.rows[first..=last] {
        match value {
            Some(v) => dense.push((*date, *v)),
            None => {
                return Err(Error::SeriesValue {
                    series: series.id.clone(),
                    date: date.to_string(),
                    message: "missing value inside the sample".into(),
                })
            }
        }
    }
    let needs_log = matches!(code, Transform::Log | Transform::LogDiff);
    if needs_log {
        for (date, v) in &dense {
            if *v <= 0.0 {
                return Err(Error::SeriesValue {
                    series: series.id.clone(),
                    date: date.to_string(),
                    message: format!("non-positive value {v} under a log transform"),
                });
            }
        }
    }
    let rows: Vec<(NaiveDate, f64)> = match code {
        Transform::Level => dense,
        Transform::Log => dense.into_iter().map(|(d, v)| (d, v.ln())).collect(),
        Transform::Diff => dense
            .windows(2)
            .map(|w| (w[1].0, w[1].1 - w[0].1))
            .collect(),
        Transform::LogDiff => dense
            .windows(2)
            .map(|w| (w[1].0, (w[1].1 / w[0].1).ln()))
            .collect(),
    };
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!(
            "series {} after transform",
            series.id
        )));
    }
    Ok(TransformedSeries {
        id: series.id.clone(),
        transform: code,
        rows,
    })
}

/// Aligned multivariate panel on a common quarterly date index.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    series_ids: Vec<String>,
    dates: Vec<NaiveDate>,
    values: DMatrix<f64>,
    transform_codes: Vec<Transform>,
    standardization: Option<Vec<(f64, f64)>>,
}

impl TimeSeriesPanel {
    /// Align transformed series to their common quarterly support.
    pub fn align(series: Vec<TransformedSeries>) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::EmptyInput("series list".into()));
        }
        let start = series
            .iter()
            .map(|s| quarter_start(s.rows.first().unwrap().0))
            .max()
            .unwrap();
        let end = series
            .iter()
            .map(|s| quarter_start(s.rows.last().unwrap().0))
            .min()
            .unwrap();
        if end < start {
            return Err(Error::Config(
                "series have no overlapping quarters".into(),
            ));
        }
        let mut dates = Vec::new();
        let mut d = start;
        while d <= end {
            dates.push(d);
            d = d + Months::new(3);
        }
        let t = dates.len();
        let n = series.len();
        let mut values = DMatrix::zeros(t, n);
        for (j, s) in series.iter().enumerate() {
            let by_quarter: BTreeMap<NaiveDate, f64> = s
                .rows
                .iter()
                .map(|(d, v)| (quarter_start(*d), *v))
                .collect();
            for (r, date) in dates.iter().enumerate() {
                match by_quarter.get(date) {
                    Some(v) if v.is_finite() => values[(r, j)] = *v,
                    Some(v) => {
                        return Err(Error::SeriesValue {
                            series: s.id.clone(),
                            date: date.to_string(),
                            message: format!("non-finite value {v}"),
                        })
                    }
                    None => {
                        return Err(Error::SeriesValue {
                            series: s.id.clone(),
                            date: date.to_string(),
                            message: "gap inside the aligned sample".into(),
                        })
                    }
                }
            }
        }
        Ok(Self {
            series_ids: series.iter().map(|s| s.id.clone()).collect(),
            dates,
            values,
            transform_codes: series.iter().map(|s| s.transform).collect(),
            standardization: None,
        })
    }

    /// Panel over synthetic quarterly dates (used by simulations and tests).
    pub fn synthetic(values: DMatrix<f64>) -> Self {
        let n = values.ncols();
        let t = values.nrows();
        let start = NaiveDate::from_ymd_opt(1960, 1, 1).unwrap();
        let dates = (0..t).map(|k| start + Months::new(3 * k as u32)).collect();
        Self {
            series_ids: (0..n).map(|j| format!("ser_{}", j + 1)).collect(),
            dates,
            values,
            transform_codes: vec![Transform::Level; n],
            standardization: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn transform_codes(&self) -> &[Transform] {
        &self.transform_codes
    }

    /// Per-series (mean, sd) recorded by [`standardize`](Self::standardize).
    pub fn standardization(&self) -> Option<&[(f64, f64)]> {
        self.standardization.as_deref()
    }

    /// Rows `0..=end` as a new panel (standardization constants dropped so a
    /// rolling origin recomputes them from its own window).
    pub fn truncate(&self, end: usize) -> Result<Self> {
        if end >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "truncate end {end} outside panel of length {}",
                self.len()
            )));
        }
        Ok(Self {
            series_ids: self.series_ids.clone(),
            dates: self.dates[..=end].to_vec(),
            values: self.values.rows(0, end + 1).into_owned(),
            transform_codes: self.transform_codes.clone(),
            standardization: None,
        })
    }

    /// Center and scale every column to unit sample standard deviation,
    /// recording the constants for the inverse map.
    pub fn standardize(&self) -> Result<Self> {
        let t = self.len();
        if t < 2 {
            return Err(Error::InvalidArgument(
                "standardization needs at least two rows".into(),
            ));
        }
        let mut constants = Vec::with_capacity(self.n_series());
        let mut values = self.values.clone();
        for j in 0..self.n_series() {
            let col = self.values.column(j);
            let mean = col.sum() / t as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (t as f64 - 1.0);
            if var <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "series {} has zero variance",
                    self.series_ids[j]
                )));
            }
            let sd = var.sqrt();
            for r in 0..t {
                values[(r, j)] = (self.values[(r, j)] - mean) / sd;
            }
            constants.push((mean, sd));
        }
        Ok(Self {
            series_ids: self.series_ids.clone(),
            dates: self.dates.clone(),
            values,
            transform_codes: self.transform_codes.clone(),
            standardization: Some(constants),
        })
    }

    /// Map a standardized value for series `j` back to transformed units.
    pub fn inverse_standardize(&self, j: usize, value: f64) -> f64 {
        match &self.standardization {
            Some(c) => value * c[j].1 + c[j].0,
            None => value,
        }
    }

    /// Write the panel as CSV (date column plus one column per series) with a
    /// JSON metadata sidecar alongside.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("DATE");
        for id in &self.series_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (r, date) in self.dates.iter().enumerate() {
            out.push_str(&date.to_string());
            for j in 0..self.n_series() {
                out.push(',');
                out.push_str(&format!("{}", self.values[(r, j)]));
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        let sidecar = PanelSidecar {
            series: self
                .series_ids
                .iter()
                .enumerate()
                .map(|(j, id)| PanelSeriesMeta {
                    id: id.clone(),
                    transform: self.transform_codes[j],
                    mean: self.standardization.as_ref().map(|c| c[j].0),
                    sd: self.standardization.as_ref().map(|c| c[j].1),
                })
                .collect(),
            rows: self.len(),
        };
        let meta_path = path.with_extension("meta.json");
        fs::write(meta_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelSeriesMeta {
    id: String,
    transform: Transform,
    mean: Option<f64>,
    sd: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelSidecar {
    series: Vec<PanelSeriesMeta>,
    rows: usize,
}

/// One series entry in a pipeline config.
#[derive(Debug, Clone)]
pub struct SeriesSpec {
    pub id: String,
    pub path: PathBuf,
    pub transform: Transform,
    pub aggregation: Aggregation,
}

/// Parsed `key=value` pipeline config.
#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub series: Vec<SeriesSpec>,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub lags: Option<usize>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub particles: Option<usize>,
    pub seed: Option<u64>,
    pub origins: Option<usize>,
    pub origin_iterations: Option<usize>,
    pub origin_burn_in: Option<usize>,
    pub forecast_draws: Option<usize>,
}

impl PipelineConfig {
    /// Parse a config file. Series keys look like `series.GS1.path = ...`;
    /// relative paths resolve against the config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let display = path.display().to_string();

        #[derive(Default)]
        struct Partial {
            path: Option<PathBuf>,
            transform: Option<Transform>,
            aggregation: Option<Aggregation>,
        }
        let mut order: Vec<String> = Vec::new();
        let mut partials: BTreeMap<String, Partial> = BTreeMap::new();
        let mut cfg = PipelineConfig::default();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: display.clone(),
                line: line_no,
                message: "expected key=value".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_usize = |v: &str| -> Result<usize> {
                v.parse().map_err(|e| Error::Parse {
                    path: display.clone(),
                    line: line_no,
                    message: format!("bad integer `{v}`: {e}"),
                })
            };
            if let Some(rest) = key.strip_prefix("series.") {
                let (id, field) = rest.split_once('.').ok_or_else(|| Error::Parse {
                    path: display.clone(),
                    line: line_no,
                    message: format!("series key `{key}` needs the form series.<ID>.<field>"),
                })?;
                if !partials.contains_key(id) {
                    order.push(id.to_string());
                }
                let entry = partials.entry(id.to_string()).or_default();
                match field {
                    "path" => {
                        let p = Path::new(value);
                        entry.path = Some(if p.is_absolute() {
                            p.to_path_buf()
                        } else {
                            base.join(p)
                        });
                    }
                    "transform" => entry.transform = Some(value.parse()?),
                    "aggregate" | "aggregation" => entry.aggregation = Some(value.parse()?),
                    other => {
                        return Err(Error::Parse {
                            path: display.clone(),
                            line: line_no,
                            message: format!("unknown series field `{other}`"),
                        })
                    }
                }
            } else {
                match key {
                    "start" => {
                        cfg.start =
                            Some(NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|e| {
                                Error::Parse {
                                    path: display.clone(),
                                    line: line_no,
                                    message: format!("bad date `{value}`: {e}"),
                                }
                            })?)
                    }
                    "end" => {
                        cfg.end =
                            Some(NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|e| {
                                Error::Parse {
                                    path: display.clone(),
                                    line: line_no,
                                    message: format!("bad date `{value}`: {e}"),
                                }
                            })?)
                    }
                    "lags" => cfg.lags = Some(parse_usize(value)?),
                    "iterations" => cfg.iterations = Some(parse_usize(value)?),
                    "burn_in" => cfg.burn_in = Some(parse_usize(value)?),
                    "thin" => cfg.thin = Some(parse_usize(value)?),
                    "particles" => cfg.particles = Some(parse_usize(value)?),
                    "seed" => {
                        cfg.seed = Some(value.parse().map_err(|e| Error::Parse {
                            path: display.clone(),
                            line: line_no,
                            message: format!("bad seed `{value}`: {e}"),
                        })?)
                    }
                    "origins" => cfg.origins = Some(parse_usize(value)?),
                    "origin_iterations" => cfg.origin_iterations = Some(parse_usize(value)?),
                    "origin_burn_in" => cfg.origin_burn_in = Some(parse_usize(value)?),
                    "forecast_draws" => cfg.forecast_draws = Some(parse_usize(value)?),
                    other => {
                        return Err(Error::Parse {
                            path: display.clone(),
                            line: line_no,
                            message: format!("unknown key `{other}`"),
                        })
                    }
                }
            }
        }
        for id in order {
            let partial = partials.remove(&id).unwrap();
            let path = partial.path.ok_or_else(|| {
                Error::Config(format!("series {id} is missing series.{id}.path"))
            })?;
            cfg.series.push(SeriesSpec {
                id: id.clone(),
                path,
                transform: partial.transform.unwrap_or(Transform::Level),
                aggregation: partial.aggregation.unwrap_or(Aggregation::Mean),
            });
        }
        if cfg.series.is_empty() {
            return Err(Error::Config("config lists no series".into()));
        }
        Ok(cfg)
    }
}

/// Run the full ingestion pipeline: load, aggregate to quarterly, window,
/// transform, and align. The result is in transformed (not standardized)
/// units; call [`TimeSeriesPanel::standardize`] on the window you estimate
/// from, so rolling origins never see future constants.
pub fn build_panel(cfg: &PipelineConfig) -> Result<TimeSeriesPanel> {
    let mut transformed = Vec::with_capacity(cfg.series.len());
    for spec in &cfg.series {
        let raw = load_csv(&spec.path, &spec.id)?;
        let quarterly = to_quarterly(&raw, spec.aggregation)?;
        let windowed = RawSeries {
            id: quarterly.id.clone(),
            rows: quarterly
                .rows
                .into_iter()
                .filter(|(d, _)| {
                    cfg.start.is_none_or(|s| *d >= s) && cfg.end.is_none_or(|e| *d <= e)
                })
                .collect(),
        };
        if windowed.rows.is_empty() {
            return Err(Error::Config(format!(
                "series {} has no observations in the requested window",
                spec.id
            )));
        }
        transformed.push(apply_transform(&windowed, spec.transform)?);
    }
    TimeSeriesPanel::align(transformed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn write_csv(content: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_csv_three_rows() {
        let f = write_csv("DATE,VALUE\n1960-01-01,1.5\n1960-02-01,2.5\n1960-03-01,3.5\n");
        let s = load_csv(f.path(), "X").unwrap();
        assert_eq!(s.rows.len(), 3);
        assert_eq!(s.rows[1].1, Some(2.5));
    }

    #[test]
    fn load_csv_missing_marker() {
        let f = write_csv("DATE,VALUE\n1960-01-01,.\n1960-02-01,2.0\n");
        let s = load_csv(f.path(), "X").unwrap();
        assert_eq!(s.rows[0].1, None);
        assert_eq!(s.rows[1].1, Some(2.0));
    }

    #[test]
    fn load_csv_bad_value_reports_line() {
        let f = write_csv("DATE,VALUE\n1960-01-01,1.0\n1960-02-01,abc\n");
        match load_csv(f.path(), "X") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_nonmonotone_dates() {
        let f = write_csv("DATE,VALUE\n1960-02-01,1.0\n1960-01-01,2.0\n");
        assert!(load_csv(f.path(), "X").is_err());
    }

    fn monthly(id: &str, values: &[(i32, u32, Option<f64>)]) -> RawSeries {
        RawSeries {
            id: id.into(),
            rows: values
                .iter()
                .map(|(y, m, v)| (NaiveDate::from_ymd_opt(*y, *m, 1).unwrap(), *v))
                .collect(),
        }
    }

    #[test]
    fn quarterly_mean_of_months() {
        let s = monthly(
            "X",
            &[
                (1960, 1, Some(1.0)),
                (1960, 2, Some(2.0)),
                (1960, 3, Some(3.0)),
                (1960, 4, Some(4.0)),
                (1960, 5, Some(5.0)),
                (1960, 6, Some(6.0)),
            ],
        );
        let q = to_quarterly(&s, Aggregation::Mean).unwrap();
        assert_eq!(q.rows.len(), 2);
        assert_eq!(q.rows[0].1, Some(2.0));
        assert_eq!(q.rows[1].1, Some(5.0));
    }

    #[test]
    fn quarterly_last_of_months() {
        let s = monthly(
            "X",
            &[(1960, 1, Some(1.0)), (1960, 2, Some(2.0)), (1960, 3, Some(3.0))],
        );
        let q = to_quarterly(&s, Aggregation::Last).unwrap();
        assert_eq!(q.rows[0].1, Some(3.0));
    }

    #[test]
    fn quarterly_passthrough() {
        let s = RawSeries {
            id: "X".into(),
            rows: vec![
                (NaiveDate::from_ymd_opt(1960, 1, 1).unwrap(), Some(1.0)),
                (NaiveDate::from_ymd_opt(1960, 4, 1).unwrap(), Some(2.0)),
                (NaiveDate::from_ymd_opt(1960, 7, 1).unwrap(), Some(3.0)),
            ],
        };
        let q = to_quarterly(&s, Aggregation::Mean).unwrap();
        assert_eq!(q.rows, s.rows);
    }

    #[test]
    fn quarterly_drops_incomplete_terminal_quarter() {
        let s = monthly(
            "X",
            &[
                (1960, 1, Some(1.0)),
                (1960, 2, Some(2.0)),
                (1960, 3, Some(3.0)),
                (1960, 4, Some(4.0)),
            ],
        );
        let q = to_quarterly(&s, Aggregation::Mean).unwrap();
        assert_eq!(q.rows.len(), 1);
    }

    #[test]
    fn transform_log_diff() {
        let s = RawSeries {
            id: "X".into(),
            rows: vec![
                (NaiveDate::from_ymd_opt(1960, 1, 1).unwrap(), Some(100.0)),
                (NaiveDate::from_ymd_opt(1960, 4, 1).unwrap(), Some(110.0)),
            ],
        };
        let t = apply_transform(&s, Transform::LogDiff).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!((t.rows[0].1 - (1.1f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn transform_diff_of_constant_is_zero() {
        let s = RawSeries {
            id: "X".into(),
            rows: (0..4)
                .map(|k| {
                    (
                        NaiveDate::from_ymd_opt(1960, 1 + 3 * k, 1).unwrap(),
                        Some(7.0),
                    )
                })
                .collect(),
        };
        let t = apply_transform(&s, Transform::Diff).unwrap();
        assert!(t.rows.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn transform_log_rejects_nonpositive_with_date() {
        let s = RawSeries {
            id: "X".into(),
            rows: vec![
                (NaiveDate::from_ymd_opt(1960, 1, 1).unwrap(), Some(-1.0)),
                (NaiveDate::from_ymd_opt(1960, 4, 1).unwrap(), Some(2.0)),
            ],
        };
        match apply_transform(&s, Transform::Log) {
            Err(Error::SeriesValue { date, .. }) => assert_eq!(date, "1960-01-01"),
            other => panic!("expected SeriesValue error, got {other:?}"),
        }
    }

    fn small_panel() -> TimeSeriesPanel {
        let values = DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 30.0, 3.0, 20.0]);
        TimeSeriesPanel::synthetic(values)
    }

    #[test]
    fn standardize_centers_and_scales() {
        let p = small_panel().standardize().unwrap();
        for j in 0..2 {
            let col = p.values().column(j);
            let mean = col.sum() / 3.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2.0;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let values = DMatrix::from_row_slice(3, 1, &[5.0, 5.0, 5.0]);
        let p = TimeSeriesPanel::synthetic(values);
        assert!(p.standardize().is_err());
    }

    #[test]
    fn standardize_round_trip() {
        let p = small_panel();
        let s = p.standardize().unwrap();
        for r in 0..3 {
            for j in 0..2 {
                let back = s.inverse_standardize(j, s.values()[(r, j)]);
                assert!((back - p.values()[(r, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standardize_idempotent() {
        let s1 = small_panel().standardize().unwrap();
        let s2 = s1.standardize().unwrap();
        for (a, b) in s1.values().iter().zip(s2.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_parses_series_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.conf");
        std::fs::write(
            &cfg_path,
            "# demo\nseries.A.path = a.csv\nseries.A.transform = diff\nseries.B.path = b.csv\nlags = 4\nseed = 99\n",
        )
        .unwrap();
        let cfg = PipelineConfig::from_file(&cfg_path).unwrap();
        assert_eq!(cfg.series.len(), 2);
        assert_eq!(cfg.series[0].id, "A");
        assert_eq!(cfg.series[0].transform, Transform::Diff);
        assert_eq!(cfg.series[1].transform, Transform::Level);
        assert!(cfg.series[0].path.ends_with("a.csv"));
        assert_eq!(cfg.lags, Some(4));
        assert_eq!(cfg.seed, Some(99));
    }

    #[test]
    fn config_rejects_unknown_key() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.conf");
        std::fs::write(&cfg_path, "series.A.path = a.csv\nbogus = 1\n").unwrap();
        assert!(PipelineConfig::from_file(&cfg_path).is_err());
    }

    #[test]
    fn alignment_intersects_support() {
        let a = TransformedSeries {
            id: "A".into(),
            transform: Transform::Level,
            rows: (0..5)
                .map(|k| {
                    (
                        NaiveDate::from_ymd_opt(1960, 1, 1).unwrap() + Months::new(3 * k),
                        k as f64,
                    )
                })
                .collect(),
        };
        let b = TransformedSeries {
            id: "B".into(),
            transform: Transform::Level,
            rows: (1..4)
                .map(|k| {
                    (
                        NaiveDate::from_ymd_opt(1960, 1, 1).unwrap() + Months::new(3 * k),
                        10.0 + k as f64,
                    )
                })
                .collect(),
        };
        let panel = TimeSeriesPanel::align(vec![a, b]).unwrap();
        assert_eq!(panel.len(), 3);
        assert_eq!(panel.values()[(0, 0)], 1.0);
        assert_eq!(panel.values()[(0, 1)], 11.0);
    }
}
