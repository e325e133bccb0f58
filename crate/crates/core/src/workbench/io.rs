//! CSV ingestion and export.
//!
//! Forecasts: `valid_time,variable,location,lead_hours,member_01,...,member_MM`.
//! Observations: `valid_time,variable,location,value`, where an empty value
//! or `NA` marks a missing observation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDateTime;
use serde::Serialize;

use crate::coupling::RawEnsemble;
use crate::postprocess::{HistoryCase, MarginIndex};
use crate::{Error, Result};

const TIME_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Parse an ISO-8601 date or date-time without offset.
pub fn parse_time(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    let s = s.strip_suffix('Z').unwrap_or(s);
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

pub fn format_time(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn malformed(line: u64, message: impl Into<String>) -> Error {
    Error::Malformed {
        line,
        message: message.into(),
    }
}

fn parse_value(field: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| malformed(line, format!("{what} '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(malformed(line, format!("{what} '{field}' is not finite")));
    }
    Ok(v)
}

/// Forecast rows keyed by margin and valid time.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTable {
    pub n_members: usize,
    pub rows: BTreeMap<MarginIndex, BTreeMap<NaiveDateTime, Vec<f64>>>,
}

pub fn read_forecasts<R: Read>(input: R) -> Result<ForecastTable> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = reader.headers()?.clone();
    let fixed = ["valid_time", "variable", "location", "lead_hours"];
    if header.len() < fixed.len() + 1
        || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b.trim())
    {
        return Err(malformed(
            1,
            "forecast header must be valid_time,variable,location,lead_hours,member_01,...",
        ));
    }
    let n_members = header.len() - fixed.len();
    for (k, name) in header.iter().skip(fixed.len()).enumerate() {
        let expected = format!("member_{:02}", k + 1);
        if name.trim() != expected {
            return Err(malformed(
                1,
                format!("expected column '{expected}', found '{name}'"),
            ));
        }
    }

    let mut rows: BTreeMap<MarginIndex, BTreeMap<NaiveDateTime, Vec<f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(malformed(
                line,
                format!(
                    "expected {} fields ({} members), found {}",
                    header.len(),
                    n_members,
                    record.len()
                ),
            ));
        }
        let time = parse_time(&record[0])
            .ok_or_else(|| malformed(line, format!("unparseable valid_time '{}'", &record[0])))?;
        let lead: u32 = record[3].trim().parse().map_err(|_| {
            malformed(
                line,
                format!("lead_hours '{}' is not a nonnegative integer", &record[3]),
            )
        })?;
        let margin = MarginIndex::new(record[1].trim(), record[2].trim(), lead)
            .map_err(|e| malformed(line, e.to_string()))?;
        let members = record
            .iter()
            .skip(fixed.len())
            .map(|f| parse_value(f, line, "member value"))
            .collect::<Result<Vec<_>>>()?;
        if rows
            .entry(margin.clone())
            .or_default()
            .insert(time, members)
            .is_some()
        {
            return Err(malformed(
                line,
                format!("duplicate forecast for {margin} at {}", format_time(time)),
            ));
        }
    }
    Ok(ForecastTable { n_members, rows })
}

/// Observations keyed by `(variable, location)` and valid time; `None` marks
/// an explicitly missing value.
pub type ObservationTable = BTreeMap<(String, String), BTreeMap<NaiveDateTime, Option<f64>>>;

pub fn read_observations<R: Read>(input: R) -> Result<ObservationTable> {
    let mut reader = csv::ReaderBuilder::new().from_reader(input);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header != ["valid_time", "variable", "location", "value"] {
        return Err(malformed(
            1,
            "observation header must be valid_time,variable,location,value",
        ));
    }
    let mut table = ObservationTable::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let time = parse_time(&record[0])
            .ok_or_else(|| malformed(line, format!("unparseable valid_time '{}'", &record[0])))?;
        let raw = record[3].trim();
        let value = if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            None
        } else {
            Some(parse_value(raw, line, "observation")?)
        };
        let key = (record[1].trim().to_string(), record[2].trim().to_string());
        if table
            .entry(key.clone())
            .or_default()
            .insert(time, value)
            .is_some()
        {
            return Err(malformed(
                line,
                format!(
                    "duplicate observation for {}@{} at {}",
                    key.0,
                    key.1,
                    format_time(time)
                ),
            ));
        }
    }
    Ok(table)
}

/// A forecast case whose observation is absent or marked missing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingObservation {
    pub margin: String,
    pub valid_time: String,
}

/// Joined, time-sorted forecast and observation history per margin.
#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    pub n_members: usize,
    pub series: BTreeMap<MarginIndex, Vec<HistoryCase>>,
    /// Cases kept for prediction but excluded from training and scoring.
    pub missing_observations: Vec<MissingObservation>,
}

impl Store {
    pub fn join(forecasts: ForecastTable, observations: &ObservationTable) -> Result<Self> {
        if forecasts.rows.is_empty() {
            return Err(Error::InvalidInput("forecast file has no rows".into()));
        }
        let mut series = BTreeMap::new();
        let mut missing = Vec::new();
        for (margin, rows) in forecasts.rows {
            let obs = observations.get(&(margin.variable.clone(), margin.location.clone()));
            let cases: Vec<HistoryCase> = rows
                .into_iter()
                .map(|(valid_time, members)| {
                    let observation = obs.and_then(|o| o.get(&valid_time).copied().flatten());
                    if observation.is_none() {
                        missing.push(MissingObservation {
                            margin: margin.to_string(),
                            valid_time: format_time(valid_time),
                        });
                    }
                    HistoryCase {
                        valid_time,
                        members,
                        observation,
                    }
                })
                .collect();
            series.insert(margin, cases);
        }
        Ok(Store {
            n_members: forecasts.n_members,
            series,
            missing_observations: missing,
        })
    }

    pub fn read<F: Read, O: Read>(forecasts: F, observations: O) -> Result<Self> {
        let f = read_forecasts(forecasts)?;
        let o = read_observations(observations)?;
        Store::join(f, &o)
    }

    /// Forecasts only, every observation missing.
    pub fn forecasts_only(forecasts: ForecastTable) -> Result<Self> {
        Store::join(forecasts, &ObservationTable::new())
    }

    pub fn margins(&self) -> Vec<MarginIndex> {
        self.series.keys().cloned().collect()
    }

    pub fn variables(&self) -> BTreeSet<String> {
        self.series.keys().map(|m| m.variable.clone()).collect()
    }

    /// Valid times at which every margin has a forecast.
    pub fn complete_times(&self) -> Vec<NaiveDateTime> {
        let mut iter = self.series.values();
        let Some(first) = iter.next() else {
            return Vec::new();
        };
        let mut times: BTreeSet<NaiveDateTime> = first.iter().map(|c| c.valid_time).collect();
        for cases in iter {
            let other: BTreeSet<NaiveDateTime> = cases.iter().map(|c| c.valid_time).collect();
            times = times.intersection(&other).copied().collect();
        }
        times.into_iter().collect()
    }

    pub fn case(&self, margin: &MarginIndex, time: NaiveDateTime) -> Option<&HistoryCase> {
        let cases = self.series.get(margin)?;
        cases
            .binary_search_by(|c| c.valid_time.cmp(&time))
            .ok()
            .map(|i| &cases[i])
    }

    /// Raw ensemble over all margins at `time`, if complete.
    pub fn ensemble_at(&self, time: NaiveDateTime) -> Option<RawEnsemble> {
        let values = self
            .series
            .keys()
            .map(|m| self.case(m, time).map(|c| c.members.clone()))
            .collect::<Option<Vec<_>>>()?;
        RawEnsemble::new(time, self.margins(), values).ok()
    }
}

/// Write ensembles in the forecast schema. All ensembles must have the same
/// member count.
/// One valid time: its margins and the margin-major member values.
pub type EnsembleRow = (NaiveDateTime, Vec<MarginIndex>, Vec<Vec<f64>>);

pub fn write_ensembles<W: Write>(out: W, ensembles: &[EnsembleRow]) -> Result<()> {
    let m = ensembles
        .first()
        .and_then(|e| e.2.first())
        .map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "valid_time".to_string(),
        "variable".into(),
        "location".into(),
        "lead_hours".into(),
    ];
    header.extend((1..=m).map(|k| format!("member_{k:02}")));
    w.write_record(&header)?;
    for (time, margins, values) in ensembles {
        for (margin, row) in margins.iter().zip(values) {
            if row.len() != m {
                return Err(Error::SizeMismatch(format!(
                    "ensemble for {margin} has {} members, expected {m}",
                    row.len()
                )));
            }
            let mut record = vec![
                format_time(*time),
                margin.variable.clone(),
                margin.location.clone(),
                margin.lead_time_hours.to_string(),
            ];
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_raw_ensembles<W: Write>(out: W, ensembles: &[RawEnsemble]) -> Result<()> {
    let rows: Vec<_> = ensembles
        .iter()
        .map(|e| (e.valid_time, e.margins.clone(), e.values().to_vec()))
        .collect();
    write_ensembles(out, &rows)
}

/// Write observations, one row per (time, margin) variable/location pair.
pub fn write_observations<W: Write>(
    out: W,
    margins: &[MarginIndex],
    times: &[NaiveDateTime],
    values: &[Vec<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["valid_time", "variable", "location", "value"])?;
    for (time, row) in times.iter().zip(values) {
        let mut seen = BTreeSet::new();
        for (margin, v) in margins.iter().zip(row) {
            if seen.insert((&margin.variable, &margin.location)) {
                w.write_record([
                    format_time(*time),
                    margin.variable.clone(),
                    margin.location.clone(),
                    v.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
