//! Univariate postprocessing: ensemble BMA and nonhomogeneous regression
//! fitted per margin over a rolling training window.
//!
//! Only the exchangeable-member variants share coefficients across members;
//! [`fit_bma_normal`] additionally supports free mixture weights.

mod bma;
mod logistic;
mod nr;

use std::fmt;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::distributions::PredictiveDistribution;
use crate::{Error, Result};

pub use bma::{
    fit_bma_normal, fit_bma_precip, predict_bma_normal, predict_bma_precip, BmaNormalParams,
    BmaPrecipParams, GammaMeanCoefs, GammaVarianceCoefs, LogisticCoefs,
};
pub use logistic::{fit_logistic, LogisticFit};
pub use nr::{
    fit_nr_normal, fit_nr_precip, fit_nr_wind_speed, predict_nr_normal, predict_nr_precip,
    predict_nr_wind_speed, NrNormalParams, NrPrecipParams,
};

/// Minimum number of training cases for any fit.
pub const MIN_TRAINING_CASES: usize = 10;
/// Default rolling window length in days.
pub const DEFAULT_WINDOW_DAYS: u32 = 30;
/// Lower bound for fitted variances, in squared variable units.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// One univariate margin: variable, location and lead time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MarginIndex {
    pub variable: String,
    pub location: String,
    pub lead_time_hours: u32,
}

impl MarginIndex {
    pub fn new(
        variable: impl Into<String>,
        location: impl Into<String>,
        lead_time_hours: u32,
    ) -> Result<Self> {
        if lead_time_hours == 0 {
            return Err(Error::InvalidInput("lead time must be positive".into()));
        }
        Ok(MarginIndex {
            variable: variable.into(),
            location: location.into(),
            lead_time_hours,
        })
    }
}

impl fmt::Display for MarginIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}+{}h",
            self.variable, self.location, self.lead_time_hours
        )
    }
}

/// A past forecast case with its verifying observation, if known.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryCase {
    pub valid_time: NaiveDateTime,
    pub members: Vec<f64>,
    pub observation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCase {
    pub valid_time: NaiveDateTime,
    pub members: Vec<f64>,
    pub observation: f64,
}

/// Training cases of one margin, strictly preceding the forecast time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub margin: MarginIndex,
    pub cases: Vec<TrainingCase>,
    pub window_days: u32,
}

impl TrainingWindow {
    pub fn new(margin: MarginIndex, cases: Vec<TrainingCase>, window_days: u32) -> Result<Self> {
        let w = TrainingWindow {
            margin,
            cases,
            window_days,
        };
        w.n_members()?;
        Ok(w)
    }

    /// Common member count; errors on ragged or non-finite cases.
    pub fn n_members(&self) -> Result<usize> {
        let m = self.cases.first().map_or(0, |c| c.members.len());
        for c in &self.cases {
            if c.members.len() != m {
                return Err(Error::SizeMismatch(format!(
                    "case at {} has {} members, expected {m}",
                    c.valid_time,
                    c.members.len()
                )));
            }
            if !c.observation.is_finite() || c.members.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite value in training case at {}",
                    c.valid_time
                )));
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn summary(&self) -> WindowSummary {
        WindowSummary {
            start: self.cases.first().map(|c| c.valid_time),
            end: self.cases.last().map(|c| c.valid_time),
            n_cases: self.cases.len(),
        }
    }

    pub(crate) fn require(&self, minimum: usize) -> Result<usize> {
        let m = self.n_members()?;
        if self.cases.len() < minimum {
            return Err(Error::InsufficientData {
                available: self.cases.len(),
                required: minimum,
            });
        }
        if m == 0 {
            return Err(Error::InvalidInput("training cases have no members".into()));
        }
        Ok(m)
    }
}

/// The cases with valid time in `[valid_time - window_days, valid_time)`
/// that have an observation. Gaps are not padded.
pub fn roll_window(
    margin: &MarginIndex,
    history: &[HistoryCase],
    valid_time: NaiveDateTime,
    window_days: u32,
) -> Result<TrainingWindow> {
    if window_days == 0 {
        return Err(Error::InvalidInput("window length must be positive".into()));
    }
    if history
        .windows(2)
        .any(|w| w[0].valid_time > w[1].valid_time)
    {
        return Err(Error::InvalidInput(
            "history must be sorted by valid time".into(),
        ));
    }
    let start = valid_time - Duration::days(window_days as i64);
    let from = history.partition_point(|c| c.valid_time < start);
    let to = history.partition_point(|c| c.valid_time < valid_time);
    let cases: Vec<TrainingCase> = history[from..to]
        .iter()
        .filter_map(|c| {
            c.observation.map(|observation| TrainingCase {
                valid_time: c.valid_time,
                members: c.members.clone(),
                observation,
            })
        })
        .collect();
    if cases.is_empty() {
        return Err(Error::InsufficientData {
            available: 0,
            required: 1,
        });
    }
    TrainingWindow::new(margin.clone(), cases, window_days)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub start: Option<NaiveDateTime>,
    pub end: Option<NaiveDateTime>,
    pub n_cases: usize,
}

/// Convergence information and warnings from a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Final objective: log-likelihood for likelihood fits, mean CRPS for
    /// minimum-CRPS fits.
    pub objective: f64,
    pub warnings: Vec<String>,
}

impl FitDiagnostics {
    pub(crate) fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }
}

/// Fitted parameters together with their diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted<P> {
    pub params: P,
    pub diagnostics: FitDiagnostics,
}

/// Postprocessing model assigned to a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BmaNormal,
    BmaPrecip,
    NrNormal,
    NrPrecip,
    NrTruncnormal,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::BmaNormal => "bma-normal",
            ModelKind::BmaPrecip => "bma-precip",
            ModelKind::NrNormal => "nr-normal",
            ModelKind::NrPrecip => "nr-precip",
            ModelKind::NrTruncnormal => "nr-truncnormal",
        }
    }

    pub fn fit(&self, window: &TrainingWindow, exchangeable: bool) -> Result<FittedModel> {
        Ok(match self {
            ModelKind::BmaNormal => {
                let f = fit_bma_normal(window, exchangeable)?;
                FittedModel::new(FittedParams::BmaNormal(f.params), f.diagnostics)
            }
            ModelKind::BmaPrecip => {
                let f = fit_bma_precip(window, exchangeable)?;
                FittedModel::new(FittedParams::BmaPrecip(f.params), f.diagnostics)
            }
            ModelKind::NrNormal => {
                let f = fit_nr_normal(window, exchangeable)?;
                FittedModel::new(FittedParams::NrNormal(f.params), f.diagnostics)
            }
            ModelKind::NrPrecip => {
                let f = fit_nr_precip(window)?;
                FittedModel::new(FittedParams::NrPrecip(f.params), f.diagnostics)
            }
            ModelKind::NrTruncnormal => {
                let f = fit_nr_wind_speed(window)?;
                FittedModel::new(FittedParams::NrTruncnormal(f.params), f.diagnostics)
            }
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidInput(format!("unknown model '{s}'")))
    }
}

/// Parameters of any supported model, tagged by model name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "kebab-case")]
pub enum FittedParams {
    BmaNormal(BmaNormalParams),
    BmaPrecip(BmaPrecipParams),
    NrNormal(NrNormalParams),
    NrPrecip(NrPrecipParams),
    NrTruncnormal(NrNormalParams),
}

impl FittedParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedParams::BmaNormal(_) => ModelKind::BmaNormal,
            FittedParams::BmaPrecip(_) => ModelKind::BmaPrecip,
            FittedParams::NrNormal(_) => ModelKind::NrNormal,
            FittedParams::NrPrecip(_) => ModelKind::NrPrecip,
            FittedParams::NrTruncnormal(_) => ModelKind::NrTruncnormal,
        }
    }

    /// Predictive distribution for a new raw ensemble.
    pub fn predict(&self, ensemble: &[f64]) -> Result<PredictiveDistribution> {
        Ok(match self {
            FittedParams::BmaNormal(p) => predict_bma_normal(p, ensemble)?.into(),
            FittedParams::BmaPrecip(p) => predict_bma_precip(p, ensemble)?.into(),
            FittedParams::NrNormal(p) => predict_nr_normal(p, ensemble)?.into(),
            FittedParams::NrPrecip(p) => predict_nr_precip(p, ensemble)?.into(),
            FittedParams::NrTruncnormal(p) => predict_nr_wind_speed(p, ensemble)?.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub params: FittedParams,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    fn new(params: FittedParams, diagnostics: FitDiagnostics) -> Self {
        FittedModel {
            params,
            diagnostics,
        }
    }
}

/// Serialized form of a fitted margin:
/// `{margin, model, params, window: {start, end, n_cases}, fit_diagnostics}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub margin: MarginIndex,
    #[serde(flatten)]
    pub model: FittedParams,
    pub window: WindowSummary,
    pub fit_diagnostics: FitDiagnostics,
}

pub(crate) fn cbrt_nonneg(x: f64) -> f64 {
    x.max(0.0).cbrt()
}

/// Ensemble mean and variance (divisor `M`), summed in sorted order so the
/// result does not depend on member order.
pub(crate) fn ensemble_mean_variance(x: &[f64]) -> (f64, f64) {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = x.len() as f64;
    let mean = sorted.iter().sum::<f64>() / m;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    (mean, var)
}

/// Stable `ln(1 + e^t)`.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn day(d: i64) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2010, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
            + Duration::days(d)
    }

    fn history(days: impl Iterator<Item = i64>) -> Vec<HistoryCase> {
        days.map(|d| HistoryCase {
            valid_time: day(d),
            members: vec![d as f64, d as f64 + 1.0],
            observation: Some(d as f64),
        })
        .collect()
    }

    fn margin() -> MarginIndex {
        MarginIndex::new("t2m", "FRA", 48).unwrap()
    }

    #[test]
    fn window_takes_latest_cases() {
        let h = history(0..40);
        let w = roll_window(&margin(), &h, day(40), 30).unwrap();
        assert_eq!(w.len(), 30);
        assert_eq!(w.cases[0].valid_time, day(10));
        assert_eq!(w.cases[29].valid_time, day(39));
    }

    #[test]
    fn window_excludes_forecast_time_and_never_pads() {
        let h = history((0..40).filter(|d| d % 3 != 0));
        let w = roll_window(&margin(), &h, day(39), 30).unwrap();
        assert!(w.cases.iter().all(|c| c.valid_time < day(39)));
        assert_eq!(w.len(), (9..39).filter(|d| d % 3 != 0).count());
    }

    #[test]
    fn window_skips_missing_observations() {
        let mut h = history(0..10);
        h[5].observation = None;
        let w = roll_window(&margin(), &h, day(10), 30).unwrap();
        assert_eq!(w.len(), 9);
    }

    #[test]
    fn empty_window_is_insufficient() {
        let h = history(0..10);
        assert!(matches!(
            roll_window(&margin(), &h, day(0), 30),
            Err(Error::InsufficientData { .. })
        ));
        let mut unsorted = history(0..3);
        unsorted.swap(0, 2);
        assert!(roll_window(&margin(), &unsorted, day(5), 30).is_err());
    }

    #[test]
    fn margin_index_requires_positive_lead() {
        assert!(MarginIndex::new("t2m", "BER", 0).is_err());
        assert_eq!(margin().to_string(), "t2m@FRA+48h");
    }

    #[test]
    fn model_kind_names_round_trip() {
        for kind in [
            ModelKind::BmaNormal,
            ModelKind::BmaPrecip,
            ModelKind::NrNormal,
            ModelKind::NrPrecip,
            ModelKind::NrTruncnormal,
        ] {
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("emos".parse::<ModelKind>().is_err());
    }

    #[test]
    fn params_record_json_schema() {
        let rec = ParamsRecord {
            margin: margin(),
            model: FittedParams::NrNormal(NrNormalParams {
                a: 0.5,
                b: 0.02,
                c: 1.0,
                d: 0.5,
            }),
            window: WindowSummary {
                start: Some(day(0)),
                end: Some(day(29)),
                n_cases: 30,
            },
            fit_diagnostics: FitDiagnostics::default(),
        };
        let v = serde_json::to_value(&rec).unwrap();
        for key in ["margin", "model", "params", "window", "fit_diagnostics"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["model"], "nr-normal");
        assert_eq!(v["window"]["n_cases"], 30);
        let back: ParamsRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
    }
}
