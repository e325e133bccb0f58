//! Data ingestion, parameter persistence and the end-to-end pipeline behind
//! the `ecc` command-line tool.
//!
//! A pipeline run rolls a training window forward over the test days, fits
//! the configured model per margin, quantizes and reorders the predictive
//! distributions, and scores three systems side by side: the raw ensemble,
//! the quantized postprocessed margins under independent random ordering,
//! and the coupled (ECC or Schaake) ensemble.

pub mod io;
mod pipeline;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::coupling::Quantization;
use crate::postprocess::{MarginIndex, ModelKind, DEFAULT_WINDOW_DAYS};
use crate::synthetic::{MarginSpec, ScenarioConfig};
use crate::verification::DEFAULT_PIT_BINS;
use crate::{Error, Result};

pub use io::{
    format_time, parse_time, read_forecasts, read_observations, write_ensembles,
    write_observations, write_raw_ensembles, EnsembleRow, ForecastTable, MissingObservation,
    ObservationTable, Store,
};
pub use pipeline::{
    couple_forecasts, fit_all, predict_all, run_pipeline, schaake_record, score_ensembles,
    CaseOutput, CoupledCase, FailureRecord, PipelineRun, Prediction, SYSTEM_ECC, SYSTEM_ENSEMBLE,
    SYSTEM_INDEPENDENT, SYSTEM_POSTPROCESSED, SYSTEM_RAW,
};
pub use report::{histogram_svg, write_coupled, write_pipeline_outputs, write_report, ParamsLine};

/// Coupling scheme: ECC with one of three quantizations, or the Schaake
/// shuffle of equidistant quantiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EccScheme {
    #[default]
    Q,
    R,
    T,
    Schaake,
}

impl EccScheme {
    pub fn quantization(self) -> Quantization {
        match self {
            EccScheme::Q | EccScheme::Schaake => Quantization::Q,
            EccScheme::R => Quantization::R,
            EccScheme::T => Quantization::T,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EccScheme::Q => "q",
            EccScheme::R => "r",
            EccScheme::T => "t",
            EccScheme::Schaake => "schaake",
        }
    }
}

impl fmt::Display for EccScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EccScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q" => Ok(EccScheme::Q),
            "r" => Ok(EccScheme::R),
            "t" => Ok(EccScheme::T),
            "schaake" => Ok(EccScheme::Schaake),
            _ => Err(Error::InvalidInput(format!(
                "unknown scheme '{s}'; expected q, r, t or schaake"
            ))),
        }
    }
}

/// Model used for a variable when the configuration does not name one.
pub fn default_model_for(variable: &str) -> Option<ModelKind> {
    match variable.to_ascii_lowercase().as_str() {
        "t2m" | "temperature" | "msl" | "pressure" | "sp" => Some(ModelKind::BmaNormal),
        "tp" | "precip" | "precipitation" => Some(ModelKind::BmaPrecip),
        "u" | "v" | "u10" | "v10" => Some(ModelKind::NrNormal),
        "ws" | "ws10" | "wind_speed" => Some(ModelKind::NrTruncnormal),
        _ => None,
    }
}

fn default_window_days() -> u32 {
    DEFAULT_WINDOW_DAYS
}

fn default_pit_bins() -> usize {
    DEFAULT_PIT_BINS
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Model per variable name; unlisted variables use [`default_model_for`].
    #[serde(default)]
    pub models: BTreeMap<String, ModelKind>,
    #[serde(default = "default_window_days")]
    pub window_days: u32,
    #[serde(default)]
    pub scheme: EccScheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub exchangeable: bool,
    /// First test day; defaults to one window length after the first
    /// forecast.
    #[serde(default)]
    pub test_start: Option<NaiveDateTime>,
    /// Margin groups for multivariate scoring, by margin label
    /// (`variable@location+LEADh`). Defaults to one group of all margins.
    #[serde(default)]
    pub groups: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_pit_bins")]
    pub pit_bins: usize,
    #[serde(default)]
    pub forecasts: Option<PathBuf>,
    #[serde(default)]
    pub observations: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Scenario used by `synth`, and by `pipeline` when no input files are given.
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            models: BTreeMap::new(),
            window_days: DEFAULT_WINDOW_DAYS,
            scheme: EccScheme::Q,
            seed: 0,
            exchangeable: true,
            test_start: None,
            groups: BTreeMap::new(),
            pit_bins: DEFAULT_PIT_BINS,
            forecasts: None,
            observations: None,
            output_dir: None,
            scenario: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 {
            return Err(Error::InvalidInput("window_days must be positive".into()));
        }
        if self.pit_bins < 2 {
            return Err(Error::InvalidInput("pit_bins must be at least 2".into()));
        }
        Ok(())
    }

    pub fn model_for(&self, variable: &str) -> Result<ModelKind> {
        self.models
            .get(variable)
            .copied()
            .or_else(|| default_model_for(variable))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "no model assigned to variable '{variable}'; add it under \"models\" in the config"
                ))
            })
    }

    /// Group name and margin indices for multivariate scoring.
    pub fn resolve_groups(&self, margins: &[MarginIndex]) -> Result<Vec<(String, Vec<usize>)>> {
        if self.groups.is_empty() {
            return Ok(vec![("all".to_string(), (0..margins.len()).collect())]);
        }
        let labels: Vec<String> = margins.iter().map(ToString::to_string).collect();
        self.groups
            .iter()
            .map(|(name, members)| {
                let idx = members
                    .iter()
                    .map(|label| {
                        labels.iter().position(|l| l == label).ok_or_else(|| {
                            Error::InvalidInput(format!(
                                "group '{name}' names unknown margin '{label}'"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.is_empty() {
                    return Err(Error::InvalidInput(format!("group '{name}' is empty")));
                }
                Ok((name.clone(), idx))
            })
            .collect()
    }
}

/// The scenario used when the pipeline runs without input files: two
/// correlated temperature stations and one precipitation gauge with a
/// biased, underdispersed 20-member ensemble over 150 days.
pub fn bundled_scenario(seed: u64) -> ScenarioConfig {
    let t = |loc: &str| MarginSpec {
        bias: 1.5,
        ..MarginSpec::continuous("t2m", loc)
    };
    let mut tp = MarginSpec::precipitation("tp", "s01", 0.5);
    tp.bias = 0.3;
    ScenarioConfig {
        margins: vec![t("s01"), t("s02"), tp],
        members: 20,
        n_days: 150,
        correlation: vec![
            vec![1.0, 0.8, 0.4],
            vec![0.8, 1.0, 0.4],
            vec![0.4, 0.4, 1.0],
        ],
        dispersion_factor: 0.6,
        seed,
        start: NaiveDateTime::default() + chrono::Duration::days(18262),
    }
}
