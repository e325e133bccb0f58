use std::collections::BTreeMap;

use chrono::{Duration, NaiveDateTime};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::io::{format_time, MissingObservation, Store};
use super::{EccScheme, PipelineConfig};
use crate::coupling::{
    couple, ecc_reorder, margin_ranks, quantize_q, quantize_r, quantize_t, schaake_shuffle,
    EccEnsemble, HistoricalRecord, Quantization, QuantizedEnsemble, RawEnsemble, Template,
};
use crate::distributions::{crps_closed_normal, PredictiveDistribution};
use crate::postprocess::{roll_window, MarginIndex, ModelKind, ParamsRecord};
use crate::seeds::{derive_path, derive_seed, rng_from_seed};
use crate::verification::{
    abs_error_at_median, build_histogram, crps_ensemble, crps_numeric, energy_score_ensemble,
    multivariate_rank, pit, verification_rank, HistogramKind, HistogramSpec, NamedHistogram,
    ScoreRecord, ScoreReport, Standardization,
};
use crate::{Error, Result};

pub const SYSTEM_RAW: &str = "raw";
pub const SYSTEM_POSTPROCESSED: &str = "postprocessed";
pub const SYSTEM_INDEPENDENT: &str = "independent";
pub const SYSTEM_ECC: &str = "ecc";
/// System name used when scoring externally supplied ensembles.
pub const SYSTEM_ENSEMBLE: &str = "ensemble";

/// Target label of histograms pooled over all margins.
const POOLED: &str = "pooled";

const TAG_CASE: u64 = 1;
const TAG_REORDER: u64 = 2;
const TAG_INDEPENDENT: u64 = 3;
const TAG_PIT: u64 = 4;
const TAG_RANK: u64 = 5;
const TAG_MV_RANK: u64 = 6;

fn time_key(t: NaiveDateTime) -> u64 {
    t.and_utc().timestamp() as u64
}

/// Master seed of one valid time; independent of which days are tested.
fn case_seed(seed: u64, t: NaiveDateTime) -> u64 {
    derive_path(seed, &[TAG_CASE, time_key(t)])
}

/// A margin (or group) dropped from one case, with the stage that failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub valid_time: String,
    pub margin: String,
    pub stage: String,
    pub kind: String,
    pub message: String,
}

impl FailureRecord {
    fn new(t: NaiveDateTime, margin: impl ToString, stage: &str, err: &Error) -> Self {
        FailureRecord {
            valid_time: format_time(t),
            margin: margin.to_string(),
            stage: stage.to_string(),
            kind: err.kind().to_string(),
            message: err.to_string(),
        }
    }
}

/// Everything produced for one test day, over the margins that survived
/// fitting and quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutput {
    pub valid_time: NaiveDateTime,
    pub margins: Vec<MarginIndex>,
    pub raw: Vec<Vec<f64>>,
    pub params: Vec<ParamsRecord>,
    pub distributions: Vec<PredictiveDistribution>,
    pub ecc: EccEnsemble,
    /// The quantized margins, each shuffled independently.
    pub independent: Vec<Vec<f64>>,
    pub observations: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub margins: Vec<MarginIndex>,
    pub groups: Vec<(String, Vec<MarginIndex>)>,
    pub cases: Vec<CaseOutput>,
    pub report: ScoreReport,
    pub failures: Vec<FailureRecord>,
    pub missing_observations: Vec<MissingObservation>,
    pub standardizations: BTreeMap<String, Standardization>,
}

fn fit_margin(
    store: &Store,
    margin: &MarginIndex,
    model: ModelKind,
    t: NaiveDateTime,
    config: &PipelineConfig,
) -> Result<ParamsRecord> {
    let history = store
        .series
        .get(margin)
        .ok_or_else(|| Error::InvalidInput(format!("no history for margin {margin}")))?;
    let window = roll_window(margin, history, t, config.window_days)?;
    let fitted = model.fit(&window, config.exchangeable)?;
    Ok(ParamsRecord {
        margin: margin.clone(),
        model: fitted.params,
        window: window.summary(),
        fit_diagnostics: fitted.diagnostics,
    })
}

/// Fit every margin on the window preceding `valid_time`. Configuration
/// errors abort; per-margin fit errors are returned as failures.
pub fn fit_all(
    store: &Store,
    config: &PipelineConfig,
    valid_time: NaiveDateTime,
) -> Result<(Vec<ParamsRecord>, Vec<FailureRecord>)> {
    config.validate()?;
    let margins = store.margins();
    let models = margins
        .iter()
        .map(|m| config.model_for(&m.variable))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<_> = margins
        .par_iter()
        .zip(models)
        .map(|(margin, model)| fit_margin(store, margin, model, valid_time, config))
        .collect();
    let mut params = Vec::new();
    let mut failures = Vec::new();
    for (margin, r) in margins.iter().zip(results) {
        match r {
            Ok(p) => params.push(p),
            Err(e) => failures.push(FailureRecord::new(valid_time, margin, "fit", &e)),
        }
    }
    Ok((params, failures))
}

/// A predictive distribution for one forecast case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub margin: MarginIndex,
    pub valid_time: String,
    pub model: ModelKind,
    pub mean: f64,
    pub median: f64,
    pub distribution: PredictiveDistribution,
}

fn params_for<'a>(params: &'a [ParamsRecord], margin: &MarginIndex) -> Result<&'a ParamsRecord> {
    params
        .iter()
        .find(|p| &p.margin == margin)
        .ok_or_else(|| Error::InvalidInput(format!("no fitted parameters for margin {margin}")))
}

/// Apply fitted parameters to every forecast case (or only those at `at`).
pub fn predict_all(
    params: &[ParamsRecord],
    forecasts: &Store,
    at: Option<NaiveDateTime>,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (margin, cases) in &forecasts.series {
        let p = params_for(params, margin)?;
        for case in cases
            .iter()
            .filter(|c| at.is_none_or(|t| c.valid_time == t))
        {
            let distribution = p.model.predict(&case.members)?;
            out.push(Prediction {
                margin: margin.clone(),
                valid_time: format_time(case.valid_time),
                model: p.model.kind(),
                mean: distribution.mean(),
                median: distribution.median(),
                distribution,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no forecast cases to predict".into()));
    }
    Ok(out)
}

/// The `m` most recent valid times before `t` at which every listed margin
/// has an observation, as a margin-major record in time order.
pub fn schaake_record(
    store: &Store,
    margins: &[MarginIndex],
    t: NaiveDateTime,
    m: usize,
) -> Result<HistoricalRecord> {
    let mut dates = Vec::with_capacity(m);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    for time in store.complete_times().into_iter().rev().filter(|&s| s < t) {
        let obs: Option<Vec<f64>> = margins
            .iter()
            .map(|margin| store.case(margin, time).and_then(|c| c.observation))
            .collect();
        if let Some(obs) = obs {
            dates.push(time);
            rows.push(obs);
            if rows.len() == m {
                break;
            }
        }
    }
    if rows.len() < m {
        return Err(Error::InsufficientData {
            available: rows.len(),
            required: m,
        });
    }
    dates.reverse();
    rows.reverse();
    let values = (0..margins.len())
        .map(|l| rows.iter().map(|r| r[l]).collect())
        .collect();
    HistoricalRecord::new(dates, values)
}

/// One coupled forecast case.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledCase {
    pub valid_time: NaiveDateTime,
    pub margins: Vec<MarginIndex>,
    pub quantized: QuantizedEnsemble,
    pub ecc: EccEnsemble,
}

/// Quantize and reorder every complete forecast case (or only the one at
/// `at`). Any failure, such as ECC-T on a precipitation margin, aborts.
pub fn couple_forecasts(
    params: &[ParamsRecord],
    store: &Store,
    scheme: EccScheme,
    seed: u64,
    at: Option<NaiveDateTime>,
) -> Result<Vec<CoupledCase>> {
    let times: Vec<NaiveDateTime> = store
        .complete_times()
        .into_iter()
        .filter(|&t| at.is_none_or(|a| a == t))
        .collect();
    if times.is_empty() {
        return Err(Error::InvalidInput(
            "no valid time has forecasts for every margin".into(),
        ));
    }
    times
        .into_iter()
        .map(|t| {
            let raw = store
                .ensemble_at(t)
                .ok_or_else(|| Error::InvalidInput(format!("incomplete ensemble at {t}")))?;
            let dists = raw
                .margins
                .iter()
                .enumerate()
                .map(|(l, margin)| params_for(params, margin)?.model.predict(raw.margin(l)))
                .collect::<Result<Vec<_>>>()?;
            let record = match scheme {
                EccScheme::Schaake => {
                    Some(schaake_record(store, &raw.margins, t, raw.n_members())?)
                }
                _ => None,
            };
            let template = record.as_ref().map_or(Template::Raw, Template::Record);
            let (quantized, ecc) = couple(
                &raw,
                &dists,
                scheme.quantization(),
                template,
                case_seed(seed, t),
            )?;
            Ok(CoupledCase {
                valid_time: t,
                margins: raw.margins.clone(),
                quantized,
                ecc,
            })
        })
        .collect()
}

fn quantize_margin(
    dist: &PredictiveDistribution,
    raw: &[f64],
    scheme: Quantization,
    seed: u64,
) -> Result<Vec<f64>> {
    match scheme {
        Quantization::Q => quantize_q(dist, raw.len()),
        Quantization::R => quantize_r(dist, raw.len(), seed),
        Quantization::T => quantize_t(dist, raw).map(|t| t.values),
    }
}

fn process_day(
    config: &PipelineConfig,
    store: &Store,
    models: &[(MarginIndex, ModelKind)],
    t: NaiveDateTime,
) -> (Option<CaseOutput>, Vec<FailureRecord>) {
    let seed = case_seed(config.seed, t);
    let scheme = config.scheme.quantization();
    let mut failures = Vec::new();
    let mut margins = Vec::new();
    let mut raw = Vec::new();
    let mut params = Vec::new();
    let mut dists = Vec::new();
    let mut quantized = Vec::new();
    let mut observations = Vec::new();
    for (l, (margin, model)) in models.iter().enumerate() {
        let Some(case) = store.case(margin, t) else {
            continue;
        };
        let result = fit_margin(store, margin, *model, t, config)
            .map_err(|e| ("fit", e))
            .and_then(|p| {
                let d = p.model.predict(&case.members).map_err(|e| ("predict", e))?;
                let q = quantize_margin(&d, &case.members, scheme, derive_seed(seed, l as u64))
                    .map_err(|e| ("quantize", e))?;
                Ok((p, d, q))
            });
        match result {
            Ok((p, d, q)) => {
                margins.push(margin.clone());
                raw.push(case.members.clone());
                params.push(p);
                dists.push(d);
                quantized.push(q);
                observations.push(case.observation);
            }
            Err((stage, e)) => failures.push(FailureRecord::new(t, margin, stage, &e)),
        }
    }
    if margins.is_empty() {
        return (None, failures);
    }

    let independent = quantized
        .iter()
        .enumerate()
        .map(|(l, q)| {
            let mut v = q.clone();
            v.shuffle(&mut rng_from_seed(derive_path(
                seed,
                &[TAG_INDEPENDENT, l as u64],
            )));
            v
        })
        .collect();
    let quantized = QuantizedEnsemble {
        values: quantized,
        scheme,
        sources: dists.clone(),
    };
    let tie_seed = derive_seed(seed, TAG_REORDER);
    let ecc = match config.scheme {
        EccScheme::Schaake => schaake_record(store, &margins, t, store.n_members)
            .and_then(|record| schaake_shuffle(&quantized, &record, tie_seed)),
        _ => margin_ranks(&raw, tie_seed).and_then(|perms| ecc_reorder(&quantized, &perms)),
    };
    match ecc {
        Ok(ecc) => (
            Some(CaseOutput {
                valid_time: t,
                margins,
                raw,
                params,
                distributions: dists,
                ecc,
                independent,
                observations,
            }),
            failures,
        ),
        Err(e) => {
            failures.extend(
                margins
                    .iter()
                    .map(|m| FailureRecord::new(t, m, "reorder", &e)),
            );
            (None, failures)
        }
    }
}

/// Collects score records and the values behind each histogram.
struct Scorer {
    records: Vec<ScoreRecord>,
    values: BTreeMap<(String, String), (HistogramSpec, Vec<f64>)>,
    pit_bins: usize,
}

impl Scorer {
    fn new(pit_bins: usize) -> Self {
        Scorer {
            records: Vec::new(),
            values: BTreeMap::new(),
            pit_bins,
        }
    }

    fn push_value(&mut self, system: &str, target: &str, spec: HistogramSpec, v: f64) {
        for t in [target, POOLED] {
            self.values
                .entry((system.to_string(), t.to_string()))
                .or_insert_with(|| (spec, Vec::new()))
                .1
                .push(v);
        }
    }

    fn record(
        &mut self,
        system: &str,
        target: &str,
        t: NaiveDateTime,
        crps: Option<f64>,
        abs_error: Option<f64>,
        energy_score: Option<f64>,
    ) {
        self.records.push(ScoreRecord {
            system: system.to_string(),
            target: target.to_string(),
            valid_time: t,
            crps,
            abs_error,
            energy_score,
        });
    }

    /// CRPS, median absolute error and verification rank of an ensemble.
    fn ensemble(
        &mut self,
        system: &str,
        target: &str,
        t: NaiveDateTime,
        members: &[f64],
        y: f64,
        seed: u64,
    ) -> Result<()> {
        let emp = PredictiveDistribution::empirical(members)?;
        self.record(
            system,
            target,
            t,
            Some(crps_ensemble(members, y)),
            Some(abs_error_at_median(&emp, y)),
            None,
        );
        let rank = verification_rank(members, y, seed);
        let spec = HistogramSpec::ranks(HistogramKind::VerificationRank, members.len());
        self.push_value(system, target, spec, rank as f64);
        Ok(())
    }

    fn distribution(
        &mut self,
        system: &str,
        target: &str,
        t: NaiveDateTime,
        dist: &PredictiveDistribution,
        y: f64,
        seed: u64,
    ) -> Result<()> {
        let crps = match dist {
            PredictiveDistribution::Normal(n) => crps_closed_normal(n, y),
            other => crps_numeric(other, y)?,
        };
        self.record(
            system,
            target,
            t,
            Some(crps),
            Some(abs_error_at_median(dist, y)),
            None,
        );
        self.push_value(
            system,
            target,
            HistogramSpec::pit(self.pit_bins),
            pit(dist, y, seed),
        );
        Ok(())
    }

    fn finish(self) -> Result<ScoreReport> {
        let histograms = self
            .values
            .into_iter()
            .map(|((system, target), (spec, values))| {
                Ok(NamedHistogram {
                    system,
                    target,
                    histogram: build_histogram(&values, spec)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreReport {
            records: self.records,
            histograms,
        })
    }
}

/// Multivariate inputs of one case for one margin group.
struct GroupCase {
    valid_time: NaiveDateTime,
    seed: u64,
    observation: Vec<f64>,
    /// Per system, member-major `L`-vectors.
    systems: Vec<(&'static str, Vec<Vec<f64>>)>,
}

fn member_major(values: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    let m = values.first().map_or(0, Vec::len);
    (0..m)
        .map(|k| idx.iter().map(|&l| values[l][k]).collect())
        .collect()
}

/// Standardize a group's cases with their own observation moments, then
/// score energy and multivariate rank for every system.
fn score_group(scorer: &mut Scorer, group: &str, cases: &[GroupCase]) -> Result<Standardization> {
    let obs: Vec<Vec<f64>> = cases.iter().map(|c| c.observation.clone()).collect();
    let st = Standardization::from_observations(&obs)?;
    for c in cases {
        let y = st.apply(&c.observation);
        for (s, (system, members)) in c.systems.iter().enumerate() {
            let z: Vec<Vec<f64>> = members.iter().map(|x| st.apply(x)).collect();
            let es = energy_score_ensemble(&z, &y)?;
            scorer.record(system, group, c.valid_time, None, None, Some(es));
            let rank = multivariate_rank(&z, &y, derive_path(c.seed, &[TAG_MV_RANK, s as u64]))?;
            let spec = HistogramSpec::ranks(HistogramKind::MultivariateRank, z.len());
            scorer
                .values
                .entry((system.to_string(), group.to_string()))
                .or_insert_with(|| (spec, Vec::new()))
                .1
                .push(rank as f64);
        }
    }
    Ok(st)
}

fn group_seed(seed: u64, g: usize) -> u64 {
    derive_seed(seed, 1000 + g as u64)
}

/// Run the full pipeline over every complete valid time on or after the
/// test start. Days are processed in parallel; output order and values do
/// not depend on the thread count.
pub fn run_pipeline(config: &PipelineConfig, store: &Store) -> Result<PipelineRun> {
    config.validate()?;
    let margins = store.margins();
    if margins.is_empty() {
        return Err(Error::InvalidInput("no forecast margins".into()));
    }
    let models = margins
        .iter()
        .map(|m| Ok((m.clone(), config.model_for(&m.variable)?)))
        .collect::<Result<Vec<_>>>()?;
    let groups = config.resolve_groups(&margins)?;
    let times = store.complete_times();
    let first = *times.first().ok_or_else(|| {
        Error::InvalidInput("no valid time has forecasts for every margin".into())
    })?;
    let test_start = config
        .test_start
        .unwrap_or(first + Duration::days(config.window_days as i64));
    let test_times: Vec<NaiveDateTime> = times.into_iter().filter(|&t| t >= test_start).collect();
    if test_times.is_empty() {
        return Err(Error::InsufficientData {
            available: 0,
            required: 1,
        });
    }

    let days: Vec<_> = test_times
        .par_iter()
        .map(|&t| process_day(config, store, &models, t))
        .collect();
    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for (case, f) in days {
        failures.extend(f);
        cases.extend(case);
    }

    let mut scorer = Scorer::new(config.pit_bins);
    let mut group_cases: Vec<Vec<GroupCase>> = groups.iter().map(|_| Vec::new()).collect();
    for case in &cases {
        let t = case.valid_time;
        let seed = case_seed(config.seed, t);
        for (j, margin) in case.margins.iter().enumerate() {
            let Some(y) = case.observations[j] else {
                continue;
            };
            let target = margin.to_string();
            let l = margins.iter().position(|m| m == margin).unwrap_or(j) as u64;
            let rank_seed = |s: u64| derive_path(seed, &[TAG_RANK, l, s]);
            scorer.ensemble(SYSTEM_RAW, &target, t, &case.raw[j], y, rank_seed(0))?;
            if let Err(e) = scorer.distribution(
                SYSTEM_POSTPROCESSED,
                &target,
                t,
                &case.distributions[j],
                y,
                derive_path(seed, &[TAG_PIT, l]),
            ) {
                failures.push(FailureRecord::new(t, margin, "score", &e));
            }
            scorer.ensemble(
                SYSTEM_INDEPENDENT,
                &target,
                t,
                &case.independent[j],
                y,
                rank_seed(1),
            )?;
            scorer.ensemble(SYSTEM_ECC, &target, t, &case.ecc.values[j], y, rank_seed(2))?;
        }
        for (g, (_, idx)) in groups.iter().enumerate() {
            let local: Option<Vec<usize>> = idx
                .iter()
                .map(|&l| case.margins.iter().position(|m| m == &margins[l]))
                .collect();
            let Some(local) = local else { continue };
            let obs: Option<Vec<f64>> = local.iter().map(|&j| case.observations[j]).collect();
            let Some(observation) = obs else { continue };
            group_cases[g].push(GroupCase {
                valid_time: t,
                seed: group_seed(seed, g),
                observation,
                systems: vec![
                    (SYSTEM_RAW, member_major(&case.raw, &local)),
                    (SYSTEM_INDEPENDENT, member_major(&case.independent, &local)),
                    (SYSTEM_ECC, member_major(&case.ecc.values, &local)),
                ],
            });
        }
    }

    let mut standardizations = BTreeMap::new();
    for ((name, _), gc) in groups.iter().zip(&group_cases) {
        if gc.is_empty() {
            continue;
        }
        match score_group(&mut scorer, name, gc) {
            Ok(st) => {
                standardizations.insert(name.clone(), st);
            }
            Err(e) => failures.push(FailureRecord::new(
                test_start,
                format!("group:{name}"),
                "standardize",
                &e,
            )),
        }
    }

    Ok(PipelineRun {
        config: config.clone(),
        groups: groups
            .into_iter()
            .map(|(n, idx)| (n, idx.into_iter().map(|l| margins[l].clone()).collect()))
            .collect(),
        margins,
        cases,
        report: scorer.finish()?,
        failures,
        missing_observations: store.missing_observations.clone(),
        standardizations,
    })
}

/// Score externally supplied ensembles (forecast schema) against the
/// observations joined into `store`, as the single system
/// [`SYSTEM_ENSEMBLE`].
pub fn score_ensembles(
    store: &Store,
    config: &PipelineConfig,
) -> Result<(ScoreReport, BTreeMap<String, Standardization>)> {
    let margins = store.margins();
    let groups = config.resolve_groups(&margins)?;
    let mut scorer = Scorer::new(config.pit_bins);
    let mut group_cases: Vec<Vec<GroupCase>> = groups.iter().map(|_| Vec::new()).collect();
    for t in store.complete_times() {
        let seed = case_seed(config.seed, t);
        let Some(raw) = store.ensemble_at(t) else {
            continue;
        };
        let obs: Vec<Option<f64>> = margins
            .iter()
            .map(|m| store.case(m, t).and_then(|c| c.observation))
            .collect();
        for (l, margin) in margins.iter().enumerate() {
            if let Some(y) = obs[l] {
                let s = derive_path(seed, &[TAG_RANK, l as u64, 0]);
                scorer.ensemble(SYSTEM_ENSEMBLE, &margin.to_string(), t, raw.margin(l), y, s)?;
            }
        }
        for (g, (_, idx)) in groups.iter().enumerate() {
            let o: Option<Vec<f64>> = idx.iter().map(|&l| obs[l]).collect();
            if let Some(observation) = o {
                group_cases[g].push(GroupCase {
                    valid_time: t,
                    seed: group_seed(seed, g),
                    observation,
                    systems: vec![(SYSTEM_ENSEMBLE, member_major(raw.values(), idx))],
                });
            }
        }
    }
    if scorer.records.is_empty() {
        return Err(Error::InvalidInput(
            "no forecast case has a verifying observation".into(),
        ));
    }
    let mut standardizations = BTreeMap::new();
    for ((name, _), gc) in groups.iter().zip(&group_cases) {
        if !gc.is_empty() {
            standardizations.insert(name.clone(), score_group(&mut scorer, name, gc)?);
        }
    }
    Ok((scorer.finish()?, standardizations))
}

impl PipelineRun {
    /// Mean energy score of a system over a group's cases.
    pub fn mean_energy_score(&self, system: &str, group: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .report
            .records
            .iter()
            .filter(|r| r.system == system && r.target == group)
            .filter_map(|r| r.energy_score)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn raw_ensembles(&self) -> Vec<RawEnsemble> {
        self.cases
            .iter()
            .filter_map(|c| RawEnsemble::new(c.valid_time, c.margins.clone(), c.raw.clone()).ok())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_scenario, ScenarioConfig};
    use crate::workbench::io::{
        read_forecasts, read_observations, write_observations, write_raw_ensembles,
    };

    fn store_from(config: &ScenarioConfig) -> Store {
        let sc = generate_scenario(config).unwrap();
        let mut f = Vec::new();
        write_raw_ensembles(&mut f, &sc.ensembles).unwrap();
        let mut o = Vec::new();
        let margins = sc.ensembles[0].margins.clone();
        write_observations(&mut o, &margins, &sc.valid_times(), &sc.observations).unwrap();
        Store::join(
            read_forecasts(&f[..]).unwrap(),
            &read_observations(&o[..]).unwrap(),
        )
        .unwrap()
    }

    fn small(l: usize, seed: u64) -> Store {
        store_from(&ScenarioConfig::continuous(l, 10, 70, 0.8, 1.0, 0.7, seed))
    }

    #[test]
    fn scores_all_three_systems_per_case() {
        let store = small(2, 1);
        let run = run_pipeline(&PipelineConfig::default(), &store).unwrap();
        assert_eq!(run.cases.len(), 40);
        assert!(run.failures.is_empty());
        for system in [SYSTEM_RAW, SYSTEM_INDEPENDENT, SYSTEM_ECC] {
            let n = run
                .report
                .records
                .iter()
                .filter(|r| r.system == system && r.target == "all")
                .count();
            assert_eq!(n, 40, "{system}");
        }
        let pp = run
            .report
            .records
            .iter()
            .filter(|r| r.system == SYSTEM_POSTPROCESSED)
            .count();
        assert_eq!(pp, 80);
    }

    #[test]
    fn ecc_and_independent_share_margins() {
        let run = run_pipeline(&PipelineConfig::default(), &small(3, 2)).unwrap();
        for c in &run.cases {
            for (a, b) in c.ecc.values.iter().zip(&c.independent) {
                let (mut a, mut b) = (a.clone(), b.clone());
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn single_margin_ecc_scores_like_independent() {
        let run = run_pipeline(&PipelineConfig::default(), &small(1, 3)).unwrap();
        let ecc = run.mean_energy_score(SYSTEM_ECC, "all").unwrap();
        let ind = run.mean_energy_score(SYSTEM_INDEPENDENT, "all").unwrap();
        assert!((ecc - ind).abs() < 1e-12);
    }

    #[test]
    fn repeated_runs_agree() {
        let store = small(2, 4);
        let config = PipelineConfig {
            scheme: EccScheme::R,
            seed: 9,
            ..PipelineConfig::default()
        };
        let a = run_pipeline(&config, &store).unwrap();
        let b = run_pipeline(&config, &store).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.cases, b.cases);
    }

    #[test]
    fn margin_failures_are_recorded_and_skipped() {
        let store = store_from(&crate::workbench::bundled_scenario(5));
        let config = PipelineConfig {
            scheme: EccScheme::T,
            ..PipelineConfig::default()
        };
        let run = run_pipeline(&config, &store).unwrap();
        assert!(!run.cases.is_empty());
        assert!(run
            .cases
            .iter()
            .all(|c| c.margins.iter().all(|m| m.variable == "t2m")));
        assert!(run
            .failures
            .iter()
            .any(|f| f.stage == "quantize" && f.kind == "unsupported-scheme"));
    }

    #[test]
    fn schaake_uses_recent_observations() {
        let store = small(2, 6);
        let t = store.complete_times()[40];
        let rec = schaake_record(&store, &store.margins(), t, 10).unwrap();
        assert_eq!(rec.dates.len(), 10);
        assert!(rec.dates.iter().all(|&d| d < t));
        assert_eq!(*rec.dates.last().unwrap(), t - Duration::days(1));
        let config = PipelineConfig {
            scheme: EccScheme::Schaake,
            ..PipelineConfig::default()
        };
        assert!(run_pipeline(&config, &store).unwrap().failures.is_empty());
    }

    #[test]
    fn strict_coupling_rejects_ecc_t_on_precipitation() {
        let store = store_from(&crate::workbench::bundled_scenario(5));
        let t = store.complete_times()[60];
        let (params, failures) = fit_all(&store, &PipelineConfig::default(), t).unwrap();
        assert!(failures.is_empty());
        let err = couple_forecasts(&params, &store, EccScheme::T, 0, Some(t)).unwrap_err();
        assert_eq!(err.kind(), "unsupported-scheme");
        let ok = couple_forecasts(&params, &store, EccScheme::Q, 0, Some(t)).unwrap();
        assert_eq!(ok.len(), 1);
        let preds = predict_all(&params, &store, Some(t)).unwrap();
        assert_eq!(preds.len(), 3);
    }

    #[test]
    fn verify_scores_supplied_ensembles() {
        let store = small(2, 7);
        let (report, st) = score_ensembles(&store, &PipelineConfig::default()).unwrap();
        assert_eq!(st.len(), 1);
        assert!(report.records.iter().all(|r| r.system == SYSTEM_ENSEMBLE));
        assert!(report.histograms.iter().any(|h| h.target == POOLED));
    }
}
