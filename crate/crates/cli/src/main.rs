//! `ecc`: fit, couple and verify ensemble forecasts from the command line.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{Duration, NaiveDateTime};
use clap::{Args, Parser, Subcommand};
use ecc_core::postprocess::ParamsRecord;
use ecc_core::synthetic::generate_scenario;
use ecc_core::workbench::{
    bundled_scenario, couple_forecasts, fit_all, parse_time, predict_all, read_forecasts,
    read_observations, run_pipeline, score_ensembles, write_coupled, write_observations,
    write_pipeline_outputs, write_raw_ensembles, write_report, EccScheme, PipelineConfig, Store,
};
use ecc_core::Error;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "ecc",
    version,
    about = "Ensemble postprocessing and ensemble copula coupling"
)]
struct Cli {
    /// Master seed for every random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Length of the rolling training window in days [default: 30].
    #[arg(long, global = true)]
    window_days: Option<u32>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    forecasts: Option<PathBuf>,
    #[arg(long)]
    observations: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario as forecast and observation CSVs.
    Synth {
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
    },
    /// Fit every margin on the window preceding a valid time.
    Fit {
        #[command(flatten)]
        inputs: Inputs,
        /// Valid time to fit for; defaults to the day after the last forecast.
        #[arg(long)]
        valid_time: Option<String>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predictive distributions for forecast cases.
    Predict {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        valid_time: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantize and reorder forecast cases into ECC ensembles.
    Couple {
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<EccScheme>,
        #[arg(long)]
        valid_time: Option<String>,
        #[arg(long, default_value = "coupled")]
        out: PathBuf,
    },
    /// Score ensembles in the forecast schema against observations.
    Verify {
        #[arg(long)]
        ensembles: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long, default_value = "verification")]
        out: PathBuf,
    },
    /// Fit, couple and score end to end; uses the bundled synthetic
    /// scenario when no inputs are given.
    Pipeline {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<EccScheme>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_scheme(s: &str) -> Result<EccScheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn time_arg(s: &Option<String>) -> Result<Option<NaiveDateTime>, Error> {
    s.as_deref()
        .map(|s| {
            parse_time(s).ok_or_else(|| Error::InvalidInput(format!("cannot parse time '{s}'")))
        })
        .transpose()
}

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(days) = cli.window_days {
        config.window_days = days;
    }
    config.validate()?;
    Ok(config)
}

fn load_store(inputs: &Inputs, config: &PipelineConfig) -> Result<Store, Error> {
    let f = inputs
        .forecasts
        .clone()
        .or_else(|| config.forecasts.clone())
        .ok_or_else(|| Error::InvalidInput("--forecasts is required".into()))?;
    let o = inputs
        .observations
        .clone()
        .or_else(|| config.observations.clone())
        .ok_or_else(|| Error::InvalidInput("--observations is required".into()))?;
    Store::read(open(&f)?, open(&o)?)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn read_params(path: &Path) -> Result<Vec<ParamsRecord>, Error> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn warn(value: serde_json::Value) {
    eprintln!("{value}");
}

fn synthetic_store(config: &PipelineConfig) -> Result<Store, Error> {
    let scenario = config
        .scenario
        .clone()
        .unwrap_or_else(|| bundled_scenario(config.seed));
    let sc = generate_scenario(&scenario)?;
    let mut f = Vec::new();
    write_raw_ensembles(&mut f, &sc.ensembles)?;
    let mut o = Vec::new();
    write_observations(&mut o, &sc.margins, &sc.valid_times(), &sc.observations)?;
    Store::join(read_forecasts(&f[..])?, &read_observations(&o[..])?)
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Synth { out } => {
            let mut scenario = config
                .scenario
                .clone()
                .unwrap_or_else(|| bundled_scenario(config.seed));
            if let Some(seed) = cli.seed {
                scenario.seed = seed;
            }
            let sc = generate_scenario(&scenario)?;
            fs::create_dir_all(out)?;
            let mut w = BufWriter::new(File::create(out.join("forecasts.csv"))?);
            write_raw_ensembles(&mut w, &sc.ensembles)?;
            w.flush()?;
            let mut w = BufWriter::new(File::create(out.join("observations.csv"))?);
            write_observations(&mut w, &sc.margins, &sc.valid_times(), &sc.observations)?;
            w.flush()?;
        }
        Command::Fit {
            inputs,
            valid_time,
            out,
        } => {
            let store = load_store(inputs, &config)?;
            let t = match time_arg(valid_time)? {
                Some(t) => t,
                None => {
                    let last = store.complete_times().last().copied().ok_or_else(|| {
                        Error::InvalidInput("no valid time has forecasts for every margin".into())
                    })?;
                    last + Duration::days(1)
                }
            };
            let (params, failures) = fit_all(&store, &config, t)?;
            for f in &failures {
                warn(json!({"warning": "margin-skipped", "failure": f}));
            }
            if params.is_empty() {
                return Err(Error::InvalidInput("every margin failed to fit".into()));
            }
            let mut w = output(out)?;
            serde_json::to_writer_pretty(&mut w, &params)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Command::Predict {
            params,
            forecasts,
            valid_time,
            out,
        } => {
            let params = read_params(params)?;
            let store = Store::forecasts_only(read_forecasts(open(forecasts)?)?)?;
            let predictions = predict_all(&params, &store, time_arg(valid_time)?)?;
            let mut w = output(out)?;
            serde_json::to_writer_pretty(&mut w, &predictions)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Command::Couple {
            params,
            inputs,
            scheme,
            valid_time,
            out,
        } => {
            let params = read_params(params)?;
            let scheme = scheme.unwrap_or(config.scheme);
            let forecasts = inputs
                .forecasts
                .clone()
                .or_else(|| config.forecasts.clone())
                .ok_or_else(|| Error::InvalidInput("--forecasts is required".into()))?;
            let table = read_forecasts(open(&forecasts)?)?;
            let store = match inputs
                .observations
                .clone()
                .or_else(|| config.observations.clone())
            {
                Some(o) => Store::join(table, &read_observations(open(&o)?)?)?,
                None if scheme == EccScheme::Schaake => {
                    return Err(Error::InvalidInput(
                        "the Schaake shuffle needs --observations for its historical record".into(),
                    ))
                }
                None => Store::forecasts_only(table)?,
            };
            let cases =
                couple_forecasts(&params, &store, scheme, config.seed, time_arg(valid_time)?)?;
            write_coupled(out, &cases)?;
        }
        Command::Verify {
            ensembles,
            observations,
            out,
        } => {
            let store = Store::read(open(ensembles)?, open(observations)?)?;
            let (report, st) = score_ensembles(&store, &config)?;
            let mut extra = serde_json::Map::new();
            extra.insert(
                "missing_observations".into(),
                serde_json::to_value(&store.missing_observations)?,
            );
            write_report(out, &report, &st, extra)?;
        }
        Command::Pipeline {
            inputs,
            scheme,
            out,
        } => {
            let mut config = config.clone();
            if let Some(s) = scheme {
                config.scheme = *s;
            }
            let has_inputs = inputs.forecasts.is_some()
                || inputs.observations.is_some()
                || config.forecasts.is_some()
                || config.observations.is_some();
            let store = if has_inputs {
                load_store(inputs, &config)?
            } else {
                synthetic_store(&config)?
            };
            let run = run_pipeline(&config, &store)?;
            for f in &run.failures {
                warn(json!({"warning": "margin-skipped", "failure": f}));
            }
            let dir = out
                .clone()
                .or_else(|| config.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("ecc-output"));
            write_pipeline_outputs(&run, &dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", json!({"error": "usage", "message": message.trim()}));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
