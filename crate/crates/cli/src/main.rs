use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use contagion_core::contagion::{
    exposure_response_counts, EnhancementTable, MissingFactor, ModelParams, VisibilityModel,
};
use contagion_core::events::{
    build_graph, build_series, load_event_log, load_follow_edges, split_by_item, write_event_log,
    write_follow_edges, ExposureSeries, SeriesOptions, DEFAULT_MAX_EXPOSURES,
};
use contagion_core::forecast::{
    calibrate, forecast_series, write_forecasts, ForecastOptions, ForecastPoint, DEFAULT_WINDOW,
};
use contagion_core::inference::{enhancement_by_cohort, fit_model, FitOptions, MleOptions};
use contagion_core::simulate::{recovery_experiment, reference_truth, simulate, GroundTruth, RecoveryOptions};
use contagion_core::visibility::NfRange;
use contagion_core::Site;

#[derive(Parser, Debug)]
#[command(name = "contagion", version, about = "Visibility-normalized social contagion toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Interface model.
    #[arg(long, global = true, default_value = "digg")]
    site: Site,
    /// JSON-lines event log.
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    /// JSON-lines follow edges.
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pairs with this many exposures or more are dropped.
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_EXPOSURES)]
    max_exposures: usize,
    /// Forecast window in seconds.
    #[arg(long, global = true, default_value_t = DEFAULT_WINDOW)]
    window: i64,
    /// Forecast with every enhancement factor set to 1.
    #[arg(long, global = true)]
    ablate_enhancement: bool,
    /// Output directory; must exist.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Share of items in the training split.
    #[arg(long, global = true, default_value_t = 0.5)]
    train_fraction: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a follower graph and cascades from a ground truth.
    Simulate {
        /// Ground-truth JSON; defaults to the built-in truth for --site.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit the full model on the training items.
    Fit,
    /// Enhancement tables per friend-count cohort.
    Enhance {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated inclusive ranges, e.g. `1-9,10-99,100-1000`.
        #[arg(long, default_value = "1-9,10-99,100-100000")]
        cohorts: String,
    },
    /// Windowed forecasts and calibration on the test items.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        /// Seconds between window starts; defaults to the window length.
        #[arg(long)]
        stride: Option<i64>,
        /// Only windows starting at most this long after the first exposure.
        #[arg(long)]
        max_delay: Option<i64>,
    },
    /// Calibration curve and WMAP from a forecasts CSV.
    Calibrate {
        #[arg(long)]
        forecasts: PathBuf,
    },
    /// Simulate, fit and report recovery errors against the truth.
    Validate {
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    command: &'a str,
    ok: bool,
    error: Option<Vec<String>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONTAGION_LOG", "warn")).init();
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    let result = run(&cli);
    let diagnostics = Diagnostics {
        command: name,
        ok: result.is_ok(),
        error: result.as_ref().err().map(|e| e.chain().map(|c| c.to_string()).collect()),
    };
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    if cli.common.out.is_dir() {
        let path = cli.common.out.join("diagnostics.json");
        let written = serde_json::to_string_pretty(&diagnostics)
            .map_err(anyhow::Error::from)
            .and_then(|text| fs::write(&path, text).map_err(anyhow::Error::from));
        if let Err(e) = written {
            eprintln!("error: writing {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    }
    if result.is_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate { .. } => "simulate",
        Command::Fit => "fit",
        Command::Enhance { .. } => "enhance",
        Command::Forecast { .. } => "forecast",
        Command::Calibrate { .. } => "calibrate",
        Command::Validate { .. } => "validate",
    }
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    if !c.out.is_dir() {
        bail!("output directory {} does not exist", c.out.display());
    }
    match &cli.command {
        Command::Simulate { truth } => cmd_simulate(c, truth.as_deref()),
        Command::Fit => cmd_fit(c),
        Command::Enhance { model, cohorts } => cmd_enhance(c, model, cohorts),
        Command::Forecast { model, stride, max_delay } => cmd_forecast(c, model, *stride, *max_delay),
        Command::Calibrate { forecasts } => cmd_calibrate(c, forecasts),
        Command::Validate { truth } => cmd_validate(c, truth.as_deref()),
    }
}

fn load_truth(c: &Common, path: Option<&Path>) -> Result<GroundTruth> {
    let mut truth = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => reference_truth(c.site)?,
    };
    if let Some(seed) = c.seed {
        truth.rng_seed = seed;
        truth.graph.seed = seed;
    }
    truth.validate()?;
    Ok(truth)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_simulate(c: &Common, truth_path: Option<&Path>) -> Result<()> {
    let truth = load_truth(c, truth_path)?;
    let (graph, events) = simulate(&truth)?;
    write_event_log(c.out.join("events.jsonl"), &events)?;
    write_follow_edges(c.out.join("graph.jsonl"), &graph)?;
    write_json(&c.out.join("truth.json"), &truth)?;
    info!("{} users, {} events", graph.len(), events.len());
    Ok(())
}

/// Series of the training and test items.
fn load_series(c: &Common) -> Result<(Vec<ExposureSeries>, Vec<ExposureSeries>)> {
    let events_path = c.events.as_ref().context("--events is required")?;
    let graph_path = c.graph.as_ref().context("--graph is required")?;
    let log = load_event_log(events_path, c.max_exposures)
        .with_context(|| format!("loading {}", events_path.display()))?;
    let edges = load_follow_edges(graph_path).with_context(|| format!("loading {}", graph_path.display()))?;
    let graph = build_graph(&log.events, &edges)?;
    let (series, report) = build_series(&log.events, &graph, &SeriesOptions::default());
    info!("{} series; {:?}; {:?}", series.len(), log.cap, report);
    Ok(split_by_item(series, c.train_fraction))
}

#[derive(Serialize)]
struct FitDiagnostics {
    series: usize,
    at_risk_seconds: u64,
    responses: u64,
    susceptibility_rms: f64,
    scale_wmap: f64,
    fitted_amplitude: f64,
    mle: serde_json::Value,
}

fn cmd_fit(c: &Common) -> Result<()> {
    let (train, _) = load_series(c)?;
    if train.is_empty() {
        bail!("the training split is empty");
    }
    let report = fit_model(&train, c.site, &FitOptions::default()).context("fitting the model")?;
    report.params.save(c.out.join("model.json"))?;
    report.scale_curve.write_csv(c.out.join("scale_curve.csv"))?;
    write_json(
        &c.out.join("fit_report.json"),
        &FitDiagnostics {
            series: report.series,
            at_risk_seconds: report.at_risk_seconds,
            responses: report.responses,
            susceptibility_rms: report.susceptibility_rms,
            scale_wmap: report.scale.wmap,
            fitted_amplitude: report.fitted_amplitude,
            mle: serde_json::to_value(&report.enhancement.diagnostics)?,
        },
    )?;
    Ok(())
}

fn load_model(c: &Common, path: &Path) -> Result<ModelParams> {
    let params = ModelParams::load(path).with_context(|| format!("loading {}", path.display()))?;
    if params.site != c.site {
        bail!("model {} is for {}, but --site is {}", path.display(), params.site, c.site);
    }
    Ok(params)
}

#[derive(Serialize)]
struct ResponseRow {
    n_e: usize,
    trials: u64,
    responses: u64,
    probability: f64,
}

fn cmd_enhance(c: &Common, model: &Path, cohorts: &str) -> Result<()> {
    let params = load_model(c, model)?;
    let ranges: Vec<NfRange> = cohorts
        .split(',')
        .map(|s| s.parse::<NfRange>())
        .collect::<std::result::Result<_, _>>()?;
    let (train, _) = load_series(c)?;
    let max_nf = train.iter().map(|s| s.n_f).max().unwrap_or(0);
    let vis = VisibilityModel::from_params(&params, max_nf)?;
    let fits = enhancement_by_cohort(&train, &ranges, &vis, &MleOptions::default())?;
    let tables: Vec<&EnhancementTable> = fits.values().map(|f| &f.table).collect();
    write_json(&c.out.join("enhancement.json"), &tables)?;

    let mut w = csv::Writer::from_path(c.out.join("exposure_response.csv"))?;
    for (n_e, counts) in exposure_response_counts(&train) {
        w.serialize(ResponseRow {
            n_e,
            trials: counts.trials,
            responses: counts.responses,
            probability: counts.probability(),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_forecast(c: &Common, model: &Path, stride: Option<i64>, max_delay: Option<i64>) -> Result<()> {
    let mut params = load_model(c, model)?;
    if c.ablate_enhancement {
        params = params.with_enhancement(EnhancementTable::ones(params.enhancement.max_exposures()));
    }
    let (_, test) = load_series(c)?;
    if test.is_empty() {
        bail!("the test split is empty");
    }
    let opts = ForecastOptions {
        window: c.window,
        stride: stride.unwrap_or(c.window),
        max_delay,
        missing: MissingFactor::HoldLast,
    };
    let points = forecast_series(&params, &test, &opts)?;
    write_forecasts(c.out.join("forecasts.csv"), &points)?;
    write_calibration(c, &points)
}

fn write_calibration(c: &Common, points: &[ForecastPoint]) -> Result<()> {
    let cal = calibrate(points)?;
    cal.write_csv(c.out.join("calibration.csv"))?;
    fs::write(c.out.join("wmap.txt"), format!("{}\n", cal.wmap))?;
    println!("WMAP {:.6} over {} forecasts", cal.wmap, points.len());
    Ok(())
}

#[derive(Deserialize)]
struct ForecastRow {
    user: String,
    item: String,
    window_start: i64,
    predicted: f64,
    outcome: u8,
}

fn cmd_calibrate(c: &Common, forecasts: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(forecasts).with_context(|| format!("reading {}", forecasts.display()))?;
    let points = r
        .deserialize::<ForecastRow>()
        .map(|row| {
            let row = row?;
            Ok(ForecastPoint {
                user: row.user,
                item: row.item,
                window_start: row.window_start,
                window_len: c.window,
                predicted: row.predicted,
                outcome: row.outcome != 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_calibration(c, &points)
}

fn cmd_validate(c: &Common, truth_path: Option<&Path>) -> Result<()> {
    let truth = load_truth(c, truth_path)?;
    let opts = RecoveryOptions {
        train_fraction: c.train_fraction,
        max_exposures: c.max_exposures,
        ..RecoveryOptions::default()
    };
    let report = recovery_experiment(&truth, &opts)?;
    write_json(&c.out.join("recovery.json"), &report.relative_errors)?;
    for (k, v) in &report.relative_errors {
        println!("{k:<12} {v:+.4}");
    }
    Ok(())
}
