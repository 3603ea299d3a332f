//! `demandcast` command-line driver: simulate, fit, predict, evaluate and
//! export density grids.

mod config;
mod model;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use demandcast::eval::{compare, delta_hat_from_training, ReportMeta, RmseSetup};
use demandcast::events::{read_events_csv, write_events_csv};
use demandcast::simulate::{make_scenario, sample_log, GroundTruthSpec, SCENARIOS};
use demandcast::{rasterize, CellGrid, Clock, DensityModel, EventLog, SpatialDomain};
use serde::{Deserialize, Serialize};

use config::RunConfig;
use model::{check_method, ModelFile};

/// A usage or configuration problem; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

const DEFAULT_TEST_WEEKS: usize = 4;
const DEFAULT_MODELS: [&str; 4] = ["gmm", "stkde", "naivekde", "medic"];
const DEFAULT_GRID_N: usize = 200;

#[derive(Parser, Debug)]
#[command(name = "demandcast", version, about = "Forecast spatial demand densities from sparse event logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic event log and its ground-truth sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        weeks: Option<usize>,
    },
    /// Fit one method on an event CSV and write a model artifact.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        method: Option<String>,
        #[command(flatten)]
        hyper: ModelFlags,
    },
    /// Expected counts per 1-km cell from a model artifact.
    Predict {
        #[command(flatten)]
        common: Common,
        /// First period to predict; defaults to the end of training.
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        periods: Option<usize>,
    },
    /// Hold out the last weeks of a log and rank methods on them.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        /// Comma-separated methods to compare.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[arg(long)]
        test_weeks: Option<usize>,
        #[command(flatten)]
        hyper: ModelFlags,
    },
    /// Rasterize a model's density for one period to CSV plus a JSON sidecar.
    ExportGrid {
        #[command(flatten)]
        common: Common,
        /// Period to export; defaults to the end of training.
        #[arg(long)]
        t: Option<usize>,
        /// Raster resolution per axis.
        #[arg(long = "grid-n")]
        grid_n: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat JSON config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataFlags {
    /// Ground-truth sidecar giving the domain and time grid (default: `<input>.truth.json`).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Rectangular domain `x_min,x_max,y_min,y_max` in km when there is no sidecar.
    #[arg(long, value_delimiter = ',')]
    bbox: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct ModelFlags {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    history_weeks: Option<usize>,
    #[arg(long)]
    naive_weeks: Option<usize>,
    #[arg(long)]
    cloud_size: Option<usize>,
    #[arg(long)]
    weeks_back: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    h_grid: Option<Vec<f64>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    medic_weeks: Option<usize>,
    #[arg(long)]
    medic_years: Option<usize>,
}

impl Common {
    fn into_config(self) -> std::result::Result<RunConfig, UsageError> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(RunConfig { input: self.input, output: self.output, seed: self.seed, ..Default::default() }))
    }
}

impl DataFlags {
    fn apply(self, cfg: &mut RunConfig) -> std::result::Result<(), UsageError> {
        if self.truth.is_some() {
            cfg.truth = self.truth;
        }
        if let Some(b) = self.bbox {
            let b: [f64; 4] = b.try_into().map_err(|_| UsageError("--bbox takes four numbers".into()))?;
            cfg.bbox = Some(b);
        }
        Ok(())
    }
}

impl ModelFlags {
    fn apply(self, cfg: RunConfig) -> RunConfig {
        cfg.overlay(RunConfig {
            m: self.m,
            iterations: self.iterations,
            burn_in: self.burn_in,
            bandwidth: self.bandwidth,
            history_weeks: self.history_weeks,
            naive_weeks: self.naive_weeks,
            cloud_size: self.cloud_size,
            weeks_back: self.weeks_back,
            lambda: self.lambda,
            lambda_grid: self.lambda_grid,
            h_grid: self.h_grid,
            folds: self.folds,
            medic_weeks: self.medic_weeks,
            medic_years: self.medic_years,
            ..Default::default()
        })
    }
}

/// Ground truth as written next to a simulated CSV.
#[derive(Debug, Serialize, Deserialize)]
struct TruthFile {
    seed: u64,
    weeks: usize,
    truth: GroundTruthSpec,
}

/// Summary written next to a prediction CSV.
#[derive(Debug, Serialize, Deserialize)]
struct PredictionSidecar {
    seed: u64,
    method: String,
    start: usize,
    periods: usize,
    cells_x: usize,
    cells_y: usize,
    expected_totals: Vec<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<demandcast::Error>() {
        Some(demandcast::Error::InvalidParameter(_) | demandcast::Error::UnknownScenario(_)) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, scenario, weeks } => {
            let mut cfg = common.into_config()?;
            cfg = cfg.overlay(RunConfig { scenario, weeks, ..Default::default() });
            simulate(&cfg)
        }
        Command::Fit { common, data, method, hyper } => {
            let mut cfg = common.into_config()?;
            data.apply(&mut cfg)?;
            cfg = hyper.apply(cfg.overlay(RunConfig { method, ..Default::default() }));
            fit(&cfg)
        }
        Command::Predict { common, start, periods } => {
            let cfg = common.into_config()?.overlay(RunConfig { start, periods, ..Default::default() });
            predict(&cfg)
        }
        Command::Evaluate { common, data, models, test_weeks, hyper } => {
            let mut cfg = common.into_config()?;
            data.apply(&mut cfg)?;
            cfg = hyper.apply(cfg.overlay(RunConfig { models, test_weeks, ..Default::default() }));
            evaluate(&cfg)
        }
        Command::ExportGrid { common, t, grid_n } => {
            let cfg = common.into_config()?.overlay(RunConfig { t, grid_n, ..Default::default() });
            export_grid(&cfg)
        }
    }
}

/// `dir/name.csv` becomes `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed()?;
    let output = cfg.require_output()?;
    let scenario = cfg.scenario.as_deref().ok_or_else(|| UsageError("--scenario is required".into()))?;
    if !SCENARIOS.contains(&scenario) {
        return Err(UsageError(format!("unknown scenario `{scenario}` (expected one of {})", SCENARIOS.join(", "))).into());
    }
    let weeks = cfg.weeks.ok_or_else(|| UsageError("--weeks is required".into()))?;
    if weeks == 0 {
        return Err(UsageError("--weeks must be at least 1".into()).into());
    }
    let truth = make_scenario(scenario, weeks, seed)?;
    let log = sample_log(&truth, seed)?;
    let mut out = create(output)?;
    write_events_csv(&log, &Clock::default(), &mut out)?;
    out.flush()?;
    let truth_path = sibling(output, "truth.json");
    write_json(&truth_path, &TruthFile { seed, weeks, truth: truth.to_spec() })?;
    println!("seed={seed} scenario={scenario} weeks={weeks} events={} output={}", log.len(), output.display());
    Ok(())
}

/// Reads the input CSV using the domain and grid of its truth sidecar, or a
/// bounding box when no sidecar is available.
fn load_events(cfg: &RunConfig) -> Result<EventLog> {
    let input = cfg.require_input()?;
    let default_truth = sibling(input, "truth.json");
    let truth_path = cfg.truth.clone().or_else(|| default_truth.is_file().then_some(default_truth));
    let (domain, ppd, periods) = match (truth_path, cfg.bbox) {
        (Some(path), _) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| UsageError(format!("cannot read truth sidecar {}: {e}", path.display())))?;
            let truth: TruthFile =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            (truth.truth.domain, truth.truth.grid.periods_per_day, Some(truth.truth.grid.periods))
        }
        (None, Some([x0, x1, y0, y1])) => (SpatialDomain::rect(x0, x1, y0, y1)?, cfg.periods_per_day.unwrap_or(24), None),
        (None, None) => {
            return Err(UsageError(format!(
                "no domain for {}: pass --truth or --bbox",
                input.display()
            ))
            .into())
        }
    };
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let log = read_events_csv(BufReader::new(file), &Clock::default(), ppd, periods, domain)
        .with_context(|| format!("reading {}", input.display()))?;
    Ok(log)
}

fn fit(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed()?;
    let output = cfg.require_output()?;
    let method = cfg.method.as_deref().ok_or_else(|| UsageError("--method is required".into()))?;
    check_method(method)?;
    let log = load_events(cfg)?;
    let file = model::fit(method, &log, cfg, seed)?;
    write_json(output, &file)?;
    println!("seed={seed} method={method} train_end={} output={}", file.train_end, output.display());
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<ModelFile> {
    let input = cfg.require_input()?;
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let file: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing model {}", input.display()))?;
    if let Some(seed) = cfg.seed.filter(|&s| s != file.seed) {
        log::warn!("--seed {seed} ignored; the artifact was fitted with seed {}", file.seed);
    }
    Ok(file)
}

fn predict(cfg: &RunConfig) -> Result<()> {
    let output = cfg.require_output()?;
    let file = load_model(cfg)?;
    let start = cfg.start.unwrap_or(file.train_end);
    let periods = cfg.periods.unwrap_or(1);
    if periods == 0 {
        return Err(UsageError("--periods must be at least 1".into()).into());
    }
    let f = file.forecast(start..start + periods)?;
    let cells = CellGrid::unit_km(file.domain.bbox);
    let inside = cells.inside_fractions(&file.domain, 8);
    let mut w = csv::Writer::from_writer(create(output)?);
    w.write_record(["t", "cell_x", "cell_y", "expected_count"])?;
    let mut totals = Vec::with_capacity(periods);
    for t in start..start + periods {
        let masses = f.cell_masses(t, &cells);
        let delta = file.delta_hat(t);
        let mut total = 0.0;
        for (c, &mass) in masses.iter().enumerate() {
            if inside[c] <= 0.0 {
                continue;
            }
            let count = delta * mass;
            total += count;
            let (ix, iy) = (c % cells.nx, c / cells.nx);
            w.write_record([t.to_string(), ix.to_string(), iy.to_string(), count.to_string()])?;
        }
        totals.push(total);
    }
    w.flush()?;
    let sidecar = PredictionSidecar {
        seed: file.seed,
        method: file.method().to_string(),
        start,
        periods,
        cells_x: cells.nx,
        cells_y: cells.ny,
        expected_totals: totals,
    };
    write_json(&sibling(output, "json"), &sidecar)?;
    println!("seed={} method={} start={start} periods={periods} output={}", file.seed, file.method(), output.display());
    Ok(())
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed()?;
    let output = cfg.require_output()?;
    let names: Vec<String> = cfg.models.clone().unwrap_or_else(|| DEFAULT_MODELS.map(String::from).to_vec());
    if names.len() < 2 {
        return Err(UsageError("--models needs at least two methods".into()).into());
    }
    for name in &names {
        check_method(name)?;
    }
    let test_weeks = cfg.test_weeks.unwrap_or(DEFAULT_TEST_WEEKS);
    if test_weeks == 0 {
        return Err(UsageError("--test-weeks must be at least 1".into()).into());
    }
    let log = load_events(cfg)?;
    let (train, test) = log.split_last_weeks(test_weeks)?;
    let mut forecasts: Vec<(String, Box<dyn DensityModel>)> = Vec::with_capacity(names.len());
    for name in &names {
        log::info!("fitting {name}");
        let file = model::fit(name, &train, cfg, seed).with_context(|| format!("fitting {name}"))?;
        forecasts.push((name.clone(), file.forecast(test.span())?));
    }
    let refs: Vec<(&str, &dyn DensityModel)> = forecasts.iter().map(|(n, f)| (n.as_str(), f.as_ref())).collect();
    let delta_hat = delta_hat_from_training(&train, test.span());
    let cells = CellGrid::unit_km(log.domain().bbox);
    let meta = ReportMeta { seed: Some(seed), scenario: None, train: Some(train.span()), test: Some(test.span()) };
    let report = compare(&refs, &test, Some(RmseSetup { delta_hat: &delta_hat, cells: &cells }), meta)?;
    let json_path = sibling(output, "json");
    let text_path = sibling(output, "txt");
    write_json(&json_path, &report)?;
    let table = format!("seed={seed} train={:?} test={:?}\n{}", train.span(), test.span(), report.to_table());
    fs::write(&text_path, &table).with_context(|| format!("writing {}", text_path.display()))?;
    print!("{table}");
    Ok(())
}

fn export_grid(cfg: &RunConfig) -> Result<()> {
    let output = cfg.require_output()?;
    let file = load_model(cfg)?;
    let t = cfg.t.unwrap_or(file.train_end);
    let n = cfg.grid_n.unwrap_or(DEFAULT_GRID_N);
    let f = file.forecast(t..t + 1)?;
    let grid = rasterize(f.as_ref(), t, n, n)?;
    let mut out = create(output)?;
    grid.write_csv(&mut out)?;
    out.flush()?;
    let sidecar = grid.sidecar(serde_json::json!({ "method": file.method(), "seed": file.seed }));
    write_json(&sibling(output, "json"), &sidecar)?;
    println!("seed={} method={} t={t} grid={n}x{n} output={}", file.seed, file.method(), output.display());
    Ok(())
}
