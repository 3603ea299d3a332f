use std::ops::Range;

use anyhow::{bail, Context, Result};
use demandcast::baselines::{medic_predict, naive_kde, CountGrid, MedicConfig};
use demandcast::eval::period_of_week_means;
use demandcast::gmm::{self, forecast_state, GmmArtifact, GmmFitConfig};
use demandcast::kde::{history_window, silverman_bandwidth};
use demandcast::stkde::{StkdeArtifact, StkdeConfig, StkdeModel};
use demandcast::warp::{cross_validate, CvOutcome, WarpArtifact, WarpConfig, WarpModel};
use demandcast::{DensityModel, Event, EventLog, Point, SpatialDomain, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::UsageError;

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const METHODS: [&str; 5] = ["gmm", "stkde", "warp", "medic", "naivekde"];

/// Weeks of history behind the naive KDE unless configured.
const NAIVE_WEEKS: usize = 8;
const DEFAULT_LAMBDA_GRID: [f64; 3] = [0.01, 0.1, 1.0];
/// Bandwidth grid as multiples of the plug-in bandwidth.
const DEFAULT_H_FACTORS: [f64; 1] = [1.0];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MedicArtifact {
    pub config: MedicConfig,
    pub grid: TimeGrid,
    pub span: Range<usize>,
    pub domain: SpatialDomain,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NaiveArtifact {
    pub weeks_back: usize,
    pub bandwidth: Option<f64>,
    pub grid: TimeGrid,
    pub span: Range<usize>,
    pub domain: SpatialDomain,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WarpFile {
    pub model: WarpArtifact,
    /// Present when lambda and h were chosen by cross-validation.
    pub cv: Option<CvOutcome>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "method", content = "artifact", rename_all = "lowercase")]
pub enum Artifact {
    Gmm(GmmArtifact),
    Stkde(StkdeArtifact),
    Warp(WarpFile),
    Medic(MedicArtifact),
    Naivekde(NaiveArtifact),
}

/// A fitted model as written by `fit`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub seed: u64,
    pub grid: TimeGrid,
    pub domain: SpatialDomain,
    /// First period after the training data.
    pub train_end: usize,
    /// Mean training count per period of the week.
    pub delta_by_period_of_week: Vec<f64>,
    pub model: Artifact,
}

impl ModelFile {
    pub fn method(&self) -> &'static str {
        match self.model {
            Artifact::Gmm(_) => "gmm",
            Artifact::Stkde(_) => "stkde",
            Artifact::Warp(_) => "warp",
            Artifact::Medic(_) => "medic",
            Artifact::Naivekde(_) => "naivekde",
        }
    }

    /// Expected event count in period `t`.
    pub fn delta_hat(&self, t: usize) -> f64 {
        self.delta_by_period_of_week[self.grid.period_of_week(t)]
    }

    pub fn forecast(&self, range: Range<usize>) -> Result<Box<dyn DensityModel>> {
        if range.start < self.train_end {
            bail!(UsageError(format!(
                "forecast range {range:?} starts before the end of training ({})",
                self.train_end
            )));
        }
        Ok(match &self.model {
            Artifact::Gmm(a) => Box::new(forecast_state(&a.state()?, &a.domain, range)?),
            Artifact::Stkde(a) => Box::new(StkdeModel::from_artifact(a.clone())?.forecast(range)?),
            Artifact::Warp(w) => Box::new(WarpModel::from_artifact(w.model.clone())?.forecast(range)?),
            Artifact::Medic(a) => {
                let log = EventLog::with_span(a.events.clone(), a.grid, a.domain.clone(), a.span.clone())?;
                Box::new(medic_predict(&CountGrid::from_log(&log), range, &a.config)?)
            }
            Artifact::Naivekde(a) => {
                let log = EventLog::with_span(a.events.clone(), a.grid, a.domain.clone(), a.span.clone())?;
                Box::new(naive_kde(&log, range, a.weeks_back, a.bandwidth)?)
            }
        })
    }
}

pub fn check_method(name: &str) -> Result<(), UsageError> {
    if METHODS.contains(&name) {
        Ok(())
    } else {
        Err(UsageError(format!("unknown method `{name}` (expected one of {})", METHODS.join(", "))))
    }
}

pub fn gmm_config(cfg: &RunConfig, seed: u64) -> GmmFitConfig {
    let d = GmmFitConfig::default();
    GmmFitConfig {
        m: cfg.m.unwrap_or(d.m),
        iterations: cfg.iterations.unwrap_or(d.iterations),
        burn_in: cfg.burn_in.unwrap_or(d.burn_in),
        thin: cfg.thin.unwrap_or(d.thin),
        seed,
        ..d
    }
}

pub fn stkde_config(cfg: &RunConfig) -> StkdeConfig {
    let d = StkdeConfig::default();
    StkdeConfig {
        cells_x: cfg.cells_x.unwrap_or(d.cells_x),
        cells_y: cfg.cells_y.unwrap_or(d.cells_y),
        max_lag: cfg.max_lag.unwrap_or(d.max_lag),
        history_weeks: cfg.history_weeks.unwrap_or(d.history_weeks),
        bandwidth: cfg.bandwidth.or(d.bandwidth),
        weight_floor: cfg.weight_floor.unwrap_or(d.weight_floor),
    }
}

pub fn warp_config(cfg: &RunConfig, seed: u64) -> WarpConfig {
    let d = WarpConfig::default();
    WarpConfig {
        cloud_size: cfg.cloud_size.unwrap_or(d.cloud_size),
        weeks_back: cfg.weeks_back.unwrap_or(d.weeks_back),
        k_neighbors: cfg.k_neighbors.unwrap_or(d.k_neighbors),
        lambda: cfg.lambda.unwrap_or(d.lambda),
        bandwidth: cfg.bandwidth,
        seed,
    }
}

pub fn medic_config(cfg: &RunConfig) -> MedicConfig {
    let d = MedicConfig::default();
    MedicConfig {
        weeks: cfg.medic_weeks.unwrap_or(d.weeks),
        years: cfg.medic_years.unwrap_or(d.years),
        epsilon: cfg.medic_epsilon.unwrap_or(d.epsilon),
    }
}

/// Fits `method` on all of `train`.
pub fn fit(method: &str, train: &EventLog, cfg: &RunConfig, seed: u64) -> Result<ModelFile> {
    check_method(method)?;
    let model = match method {
        "gmm" => Artifact::Gmm(gmm::fit(train, &gmm_config(cfg, seed))?.to_artifact()),
        "stkde" => Artifact::Stkde(StkdeModel::fit(train, &stkde_config(cfg))?.to_artifact()),
        "warp" => Artifact::Warp(fit_warp(train, cfg, seed)?),
        "medic" => {
            let config = medic_config(cfg);
            let weeks = config.years.saturating_sub(1) * 52 + config.weeks;
            let events = train.window(history_window(train, weeks)).to_vec();
            Artifact::Medic(MedicArtifact {
                config,
                grid: *train.grid(),
                span: train.span(),
                domain: train.domain().clone(),
                events,
            })
        }
        _ => {
            let weeks_back = cfg.naive_weeks.unwrap_or(NAIVE_WEEKS);
            let events = train.window(history_window(train, weeks_back)).to_vec();
            Artifact::Naivekde(NaiveArtifact {
                weeks_back,
                bandwidth: cfg.bandwidth,
                grid: *train.grid(),
                span: train.span(),
                domain: train.domain().clone(),
                events,
            })
        }
    };
    Ok(ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        seed,
        grid: *train.grid(),
        domain: train.domain().clone(),
        train_end: train.span().end,
        delta_by_period_of_week: period_of_week_means(train),
        model,
    })
}

/// A fixed `lambda` skips cross-validation; otherwise (lambda, h) is chosen
/// over the configured or default grids.
fn fit_warp(train: &EventLog, cfg: &RunConfig, seed: u64) -> Result<WarpFile> {
    let base = warp_config(cfg, seed);
    if cfg.lambda.is_some() {
        let model = WarpModel::fit(train, &base)?;
        return Ok(WarpFile { model: model.to_artifact(), cv: None });
    }
    let lambdas = cfg.lambda_grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec());
    let hs = match (&cfg.h_grid, cfg.bandwidth) {
        (Some(g), _) => g.clone(),
        (None, Some(h)) => vec![h],
        (None, None) => {
            let window: Vec<Point> =
                train.window(history_window(train, base.weeks_back)).iter().map(|e| e.s).collect();
            let h = silverman_bandwidth(&window).context("plug-in bandwidth for the warp grid")?;
            DEFAULT_H_FACTORS.iter().map(|f| f * h).collect()
        }
    };
    let cv = cross_validate(train, &lambdas, &hs, cfg.folds.unwrap_or(2), &base)?;
    log::info!("warp cross-validation chose lambda {} h {} (objective {})", cv.lambda, cv.h, cv.objective);
    let model = WarpModel::fit(train, &WarpConfig { lambda: cv.lambda, bandwidth: Some(cv.h), ..base })?;
    Ok(WarpFile { model: model.to_artifact(), cv: Some(cv) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use demandcast::simulate::{make_scenario, sample_log};

    fn reload(file: &ModelFile) -> ModelFile {
        serde_json::from_str(&serde_json::to_string(file).unwrap()).unwrap()
    }

    #[test]
    fn reloaded_artifacts_predict_bit_exactly() {
        let log = sample_log(&make_scenario("weekly-5comp", 5, 4).unwrap(), 4).unwrap();
        let (train, test) = log.split_last_weeks(1).unwrap();
        let cfg = RunConfig {
            iterations: Some(40),
            burn_in: Some(20),
            cloud_size: Some(150),
            lambda: Some(1.0),
            ..Default::default()
        };
        let probes = [Point::new(20.0, 20.0), Point::new(7.5, 9.0), Point::new(31.0, 30.0)];
        for method in METHODS {
            let file = fit(method, &train, &cfg, 11).unwrap();
            let back = reload(&file);
            assert_eq!(back.method(), method);
            let (a, b) = (file.forecast(test.span()).unwrap(), back.forecast(test.span()).unwrap());
            for t in [test.span().start, test.span().start + 50] {
                for &s in &probes {
                    assert_eq!(a.density(s, t).to_bits(), b.density(s, t).to_bits(), "{method} at {s:?}, {t}");
                }
            }
        }
    }

    #[test]
    fn forecasts_before_the_end_of_training_are_refused() {
        let log = sample_log(&make_scenario("static-3comp", 3, 1).unwrap(), 1).unwrap();
        let file = fit("naivekde", &log, &RunConfig::default(), 1).unwrap();
        let Err(err) = file.forecast(10..20) else { panic!("forecast inside training accepted") };
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn unknown_methods_are_usage_errors() {
        assert!(check_method("kriging").is_err());
        assert!(METHODS.iter().all(|m| check_method(m).is_ok()));
    }
}
