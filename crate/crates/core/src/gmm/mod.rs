//! Time-varying Gaussian mixture: components are shared across time while
//! the mixture weights depend on the period of the week, smoothed by a
//! circular CAR prior on their multinomial-logit transform.

pub mod car;
pub mod kmeans;
pub mod logit;
mod sampler;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use car::{car_conditional_logdensity, car_conditional_mean, CarParams, CarStructure, PSI_MAX};
pub use logit::{inverse_logit, logit_transform, logit_transform_clamped, WEIGHT_FLOOR};

use crate::density::{Cov2, Gaussian2};
use crate::error::{Error, Result};
use crate::events::{EventLog, TimeGrid};
use crate::geom::{Point, SpatialDomain};
use crate::mixture::{Component, MixtureDensity, MixtureSpec};
use crate::rng;
use sampler::{Sampler, SamplerInit};

/// Mixture parameters with a weekly weight table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub m: usize,
    pub mu: Vec<Point>,
    pub sigma: Vec<Cov2>,
    /// `p[b][j]`, one row per period of the week.
    pub p: Vec<Vec<f64>>,
    /// `q[b][r]`, the logit transform of each row of `p`.
    pub q: Vec<Vec<f64>>,
    pub car: Vec<CarParams>,
}

impl MixtureState {
    /// Builds a state from a weight table, deriving the transformed weights.
    pub fn new(mu: Vec<Point>, sigma: Vec<Cov2>, p: Vec<Vec<f64>>, car: Vec<CarParams>) -> Result<Self> {
        let m = mu.len();
        let q = p.iter().map(|row| logit_transform_clamped(row)).collect();
        let state = Self { m, mu, sigma, p, q, car };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m;
        if m == 0 || self.mu.len() != m || self.sigma.len() != m {
            return Err(Error::InvalidParameter("component count mismatch".into()));
        }
        if let Some(j) = self.sigma.iter().position(|s| !s.is_spd()) {
            return Err(Error::InvalidCovariance(format!("component {j} covariance is not SPD")));
        }
        if self.p.is_empty() || self.p.len() != self.q.len() {
            return Err(Error::InvalidParameter("weight tables must be non-empty and aligned".into()));
        }
        for (b, row) in self.p.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != m || row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!("weight row {b} is not on the simplex")));
            }
            if self.q[b].len() != m - 1 {
                return Err(Error::InvalidParameter(format!("transformed row {b} has wrong length")));
            }
        }
        if self.car.len() != m - 1 {
            return Err(Error::InvalidParameter("need one CAR parameter set per transformed weight".into()));
        }
        self.car.iter().try_for_each(CarParams::validate)
    }

    pub fn cycle(&self) -> usize {
        self.p.len()
    }

    pub fn weights_at(&self, t: usize) -> &[f64] {
        &self.p[t % self.p.len()]
    }

    pub fn to_mixture_spec(&self) -> MixtureSpec {
        MixtureSpec {
            components: self.mu.iter().zip(&self.sigma).map(|(&mean, &cov)| Component { mean, cov }).collect(),
            weights: self.p.clone(),
        }
    }
}

/// `sum_j p_{b,j} phi(s; mu_j, Sigma_j)` with `b = t mod B`, over the whole plane.
pub fn mixture_density(state: &MixtureState, s: Point, t: usize) -> f64 {
    state
        .weights_at(t)
        .iter()
        .zip(state.mu.iter().zip(&state.sigma))
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, (&mu, &sigma))| {
            let inv = sigma.inverse();
            let dx = s.x - mu.x;
            let dy = s.y - mu.y;
            let maha = inv.xx * dx * dx + 2.0 * inv.xy * dx * dy + inv.yy * dy * dy;
            p * (-0.5 * maha).exp() / (2.0 * std::f64::consts::PI * sigma.det().sqrt())
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmPriors {
    /// Prior sample size for the component means.
    pub kappa0: f64,
    /// Inverse-Wishart degrees of freedom.
    pub nu0: f64,
    /// Inverse-Wishart scale is `psi0_scale * I` (km^2).
    pub psi0_scale: f64,
    /// Variance of the normal prior on each CAR mean `a_r`.
    pub a_var: f64,
    pub nu2_shape: f64,
    pub nu2_scale: f64,
}

impl Default for GmmPriors {
    fn default() -> Self {
        Self { kappa0: 0.01, nu0: 4.0, psi0_scale: 1.0, a_var: 100.0, nu2_shape: 2.0, nu2_scale: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmFitConfig {
    pub m: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in draw.
    pub thin: usize,
    pub seed: u64,
    pub priors: GmmPriors,
    pub q_step: f64,
    pub psi_step: f64,
}

impl Default for GmmFitConfig {
    fn default() -> Self {
        Self {
            m: 5,
            iterations: 1000,
            burn_in: 500,
            thin: 1,
            seed: 0,
            priors: GmmPriors::default(),
            q_step: 0.35,
            psi_step: 0.03,
        }
    }
}

impl GmmFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        if self.iterations <= self.burn_in {
            return Err(Error::InvalidParameter(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        let p = &self.priors;
        if !(p.kappa0 > 0.0 && p.nu0 > 1.0 && p.psi0_scale > 0.0 && p.a_var > 0.0 && p.nu2_shape > 0.0 && p.nu2_scale > 0.0)
        {
            return Err(Error::InvalidParameter("prior hyperparameters must be positive (nu0 > 1)".into()));
        }
        if !(self.q_step > 0.0 && self.psi_step > 0.0) {
            return Err(Error::InvalidParameter("proposal scales must be positive".into()));
        }
        Ok(())
    }
}

/// One retained posterior draw.
#[derive(Clone, Debug)]
pub struct GmmSample {
    pub mu: Vec<Point>,
    pub sigma: Vec<Cov2>,
    pub p: Vec<Vec<f64>>,
    pub car: Vec<CarParams>,
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub state: MixtureState,
    pub samples: Vec<GmmSample>,
    /// Log posterior (up to a constant) at the start of every iteration,
    /// burn-in included.
    pub log_posterior: Vec<f64>,
    pub q_acceptance: f64,
    pub psi_acceptance: f64,
    pub config: GmmFitConfig,
    pub domain: SpatialDomain,
    pub grid: TimeGrid,
    /// First period after the training data.
    pub train_end: usize,
}

impl GmmFit {
    /// Predictive density for the periods in `range`.
    pub fn forecast(&self, range: Range<usize>) -> Result<MixtureDensity> {
        forecast_state(&self.state, &self.domain, range)
    }

    /// Predictive density for a single future period.
    pub fn predict(&self, t_future: usize) -> Result<MixtureDensity> {
        if t_future < self.train_end {
            log::warn!("predicting period {t_future} inside the training range (ends at {})", self.train_end);
        }
        self.forecast(t_future..t_future + 1)
    }

    pub fn to_artifact(&self) -> GmmArtifact {
        GmmArtifact {
            m: self.state.m,
            mu: self.state.mu.clone(),
            sigma: self.state.sigma.clone(),
            p: self.state.p.clone(),
            car: self.state.car.clone(),
            seed: self.config.seed,
            config: self.config.clone(),
            domain: self.domain.clone(),
            grid: self.grid,
            train_end: self.train_end,
        }
    }
}

/// Truncates the state's mixture to `domain` for the given periods.
pub fn forecast_state(state: &MixtureState, domain: &SpatialDomain, range: Range<usize>) -> Result<MixtureDensity> {
    MixtureDensity::new(state.to_mixture_spec(), domain.clone(), range)
}

/// Serialized fit result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmmArtifact {
    pub m: usize,
    pub mu: Vec<Point>,
    pub sigma: Vec<Cov2>,
    pub p: Vec<Vec<f64>>,
    pub car: Vec<CarParams>,
    pub seed: u64,
    pub config: GmmFitConfig,
    pub domain: SpatialDomain,
    pub grid: TimeGrid,
    pub train_end: usize,
}

impl GmmArtifact {
    pub fn state(&self) -> Result<MixtureState> {
        MixtureState::new(self.mu.clone(), self.sigma.clone(), self.p.clone(), self.car.clone())
    }
}

/// Runs the sampler on every event in `log`.
pub fn fit(log: &EventLog, config: &GmmFitConfig) -> Result<GmmFit> {
    config.validate()?;
    let m = config.m;
    if log.len() < m.max(2) {
        return Err(Error::InsufficientData(format!("{} events cannot support {m} components", log.len())));
    }
    let grid = *log.grid();
    let cycle = grid.weekly_cycle();
    let span = log.span();
    if span.len() < cycle {
        log::warn!("training span of {} periods is shorter than one week ({cycle})", span.len());
    }

    let points: Vec<Point> = log.events().iter().map(|e| e.s).collect();
    let cycle_pos: Vec<usize> = log.events().iter().map(|e| grid.period_of_week(e.t)).collect();
    let mut rng = rng::substream(config.seed, rng::MCMC);
    let (means, labels) = kmeans::kmeans(&points, m, &mut rng, 100);
    let cov = kmeans::pooled_covariance(&points, &means, &labels);

    let mut sampler = Sampler::new(SamplerInit {
        points,
        cycle_pos,
        cycle,
        day: grid.periods_per_day,
        means,
        cov,
        priors: config.priors,
        q_step: config.q_step,
        psi_step: config.psi_step,
        rng,
    });

    let mut log_posterior = Vec::with_capacity(config.iterations);
    let mut samples = Vec::new();
    for it in 0..config.iterations {
        log_posterior.push(sampler.sweep());
        if it >= config.burn_in && (it - config.burn_in) % config.thin == 0 {
            samples.push(GmmSample {
                mu: sampler.gaussians.iter().map(|g| g.mean).collect(),
                sigma: sampler.gaussians.iter().map(|g| g.cov).collect(),
                p: sampler.p.clone(),
                car: sampler.car.clone(),
            });
        }
    }

    let state = posterior_mean(&samples, m, cycle)?;
    let ratio = |(a, n): (u64, u64)| if n == 0 { 0.0 } else { a as f64 / n as f64 };
    Ok(GmmFit {
        state,
        samples,
        log_posterior,
        q_acceptance: ratio(sampler.q_moves),
        psi_acceptance: ratio(sampler.psi_moves),
        config: config.clone(),
        domain: log.domain().clone(),
        grid,
        train_end: span.end,
    })
}

fn posterior_mean(samples: &[GmmSample], m: usize, cycle: usize) -> Result<MixtureState> {
    let n = samples.len() as f64;
    let mut mu = vec![Point::new(0.0, 0.0); m];
    let mut sigma = vec![Cov2::new(0.0, 0.0, 0.0); m];
    let mut p = vec![vec![0.0; m]; cycle];
    let mut car = vec![CarParams { a: 0.0, psi: 0.0, nu2: 0.0 }; m.saturating_sub(1)];
    for s in samples {
        for j in 0..m {
            mu[j].x += s.mu[j].x / n;
            mu[j].y += s.mu[j].y / n;
            sigma[j].xx += s.sigma[j].xx / n;
            sigma[j].xy += s.sigma[j].xy / n;
            sigma[j].yy += s.sigma[j].yy / n;
        }
        for (acc, row) in p.iter_mut().zip(&s.p) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v / n);
        }
        for (acc, c) in car.iter_mut().zip(&s.car) {
            acc.a += c.a / n;
            acc.psi += c.psi / n;
            acc.nu2 += c.nu2 / n;
        }
    }
    for row in p.iter_mut() {
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    MixtureState::new(mu, sigma, p, car)
}

/// A Gaussian for each component of `state`.
pub fn component_gaussians(state: &MixtureState) -> Result<Vec<Gaussian2>> {
    state.mu.iter().zip(&state.sigma).map(|(&m, &s)| Gaussian2::new(m, s)).collect()
}
