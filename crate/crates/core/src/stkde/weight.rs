use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Daily seasonality, in hourly periods.
pub const DAILY_PERIOD: u64 = 24;
/// Weekly seasonality, in hourly periods.
pub const WEEKLY_PERIOD: u64 = 168;

/// Informativeness parameters for one cell, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rho {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub rho4: f64,
}

impl Rho {
    pub const fn new(rho1: f64, rho2: f64, rho3: f64, rho4: f64) -> Self {
        Self { rho1, rho2, rho3, rho4 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.rho1, self.rho2, self.rho3, self.rho4]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|r| (0.0..=1.0).contains(r)) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("rho values must lie in [0, 1], got {:?}", self.as_array())))
        }
    }
}

/// `sin^2(pi * lag / period)`, exactly zero at multiples of the period.
pub(crate) fn seasonal_exponent(lag: u64, period: u64) -> f64 {
    let r = lag % period;
    if r == 0 {
        0.0
    } else {
        (PI * r as f64 / period as f64).sin().powi(2)
    }
}

pub(crate) fn weight_at(lag: u64, rho: &Rho) -> f64 {
    let l = lag as f64;
    rho.rho1.powf(l)
        + rho.rho2.powf(l)
            * rho.rho3.powf(seasonal_exponent(lag, DAILY_PERIOD))
            * rho.rho4.powf(seasonal_exponent(lag, WEEKLY_PERIOD))
}

/// `rho1^lag + rho2^lag * rho3^(sin^2(pi lag / 24)) * rho4^(sin^2(pi lag / 168))`.
pub fn weight(lag: i64, rho: &Rho) -> Result<f64> {
    if lag < 0 {
        return Err(Error::InvalidParameter(format!("lag must be non-negative, got {lag}")));
    }
    Ok(weight_at(lag as u64, rho))
}

/// `weight(lag)` for `lag = 0..len`.
pub(crate) fn weight_table(rho: &Rho, len: usize) -> Vec<f64> {
    (0..len as u64).map(|l| weight_at(l, rho)).collect()
}
