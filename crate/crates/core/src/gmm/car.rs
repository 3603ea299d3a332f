//! Conditional autoregressive prior on a weekly series of transformed
//! weights. Each entry's neighbours are one period and one day away on
//! either side, with indices wrapping around the weekly cycle.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper (exclusive) bound on the persistence parameter: below it the
/// joint precision `I - psi C` is strictly diagonally dominant.
pub const PSI_MAX: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarParams {
    pub a: f64,
    pub psi: f64,
    pub nu2: f64,
}

impl CarParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu2 > 0.0) {
            return Err(Error::InvalidParameter(format!("CAR variance must be positive, got {}", self.nu2)));
        }
        if !(0.0..PSI_MAX).contains(&self.psi) {
            return Err(Error::InvalidParameter(format!("CAR persistence {} outside [0, 0.25)", self.psi)));
        }
        Ok(())
    }
}

/// Sum of the four circular neighbours `b-1, b+1, b-d, b+d`, each de-meaned by `a`.
pub fn neighbor_deviation_sum(q: &[f64], b: usize, d: usize, a: f64) -> f64 {
    let n = q.len();
    let at = |offset: isize| q[(b as isize + offset).rem_euclid(n as isize) as usize] - a;
    let d = d as isize;
    at(-1) + at(1) + at(-d) + at(d)
}

pub fn car_conditional_mean(q: &[f64], b: usize, params: &CarParams, d: usize) -> f64 {
    params.a + params.psi * neighbor_deviation_sum(q, b, d, params.a)
}

/// Gaussian log-density of `q[b]` given its four neighbours.
pub fn car_conditional_logdensity(q: &[f64], b: usize, params: &CarParams, d: usize) -> Result<f64> {
    if !(params.nu2 > 0.0) {
        return Err(Error::InvalidParameter(format!("CAR variance must be positive, got {}", params.nu2)));
    }
    if b >= q.len() {
        return Err(Error::InvalidParameter(format!("index {b} outside series of length {}", q.len())));
    }
    let mean = car_conditional_mean(q, b, params, d);
    Ok(normal_logpdf(q[b], mean, params.nu2))
}

pub(crate) fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI).ln() + var.ln()) - 0.5 * (x - mean).powi(2) / var
}

/// Joint structure of the circular CAR: the neighbour matrix `C` is
/// circulant, so `log det(I - psi C)` has a closed form via its eigenvalues.
#[derive(Clone, Debug)]
pub struct CarStructure {
    len: usize,
    day: usize,
    eigenvalues: Vec<f64>,
}

impl CarStructure {
    pub fn new(len: usize, day: usize) -> Self {
        let eigenvalues = (0..len)
            .map(|k| {
                let w = 2.0 * PI * k as f64 / len as f64;
                2.0 * w.cos() + 2.0 * (w * day as f64).cos()
            })
            .collect();
        Self { len, day, eigenvalues }
    }

    pub fn log_det(&self, psi: f64) -> f64 {
        self.eigenvalues.iter().map(|l| (1.0 - psi * l).ln()).sum()
    }

    /// `(q - a)' (I - psi C) (q - a)`.
    pub fn quad_form(&self, q: &[f64], a: f64, psi: f64) -> f64 {
        (0..self.len)
            .map(|b| {
                let dev = q[b] - a;
                dev * (dev - psi * neighbor_deviation_sum(q, b, self.day, a))
            })
            .sum()
    }

    /// Joint log-density of `q` under `N(a 1, nu2 (I - psi C)^-1)`.
    pub fn joint_logdensity(&self, q: &[f64], p: &CarParams) -> f64 {
        let n = self.len as f64;
        -0.5 * n * ((2.0 * PI).ln() + p.nu2.ln()) + 0.5 * self.log_det(p.psi)
            - 0.5 * self.quad_form(q, p.a, p.psi) / p.nu2
    }

    /// `1' (I - psi C) 1 = len (1 - 4 psi)`.
    pub fn ones_form(&self, psi: f64) -> f64 {
        self.len as f64 * (1.0 - 4.0 * psi)
    }
}
