use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::density::{Cov2, DensityModel, Gaussian2};
use crate::error::{Error, Result};
use crate::geom::{Lattice, Point, SpatialDomain};

const MASS_GRID: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Point,
    pub cov: Cov2,
}

/// Fixed components with a cyclic table of mixture weights: period `t` uses
/// row `t mod rows`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<Component>,
    pub weights: Vec<Vec<f64>>,
}

impl MixtureSpec {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.weights[t % self.weights.len()]
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.components.len();
        if m == 0 || self.weights.is_empty() {
            return Err(Error::InvalidParameter("mixture needs components and weight rows".into()));
        }
        for (b, row) in self.weights.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidParameter(format!(
                    "weight row {b} has {} entries, expected {m}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidParameter(format!("weight row {b} is not on the simplex")));
            }
        }
        Ok(())
    }
}

/// Mixture density truncated to the domain and renormalised per period.
#[derive(Clone, Debug)]
pub struct MixtureDensity {
    spec: MixtureSpec,
    gaussians: Vec<Gaussian2>,
    masses: Vec<f64>,
    domain: SpatialDomain,
    periods: Range<usize>,
}

impl MixtureDensity {
    pub fn new(spec: MixtureSpec, domain: SpatialDomain, periods: Range<usize>) -> Result<Self> {
        spec.validate()?;
        let gaussians = spec
            .components
            .iter()
            .map(|c| Gaussian2::new(c.mean, c.cov))
            .collect::<Result<Vec<_>>>()?;
        let lat = Lattice::new(&domain, MASS_GRID, MASS_GRID);
        let pts = lat.points();
        let masses = gaussians
            .iter()
            .map(|g| {
                pts.iter()
                    .enumerate()
                    .filter(|(i, _)| lat.inside(*i))
                    .map(|(_, p)| g.pdf(*p))
                    .sum::<f64>()
                    * lat.cell_area
            })
            .collect();
        Ok(Self { spec, gaussians, masses, domain, periods })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn components(&self) -> &[Gaussian2] {
        &self.gaussians
    }

    /// In-domain mass of each component.
    pub fn component_masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn weights_at(&self, t: usize) -> &[f64] {
        self.spec.row(t)
    }

    /// Untruncated mixture `sum_j p_j phi_j(s)`.
    pub fn raw_density(&self, s: Point, t: usize) -> f64 {
        self.spec
            .row(t)
            .iter()
            .zip(&self.gaussians)
            .map(|(p, g)| if *p > 0.0 { p * g.pdf(s) } else { 0.0 })
            .sum()
    }

    fn normalizer(&self, t: usize) -> f64 {
        self.spec.row(t).iter().zip(&self.masses).map(|(p, m)| p * m).sum()
    }

    pub fn with_periods(&self, periods: Range<usize>) -> Self {
        Self { periods, ..self.clone() }
    }
}

impl DensityModel for MixtureDensity {
    fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    fn periods(&self) -> Range<usize> {
        self.periods.clone()
    }

    fn density(&self, s: Point, t: usize) -> f64 {
        if !self.domain.contains(s) {
            return 0.0;
        }
        self.raw_density(s, t) / self.normalizer(t)
    }

    fn density_batch(&self, t: usize, points: &[Point]) -> Vec<f64> {
        let z = self.normalizer(t);
        points
            .iter()
            .map(|&s| if self.domain.contains(s) { self.raw_density(s, t) / z } else { 0.0 })
            .collect()
    }
}
