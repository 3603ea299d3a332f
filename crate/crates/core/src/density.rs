//! The predictive-density abstraction and its export surface.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CellGrid, Lattice, Point, SpatialDomain};

/// Resolution used for numeric normalisation checks and grid renormalisation.
pub const NORMALIZATION_GRID: usize = 200;

const MIN_COV_DET: f64 = 1e-12;

/// Symmetric 2x2 covariance, stored row-major when serialised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl From<[[f64; 2]; 2]> for Cov2 {
    fn from(m: [[f64; 2]; 2]) -> Self {
        Self { xx: m[0][0], xy: 0.5 * (m[0][1] + m[1][0]), yy: m[1][1] }
    }
}

impl From<Cov2> for [[f64; 2]; 2] {
    fn from(c: Cov2) -> Self {
        [[c.xx, c.xy], [c.xy, c.yy]]
    }
}

impl Cov2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn isotropic(var: f64) -> Self {
        Self { xx: var, xy: 0.0, yy: var }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_spd(&self) -> bool {
        self.xx > 0.0 && self.det() > MIN_COV_DET && self.xx.is_finite() && self.yy.is_finite()
    }

    pub fn inverse(&self) -> Cov2 {
        let d = self.det();
        Cov2 { xx: self.yy / d, xy: -self.xy / d, yy: self.xx / d }
    }

    /// Lower Cholesky factor (l11, l21, l22).
    pub fn cholesky(&self) -> (f64, f64, f64) {
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let l22 = (self.yy - l21 * l21).sqrt();
        (l11, l21, l22)
    }
}

/// Bivariate normal density `(2pi)^-1 |S|^-1/2 exp(-1/2 (s-mu)' S^-1 (s-mu))`.
pub fn bivariate_gaussian(s: Point, mu: Point, sigma: [[f64; 2]; 2]) -> Result<f64> {
    let asym = (sigma[0][1] - sigma[1][0]).abs();
    if asym > 1e-12 * (sigma[0][1].abs() + sigma[1][0].abs()).max(1.0) {
        return Err(Error::InvalidCovariance(format!("{sigma:?} is not symmetric")));
    }
    Ok(Gaussian2::new(mu, Cov2::from(sigma))?.pdf(s))
}

/// Bivariate normal with cached inverse and normalising constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2 {
    pub mean: Point,
    pub cov: Cov2,
    inv: Cov2,
    log_norm: f64,
}

impl Gaussian2 {
    pub fn new(mean: Point, cov: Cov2) -> Result<Self> {
        if !cov.is_spd() {
            return Err(Error::InvalidCovariance(format!(
                "{cov:?} is not symmetric positive definite"
            )));
        }
        let inv = cov.inverse();
        let log_norm = -(2.0 * PI).ln() - 0.5 * cov.det().ln();
        Ok(Self { mean, cov, inv, log_norm })
    }

    pub fn mahalanobis2(&self, s: Point) -> f64 {
        let dx = s.x - self.mean.x;
        let dy = s.y - self.mean.y;
        self.inv.xx * dx * dx + 2.0 * self.inv.xy * dx * dy + self.inv.yy * dy * dy
    }

    pub fn log_pdf(&self, s: Point) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis2(s)
    }

    pub fn pdf(&self, s: Point) -> f64 {
        self.log_pdf(s).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let (l11, l21, l22) = self.cov.cholesky();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        Point::new(self.mean.x + l11 * z1, self.mean.y + l21 * z1 + l22 * z2)
    }
}

/// A normalised predictive spatial density `f_t(s)` over a set of periods.
///
/// Implementations are immutable once built and may be evaluated from
/// several threads.
pub trait DensityModel: Send + Sync {
    fn domain(&self) -> &SpatialDomain;

    /// Periods this model can predict.
    fn periods(&self) -> Range<usize>;

    /// Density at `s` in period `t`; zero outside the domain.
    fn density(&self, s: Point, t: usize) -> f64;

    fn supports(&self, t: usize) -> bool {
        self.periods().contains(&t)
    }

    fn density_batch(&self, t: usize, points: &[Point]) -> Vec<f64> {
        points.iter().map(|&p| self.density(p, t)).collect()
    }

    /// Densities at every lattice site, in lattice order.
    fn density_lattice(&self, t: usize, lattice: &Lattice) -> Vec<f64> {
        self.density_batch(t, &lattice.points())
    }

    /// Probability mass of each cell (midpoint rule, 4x4 sites per cell).
    fn cell_masses(&self, t: usize, cells: &CellGrid) -> Vec<f64> {
        const SUB: usize = 4;
        let sub_area = cells.cell_area() / (SUB * SUB) as f64;
        let mut pts = Vec::with_capacity(cells.len() * SUB * SUB);
        for c in 0..cells.len() {
            let b = cells.cell_bbox(c);
            for j in 0..SUB {
                for i in 0..SUB {
                    pts.push(Point::new(
                        b.x_min + (i as f64 + 0.5) * b.width() / SUB as f64,
                        b.y_min + (j as f64 + 0.5) * b.height() / SUB as f64,
                    ));
                }
            }
        }
        self.density_batch(t, &pts)
            .chunks(SUB * SUB)
            .map(|ch| ch.iter().sum::<f64>() * sub_area)
            .collect()
    }
}

pub(crate) fn check_period(model: &(impl DensityModel + ?Sized), t: usize) -> Result<()> {
    let r = model.periods();
    if r.contains(&t) {
        Ok(())
    } else {
        Err(Error::OutOfRange { t, start: r.start, end: r.end })
    }
}

/// Midpoint-rule integral of `model` over its domain at period `t`.
pub fn integrate(model: &(impl DensityModel + ?Sized), t: usize, n: usize) -> f64 {
    let lattice = Lattice::new(model.domain(), n, n);
    lattice.integrate_values(&model.density_lattice(t, &lattice))
}

/// Constant density over the domain.
#[derive(Clone, Debug)]
pub struct UniformDensity {
    domain: SpatialDomain,
    periods: Range<usize>,
    value: f64,
}

impl UniformDensity {
    pub fn new(domain: SpatialDomain, periods: Range<usize>) -> Self {
        let area = if domain.is_masked() {
            let lat = Lattice::new(&domain, 400, 400);
            lat.inside_mask().iter().filter(|&&b| b).count() as f64 * lat.cell_area
        } else {
            domain.bbox.area()
        };
        Self { domain, periods, value: 1.0 / area }
    }
}

impl DensityModel for UniformDensity {
    fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    fn periods(&self) -> Range<usize> {
        self.periods.clone()
    }

    fn density(&self, s: Point, _t: usize) -> f64 {
        if self.domain.contains(s) {
            self.value
        } else {
            0.0
        }
    }
}

/// Density values at cell centres of an `nx x ny` raster, normalised so that
/// `sum(values) * cell_area == 1`. Values are stored row-major (`iy * nx + ix`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityGrid {
    pub domain: SpatialDomain,
    pub t: usize,
    pub nx: usize,
    pub ny: usize,
    pub cell_area: f64,
    pub values: Vec<f64>,
}

/// Sidecar metadata written next to a grid CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSidecar {
    pub domain: SpatialDomain,
    pub t: usize,
    pub nx: usize,
    pub ny: usize,
    pub cell_area: f64,
    pub model: serde_json::Value,
}

impl DensityGrid {
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area
    }

    pub fn cell_centers(&self) -> Vec<Point> {
        let b = self.domain.bbox;
        let dx = b.width() / self.nx as f64;
        let dy = b.height() / self.ny as f64;
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                out.push(Point::new(
                    b.x_min + (ix as f64 + 0.5) * dx,
                    b.y_min + (iy as f64 + 0.5) * dy,
                ));
            }
        }
        out
    }

    /// Writes `x_center,y_center,density` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_center", "y_center", "density"])?;
        for (p, v) in self.cell_centers().iter().zip(&self.values) {
            w.write_record([p.x.to_string(), p.y.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar(&self, model: serde_json::Value) -> GridSidecar {
        GridSidecar {
            domain: self.domain.clone(),
            t: self.t,
            nx: self.nx,
            ny: self.ny,
            cell_area: self.cell_area,
            model,
        }
    }
}

/// Evaluates `model` at cell centres and renormalises to unit mass.
pub fn rasterize(
    model: &(impl DensityModel + ?Sized),
    t: usize,
    nx: usize,
    ny: usize,
) -> Result<DensityGrid> {
    check_period(model, t)?;
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParameter(format!("raster needs nx, ny >= 2 (got {nx}x{ny})")));
    }
    let lattice = Lattice::new(model.domain(), nx, ny);
    let mut values = model.density_lattice(t, &lattice);
    for (v, &inside) in values.iter_mut().zip(lattice.inside_mask()) {
        if !inside || !v.is_finite() || *v < 0.0 {
            *v = 0.0;
        }
    }
    let mass = values.iter().sum::<f64>() * lattice.cell_area;
    if mass <= 0.0 {
        return Err(Error::InvalidParameter(format!("density is identically zero at t = {t}")));
    }
    values.iter_mut().for_each(|v| *v /= mass);
    Ok(DensityGrid {
        domain: model.domain().clone(),
        t,
        nx,
        ny,
        cell_area: lattice.cell_area,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_at_mean_is_inverse_two_pi() {
        let v = bivariate_gaussian(Point::new(0.0, 0.0), Point::new(0.0, 0.0), [[1.0, 0.0], [0.0, 1.0]])
            .unwrap();
        assert_relative_eq!(v, 0.1591549430918953, epsilon = 1e-15);
    }

    #[test]
    fn gaussian_unit_displacement() {
        let v = bivariate_gaussian(Point::new(1.0, 0.0), Point::new(0.0, 0.0), [[1.0, 0.0], [0.0, 1.0]])
            .unwrap();
        assert_relative_eq!(v, (-0.5f64).exp() / (2.0 * PI), epsilon = 1e-15);
        assert_relative_eq!(v, 0.0965323526300539, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_scaled_covariance() {
        let v = bivariate_gaussian(Point::new(0.0, 0.0), Point::new(0.0, 0.0), [[4.0, 0.0], [0.0, 4.0]])
            .unwrap();
        assert_relative_eq!(v, 1.0 / (8.0 * PI), epsilon = 1e-15);
    }

    #[test]
    fn non_spd_covariance_is_rejected() {
        let o = Point::new(0.0, 0.0);
        assert!(matches!(
            bivariate_gaussian(o, o, [[1.0, 2.0], [2.0, 1.0]]),
            Err(Error::InvalidCovariance(_))
        ));
        assert!(bivariate_gaussian(o, o, [[0.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(bivariate_gaussian(o, o, [[1.0, 0.5], [0.1, 1.0]]).is_err());
    }

    #[test]
    fn uniform_raster_is_flat() {
        let d = SpatialDomain::rect(0.0, 1.0, 0.0, 1.0).unwrap();
        let u = UniformDensity::new(d, 0..10);
        let g = rasterize(&u, 3, 10, 10).unwrap();
        for v in &g.values {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn raster_rejects_unsupported_period() {
        let d = SpatialDomain::rect(0.0, 1.0, 0.0, 1.0).unwrap();
        let u = UniformDensity::new(d, 0..10);
        assert!(matches!(rasterize(&u, 10, 10, 10), Err(Error::OutOfRange { .. })));
        assert!(rasterize(&u, 0, 1, 10).is_err());
    }

    #[test]
    fn grid_csv_has_expected_header() {
        let d = SpatialDomain::rect(0.0, 2.0, 0.0, 2.0).unwrap();
        let g = rasterize(&UniformDensity::new(d, 0..1), 0, 2, 2).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x_center,y_center,density"));
        assert_eq!(lines.next(), Some("0.5,0.5,0.25"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gaussian_symmetric_about_mean(
                dx in -5.0f64..5.0, dy in -5.0f64..5.0,
                a in 0.2f64..4.0, c in 0.2f64..4.0, r in -0.9f64..0.9,
            ) {
                let b = r * (a * c).sqrt();
                let sigma = [[a, b], [b, c]];
                let mu = Point::new(1.5, -2.0);
                let f1 = bivariate_gaussian(Point::new(mu.x + dx, mu.y + dy), mu, sigma).unwrap();
                let f2 = bivariate_gaussian(Point::new(mu.x - dx, mu.y - dy), mu, sigma).unwrap();
                prop_assert!((f1 - f2).abs() <= 1e-12 * f1);
                prop_assert!(f1 > 0.0);
            }
        }
    }
}
