//! Isotropic Gaussian kernel sums with domain-boundary correction.
//!
//! Every KDE-style estimator in the crate reduces to
//! `f(s) = sum_i w_i k_h(s - x_i) / sum_i w_i m_i`, where `m_i` is the mass of
//! kernel `i` inside the domain. Dividing by the in-domain masses instead of
//! `sum_i w_i` keeps the estimate normalised over the domain even when
//! kernels spill past its edges.

use std::f64::consts::{PI, SQRT_2};
use std::ops::Range;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use crate::density::{DensityModel, NORMALIZATION_GRID};
use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::geom::{CellGrid, Lattice, Point, SpatialDomain};

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Robust per-axis spread: min(sd, IQR / 1.349).
fn robust_spread(mut v: Vec<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    let iqr = (q(0.75) - q(0.25)) / 1.349;
    if iqr > 0.0 {
        sd.min(iqr)
    } else {
        sd
    }
}

/// Silverman-style plug-in bandwidth for a 2-D Gaussian KDE: per-axis
/// `spread * n^(-1/6)`, combined by geometric mean.
pub fn silverman_bandwidth(points: &[Point]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(
            "bandwidth selection needs at least two points".into(),
        ));
    }
    let factor = (points.len() as f64).powf(-1.0 / 6.0);
    let hx = robust_spread(points.iter().map(|p| p.x).collect()) * factor;
    let hy = robust_spread(points.iter().map(|p| p.y).collect()) * factor;
    let h = (hx * hy).sqrt();
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InsufficientData("points have no spatial spread".into()));
    }
    Ok(h)
}

type CellFactors = (CellGrid, Arc<(DMatrix<f64>, DMatrix<f64>)>);

/// Kernel centres, bandwidth and per-kernel in-domain mass.
#[derive(Debug)]
pub struct KernelSum {
    centers: Vec<Point>,
    bandwidth: f64,
    domain: SpatialDomain,
    masses: Vec<f64>,
    cell_cache: Mutex<Option<CellFactors>>,
}

impl Clone for KernelSum {
    fn clone(&self) -> Self {
        Self {
            centers: self.centers.clone(),
            bandwidth: self.bandwidth,
            domain: self.domain.clone(),
            masses: self.masses.clone(),
            cell_cache: Mutex::new(None),
        }
    }
}

impl KernelSum {
    pub fn new(centers: Vec<Point>, bandwidth: f64, domain: SpatialDomain) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let masses = boundary_masses(&centers, bandwidth, &domain);
        Ok(Self { centers, bandwidth, domain, masses, cell_cache: Mutex::new(None) })
    }

    /// Kernel sum without boundary masses, for callers that normalise by
    /// other means. [`Self::mass_sum`] is zero for such sums.
    pub(crate) fn without_masses(centers: Vec<Point>, bandwidth: f64, domain: SpatialDomain) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let masses = vec![0.0; centers.len()];
        Ok(Self { centers, bandwidth, domain, masses, cell_cache: Mutex::new(None) })
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// In-domain mass of each kernel.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `k_h(s - c)` for the isotropic normal kernel.
    pub fn kernel(&self, s: Point, c: Point) -> f64 {
        gaussian_kernel(s, c, self.bandwidth)
    }

    /// `sum_i w_i k_h(s - x_i)`; unit weights when `weights` is `None`.
    /// Zero weights are skipped.
    pub fn sum_at(&self, s: Point, weights: Option<&[f64]>) -> f64 {
        let inv = -0.5 / (self.bandwidth * self.bandwidth);
        let norm = 1.0 / (2.0 * PI * self.bandwidth * self.bandwidth);
        let mut acc = 0.0;
        match weights {
            None => {
                for c in &self.centers {
                    acc += (s.dist2(*c) * inv).exp();
                }
            }
            Some(w) => {
                for (c, &wi) in self.centers.iter().zip(w) {
                    if wi != 0.0 {
                        acc += wi * (s.dist2(*c) * inv).exp();
                    }
                }
            }
        }
        acc * norm
    }

    /// `sum_i w_i m_i`, the in-domain mass of the weighted sum.
    pub fn mass_sum(&self, weights: Option<&[f64]>) -> f64 {
        match weights {
            None => self.masses.iter().sum(),
            Some(w) => self.masses.iter().zip(w).map(|(m, w)| m * w).sum(),
        }
    }

    /// `sum_i w_i k_h(s - x_i)` at every lattice site (row-major), via the
    /// separable factorisation `Gy' diag(w) Gx`.
    pub fn lattice_sums(&self, weights: Option<&[f64]>, lattice: &Lattice) -> Vec<f64> {
        let h = self.bandwidth;
        let inv = -0.5 / (h * h);
        let norm = 1.0 / (2.0 * PI * h * h);
        let n = self.centers.len();
        let gx = DMatrix::from_fn(n, lattice.nx, |i, j| ((lattice.xs[j] - self.centers[i].x).powi(2) * inv).exp());
        let gy = DMatrix::from_fn(n, lattice.ny, |i, j| {
            let w = weights.map_or(1.0, |w| w[i]);
            w * norm * ((lattice.ys[j] - self.centers[i].y).powi(2) * inv).exp()
        });
        let prod = gy.tr_mul(&gx); // ny x nx
        let mut out = Vec::with_capacity(lattice.len());
        for iy in 0..lattice.ny {
            for ix in 0..lattice.nx {
                out.push(prod[(iy, ix)]);
            }
        }
        out
    }

    /// `sum_i w_i * integral over cell c of k_h(s - x_i)` for every cell,
    /// scaled by the in-domain fraction of each cell for masked domains.
    pub fn cell_sums(&self, weights: Option<&[f64]>, cells: &CellGrid) -> Vec<f64> {
        let factors = self.cell_factors(cells);
        let (fx, fy) = (&factors.0, &factors.1);
        let weighted = match weights {
            None => fy.clone(),
            Some(w) => {
                let mut m = fy.clone();
                for (i, mut row) in m.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                m
            }
        };
        let prod = weighted.tr_mul(fx); // ncy x ncx
        let frac = cells.inside_fractions(&self.domain, 8);
        let mut out = Vec::with_capacity(cells.len());
        for iy in 0..cells.ny {
            for ix in 0..cells.nx {
                out.push(prod[(iy, ix)] * frac[iy * cells.nx + ix]);
            }
        }
        out
    }

    fn cell_factors(&self, cells: &CellGrid) -> Arc<(DMatrix<f64>, DMatrix<f64>)> {
        let mut cache = self.cell_cache.lock().expect("cell cache poisoned");
        if let Some((g, f)) = cache.as_ref() {
            if g == cells {
                return Arc::clone(f);
            }
        }
        let h = self.bandwidth;
        let xe = cells.x_edges();
        let ye = cells.y_edges();
        let n = self.centers.len();
        let fx = DMatrix::from_fn(n, cells.nx, |i, j| {
            let c = self.centers[i].x;
            normal_cdf((xe[j + 1] - c) / h) - normal_cdf((xe[j] - c) / h)
        });
        let fy = DMatrix::from_fn(n, cells.ny, |i, j| {
            let c = self.centers[i].y;
            normal_cdf((ye[j + 1] - c) / h) - normal_cdf((ye[j] - c) / h)
        });
        let f = Arc::new((fx, fy));
        *cache = Some((*cells, Arc::clone(&f)));
        f
    }
}

pub fn gaussian_kernel(s: Point, c: Point, h: f64) -> f64 {
    (-0.5 * s.dist2(c) / (h * h)).exp() / (2.0 * PI * h * h)
}

/// Mass of each isotropic kernel inside the domain: closed form on the
/// bounding box, midpoint quadrature on the normalisation lattice when a
/// mask is present.
fn boundary_masses(centers: &[Point], h: f64, domain: &SpatialDomain) -> Vec<f64> {
    let b = domain.bbox;
    if !domain.is_masked() {
        return centers
            .iter()
            .map(|c| {
                let mx = normal_cdf((b.x_max - c.x) / h) - normal_cdf((b.x_min - c.x) / h);
                let my = normal_cdf((b.y_max - c.y) / h) - normal_cdf((b.y_min - c.y) / h);
                mx * my
            })
            .collect();
    }
    let lat = Lattice::new(domain, NORMALIZATION_GRID, NORMALIZATION_GRID);
    let inv = -0.5 / (h * h);
    let norm = lat.cell_area / (2.0 * PI * h * h);
    let n = centers.len();
    let gx = DMatrix::from_fn(n, lat.nx, |i, j| ((lat.xs[j] - centers[i].x).powi(2) * inv).exp());
    let gy = DMatrix::from_fn(n, lat.ny, |i, j| ((lat.ys[j] - centers[i].y).powi(2) * inv).exp());
    let indicator = DMatrix::from_fn(lat.ny, lat.nx, |iy, ix| {
        if lat.inside(iy * lat.nx + ix) {
            1.0
        } else {
            0.0
        }
    });
    let gy_i = &gy * &indicator; // n x nx
    (0..n)
        .map(|i| norm * gy_i.row(i).dot(&gx.row(i)))
        .collect()
}

/// The last `weeks` weekly cycles of `log`'s span (or the whole span if shorter).
pub fn history_window(log: &EventLog, weeks: usize) -> Range<usize> {
    let span = log.span();
    let len = weeks * log.grid().weekly_cycle();
    span.end.saturating_sub(len).max(span.start)..span.end
}

/// Fixed-weight kernel density `sum_i w_i k_h(s - x_i) / sum_i w_i m_i`,
/// identical for every period in its range.
#[derive(Clone, Debug)]
pub struct KdeDensity {
    kernel: KernelSum,
    weights: Option<Vec<f64>>,
    total: f64,
    periods: Range<usize>,
}

impl KdeDensity {
    pub fn new(kernel: KernelSum, weights: Option<Vec<f64>>, periods: Range<usize>) -> Result<Self> {
        if kernel.is_empty() {
            return Err(Error::InsufficientData("kernel density needs at least one centre".into()));
        }
        if let Some(w) = &weights {
            if w.len() != kernel.len() || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter("weights must be finite, non-negative, one per centre".into()));
            }
        }
        let total = kernel.mass_sum(weights.as_deref());
        if !(total > 0.0) {
            return Err(Error::InsufficientData("kernels carry no mass inside the domain".into()));
        }
        Ok(Self { kernel, weights, total, periods })
    }

    pub fn kernel(&self) -> &KernelSum {
        &self.kernel
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
}

impl DensityModel for KdeDensity {
    fn domain(&self) -> &SpatialDomain {
        self.kernel.domain()
    }

    fn periods(&self) -> Range<usize> {
        self.periods.clone()
    }

    fn density(&self, s: Point, _t: usize) -> f64 {
        if !self.kernel.domain().contains(s) {
            return 0.0;
        }
        self.kernel.sum_at(s, self.weights.as_deref()) / self.total
    }

    fn density_lattice(&self, _t: usize, lattice: &Lattice) -> Vec<f64> {
        let mut v = self.kernel.lattice_sums(self.weights.as_deref(), lattice);
        for (i, x) in v.iter_mut().enumerate() {
            *x = if lattice.inside(i) { *x / self.total } else { 0.0 };
        }
        v
    }

    fn cell_masses(&self, _t: usize, cells: &CellGrid) -> Vec<f64> {
        let mut v = self.kernel.cell_sums(self.weights.as_deref(), cells);
        v.iter_mut().for_each(|x| *x /= self.total);
        v
    }
}
