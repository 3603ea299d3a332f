//! Spatio-temporal kernel density: historical events are weighted by how
//! informative their cell's past has been at the lag to the target period.

mod acf;
mod fit;
mod weight;

use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

pub use acf::{acf, cell_density_series};
pub use fit::{fit_rhos, rho_objective, RhoParams};
pub use weight::{weight, Rho, DAILY_PERIOD, WEEKLY_PERIOD};

use crate::density::{check_period, DensityModel};
use crate::error::{Error, Result};
use crate::events::{Event, EventLog, TimeGrid};
use crate::geom::{BBox, CellGrid, Lattice, Point, SpatialDomain};
use crate::kde::{history_window, silverman_bandwidth, KernelSum};

/// Default 4 x 5 tiling of the bounding box used for the ACF fits.
pub fn default_partition(bbox: BBox) -> CellGrid {
    CellGrid::new(bbox, 4, 5).expect("fixed positive dimensions")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StkdeConfig {
    pub cells_x: usize,
    pub cells_y: usize,
    pub max_lag: usize,
    pub history_weeks: usize,
    /// Kernel bandwidth in km; plug-in rule when absent.
    pub bandwidth: Option<f64>,
    /// Points whose weight falls below this fraction of the largest weight are dropped.
    pub weight_floor: f64,
}

impl Default for StkdeConfig {
    fn default() -> Self {
        Self { cells_x: 4, cells_y: 5, max_lag: 336, history_weeks: 8, bandwidth: None, weight_floor: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct StkdeModel {
    cells: CellGrid,
    rhos: RhoParams,
    bandwidth: f64,
    history: Vec<Event>,
    history_end: usize,
    grid: TimeGrid,
    domain: SpatialDomain,
    weight_floor: f64,
}

/// Serialized form of a fitted model, including the historical window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StkdeArtifact {
    pub cells_x: usize,
    pub cells_y: usize,
    pub rhos: Vec<Rho>,
    pub bandwidth: f64,
    pub weight_floor: f64,
    pub history_end: usize,
    pub grid: TimeGrid,
    pub domain: SpatialDomain,
    pub events: Vec<Event>,
}

impl StkdeModel {
    /// Learns per-cell weights from `train` and keeps its last
    /// `history_weeks` weeks as kernel centres.
    pub fn fit(train: &EventLog, config: &StkdeConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData("training log has no events".into()));
        }
        let cells = CellGrid::new(train.domain().bbox, config.cells_x, config.cells_y)?;
        let series = cell_density_series(train, &cells);
        let span_len = train.span().len();
        if span_len < 2 {
            return Err(Error::InsufficientData("training span needs at least two periods".into()));
        }
        let max_lag = config.max_lag.min(span_len - 1);
        if max_lag < config.max_lag {
            log::warn!("training span of {span_len} periods limits the ACF to lag {max_lag}");
        }
        let acfs: Vec<Option<Vec<f64>>> = series
            .iter()
            .map(|s| match acf(s, max_lag) {
                Ok(a) => Ok(Some(a)),
                Err(Error::DegenerateSeries(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        let rhos = fit_rhos(&acfs, max_lag)?;

        let window = history_window(train, config.history_weeks);
        let history = train.window(window).to_vec();
        let bandwidth = match config.bandwidth {
            Some(h) => h,
            None => silverman_bandwidth(&history.iter().map(|e| e.s).collect::<Vec<_>>())?,
        };
        Self::from_parts(
            cells,
            rhos,
            bandwidth,
            history,
            train.span().end,
            *train.grid(),
            train.domain().clone(),
            config.weight_floor,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        cells: CellGrid,
        rhos: RhoParams,
        bandwidth: f64,
        history: Vec<Event>,
        history_end: usize,
        grid: TimeGrid,
        domain: SpatialDomain,
        weight_floor: f64,
    ) -> Result<Self> {
        rhos.validate()?;
        if rhos.cells.len() != cells.len() {
            return Err(Error::InvalidParameter(format!(
                "{} rho sets for {} cells",
                rhos.cells.len(),
                cells.len()
            )));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if history.is_empty() {
            return Err(Error::InsufficientData("no events in the historical window".into()));
        }
        if let Some(e) = history.iter().find(|e| e.t >= history_end) {
            return Err(Error::InvalidEvent(format!("historical event at period {} is not before {history_end}", e.t)));
        }
        Ok(Self { cells, rhos, bandwidth, history, history_end, grid, domain, weight_floor })
    }

    pub fn rhos(&self) -> &RhoParams {
        &self.rhos
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn cells(&self) -> &CellGrid {
        &self.cells
    }

    pub fn history(&self) -> &[Event] {
        &self.history
    }

    pub fn history_end(&self) -> usize {
        self.history_end
    }

    /// Predictive densities for every period in `range`, which must start
    /// at or after the end of the training data.
    pub fn forecast(&self, range: Range<usize>) -> Result<StkdeForecast> {
        if range.start < self.history_end || range.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "forecast range {range:?} must be non-empty and start at or after {}",
                self.history_end
            )));
        }
        let kernel = KernelSum::new(self.history.iter().map(|e| e.s).collect(), self.bandwidth, self.domain.clone())?;
        let oldest = self.history.iter().map(|e| e.t).min().unwrap_or(0);
        let table_len = range.end - oldest;
        let tables = self.rhos.cells.iter().map(|r| weight::weight_table(r, table_len)).collect();
        Ok(StkdeForecast {
            kernel,
            times: self.history.iter().map(|e| e.t).collect(),
            cell_ids: self.history.iter().map(|e| self.cells.cell_of(e.s)).collect(),
            tables,
            floor: self.weight_floor,
            periods: range,
            warned: AtomicBool::new(false),
        })
    }

    pub fn predict(&self, t_future: usize) -> Result<StkdeForecast> {
        self.forecast(t_future..t_future + 1)
    }

    pub fn to_artifact(&self) -> StkdeArtifact {
        StkdeArtifact {
            cells_x: self.cells.nx,
            cells_y: self.cells.ny,
            rhos: self.rhos.cells.clone(),
            bandwidth: self.bandwidth,
            weight_floor: self.weight_floor,
            history_end: self.history_end,
            grid: self.grid,
            domain: self.domain.clone(),
            events: self.history.clone(),
        }
    }

    pub fn from_artifact(a: StkdeArtifact) -> Result<Self> {
        let cells = CellGrid::new(a.domain.bbox, a.cells_x, a.cells_y)?;
        let rhos = RhoParams { cells: a.rhos, degenerate: Vec::new() };
        Self::from_parts(cells, rhos, a.bandwidth, a.events, a.history_end, a.grid, a.domain, a.weight_floor)
    }
}

/// Weighted kernel density for a range of future periods.
#[derive(Debug)]
pub struct StkdeForecast {
    kernel: KernelSum,
    times: Vec<usize>,
    cell_ids: Vec<usize>,
    /// Per-cell weight by lag.
    tables: Vec<Vec<f64>>,
    floor: f64,
    periods: Range<usize>,
    warned: AtomicBool,
}

impl StkdeForecast {
    /// Weights of the historical points for period `t`, or `None` when they
    /// carry no mass and the unweighted estimate is used instead.
    pub fn weights(&self, t: usize) -> Option<Vec<f64>> {
        let mut w: Vec<f64> = self
            .times
            .iter()
            .zip(&self.cell_ids)
            .map(|(&u, &c)| self.tables[c].get(t - u).copied().unwrap_or(0.0))
            .collect();
        let max = w.iter().cloned().fold(0.0, f64::max);
        let cut = self.floor * max;
        w.iter_mut().for_each(|v| {
            if *v < cut {
                *v = 0.0
            }
        });
        let total = self.kernel.mass_sum(Some(&w));
        if total > 0.0 && total.is_finite() {
            Some(w)
        } else {
            if !self.warned.swap(true, Ordering::Relaxed) {
                log::warn!("historical weights vanish at period {t}; using the unweighted estimate");
            }
            None
        }
    }

    pub fn kernel(&self) -> &KernelSum {
        &self.kernel
    }
}

impl DensityModel for StkdeForecast {
    fn domain(&self) -> &SpatialDomain {
        self.kernel.domain()
    }

    fn periods(&self) -> Range<usize> {
        self.periods.clone()
    }

    fn density(&self, s: Point, t: usize) -> f64 {
        self.density_batch(t, &[s])[0]
    }

    fn density_batch(&self, t: usize, points: &[Point]) -> Vec<f64> {
        if check_period(self, t).is_err() {
            return vec![0.0; points.len()];
        }
        let w = self.weights(t);
        let total = self.kernel.mass_sum(w.as_deref());
        points
            .iter()
            .map(|&s| if self.domain().contains(s) { self.kernel.sum_at(s, w.as_deref()) / total } else { 0.0 })
            .collect()
    }

    fn density_lattice(&self, t: usize, lattice: &Lattice) -> Vec<f64> {
        if check_period(self, t).is_err() {
            return vec![0.0; lattice.len()];
        }
        let w = self.weights(t);
        let total = self.kernel.mass_sum(w.as_deref());
        let mut v = self.kernel.lattice_sums(w.as_deref(), lattice);
        for (i, x) in v.iter_mut().enumerate() {
            *x = if lattice.inside(i) { *x / total } else { 0.0 };
        }
        v
    }

    fn cell_masses(&self, t: usize, cells: &CellGrid) -> Vec<f64> {
        if check_period(self, t).is_err() {
            return vec![0.0; cells.len()];
        }
        let w = self.weights(t);
        let total = self.kernel.mass_sum(w.as_deref());
        let mut v = self.kernel.cell_sums(w.as_deref(), cells);
        v.iter_mut().for_each(|x| *x /= total);
        v
    }
}
