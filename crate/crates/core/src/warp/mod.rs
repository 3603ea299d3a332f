//! Kernel warping: a kernel density on the sparse "labelled" events of the
//! target period of the week, with each kernel deformed by a graph
//! Laplacian over a larger cloud of historical events so that mass follows
//! the shape of the data rather than straight-line distance.

mod cloud;
mod system;

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use cloud::{build_cloud, CloudSpec, PointCloud};
pub use system::WarpSystem;

use crate::density::{check_period, DensityModel, NORMALIZATION_GRID};
use crate::error::{Error, Result};
use crate::eval::mean_neg_log_lik;
use crate::events::{Event, EventLog, TimeGrid};
use crate::geom::{CellGrid, Lattice, Point, SpatialDomain};
use crate::kde::{history_window, silverman_bandwidth, KdeDensity, KernelSum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    pub cloud_size: usize,
    pub weeks_back: usize,
    pub k_neighbors: usize,
    pub lambda: f64,
    /// Kernel bandwidth in km; plug-in rule on the history window when absent.
    pub bandwidth: Option<f64>,
    pub seed: u64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self { cloud_size: 1000, weeks_back: 8, k_neighbors: 5, lambda: 1.0, bandwidth: None, seed: 0 }
    }
}

#[derive(Debug)]
pub struct WarpModel {
    system: Arc<WarpSystem>,
    history: Vec<Event>,
    history_end: usize,
    grid: TimeGrid,
    domain: SpatialDomain,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WarpArtifact {
    pub cloud: CloudSpec,
    pub lambda: f64,
    pub bandwidth: f64,
    pub history_end: usize,
    pub grid: TimeGrid,
    pub domain: SpatialDomain,
    /// Historical window from which labelled events are drawn.
    pub events: Vec<Event>,
}

impl WarpModel {
    pub fn fit(train: &EventLog, config: &WarpConfig) -> Result<Self> {
        let cloud = build_cloud(train, config.cloud_size, config.weeks_back, config.k_neighbors, config.seed)?;
        let history = train.window(history_window(train, config.weeks_back)).to_vec();
        let h = match config.bandwidth {
            Some(h) => h,
            None => silverman_bandwidth(&history.iter().map(|e| e.s).collect::<Vec<_>>())?,
        };
        let system = WarpSystem::new(cloud, config.lambda, h)?;
        Self::from_parts(Arc::new(system), history, train.span().end, *train.grid(), train.domain().clone())
    }

    pub fn from_parts(
        system: Arc<WarpSystem>,
        history: Vec<Event>,
        history_end: usize,
        grid: TimeGrid,
        domain: SpatialDomain,
    ) -> Result<Self> {
        if let Some(e) = history.iter().find(|e| e.t >= history_end) {
            return Err(Error::InvalidEvent(format!("historical event at period {} is not before {history_end}", e.t)));
        }
        Ok(Self { system, history, history_end, grid, domain })
    }

    pub fn system(&self) -> &WarpSystem {
        &self.system
    }

    pub fn history_end(&self) -> usize {
        self.history_end
    }

    /// Historical events sharing period of week `b`.
    pub fn labeled(&self, b: usize) -> Vec<Point> {
        self.history.iter().filter(|e| self.grid.period_of_week(e.t) == b).map(|e| e.s).collect()
    }

    pub fn forecast(&self, range: Range<usize>) -> Result<WarpForecast> {
        if range.start < self.history_end || range.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "forecast range {range:?} must be non-empty and start at or after {}",
                self.history_end
            )));
        }
        let cycle = self.grid.weekly_cycle();
        let positions: BTreeSet<usize> = range.clone().take(cycle).map(|t| self.grid.period_of_week(t)).collect();
        let labeled = (0..cycle).map(|b| if positions.contains(&b) { self.labeled(b) } else { Vec::new() }).collect();
        Ok(WarpForecast {
            system: Arc::clone(&self.system),
            labeled,
            grid: self.grid,
            domain: self.domain.clone(),
            periods: range,
            states: (0..cycle).map(|_| OnceLock::new()).collect(),
            cell_cache: Mutex::new(None),
        })
    }

    pub fn predict(&self, t_future: usize) -> Result<WarpForecast> {
        self.forecast(t_future..t_future + 1)
    }

    pub fn to_artifact(&self) -> WarpArtifact {
        WarpArtifact {
            cloud: self.system.cloud().to_spec(),
            lambda: self.system.lambda(),
            bandwidth: self.system.bandwidth(),
            history_end: self.history_end,
            grid: self.grid,
            domain: self.domain.clone(),
            events: self.history.clone(),
        }
    }

    pub fn from_artifact(a: WarpArtifact) -> Result<Self> {
        let cloud = PointCloud::from_spec(&a.cloud)?;
        let system = WarpSystem::new(cloud, a.lambda, a.bandwidth)?;
        Self::from_parts(Arc::new(system), a.events, a.history_end, a.grid, a.domain)
    }
}

/// Per-period-of-week estimate: the warped kernel sum as a signed KDE over
/// labelled points (weight 1) and cloud points (correction weights).
#[derive(Debug)]
enum PeriodState {
    Warped { kernel: KernelSum, weights: Vec<f64>, mass: f64 },
    Fallback(KdeDensity),
}

type CellCache = (CellGrid, Vec<Option<Vec<f64>>>);

/// Warped kernel density for a range of future periods.
#[derive(Debug)]
pub struct WarpForecast {
    system: Arc<WarpSystem>,
    labeled: Vec<Vec<Point>>,
    grid: TimeGrid,
    domain: SpatialDomain,
    periods: Range<usize>,
    states: Vec<OnceLock<PeriodState>>,
    cell_cache: Mutex<Option<CellCache>>,
}

impl WarpForecast {
    fn fallback(&self, b: usize) -> PeriodState {
        log::warn!("no usable labelled events for period of week {b}; using an unweighted KDE on the cloud");
        let sys = &self.system;
        let kernel = KernelSum::new(sys.cloud().points().to_vec(), sys.bandwidth(), self.domain.clone())
            .expect("bandwidth validated by the system");
        PeriodState::Fallback(KdeDensity::new(kernel, None, self.periods.clone()).expect("cloud is non-empty"))
    }

    fn state(&self, b: usize) -> &PeriodState {
        self.states[b].get_or_init(|| {
            let labeled = &self.labeled[b];
            if labeled.is_empty() {
                return self.fallback(b);
            }
            let sys = &self.system;
            let mut g = DVector::zeros(sys.cloud().len());
            for &x in labeled {
                g += sys.kernel_vector(x);
            }
            let c = sys.correction_weights(&g);
            let mut centers = labeled.clone();
            centers.extend_from_slice(sys.cloud().points());
            let mut weights = vec![1.0; labeled.len()];
            weights.extend(c.iter().map(|v| -v));
            let kernel = KernelSum::without_masses(centers, sys.bandwidth(), self.domain.clone())
                .expect("bandwidth validated by the system");
            let lattice = Lattice::new(&self.domain, NORMALIZATION_GRID, NORMALIZATION_GRID);
            let clipped: Vec<f64> = kernel.lattice_sums(Some(&weights), &lattice).into_iter().map(|v| v.max(0.0)).collect();
            let mass = lattice.integrate_values(&clipped);
            if mass > 0.0 && mass.is_finite() {
                PeriodState::Warped { kernel, weights, mass }
            } else {
                self.fallback(b)
            }
        })
    }

    /// The labelled points used for period `t`.
    pub fn labeled_at(&self, t: usize) -> &[Point] {
        &self.labeled[self.grid.period_of_week(t)]
    }

    /// Warped kernel sum at `s` before clipping and normalisation, or `None`
    /// when period `t` falls back to the cloud KDE.
    pub fn raw_sum(&self, s: Point, t: usize) -> Option<f64> {
        match self.state(self.grid.period_of_week(t)) {
            PeriodState::Warped { kernel, weights, .. } => Some(kernel.sum_at(s, Some(weights))),
            PeriodState::Fallback(_) => None,
        }
    }

    fn lattice_cell_masses(&self, b: usize, cells: &CellGrid) -> Vec<f64> {
        const SUB: usize = 4;
        let lattice = Lattice::new(&self.domain, cells.nx * SUB, cells.ny * SUB);
        let values = self.lattice_values(b, &lattice);
        let mut out = vec![0.0; cells.len()];
        for (i, v) in values.iter().enumerate() {
            let (ix, iy) = (i % lattice.nx, i / lattice.nx);
            out[(iy / SUB) * cells.nx + ix / SUB] += v * lattice.cell_area;
        }
        out
    }

    fn lattice_values(&self, b: usize, lattice: &Lattice) -> Vec<f64> {
        match self.state(b) {
            PeriodState::Warped { kernel, weights, mass } => kernel
                .lattice_sums(Some(weights), lattice)
                .into_iter()
                .enumerate()
                .map(|(i, v)| if lattice.inside(i) { v.max(0.0) / mass } else { 0.0 })
                .collect(),
            PeriodState::Fallback(kde) => kde.density_lattice(self.periods.start, lattice),
        }
    }
}

impl DensityModel for WarpForecast {
    fn domain(&self) -> &SpatialDomain {
        &self.domain
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
        match self.state(self.grid.period_of_week(t)) {
            PeriodState::Warped { kernel, weights, mass } => points
                .iter()
                .map(|&s| if self.domain.contains(s) { kernel.sum_at(s, Some(weights)).max(0.0) / mass } else { 0.0 })
                .collect(),
            PeriodState::Fallback(kde) => kde.density_batch(self.periods.start, points),
        }
    }

    fn density_lattice(&self, t: usize, lattice: &Lattice) -> Vec<f64> {
        if check_period(self, t).is_err() {
            return vec![0.0; lattice.len()];
        }
        self.lattice_values(self.grid.period_of_week(t), lattice)
    }

    /// Midpoint rule on a lattice aligned with the cells (4 x 4 sites per
    /// cell), cached per period of the week.
    fn cell_masses(&self, t: usize, cells: &CellGrid) -> Vec<f64> {
        if check_period(self, t).is_err() {
            return vec![0.0; cells.len()];
        }
        if cells.bbox != self.domain.bbox {
            let mut v = Vec::with_capacity(cells.len());
            for c in 0..cells.len() {
                let b = cells.cell_bbox(c);
                let sub = 4;
                let pts: Vec<Point> = (0..sub * sub)
                    .map(|k| {
                        Point::new(
                            b.x_min + ((k % sub) as f64 + 0.5) * b.width() / sub as f64,
                            b.y_min + ((k / sub) as f64 + 0.5) * b.height() / sub as f64,
                        )
                    })
                    .collect();
                v.push(self.density_batch(t, &pts).iter().sum::<f64>() * b.area() / (sub * sub) as f64);
            }
            return v;
        }
        let b = self.grid.period_of_week(t);
        let mut cache = self.cell_cache.lock().expect("cell cache poisoned");
        if cache.as_ref().is_none_or(|(g, _)| g != cells) {
            *cache = Some((*cells, vec![None; self.states.len()]));
        }
        let (_, slots) = cache.as_mut().expect("just filled");
        slots[b].get_or_insert_with(|| self.lattice_cell_masses(b, cells)).clone()
    }
}

/// Score of one (lambda, h) pair in cross-validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub lambda: f64,
    pub h: f64,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub train: Range<usize>,
    pub validate: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub lambda: f64,
    pub h: f64,
    /// Mean over folds of the held-out mean negative log-likelihood.
    pub objective: f64,
    pub folds: Vec<CvFold>,
    pub scores: Vec<CvScore>,
}

/// Rolling-origin folds: each of the last `folds` weeks is validated by a
/// model trained on everything before it.
pub fn cv_folds(log: &EventLog, folds: usize) -> Result<Vec<CvFold>> {
    if folds < 2 {
        return Err(Error::InvalidParameter("cross-validation needs at least two folds".into()));
    }
    let span = log.span();
    let cycle = log.grid().weekly_cycle();
    if span.len() <= folds * cycle {
        return Err(Error::InsufficientData(format!(
            "{folds} validation weeks leave no training data in a span of {} periods",
            span.len()
        )));
    }
    Ok((0..folds)
        .map(|i| {
            let start = span.end - (folds - i) * cycle;
            CvFold { train: span.start..start, validate: start..start + cycle }
        })
        .collect())
}

fn sorted_unique(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Chooses `(lambda, h)` by mean held-out negative log-likelihood over
/// rolling-origin folds. Ties go to the smaller lambda, then smaller h.
/// `config` supplies the cloud settings and seed; its lambda and bandwidth
/// are ignored.
pub fn cross_validate(
    log: &EventLog,
    lambda_grid: &[f64],
    h_grid: &[f64],
    folds: usize,
    config: &WarpConfig,
) -> Result<CvOutcome> {
    if lambda_grid.is_empty() || h_grid.is_empty() {
        return Err(Error::InvalidParameter("lambda and bandwidth grids must be non-empty".into()));
    }
    let lambdas = sorted_unique(lambda_grid);
    let hs = sorted_unique(h_grid);
    let fold_ranges = cv_folds(log, folds)?;

    let mut totals = vec![Some(0.0); lambdas.len() * hs.len()];
    let mut errors: Vec<Option<String>> = vec![None; totals.len()];
    for fold in &fold_ranges {
        let train = log.restrict(fold.train.clone())?;
        let validate = log.restrict(fold.validate.clone())?;
        if validate.is_empty() {
            continue;
        }
        let cloud = build_cloud(&train, config.cloud_size, config.weeks_back, config.k_neighbors, config.seed)?;
        let history = train.window(history_window(&train, config.weeks_back)).to_vec();
        for (li, &lambda) in lambdas.iter().enumerate() {
            for (hi, &h) in hs.iter().enumerate() {
                let idx = li * hs.len() + hi;
                if totals[idx].is_none() {
                    continue;
                }
                let score = WarpSystem::new(cloud.clone(), lambda, h)
                    .and_then(|sys| {
                        WarpModel::from_parts(
                            Arc::new(sys),
                            history.clone(),
                            train.span().end,
                            *train.grid(),
                            train.domain().clone(),
                        )
                    })
                    .and_then(|m| m.forecast(fold.validate.clone()))
                    .and_then(|f| mean_neg_log_lik(&f, &validate));
                match score {
                    Ok(s) => totals[idx] = totals[idx].map(|t| t + s.value),
                    Err(e) => {
                        totals[idx] = None;
                        errors[idx] = Some(e.to_string());
                    }
                }
            }
        }
    }

    let n_folds = fold_ranges.len() as f64;
    let mut scores = Vec::with_capacity(totals.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for (li, &lambda) in lambdas.iter().enumerate() {
        for (hi, &h) in hs.iter().enumerate() {
            let idx = li * hs.len() + hi;
            let objective = totals[idx].map(|t| t / n_folds);
            if let Some(obj) = objective {
                if best.is_none_or(|(_, _, b)| obj < b) {
                    best = Some((lambda, h, obj));
                }
            }
            scores.push(CvScore { lambda, h, objective, error: errors[idx].clone() });
        }
    }
    match best {
        Some((lambda, h, objective)) => Ok(CvOutcome { lambda, h, objective, folds: fold_ranges, scores }),
        None => {
            let list: Vec<String> = scores
                .iter()
                .map(|s| format!("(lambda {}, h {}): {}", s.lambda, s.h, s.error.as_deref().unwrap_or("no score")))
                .collect();
            Err(Error::AllCandidatesFailed(list.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::integrate;

    fn grid_log(points: &[(usize, f64, f64)], periods: usize, domain: SpatialDomain) -> EventLog {
        let events = points.iter().map(|&(t, x, y)| Event::new(t, x, y)).collect();
        EventLog::new(events, TimeGrid::hourly(periods).unwrap(), domain).unwrap()
    }

    #[test]
    fn zero_lambda_is_labeled_kde_before_clipping() {
        let d = SpatialDomain::rect(0.0, 10.0, 0.0, 10.0).unwrap();
        let pts: Vec<(usize, f64, f64)> = (0..60).map(|i| (i * 5 % 336, (i % 9) as f64 + 0.5, (i % 7) as f64 + 1.0)).collect();
        let log = grid_log(&pts, 336, d.clone());
        let cfg = WarpConfig { cloud_size: 40, lambda: 0.0, bandwidth: Some(0.9), ..Default::default() };
        let model = WarpModel::fit(&log, &cfg).unwrap();
        let f = model.forecast(336..340).unwrap();
        let labeled = f.labeled_at(336).to_vec();
        assert!(!labeled.is_empty());
        let s = Point::new(3.3, 4.4);
        let direct: f64 = labeled.iter().map(|&x| crate::kde::gaussian_kernel(x, s, 0.9)).sum();
        assert!((f.raw_sum(s, 336).unwrap() - direct).abs() < 1e-10);
        assert!((integrate(&f, 336, NORMALIZATION_GRID) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn empty_labeled_set_falls_back_to_cloud_kde() {
        let d = SpatialDomain::rect(0.0, 10.0, 0.0, 10.0).unwrap();
        // events only at period-of-week 0
        let pts: Vec<(usize, f64, f64)> = (0..30).map(|i| (0, (i % 10) as f64 + 0.2, (i / 10) as f64 * 3.0 + 0.5)).collect();
        let log = grid_log(&pts, 168, d);
        let cfg = WarpConfig { cloud_size: 20, bandwidth: Some(1.0), ..Default::default() };
        let model = WarpModel::fit(&log, &cfg).unwrap();
        let f = model.predict(168 + 5).unwrap();
        assert!(f.raw_sum(Point::new(1.0, 1.0), 173).is_none());
        assert!((integrate(&f, 173, NORMALIZATION_GRID) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn folds_roll_forward_one_week_at_a_time() {
        let d = SpatialDomain::rect(0.0, 10.0, 0.0, 10.0).unwrap();
        let log = grid_log(&[], 4 * 168, d);
        let folds = cv_folds(&log, 2).unwrap();
        assert_eq!(folds[0], CvFold { train: 0..336, validate: 336..504 });
        assert_eq!(folds[1], CvFold { train: 0..504, validate: 504..672 });
        assert!(cv_folds(&log, 4).is_err());
        assert!(cv_folds(&log, 1).is_err());
    }

    #[test]
    fn artifact_round_trip_preserves_predictions() {
        let d = SpatialDomain::rect(0.0, 10.0, 0.0, 10.0).unwrap();
        let pts: Vec<(usize, f64, f64)> = (0..80).map(|i| (i * 7 % 336, (i % 9) as f64 + 0.5, (i % 8) as f64 + 1.0)).collect();
        let log = grid_log(&pts, 336, d);
        let cfg = WarpConfig { cloud_size: 50, lambda: 2.0, bandwidth: Some(1.0), ..Default::default() };
        let model = WarpModel::fit(&log, &cfg).unwrap();
        let json = serde_json::to_string(&model.to_artifact()).unwrap();
        let back = WarpModel::from_artifact(serde_json::from_str(&json).unwrap()).unwrap();
        let (a, b) = (model.predict(340).unwrap(), back.predict(340).unwrap());
        let s = Point::new(4.0, 4.0);
        assert_eq!(a.density(s, 340), b.density(s, 340));
    }
}
