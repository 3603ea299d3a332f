//! Reference forecasters: the MEDIC historical-average rule on 1-km cells
//! and an unweighted kernel density over a trailing window.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::density::{check_period, DensityModel};
use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::geom::{CellGrid, Point, SpatialDomain};
use crate::kde::{silverman_bandwidth, KdeDensity, KernelSum};

/// Pseudo-count added to every cell before MEDIC counts become a density.
pub const MEDIC_EPSILON: f64 = 0.25;
/// Periods in a synthetic year: 52 weekly cycles.
pub const WEEKS_PER_YEAR: usize = 52;

/// Per-period event counts on a cell tiling, stored period-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CountGrid {
    cells: CellGrid,
    domain: SpatialDomain,
    span: Range<usize>,
    cycle: usize,
    counts: Vec<u32>,
}

impl CountGrid {
    /// Counts on the 1-km tiling of the log's bounding box.
    pub fn from_log(log: &EventLog) -> Self {
        Self::with_cells(log, CellGrid::unit_km(log.domain().bbox))
    }

    pub fn with_cells(log: &EventLog, cells: CellGrid) -> Self {
        let span = log.span();
        let mut counts = vec![0u32; span.len() * cells.len()];
        for e in log.window(span.clone()) {
            counts[(e.t - span.start) * cells.len() + cells.cell_of(e.s)] += 1;
        }
        Self { cells, domain: log.domain().clone(), span, cycle: log.grid().weekly_cycle(), counts }
    }

    pub fn cells(&self) -> &CellGrid {
        &self.cells
    }

    pub fn span(&self) -> Range<usize> {
        self.span.clone()
    }

    /// Counts of every cell in period `t`.
    pub fn period(&self, t: usize) -> &[u32] {
        let n = self.cells.len();
        let k = t - self.span.start;
        &self.counts[k * n..(k + 1) * n]
    }

    pub fn total(&self, t: usize) -> u64 {
        self.period(t).iter().map(|&c| c as u64).sum()
    }

    /// Non-zero entries as `cell_x,cell_y,t,count` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cell_x", "cell_y", "t", "count"])?;
        for t in self.span.clone() {
            for (c, &n) in self.period(t).iter().enumerate() {
                if n > 0 {
                    let (ix, iy) = (c % self.cells.nx, c / self.cells.nx);
                    w.write_record([ix.to_string(), iy.to_string(), t.to_string(), n.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Historical periods MEDIC averages for a target with period of week
    /// `b`: the `weeks` most recent matching periods in each of `years`
    /// yearly blocks, counting back from the end of the grid.
    pub fn medic_periods(&self, t_future: usize, weeks: usize, years: usize) -> Result<Vec<usize>> {
        if weeks == 0 || years == 0 {
            return Err(Error::InvalidParameter("MEDIC needs weeks >= 1 and years >= 1".into()));
        }
        let b = t_future % self.cycle;
        let end = self.span.end.min(t_future);
        if end <= self.span.start {
            return Err(Error::InsufficientData(format!("no history before period {t_future}")));
        }
        // most recent period < end with the same period of week
        let last = end - 1;
        let back = (last + self.cycle - b) % self.cycle;
        let Some(latest) = last.checked_sub(back) else {
            return Err(Error::InsufficientData(format!("no history matching period {t_future}")));
        };
        let year = WEEKS_PER_YEAR * self.cycle;
        let mut out = Vec::with_capacity(weeks * years);
        for y in 0..years {
            for k in 0..weeks {
                let offset = y * year + k * self.cycle;
                match latest.checked_sub(offset) {
                    Some(u) if u >= self.span.start => out.push(u),
                    _ => {
                        return Err(Error::InsufficientData(format!(
                            "MEDIC with {weeks} weeks x {years} years needs history back to {offset} periods before {latest}"
                        )))
                    }
                }
            }
        }
        Ok(out)
    }
}

/// MEDIC prediction for one period of the week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedicPrediction {
    /// Per-cell sums of the selected historical counts.
    pub sums: Vec<u64>,
    /// Number of historical periods averaged.
    pub samples: usize,
    pub periods: Vec<usize>,
}

impl MedicPrediction {
    pub fn expected_counts(&self) -> Vec<f64> {
        self.sums.iter().map(|&s| s as f64 / self.samples as f64).collect()
    }

    /// Expected total, computed from integer sums so it equals the mean of
    /// the selected per-period totals.
    pub fn total(&self) -> f64 {
        self.sums.iter().sum::<u64>() as f64 / self.samples as f64
    }
}

pub fn medic_counts(history: &CountGrid, t_future: usize, weeks: usize, years: usize) -> Result<MedicPrediction> {
    let periods = history.medic_periods(t_future, weeks, years)?;
    let mut sums = vec![0u64; history.cells.len()];
    for &u in &periods {
        for (s, &c) in sums.iter_mut().zip(history.period(u)) {
            *s += c as u64;
        }
    }
    Ok(MedicPrediction { sums, samples: periods.len(), periods })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedicConfig {
    pub weeks: usize,
    pub years: usize,
    pub epsilon: f64,
}

impl Default for MedicConfig {
    fn default() -> Self {
        Self { weeks: 4, years: 1, epsilon: MEDIC_EPSILON }
    }
}

/// MEDIC counts for a range of periods, viewed as a piecewise-constant
/// density over the cells that overlap the domain.
#[derive(Clone, Debug)]
pub struct MedicForecast {
    cells: CellGrid,
    domain: SpatialDomain,
    periods: Range<usize>,
    cycle: usize,
    /// Cell area inside the domain.
    areas: Vec<f64>,
    /// Per period of the week: prediction, or `None` outside the range.
    predictions: Vec<Option<MedicPrediction>>,
    epsilon: f64,
}

pub fn medic_predict(history: &CountGrid, range: Range<usize>, config: &MedicConfig) -> Result<MedicForecast> {
    if !(config.epsilon > 0.0) {
        return Err(Error::InvalidParameter("MEDIC epsilon must be positive".into()));
    }
    if range.is_empty() {
        return Err(Error::InvalidParameter("empty forecast range".into()));
    }
    let cycle = history.cycle;
    let mut predictions = vec![None; cycle];
    for t in range.clone().take(cycle) {
        predictions[t % cycle] = Some(medic_counts(history, t, config.weeks, config.years)?);
    }
    let frac = history.cells.inside_fractions(&history.domain, 8);
    let areas = frac.iter().map(|f| f * history.cells.cell_area()).collect();
    Ok(MedicForecast {
        cells: history.cells,
        domain: history.domain.clone(),
        periods: range,
        cycle,
        areas,
        predictions,
        epsilon: config.epsilon,
    })
}

impl MedicForecast {
    pub fn prediction(&self, t: usize) -> Option<&MedicPrediction> {
        if !self.periods.contains(&t) {
            return None;
        }
        self.predictions[t % self.cycle].as_ref()
    }

    /// `(count + eps) / sum(count + eps)` over cells overlapping the domain.
    pub fn cell_probabilities(&self, t: usize) -> Option<Vec<f64>> {
        let p = self.prediction(t)?;
        let counts = p.expected_counts();
        let raw: Vec<f64> = counts
            .iter()
            .zip(&self.areas)
            .map(|(c, &a)| if a > 0.0 { c + self.epsilon } else { 0.0 })
            .collect();
        let z: f64 = raw.iter().sum();
        Some(raw.into_iter().map(|v| v / z).collect())
    }
}

impl DensityModel for MedicForecast {
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
        let Some(probs) = self.cell_probabilities(t) else {
            return vec![0.0; points.len()];
        };
        points
            .iter()
            .map(|&s| {
                if !self.domain.contains(s) {
                    return 0.0;
                }
                let c = self.cells.cell_of(s);
                if self.areas[c] > 0.0 {
                    probs[c] / self.areas[c]
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn cell_masses(&self, t: usize, cells: &CellGrid) -> Vec<f64> {
        if *cells == self.cells && check_period(self, t).is_ok() {
            return self.cell_probabilities(t).unwrap_or_else(|| vec![0.0; cells.len()]);
        }
        let sub = 4;
        let sub_area = cells.cell_area() / (sub * sub) as f64;
        (0..cells.len())
            .map(|c| {
                let b = cells.cell_bbox(c);
                let pts: Vec<Point> = (0..sub * sub)
                    .map(|k| {
                        Point::new(
                            b.x_min + ((k % sub) as f64 + 0.5) * b.width() / sub as f64,
                            b.y_min + ((k / sub) as f64 + 0.5) * b.height() / sub as f64,
                        )
                    })
                    .collect();
                self.density_batch(t, &pts).iter().sum::<f64>() * sub_area
            })
            .collect()
    }
}

/// Events strictly before `end` in the last `weeks` weekly cycles.
fn trailing_window(log: &EventLog, end: usize, weeks: usize) -> Range<usize> {
    let span = log.span();
    let end = end.min(span.end);
    let len = weeks * log.grid().weekly_cycle();
    end.saturating_sub(len).max(span.start)..end
}

/// Unweighted Gaussian KDE over the `weeks_back` weeks of `log` preceding
/// `range`, shared by every period in `range`. The bandwidth defaults to
/// the plug-in rule on the window.
pub fn naive_kde(log: &EventLog, range: Range<usize>, weeks_back: usize, h: Option<f64>) -> Result<KdeDensity> {
    let window = trailing_window(log, range.start, weeks_back);
    let centers: Vec<Point> = log.window(window.clone()).iter().map(|e| e.s).collect();
    if centers.is_empty() {
        return Err(Error::InsufficientData(format!("no events in window {window:?}")));
    }
    let h = match h {
        Some(h) => h,
        None => silverman_bandwidth(&centers)?,
    };
    KdeDensity::new(KernelSum::new(centers, h, log.domain().clone())?, None, range)
}

pub fn naive_kde_predict(log: &EventLog, t_future: usize, weeks_back: usize, h: Option<f64>) -> Result<KdeDensity> {
    naive_kde(log, t_future..t_future + 1, weeks_back, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, TimeGrid};

    fn small_log(events: Vec<Event>, weeks: usize) -> EventLog {
        let d = SpatialDomain::rect(0.0, 3.0, 0.0, 2.0).unwrap();
        EventLog::new(events, TimeGrid::hourly(weeks * 168).unwrap(), d).unwrap()
    }

    #[test]
    fn medic_is_arithmetic_mean() {
        // cell (0,0), period-of-week 5, weekly history [2, 0, 1, 1]
        let mut events = Vec::new();
        for (week, n) in [2usize, 0, 1, 1].iter().enumerate() {
            for _ in 0..*n {
                events.push(Event::new(week * 168 + 5, 0.5, 0.5));
            }
        }
        let log = small_log(events, 4);
        let grid = CountGrid::from_log(&log);
        let pred = medic_counts(&grid, 4 * 168 + 5, 4, 1).unwrap();
        assert_eq!(pred.expected_counts()[0], 1.0);
        assert_eq!(pred.samples, 4);
    }

    #[test]
    fn all_zero_history_still_has_positive_density() {
        let log = small_log(vec![Event::new(0, 0.5, 0.5)], 2);
        let grid = CountGrid::from_log(&log);
        let f = medic_predict(&grid, 336..340, &MedicConfig { weeks: 2, ..Default::default() }).unwrap();
        let p = f.prediction(337).unwrap();
        assert!(p.sums.iter().all(|&s| s == 0));
        assert!(f.density(Point::new(2.5, 1.5), 337) > 0.0);
        let total: f64 = f.cell_masses(337, &grid.cells).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn medic_needs_enough_history() {
        let log = small_log(vec![Event::new(0, 0.5, 0.5)], 2);
        let grid = CountGrid::from_log(&log);
        assert!(medic_counts(&grid, 400, 3, 1).is_err());
        assert!(medic_counts(&grid, 400, 2, 2).is_err());
        assert!(medic_counts(&grid, 400, 0, 1).is_err());
    }

    #[test]
    fn medic_periods_count_back_from_history_end() {
        let log = small_log(vec![], 3);
        let grid = CountGrid::from_log(&log);
        // forecasting the fourth week from a three-week history
        let p = grid.medic_periods(3 * 168 + 10 + 168, 3, 1).unwrap();
        assert_eq!(p, vec![2 * 168 + 10, 168 + 10, 10]);
    }

    #[test]
    fn count_csv_lists_nonzero_cells() {
        let log = small_log(vec![Event::new(3, 2.5, 1.5), Event::new(3, 2.4, 1.1)], 1);
        let mut buf = Vec::new();
        CountGrid::from_log(&log).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "cell_x,cell_y,t,count\n2,1,3,2\n");
    }

    #[test]
    fn naive_single_event_is_a_gaussian_bump() {
        let d = SpatialDomain::rect(-50.0, 50.0, -50.0, 50.0).unwrap();
        let log = EventLog::new(vec![Event::new(0, 1.0, 2.0)], TimeGrid::hourly(168).unwrap(), d).unwrap();
        let f = naive_kde_predict(&log, 168, 8, Some(0.7)).unwrap();
        for s in [Point::new(1.0, 2.0), Point::new(1.5, 1.0)] {
            let expected = crate::kde::gaussian_kernel(s, Point::new(1.0, 2.0), 0.7);
            assert!((f.density(s, 168) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn naive_empty_window_is_an_error() {
        let log = small_log(vec![], 1);
        assert!(naive_kde_predict(&log, 168, 1, Some(1.0)).is_err());
    }
}
