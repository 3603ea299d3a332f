//! Scoring of predictive densities on held-out events.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::density::{check_period, DensityModel};
use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::geom::{CellGrid, Point};

/// Densities below this are raised to it before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-12;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLikScore {
    /// Mean negative log density, nats per event.
    pub value: f64,
    pub events: usize,
    /// Evaluations that hit [`DENSITY_FLOOR`].
    pub floored: usize,
    pub periods: usize,
}

/// Mean of `-ln max(f_t(s), floor)` over every test event.
///
/// Terms are summed in sorted order, so the score does not depend on the
/// order in which events are stored.
pub fn mean_neg_log_lik(model: &(impl DensityModel + ?Sized), test: &EventLog) -> Result<LogLikScore> {
    if test.is_empty() {
        return Err(Error::InsufficientData("test log has no events".into()));
    }
    let mut terms = Vec::with_capacity(test.len());
    let mut floored = 0;
    let mut periods = 0;
    for t in test.span() {
        let events = test.period(t);
        if events.is_empty() {
            continue;
        }
        check_period(model, t)?;
        periods += 1;
        let pts: Vec<Point> = events.iter().map(|e| e.s).collect();
        for f in model.density_batch(t, &pts) {
            if !(f > DENSITY_FLOOR) {
                floored += 1;
            }
            terms.push(-f.max(DENSITY_FLOOR).ln());
        }
    }
    terms.sort_by(f64::total_cmp);
    let value = terms.iter().sum::<f64>() / terms.len() as f64;
    Ok(LogLikScore { value, events: terms.len(), floored, periods })
}

/// Per-period-of-week mean event count over `train`'s span.
pub fn period_of_week_means(train: &EventLog) -> Vec<f64> {
    let cycle = train.grid().weekly_cycle();
    let counts = train.per_period_counts();
    let mut sum = vec![0.0; cycle];
    let mut n = vec![0usize; cycle];
    for t in train.span() {
        let b = train.grid().period_of_week(t);
        sum[b] += counts[t] as f64;
        n[b] += 1;
    }
    sum.iter().zip(&n).map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 }).collect()
}

/// Volume estimates for absolute periods `0..range.end`, taken from the
/// period-of-week means of `train`.
pub fn delta_hat_from_training(train: &EventLog, range: Range<usize>) -> Vec<f64> {
    let means = period_of_week_means(train);
    let grid = train.grid();
    (0..range.end).map(|t| means[grid.period_of_week(t)]).collect()
}

/// Cells of `cells` that overlap the model's domain.
fn admissible_cells(model: &(impl DensityModel + ?Sized), cells: &CellGrid) -> Vec<usize> {
    let frac = cells.inside_fractions(model.domain(), 8);
    (0..cells.len()).filter(|&c| frac[c] > 0.0).collect()
}

/// Root-mean-square error between expected counts `delta_hat[t] * mass(cell)`
/// and observed counts, over every (admissible cell, test period) pair.
///
/// `delta_hat` is indexed by absolute period.
pub fn rmse_counts(
    model: &(impl DensityModel + ?Sized),
    delta_hat: &[f64],
    test: &EventLog,
    cells: &CellGrid,
) -> Result<f64> {
    let span = test.span();
    if delta_hat.len() < span.end {
        return Err(Error::InvalidParameter(format!(
            "volume estimates cover {} periods, test needs {}",
            delta_hat.len(),
            span.end
        )));
    }
    let keep = admissible_cells(model, cells);
    let mut counts = vec![0u32; cells.len()];
    let mut sse = 0.0;
    let mut pairs = 0usize;
    for t in span {
        check_period(model, t)?;
        counts.iter_mut().for_each(|c| *c = 0);
        for e in test.period(t) {
            counts[cells.cell_of(e.s)] += 1;
        }
        let masses = model.cell_masses(t, cells);
        for &c in &keep {
            let err = delta_hat[t] * masses[c] - counts[c] as f64;
            sse += err * err;
        }
        pairs += keep.len();
    }
    if pairs == 0 {
        return Err(Error::InsufficientData("no (cell, period) pairs to score".into()));
    }
    Ok((sse / pairs as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub name: String,
    pub rank: usize,
    pub neg_log_lik: f64,
    pub rmse: Option<f64>,
    pub events: usize,
    pub floored: usize,
    pub periods: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: Option<u64>,
    pub scenario: Option<String>,
    pub train: Option<Range<usize>>,
    pub test: Option<Range<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub meta: ReportMeta,
    pub test_events: usize,
    /// Sorted best first.
    pub models: Vec<ModelScore>,
}

impl EvaluationReport {
    pub fn score(&self, name: &str) -> Option<&ModelScore> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self.models.iter().map(|m| m.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "{:>4}  {:<width$}  {:>12}  {:>10}  {:>8}  {:>7}", "rank", "model", "neg_log_lik", "rmse", "events", "floored");
        for m in &self.models {
            let rmse = m.rmse.map_or_else(|| "-".to_string(), |r| format!("{r:.6}"));
            let _ = writeln!(
                out,
                "{:>4}  {:<width$}  {:>12.6}  {:>10}  {:>8}  {:>7}",
                m.rank, m.name, m.neg_log_lik, rmse, m.events, m.floored
            );
        }
        out
    }
}

/// Optional count-grid scoring for [`compare`].
pub struct RmseSetup<'a> {
    pub delta_hat: &'a [f64],
    pub cells: &'a CellGrid,
}

/// Scores each named model on the same test log and ranks them by mean
/// negative log-likelihood, breaking ties by name.
pub fn compare(
    models: &[(&str, &dyn DensityModel)],
    test: &EventLog,
    rmse: Option<RmseSetup<'_>>,
    meta: ReportMeta,
) -> Result<EvaluationReport> {
    if models.len() < 2 {
        return Err(Error::InvalidParameter("comparison needs at least two models".into()));
    }
    let mut scores = Vec::with_capacity(models.len());
    for (name, model) in models {
        let ll = mean_neg_log_lik(*model, test)?;
        let r = match &rmse {
            Some(setup) => Some(rmse_counts(*model, setup.delta_hat, test, setup.cells)?),
            None => None,
        };
        scores.push(ModelScore {
            name: name.to_string(),
            rank: 0,
            neg_log_lik: ll.value,
            rmse: r,
            events: ll.events,
            floored: ll.floored,
            periods: ll.periods,
        });
    }
    scores.sort_by(|a, b| a.neg_log_lik.total_cmp(&b.neg_log_lik).then_with(|| a.name.cmp(&b.name)));
    for (i, s) in scores.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    Ok(EvaluationReport { schema_version: REPORT_SCHEMA_VERSION, meta, test_events: test.len(), models: scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::UniformDensity;
    use crate::events::{Event, TimeGrid};
    use crate::geom::SpatialDomain;

    fn square(size: f64) -> SpatialDomain {
        SpatialDomain::rect(0.0, size, 0.0, size).unwrap()
    }

    fn log_of(events: Vec<Event>, periods: usize, size: f64) -> EventLog {
        EventLog::new(events, TimeGrid::hourly(periods).unwrap(), square(size)).unwrap()
    }

    #[test]
    fn uniform_scores_log_area() {
        let log = log_of(vec![Event::new(0, 1.0, 2.0), Event::new(3, 9.5, 0.5), Event::new(3, 5.0, 5.0)], 4, 10.0);
        let u = UniformDensity::new(square(10.0), 0..4);
        let s = mean_neg_log_lik(&u, &log).unwrap();
        assert!((s.value - 100f64.ln()).abs() < 1e-12);
        assert_eq!(s.events, 3);
        assert_eq!(s.periods, 2);
        assert_eq!(s.floored, 0);
    }

    #[test]
    fn unsupported_period_is_an_error() {
        let log = log_of(vec![Event::new(5, 1.0, 2.0)], 6, 10.0);
        let u = UniformDensity::new(square(10.0), 0..4);
        assert!(matches!(mean_neg_log_lik(&u, &log), Err(Error::OutOfRange { t: 5, .. })));
    }

    #[test]
    fn zero_prediction_rmse_is_constant_count() {
        // every admissible cell holds exactly two events in every period
        let mut events = Vec::new();
        for t in 0..3 {
            for cx in 0..4 {
                for cy in 0..4 {
                    events.push(Event::new(t, cx as f64 + 0.5, cy as f64 + 0.5));
                    events.push(Event::new(t, cx as f64 + 0.25, cy as f64 + 0.75));
                }
            }
        }
        let log = log_of(events, 3, 4.0);
        let cells = CellGrid::unit_km(log.domain().bbox);
        let u = UniformDensity::new(square(4.0), 0..3);
        let r = rmse_counts(&u, &[0.0; 3], &log, &cells).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        // perfect prediction: 32 events spread uniformly over 16 cells
        let r = rmse_counts(&u, &[32.0; 3], &log, &cells).unwrap();
        assert!(r < 1e-9);
    }

    #[test]
    fn compare_ranks_ties_by_name() {
        let log = log_of(vec![Event::new(0, 1.0, 2.0)], 1, 10.0);
        let a = UniformDensity::new(square(10.0), 0..1);
        let models: Vec<(&str, &dyn DensityModel)> = vec![("b-copy", &a), ("a", &a)];
        let report = compare(&models, &log, None, ReportMeta::default()).unwrap();
        assert_eq!(report.models[0].name, "a");
        assert_eq!(report.models[0].neg_log_lik.to_bits(), report.models[1].neg_log_lik.to_bits());
        assert_eq!(report.test_events, 1);
        let json = serde_json::to_string(&report).unwrap();
        let back: EvaluationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(report.to_table().contains("b-copy"));
    }

    #[test]
    fn single_model_comparison_is_rejected() {
        let log = log_of(vec![Event::new(0, 1.0, 2.0)], 1, 10.0);
        let a = UniformDensity::new(square(10.0), 0..1);
        let models: Vec<(&str, &dyn DensityModel)> = vec![("a", &a)];
        assert!(compare(&models, &log, None, ReportMeta::default()).is_err());
    }
}
