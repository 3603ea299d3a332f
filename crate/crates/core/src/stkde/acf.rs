use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::geom::CellGrid;

/// Per-cell share of each period's events: `count(c, t) / max(1, n_t)`,
/// one series per cell over the log's span.
pub fn cell_density_series(log: &EventLog, cells: &CellGrid) -> Vec<Vec<f64>> {
    let span = log.span();
    let mut series = vec![vec![0.0; span.len()]; cells.len()];
    for (k, t) in span.enumerate() {
        let events = log.period(t);
        let n = events.len().max(1) as f64;
        for e in events {
            series[cells.cell_of(e.s)][k] += 1.0 / n;
        }
    }
    series
}

/// Sample autocorrelation at lags `0..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag == 0 || n <= max_lag {
        return Err(Error::InvalidParameter(format!(
            "autocorrelation needs 1 <= max_lag < series length, got max_lag {max_lag} for length {n}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let var: f64 = dev.iter().map(|d| d * d).sum();
    if !(var > 0.0) || var < 1e-300 {
        return Err(Error::DegenerateSeries("series has zero variance".into()));
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(1.0);
    for lag in 1..=max_lag {
        let c: f64 = dev[..n - lag].iter().zip(&dev[lag..]).map(|(a, b)| a * b).sum();
        out.push(c / var);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, TimeGrid};
    use crate::geom::SpatialDomain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn partition() -> (SpatialDomain, CellGrid) {
        let d = SpatialDomain::rect(0.0, 4.0, 0.0, 5.0).unwrap();
        let cells = CellGrid::new(d.bbox, 4, 5).unwrap();
        (d, cells)
    }

    #[test]
    fn events_always_in_one_cell() {
        let (d, cells) = partition();
        let events = (0..10).flat_map(|t| [Event::new(t, 3.5, 0.5), Event::new(t, 3.2, 0.1)]).collect();
        let log = EventLog::new(events, TimeGrid::hourly(10).unwrap(), d).unwrap();
        let series = cell_density_series(&log, &cells);
        assert_eq!(cells.cell_of(crate::Point::new(3.5, 0.5)), 3);
        for (c, s) in series.iter().enumerate() {
            let expected = if c == 3 { 1.0 } else { 0.0 };
            assert!(s.iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn empty_period_is_zero_everywhere() {
        let (d, cells) = partition();
        let log = EventLog::new(vec![Event::new(0, 1.0, 1.0)], TimeGrid::hourly(3).unwrap(), d).unwrap();
        let series = cell_density_series(&log, &cells);
        assert!(series.iter().all(|s| s[1] == 0.0 && s[2] == 0.0));
    }

    #[test]
    fn lag_zero_is_one() {
        let a = acf(&[1.0, 3.0, 2.0, 5.0, 4.0], 2).unwrap();
        assert_eq!(a[0], 1.0);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(acf(&[2.0; 50], 5), Err(Error::DegenerateSeries(_))));
    }

    #[test]
    fn iid_noise_is_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let a = acf(&x, 200).unwrap();
        assert!(a[1..].iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn weekly_sine_correlates_at_one_week() {
        // the biased estimator shrinks by (T - lag) / T, so T must be large
        let x: Vec<f64> = (0..20_000).map(|t| (2.0 * std::f64::consts::PI * t as f64 / 168.0).sin()).collect();
        let a = acf(&x, 336).unwrap();
        assert!(a[168] > 0.99);
    }
}
