//! Events, the hourly time grid, and the event CSV format.

use std::io::{Read, Write};
use std::ops::Range;

use chrono::{DateTime, NaiveDateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, SpatialDomain};

/// Hourly discretisation of time with a daily period and a weekly cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub periods_per_day: usize,
    pub periods: usize,
}

impl TimeGrid {
    pub const PERIOD_HOURS: u32 = 1;

    pub fn new(periods_per_day: usize, periods: usize) -> Result<Self> {
        if periods_per_day == 0 {
            return Err(Error::InvalidParameter("periods per day must be positive".into()));
        }
        if periods == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one period".into()));
        }
        Ok(Self { periods_per_day, periods })
    }

    /// The standard hourly grid: 24 periods per day, 168 per week.
    pub fn hourly(periods: usize) -> Result<Self> {
        Self::new(24, periods)
    }

    pub fn weekly_cycle(&self) -> usize {
        7 * self.periods_per_day
    }

    pub fn period_of_week(&self, t: usize) -> usize {
        t % self.weekly_cycle()
    }

    pub fn hour_of_day(&self, t: usize) -> usize {
        t % self.periods_per_day
    }

    pub fn weeks(&self) -> usize {
        self.periods / self.weekly_cycle()
    }

    pub fn with_periods(&self, periods: usize) -> Self {
        Self { periods, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: usize,
    pub s: Point,
}

impl Event {
    pub fn new(t: usize, x: f64, y: f64) -> Self {
        Self { t, s: Point::new(x, y) }
    }
}

/// Events sorted by period, with an observation span (the periods the log
/// covers) inside the grid. Per-period slices are O(1).
#[derive(Clone, Debug)]
pub struct EventLog {
    events: Vec<Event>,
    grid: TimeGrid,
    domain: SpatialDomain,
    span: Range<usize>,
    offsets: Vec<usize>,
}

impl EventLog {
    pub fn new(events: Vec<Event>, grid: TimeGrid, domain: SpatialDomain) -> Result<Self> {
        let span = 0..grid.periods;
        Self::with_span(events, grid, domain, span)
    }

    pub fn with_span(
        mut events: Vec<Event>,
        grid: TimeGrid,
        domain: SpatialDomain,
        span: Range<usize>,
    ) -> Result<Self> {
        if span.start > span.end || span.end > grid.periods {
            return Err(Error::InvalidParameter(format!(
                "span {span:?} does not fit a grid of {} periods",
                grid.periods
            )));
        }
        for e in &events {
            if !span.contains(&e.t) {
                return Err(Error::InvalidEvent(format!(
                    "event period {} outside observation span {span:?}",
                    e.t
                )));
            }
            if !domain.bbox.contains(e.s) {
                return Err(Error::InvalidEvent(format!(
                    "event at ({}, {}) lies outside the domain bounding box",
                    e.s.x, e.s.y
                )));
            }
        }
        events.sort_by_key(|e| e.t);
        let mut offsets = vec![0usize; grid.periods + 1];
        for e in &events {
            offsets[e.t + 1] += 1;
        }
        for t in 0..grid.periods {
            offsets[t + 1] += offsets[t];
        }
        Ok(Self { events, grid, domain, span, offsets })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    pub fn span(&self) -> Range<usize> {
        self.span.clone()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn period(&self, t: usize) -> &[Event] {
        if t >= self.grid.periods {
            return &[];
        }
        &self.events[self.offsets[t]..self.offsets[t + 1]]
    }

    /// Events with period in `range` (clamped to the grid).
    pub fn window(&self, range: Range<usize>) -> &[Event] {
        let lo = range.start.min(self.grid.periods);
        let hi = range.end.min(self.grid.periods).max(lo);
        &self.events[self.offsets[lo]..self.offsets[hi]]
    }

    /// Length-T vector of per-period counts.
    pub fn per_period_counts(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Sub-log restricted to `range`, keeping absolute period indices.
    pub fn restrict(&self, range: Range<usize>) -> Result<EventLog> {
        let lo = range.start.max(self.span.start);
        let hi = range.end.min(self.span.end).max(lo);
        Self::with_span(self.window(lo..hi).to_vec(), self.grid, self.domain.clone(), lo..hi)
    }

    /// Chronological split into (training, test), with the last
    /// `test_weeks` weekly cycles of the span held out.
    pub fn split_last_weeks(&self, test_weeks: usize) -> Result<(EventLog, EventLog)> {
        let test_len = test_weeks * self.grid.weekly_cycle();
        if test_len == 0 || test_len >= self.span.len() {
            return Err(Error::InsufficientData(format!(
                "cannot hold out {test_weeks} weeks from a span of {} periods",
                self.span.len()
            )));
        }
        let cut = self.span.end - test_len;
        Ok((self.restrict(self.span.start..cut)?, self.restrict(cut..self.span.end)?))
    }
}

/// Mapping between ISO-8601 timestamps and period indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Clock {
    pub origin: DateTime<Utc>,
}

impl Default for Clock {
    /// Midnight UTC on Monday 2024-01-01, so period 0 opens a week.
    fn default() -> Self {
        let origin = DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z")
            .expect("valid literal")
            .with_timezone(&Utc);
        Self { origin }
    }
}

impl Clock {
    pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(dt.with_timezone(&Utc));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
            if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(naive.and_utc());
            }
        }
        Err(Error::InvalidEvent(format!("unparseable timestamp `{s}`")))
    }

    /// Floor division of the offset from the origin by the period length.
    pub fn period_of(&self, ts: DateTime<Utc>) -> Result<usize> {
        let secs = (ts - self.origin).num_seconds();
        if secs < 0 {
            return Err(Error::InvalidEvent(format!("timestamp {ts} precedes the clock origin")));
        }
        Ok((secs / (3600 * TimeGrid::PERIOD_HOURS as i64)) as usize)
    }

    pub fn period_start(&self, t: usize) -> DateTime<Utc> {
        self.origin + TimeDelta::hours(t as i64 * TimeGrid::PERIOD_HOURS as i64)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    timestamp: String,
    x_km: f64,
    y_km: f64,
}

/// Writes events as `timestamp,x_km,y_km`, one row per event, timestamps at
/// the start of each period. Coordinates use shortest round-trip formatting.
pub fn write_events_csv<W: Write>(log: &EventLog, clock: &Clock, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in log.events() {
        w.serialize(CsvRow {
            timestamp: clock.period_start(e.t).to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            x_km: e.s.x,
            y_km: e.s.y,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the event CSV. `periods` fixes the grid length; when `None` it is
/// one past the last observed period.
pub fn read_events_csv<R: Read>(
    input: R,
    clock: &Clock,
    periods_per_day: usize,
    periods: Option<usize>,
    domain: SpatialDomain,
) -> Result<EventLog> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let expected = ["timestamp", "x_km", "y_km"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::InvalidEvent(format!(
            "expected header `timestamp,x_km,y_km`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut events = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        let t = clock.period_of(Clock::parse_timestamp(&row.timestamp)?)?;
        events.push(Event::new(t, row.x_km, row.y_km));
    }
    let observed = events.iter().map(|e| e.t + 1).max().unwrap_or(1);
    let total = periods.unwrap_or(observed);
    if total < observed {
        return Err(Error::InvalidEvent(format!(
            "event in period {} exceeds the configured {total} periods",
            observed - 1
        )));
    }
    EventLog::new(events, TimeGrid::new(periods_per_day, total)?, domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_domain() -> SpatialDomain {
        SpatialDomain::rect(0.0, 10.0, 0.0, 10.0).unwrap()
    }

    #[test]
    fn empty_log_counts_are_zero() {
        let log = EventLog::new(vec![], TimeGrid::hourly(5).unwrap(), unit_domain()).unwrap();
        assert_eq!(log.per_period_counts(), vec![0, 0, 0, 0, 0]);
    }

    #[test]
    fn counts_three_events_in_one_period() {
        let ev = vec![Event::new(1, 1.0, 1.0), Event::new(1, 2.0, 2.0), Event::new(1, 3.0, 3.0)];
        let log = EventLog::new(ev, TimeGrid::hourly(3).unwrap(), unit_domain()).unwrap();
        assert_eq!(log.per_period_counts(), vec![0, 3, 0]);
        assert_eq!(log.period(1).len(), 3);
    }

    #[test]
    fn events_are_sorted_on_construction() {
        let ev = vec![Event::new(2, 1.0, 1.0), Event::new(0, 2.0, 2.0)];
        let log = EventLog::new(ev, TimeGrid::hourly(3).unwrap(), unit_domain()).unwrap();
        assert_eq!(log.events()[0].t, 0);
        assert_eq!(log.window(1..3).len(), 1);
    }

    #[test]
    fn rejects_events_outside_bbox_or_grid() {
        let g = TimeGrid::hourly(3).unwrap();
        assert!(EventLog::new(vec![Event::new(0, 11.0, 1.0)], g, unit_domain()).is_err());
        assert!(EventLog::new(vec![Event::new(3, 1.0, 1.0)], g, unit_domain()).is_err());
    }

    #[test]
    fn weekly_cycle_is_seven_days() {
        let g = TimeGrid::hourly(1000).unwrap();
        assert_eq!(g.weekly_cycle(), 168);
        assert_eq!(g.period_of_week(170), 2);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ev = vec![Event::new(0, 1.0 / 3.0, 2.5), Event::new(7, 9.999, 0.125)];
        let log = EventLog::new(ev, TimeGrid::hourly(8).unwrap(), unit_domain()).unwrap();
        let clock = Clock::default();
        let mut buf = Vec::new();
        write_events_csv(&log, &clock, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,x_km,y_km\n2024-01-01T00:00:00Z,"));
        let back = read_events_csv(&buf[..], &clock, 24, Some(8), unit_domain()).unwrap();
        assert_eq!(back.events(), log.events());
    }

    #[test]
    fn timestamps_floor_into_hours() {
        let clock = Clock::default();
        let ts = Clock::parse_timestamp("2024-01-01T05:59:59Z").unwrap();
        assert_eq!(clock.period_of(ts).unwrap(), 5);
        let ts = Clock::parse_timestamp("2024-01-02 01:00:00").unwrap();
        assert_eq!(clock.period_of(ts).unwrap(), 25);
    }
}
