//! Ground-truth event generator: per-period Poisson counts with locations
//! drawn from a known time-varying mixture.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{Cov2, DensityModel};
use crate::error::{Error, Result};
use crate::events::{Event, EventLog, TimeGrid};
use crate::geom::{BBox, Point, Polygon, SpatialDomain};
use crate::mixture::{Component, MixtureDensity, MixtureSpec};
use crate::rng;

pub const SCENARIOS: [&str; 4] = ["static-3comp", "weekly-5comp", "daily-downtown", "bay-cshape"];

/// Known intensity `gamma_t(s) = delta_t f_t(s)`.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub scenario: String,
    pub grid: TimeGrid,
    pub delta: Vec<f64>,
    pub density: MixtureDensity,
}

/// Serialisable description of a [`GroundTruth`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub scenario: String,
    pub grid: TimeGrid,
    pub domain: SpatialDomain,
    pub delta: Vec<f64>,
    pub mixture: MixtureSpec,
}

impl GroundTruth {
    pub fn new(scenario: &str, grid: TimeGrid, delta: Vec<f64>, density: MixtureDensity) -> Result<Self> {
        if delta.len() != grid.periods {
            return Err(Error::InvalidParameter(format!(
                "delta has {} entries for {} periods",
                delta.len(),
                grid.periods
            )));
        }
        if let Some(d) = delta.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(Error::InvalidParameter(format!("aggregate intensity {d} is negative")));
        }
        Ok(Self { scenario: scenario.to_string(), grid, delta, density })
    }

    pub fn domain(&self) -> &SpatialDomain {
        self.density.domain()
    }

    pub fn to_spec(&self) -> GroundTruthSpec {
        GroundTruthSpec {
            scenario: self.scenario.clone(),
            grid: self.grid,
            domain: self.domain().clone(),
            delta: self.delta.clone(),
            mixture: self.density.spec().clone(),
        }
    }

    pub fn from_spec(spec: GroundTruthSpec) -> Result<Self> {
        let density = MixtureDensity::new(spec.mixture, spec.domain, 0..spec.grid.periods)?;
        Self::new(&spec.scenario, spec.grid, spec.delta, density)
    }
}

/// Poisson draw by sequential CDF inversion; large means are split into
/// chunks so `exp(-lambda)` never underflows.
pub fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    const CHUNK: f64 = 500.0;
    let mut remaining = lambda.max(0.0);
    let mut total = 0;
    while remaining > 0.0 {
        let mu = remaining.min(CHUNK);
        remaining -= mu;
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-mu).exp();
        let mut cdf = p;
        let cap = (mu + 40.0 * mu.sqrt() + 100.0) as u64;
        while u > cdf && k < cap {
            k += 1;
            p *= mu / k as f64;
            cdf += p;
        }
        total += k;
    }
    total
}

fn draw_location<R: Rng + ?Sized>(rng: &mut R, density: &MixtureDensity, t: usize) -> Point {
    let weights = density.weights_at(t);
    loop {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = i;
                break;
            }
        }
        let s = density.components()[j].sample(rng);
        if density.domain().contains(s) {
            return s;
        }
    }
}

/// Samples one realisation of the process. Every period draws from its own
/// seeded stream, so the output is bit-reproducible for a given seed.
pub fn sample_log(truth: &GroundTruth, seed: u64) -> Result<EventLog> {
    let mut events = Vec::new();
    for (t, &delta) in truth.delta.iter().enumerate() {
        if delta <= 0.0 {
            continue;
        }
        let mut rng = rng::indexed_substream(seed, rng::SIMULATE, t as u64);
        let n = poisson_inversion(&mut rng, delta);
        for _ in 0..n {
            events.push(Event { t, s: draw_location(&mut rng, &truth.density, t) });
        }
    }
    EventLog::new(events, truth.grid, truth.domain().clone())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|q| (q - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn cyc(x: f64, period: f64) -> f64 {
    (2.0 * PI * x / period).cos()
}

struct Layout {
    domain: SpatialDomain,
    components: Vec<Component>,
    logits: fn(hour: f64, day: usize, b: f64) -> Vec<f64>,
    delta: fn(hour: f64, day: usize) -> f64,
}

fn comp(x: f64, y: f64, xx: f64, xy: f64, yy: f64) -> Component {
    Component { mean: Point::new(x, y), cov: Cov2::new(xx, xy, yy) }
}

fn square_40() -> SpatialDomain {
    SpatialDomain::new(BBox { x_min: 0.0, x_max: 40.0, y_min: 0.0, y_max: 40.0 }, None)
        .expect("static domain")
}

/// C-shaped region open to the east, enclosing a "bay".
pub fn c_shaped_domain() -> SpatialDomain {
    let v = [
        (3.0, 3.0),
        (37.0, 3.0),
        (37.0, 12.0),
        (13.0, 12.0),
        (13.0, 28.0),
        (37.0, 28.0),
        (37.0, 37.0),
        (3.0, 37.0),
    ];
    let mask = Polygon::new(v.iter().map(|&(x, y)| Point::new(x, y)).collect()).expect("static mask");
    SpatialDomain::new(BBox { x_min: 0.0, x_max: 40.0, y_min: 0.0, y_max: 40.0 }, Some(mask))
        .expect("static domain")
}

fn evening_peak(hour: f64, _day: usize) -> f64 {
    30.0 + 7.0 * cyc(hour - 18.0, 24.0)
}

fn layout(name: &str) -> Result<Layout> {
    let l = match name {
        "static-3comp" => Layout {
            domain: square_40(),
            components: vec![
                comp(10.5, 10.5, 7.0, 1.8, 5.3),
                comp(29.5, 13.5, 5.3, -0.9, 8.9),
                comp(20.0, 30.5, 10.7, 0.0, 4.4),
            ],
            logits: |_, _, _| vec![0.45f64.ln(), 0.35f64.ln(), 0.20f64.ln()],
            delta: evening_peak,
        },
        "weekly-5comp" => Layout {
            domain: square_40(),
            components: vec![
                comp(20.0, 20.0, 2.7, 0.5, 2.1),
                comp(8.0, 9.5, 7.1, 1.8, 5.3),
                comp(32.0, 9.5, 6.2, -1.4, 7.1),
                comp(9.5, 30.5, 5.3, 0.9, 8.9),
                comp(30.5, 30.5, 8.9, 0.0, 4.4),
            ],
            logits: |h, day, b| {
                let weekday = day < 5;
                vec![
                    0.9 + 3.0 * cyc(h - 14.0, 24.0) + if weekday { 1.5 } else { -2.1 },
                    1.8 * cyc(h - 22.0, 24.0) + if weekday { 0.0 } else { 1.8 },
                    -0.6 + 2.7 * cyc(b - 40.0, 168.0),
                    0.3 - 2.1 * cyc(h - 14.0, 24.0) + 1.8 * cyc(b - 110.0, 168.0),
                    0.0,
                ]
            },
            delta: |h, day| evening_peak(h, day) + if day >= 5 { -3.0 } else { 0.0 },
        },
        "daily-downtown" => Layout {
            domain: square_40(),
            components: vec![
                comp(24.5, 20.0, 2.1, 0.36, 1.8),
                comp(8.0, 6.5, 7.1, 0.9, 5.3),
                comp(32.0, 8.0, 6.2, -0.9, 5.3),
                comp(13.5, 33.5, 7.1, 0.0, 5.3),
            ],
            logits: |h, _, b| {
                vec![
                    0.2 + 2.0 * cyc(h - 13.0, 24.0),
                    1.8 * cyc(b - 60.0, 168.0),
                    0.2 * cyc(h - 20.0, 24.0),
                    0.0,
                ]
            },
            delta: evening_peak,
        },
        "bay-cshape" => Layout {
            domain: c_shaped_domain(),
            components: vec![
                comp(25.0, 7.5, 35.0, 0.0, 2.0),
                comp(8.0, 20.0, 2.5, 0.0, 27.0),
                comp(25.0, 32.5, 35.0, 0.0, 2.0),
                comp(8.0, 7.0, 3.5, 0.9, 3.5),
                comp(8.0, 33.0, 3.5, -0.9, 3.5),
            ],
            logits: |h, day, b| {
                let weekend = day >= 5;
                vec![
                    1.2 * cyc(h - 9.0, 24.0) + if weekend { -0.8 } else { 0.4 },
                    0.8 * cyc(b - 30.0, 168.0),
                    1.2 * cyc(h - 19.0, 24.0) + if weekend { 0.8 } else { -0.2 },
                    0.6 * cyc(h - 3.0, 24.0),
                    0.0,
                ]
            },
            delta: |h, _| 33.0 + 4.0 * cyc(h - 18.0, 24.0),
        },
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(l)
}

/// Builds one of the named synthetic scenarios over `weeks` weekly cycles.
/// The seed jitters component centres by at most 0.5 km per axis.
pub fn make_scenario(name: &str, weeks: usize, seed: u64) -> Result<GroundTruth> {
    let layout = layout(name)?;
    if weeks == 0 {
        return Err(Error::InvalidParameter("scenario needs at least one week".into()));
    }
    let grid = TimeGrid::hourly(weeks * 168)?;
    let cycle = grid.weekly_cycle();
    let mut jitter = rng::substream(seed, rng::SCENARIO);
    let components: Vec<Component> = layout
        .components
        .iter()
        .map(|c| {
            let dx: f64 = jitter.random_range(-0.5..0.5);
            let dy: f64 = jitter.random_range(-0.5..0.5);
            Component { mean: Point::new(c.mean.x + dx, c.mean.y + dy), ..*c }
        })
        .collect();
    let weights = (0..cycle)
        .map(|b| {
            let hour = (b % grid.periods_per_day) as f64;
            let day = b / grid.periods_per_day;
            softmax(&(layout.logits)(hour, day, b as f64))
        })
        .collect();
    let delta = (0..grid.periods)
        .map(|t| {
            let b = t % cycle;
            (layout.delta)((b % grid.periods_per_day) as f64, b / grid.periods_per_day)
        })
        .collect();
    let density = MixtureDensity::new(MixtureSpec { components, weights }, layout.domain, 0..grid.periods)?;
    GroundTruth::new(name, grid, delta, density)
}

/// Share of unit cells that are empty, per period.
pub fn empty_cell_fractions(log: &EventLog) -> Vec<f64> {
    let cells = crate::geom::CellGrid::unit_km(log.domain().bbox);
    let frac = cells.inside_fractions(log.domain(), 8);
    let admissible: Vec<usize> = (0..cells.len()).filter(|&c| frac[c] > 0.0).collect();
    let mut occupied = vec![false; cells.len()];
    (log.span())
        .map(|t| {
            occupied.iter_mut().for_each(|o| *o = false);
            for e in log.period(t) {
                occupied[cells.cell_of(e.s)] = true;
            }
            let empty = admissible.iter().filter(|&&c| !occupied[c]).count();
            empty as f64 / admissible.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_truth(delta: f64, periods: usize) -> GroundTruth {
        let domain = SpatialDomain::rect(-50.0, 50.0, -50.0, 50.0).unwrap();
        let spec = MixtureSpec {
            components: vec![Component { mean: Point::new(1.0, -2.0), cov: Cov2::new(2.0, 0.5, 1.0) }],
            weights: vec![vec![1.0]],
        };
        let grid = TimeGrid::hourly(periods).unwrap();
        let density = MixtureDensity::new(spec, domain, 0..periods).unwrap();
        GroundTruth::new("test", grid, vec![delta; periods], density).unwrap()
    }

    #[test]
    fn zero_intensity_gives_empty_log() {
        let log = sample_log(&constant_truth(0.0, 50), 1).unwrap();
        assert!(log.is_empty());
    }

    #[test]
    fn mean_count_tracks_intensity() {
        let log = sample_log(&constant_truth(23.0, 2000), 5).unwrap();
        let mean = log.len() as f64 / 2000.0;
        assert!((22.0..=24.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn per_period_counts_match_delta_37() {
        let log = sample_log(&constant_truth(37.0, 1200), 9).unwrap();
        let counts = log.per_period_counts();
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<usize>() as f64 / n;
        let se = (37.0f64 / n).sqrt();
        assert!((mean - 37.0).abs() < 3.0 * se, "mean {mean}");
        assert_eq!(counts.iter().sum::<usize>(), log.len());
    }

    #[test]
    fn locations_follow_the_gaussian() {
        let log = sample_log(&constant_truth(100.0, 1000), 3).unwrap();
        let n = log.len() as f64;
        assert!(n > 90_000.0);
        let mx = log.events().iter().map(|e| e.s.x).sum::<f64>() / n;
        let my = log.events().iter().map(|e| e.s.y).sum::<f64>() / n;
        assert!((mx - 1.0).abs() < 0.05 && (my + 2.0).abs() < 0.05, "({mx}, {my})");
    }

    #[test]
    fn poisson_inversion_handles_large_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws: Vec<u64> = (0..200).map(|_| poisson_inversion(&mut rng, 2000.0)).collect();
        let mean = draws.iter().sum::<u64>() as f64 / 200.0;
        assert!((mean - 2000.0).abs() < 4.0 * (2000.0f64 / 200.0).sqrt(), "mean {mean}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let truth = make_scenario("static-3comp", 1, 4).unwrap();
        let a = sample_log(&truth, 11).unwrap();
        let b = sample_log(&truth, 11).unwrap();
        assert_eq!(a.events(), b.events());
        let c = sample_log(&truth, 12).unwrap();
        assert_ne!(a.events(), c.events());
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        assert!(matches!(make_scenario("nope", 1, 0), Err(Error::UnknownScenario(_))));
        assert!(make_scenario("static-3comp", 0, 0).is_err());
    }

    #[test]
    fn static_scenario_is_time_invariant() {
        let truth = make_scenario("static-3comp", 2, 0).unwrap();
        let s = Point::new(12.0, 13.0);
        let f0 = truth.density.density(s, 0);
        for t in [1, 17, 100, 335] {
            assert_eq!(truth.density.density(s, t), f0);
        }
    }

    #[test]
    fn weekly_scenario_repeats_each_week() {
        let truth = make_scenario("weekly-5comp", 3, 0).unwrap();
        let s = Point::new(14.0, 16.0);
        for t in [0, 5, 50, 167] {
            assert_eq!(truth.density.density(s, t), truth.density.density(s, t + 168));
        }
        assert_ne!(truth.density.density(s, 3), truth.density.density(s, 15));
    }

    #[test]
    fn delta_stays_in_sparse_regime() {
        for name in SCENARIOS {
            let truth = make_scenario(name, 1, 0).unwrap();
            assert!(truth.delta.iter().all(|d| (20.0..=40.0).contains(d)), "{name}");
        }
    }

    #[test]
    fn c_shaped_samples_stay_in_mask() {
        let truth = make_scenario("bay-cshape", 1, 2).unwrap();
        let log = sample_log(&truth, 2).unwrap();
        assert!(log.events().iter().all(|e| truth.domain().contains(e.s)));
    }

    #[test]
    fn spec_round_trip_preserves_density() {
        let truth = make_scenario("weekly-5comp", 1, 3).unwrap();
        let json = serde_json::to_string(&truth.to_spec()).unwrap();
        let back = GroundTruth::from_spec(serde_json::from_str(&json).unwrap()).unwrap();
        let s = Point::new(10.0, 11.0);
        assert_eq!(back.density.density(s, 40), truth.density.density(s, 40));
        assert_eq!(back.delta, truth.delta);
    }
}
