use demandcast::baselines::naive_kde;
use demandcast::density::integrate;
use demandcast::eval::mean_neg_log_lik;
use demandcast::kde::{gaussian_kernel, history_window, KernelSum};
use demandcast::simulate::{make_scenario, sample_log};
use demandcast::stkde::{acf, cell_density_series, default_partition, weight, Rho, RhoParams, StkdeConfig, StkdeModel};
use demandcast::{DensityModel, Event, EventLog, Point, SpatialDomain, TimeGrid};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario(name: &str, weeks: usize, seed: u64) -> EventLog {
    sample_log(&make_scenario(name, weeks, seed).unwrap(), seed).unwrap()
}

#[test]
fn downtown_cell_shows_stronger_daily_contrast() {
    let log = scenario("daily-downtown", 8, 4);
    let model = StkdeModel::fit(&log, &StkdeConfig::default()).unwrap();
    let cells = model.cells();
    let contrast = |p: Point| {
        let rho = &model.rhos().cells[cells.cell_of(p)];
        weight(24, rho).unwrap() / weight(25, rho).unwrap()
    };
    let downtown = contrast(Point::new(24.5, 20.0));
    let peripheral = contrast(Point::new(8.0, 6.5));
    assert!(downtown > peripheral, "downtown {downtown} vs peripheral {peripheral}");
}

#[test]
fn weekly_structure_shows_at_the_weekly_lag() {
    let log = scenario("weekly-5comp", 8, 2);
    let series = cell_density_series(&log, &default_partition(log.domain().bbox));
    let found = series.iter().filter_map(|s| acf(s, 200).ok()).any(|a| a[168] > a[100]);
    assert!(found);
}

#[test]
fn beats_naive_kde_on_held_out_weeks() {
    let log = scenario("weekly-5comp", 12, 5);
    let (train, test) = log.split_last_weeks(4).unwrap();
    let model = StkdeModel::fit(&train, &StkdeConfig::default()).unwrap();
    let st = model.forecast(test.span()).unwrap();
    let naive = naive_kde(&train, test.span(), 8, Some(model.bandwidth())).unwrap();
    let (a, b) = (mean_neg_log_lik(&st, &test).unwrap().value, mean_neg_log_lik(&naive, &test).unwrap().value);
    assert!(a < b, "stKDE {a} vs naive {b}");
}

#[test]
fn single_event_gives_a_single_bump() {
    let domain = SpatialDomain::rect(-50.0, 50.0, -50.0, 50.0).unwrap();
    let grid = TimeGrid::hourly(400).unwrap();
    let p = Point::new(1.5, -2.0);
    let log = EventLog::new(vec![Event::new(10, p.x, p.y)], grid, domain.clone()).unwrap();
    let cells = default_partition(domain.bbox);
    let rhos = RhoParams::uniform(Rho::new(0.9, 0.99, 0.5, 0.5), cells.len());
    let model =
        StkdeModel::from_parts(cells, rhos, 1.3, log.events().to_vec(), 400, grid, domain, 1e-6).unwrap();
    let f = model.predict(420).unwrap();
    for s in [p, Point::new(2.0, -1.0), Point::new(-3.0, 4.0)] {
        assert!((f.density(s, 420) - gaussian_kernel(p, s, 1.3)).abs() < 1e-12);
    }
}

#[test]
fn forecasts_integrate_to_one() {
    let log = scenario("weekly-5comp", 6, 8);
    let (train, _) = log.split_last_weeks(1).unwrap();
    let model = StkdeModel::fit(&train, &StkdeConfig::default()).unwrap();
    let start = train.span().end;
    let f = model.forecast(start..start + 168).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let t = rng.random_range(start..start + 168);
        let mass = integrate(&f, t, 200);
        assert!((mass - 1.0).abs() < 1e-2, "period {t}: {mass}");
    }
}

#[test]
fn unit_short_memory_weights_reduce_to_naive_kde() {
    let log = scenario("static-3comp", 6, 1);
    let cells = default_partition(log.domain().bbox);
    let rhos = RhoParams::uniform(Rho::new(1.0, 0.0, 0.3, 0.7), cells.len());
    let history = log.window(history_window(&log, 4)).to_vec();
    let end = log.span().end;
    let model =
        StkdeModel::from_parts(cells, rhos, 1.1, history, end, *log.grid(), log.domain().clone(), 1e-6).unwrap();
    let st = model.forecast(end..end + 5).unwrap();
    let naive = naive_kde(&log, end..end + 5, 4, Some(1.1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let s = Point::new(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0));
        let t = rng.random_range(end..end + 5);
        let (a, b) = (st.density(s, t), naive.density(s, t));
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn event_order_within_periods_does_not_matter() {
    let log = scenario("weekly-5comp", 4, 3);
    let mut events = log.events().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // shuffle within each period, keeping the log sorted by period
    let mut start = 0;
    while start < events.len() {
        let t = events[start].t;
        let end = start + events[start..].iter().take_while(|e| e.t == t).count();
        events[start..end].shuffle(&mut rng);
        start = end;
    }
    let shuffled = EventLog::new(events, *log.grid(), log.domain().clone()).unwrap();
    let cfg = StkdeConfig { bandwidth: Some(1.2), ..Default::default() };
    let a = StkdeModel::fit(&log, &cfg).unwrap();
    let b = StkdeModel::fit(&shuffled, &cfg).unwrap();
    assert_eq!(a.rhos(), b.rhos());
    let end = log.span().end;
    let (fa, fb) = (a.predict(end + 3).unwrap(), b.predict(end + 3).unwrap());
    for s in [Point::new(20.0, 20.0), Point::new(9.0, 30.0), Point::new(30.0, 10.0)] {
        let (x, y) = (fa.density(s, end + 3), fb.density(s, end + 3));
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300), "{x} vs {y}");
    }
}

#[test]
fn artifact_round_trip_is_bit_exact() {
    let log = scenario("daily-downtown", 3, 9);
    let model = StkdeModel::fit(&log, &StkdeConfig::default()).unwrap();
    let json = serde_json::to_string(&model.to_artifact()).unwrap();
    let back = StkdeModel::from_artifact(serde_json::from_str(&json).unwrap()).unwrap();
    let end = log.span().end;
    let (a, b) = (model.predict(end).unwrap(), back.predict(end).unwrap());
    let s = Point::new(24.0, 19.0);
    assert_eq!(a.density(s, end).to_bits(), b.density(s, end).to_bits());
}

#[test]
fn kernel_sum_matches_a_direct_loop() {
    let domain = SpatialDomain::rect(0.0, 10.0, 0.0, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let centers: Vec<Point> = (0..10).map(|_| Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
    let k = KernelSum::new(centers.clone(), 0.8, domain).unwrap();
    let s = Point::new(4.0, 6.0);
    let direct: f64 = centers.iter().map(|&c| gaussian_kernel(c, s, 0.8)).sum();
    assert!((k.sum_at(s, None) - direct).abs() < 1e-12);
}
