use demandcast::density::integrate;
use demandcast::eval::mean_neg_log_lik;
use demandcast::kde::gaussian_kernel;
use demandcast::mixture::{Component, MixtureDensity, MixtureSpec};
use demandcast::simulate::{make_scenario, sample_log, GroundTruth};
use demandcast::warp::{cross_validate, PointCloud, WarpConfig, WarpModel, WarpSystem};
use demandcast::{Cov2, DensityModel, Event, EventLog, Point, SpatialDomain, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// A single isotropic Gaussian at constant rate on a coarse grid (one period per day).
fn isotropic_log(weeks: usize, rate: f64, seed: u64) -> EventLog {
    let domain = SpatialDomain::rect(0.0, 20.0, 0.0, 20.0).unwrap();
    let grid = TimeGrid::new(1, 7 * weeks).unwrap();
    let spec = MixtureSpec {
        components: vec![Component { mean: Point::new(10.0, 10.0), cov: Cov2::isotropic(9.0) }],
        weights: vec![vec![1.0]; 7],
    };
    let density = MixtureDensity::new(spec, domain, 0..grid.periods).unwrap();
    let truth = GroundTruth::new("isotropic", grid, vec![rate; grid.periods], density).unwrap();
    sample_log(&truth, seed).unwrap()
}

fn blob(centre: Point, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n)
        .map(|_| Point::new(centre.x + rng.random_range(-2.0..2.0), centre.y + rng.random_range(-2.0..2.0)))
        .collect()
}

#[test]
fn deformation_keeps_mass_in_the_labelled_point_blob() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pts = blob(Point::new(5.0, 5.0), 60, &mut rng);
    pts.extend(blob(Point::new(15.0, 5.0), 60, &mut rng));
    let domain = SpatialDomain::rect(0.0, 20.0, 0.0, 10.0).unwrap();
    let grid = TimeGrid::new(1, 7).unwrap();
    let labeled = vec![Event::new(0, 6.5, 5.0)];
    let blob2_mass = |lambda: f64| {
        let cloud = PointCloud::new(pts.clone(), 5).unwrap();
        let sys = WarpSystem::new(cloud, lambda, 2.5).unwrap();
        let model = WarpModel::from_parts(Arc::new(sys), labeled.clone(), 7, grid, domain.clone()).unwrap();
        let f = model.predict(7).unwrap();
        let n = 200;
        let lattice = demandcast::geom::Lattice::new(&domain, n, n);
        let values = f.density_lattice(7, &lattice);
        let right: f64 = (0..lattice.len()).filter(|&i| lattice.point(i).x > 10.0).map(|i| values[i]).sum();
        right * lattice.cell_area
    };
    let base = blob2_mass(0.0);
    for lambda in [0.1, 1.0, 10.0] {
        let warped = blob2_mass(lambda);
        assert!(warped < base, "lambda {lambda}: blob-2 mass {warped} not below {base}");
    }
}

#[test]
fn zero_lambda_matches_a_direct_kernel_sum_over_labelled_events() {
    let log = isotropic_log(3, 20.0, 5);
    let train = log.restrict(0..14).unwrap();
    let cfg = WarpConfig { cloud_size: 100, lambda: 0.0, bandwidth: Some(1.2), seed: 3, ..Default::default() };
    let model = WarpModel::fit(&train, &cfg).unwrap();
    let t = 16;
    let f = model.predict(t).unwrap();
    let labeled: Vec<Point> = train.events().iter().filter(|e| e.t % 7 == t % 7).map(|e| e.s).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let s = Point::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
        let mut direct = 0.0;
        for &x in &labeled {
            direct += gaussian_kernel(x, s, 1.2);
        }
        let raw = f.raw_sum(s, t).unwrap();
        assert!((raw - direct).abs() < 1e-10, "{raw} vs {direct}");
    }
}

#[test]
fn singleton_grid_returns_its_pair() {
    let log = isotropic_log(4, 15.0, 2);
    let cfg = WarpConfig { cloud_size: 80, seed: 4, ..Default::default() };
    let out = cross_validate(&log, &[0.7], &[1.3], 2, &cfg).unwrap();
    assert_eq!((out.lambda, out.h), (0.7, 1.3));
    assert_eq!(out.scores.len(), 1);
}

#[test]
fn cv_objective_matches_independent_refits() {
    let log = isotropic_log(4, 15.0, 8);
    let cfg = WarpConfig { cloud_size: 80, seed: 6, ..Default::default() };
    let out = cross_validate(&log, &[0.1, 1.0], &[1.0, 2.0], 2, &cfg).unwrap();
    let mut total = 0.0;
    for fold in &out.folds {
        let train = log.restrict(fold.train.clone()).unwrap();
        let validate = log.restrict(fold.validate.clone()).unwrap();
        let fit_cfg = WarpConfig { lambda: out.lambda, bandwidth: Some(out.h), ..cfg.clone() };
        let model = WarpModel::fit(&train, &fit_cfg).unwrap();
        let f = model.forecast(fold.validate.clone()).unwrap();
        total += mean_neg_log_lik(&f, &validate).unwrap().value;
    }
    let recomputed = total / out.folds.len() as f64;
    assert!((out.objective - recomputed).abs() < 1e-10, "{} vs {recomputed}", out.objective);
}

#[test]
fn structureless_data_selects_the_smallest_lambda() {
    let grid = [0.1, 1.0, 10.0];
    let mut wins = 0;
    for seed in 0..10 {
        let log = isotropic_log(4, 30.0, 100 + seed);
        let cfg = WarpConfig { cloud_size: 200, seed, ..Default::default() };
        let out = cross_validate(&log, &grid, &[1.5], 2, &cfg).unwrap();
        if out.lambda == grid[0] {
            wins += 1;
        }
    }
    assert!(wins > 5, "smallest lambda chosen for only {wins} of 10 seeds");
}

#[test]
fn all_singular_candidates_are_reported() {
    // L annihilates constants, so at huge lambda I + lambda K L is numerically rank deficient
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud = PointCloud::new(blob(Point::new(5.0, 5.0), 40, &mut rng), 5).unwrap();
    assert!(matches!(WarpSystem::new(cloud, 1e15, 1.0), Err(demandcast::Error::Singular { .. })));
    let log = isotropic_log(4, 15.0, 3);
    let cfg = WarpConfig { cloud_size: 60, seed: 1, ..Default::default() };
    let out = cross_validate(&log, &[1e15, 1e16], &[1.0], 2, &cfg);
    assert!(matches!(out, Err(demandcast::Error::AllCandidatesFailed(_))), "{out:?}");
}

#[test]
fn predictions_are_normalised_and_reproducible() {
    let log = isotropic_log(3, 20.0, 12);
    let cfg = WarpConfig { cloud_size: 120, lambda: 3.0, seed: 2, ..Default::default() };
    let a = WarpModel::fit(&log, &cfg).unwrap().forecast(21..28).unwrap();
    let b = WarpModel::fit(&log, &cfg).unwrap().forecast(21..28).unwrap();
    for t in 21..28 {
        assert!((integrate(&a, t, 200) - 1.0).abs() < 1e-2);
        let s = Point::new(9.0, 11.5);
        assert_eq!(a.density(s, t).to_bits(), b.density(s, t).to_bits());
    }
}

/// With one week of labelled history per period the labelled set is sparse and
/// spreading along the cloud graph pays off.
#[test]
fn bay_cross_validated_lambda_is_no_worse_than_no_deformation() {
    let truth = make_scenario("bay-cshape", 10, 21).unwrap();
    let log = sample_log(&truth, 21).unwrap();
    let (train, test) = log.split_last_weeks(1).unwrap();
    let cfg = WarpConfig { weeks_back: 1, seed: 21, ..Default::default() };
    let out = cross_validate(&train, &[0.1, 1.0, 10.0], &[2.0], 2, &cfg).unwrap();
    let score = |lambda: f64| {
        let fit_cfg = WarpConfig { lambda, bandwidth: Some(out.h), ..cfg.clone() };
        let f = WarpModel::fit(&train, &fit_cfg).unwrap().forecast(test.span()).unwrap();
        mean_neg_log_lik(&f, &test).unwrap().value
    };
    let (best, flat) = (score(out.lambda), score(0.0));
    assert!(best <= flat, "lambda* = {}: {best} vs lambda 0: {flat}", out.lambda);
}
