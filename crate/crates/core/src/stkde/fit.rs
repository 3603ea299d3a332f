//! Least-squares fit of the informativeness weight to the positive part
//! of each cell's autocorrelation function.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::weight::{seasonal_exponent, weight_at, Rho, DAILY_PERIOD, WEEKLY_PERIOD};
use crate::error::{Error, Result};

/// Coarse grid for rho1, rho3 and rho4.
const UNIT_GRID_STEPS: usize = 20;
/// Long-memory candidates for rho2.
const RHO2_GRID: [f64; 5] = [0.9, 0.99, 0.999, 0.9999, 1.0];
const FALLBACK_RHO2: f64 = 0.99;

/// One rho quadruple per cell, indexed by cell id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoParams {
    pub cells: Vec<Rho>,
    /// Cells that had no usable autocorrelation and received the default.
    pub degenerate: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RhoRow {
    cell_id: usize,
    rho1: f64,
    rho2: f64,
    rho3: f64,
    rho4: f64,
}

impl RhoParams {
    pub fn uniform(rho: Rho, cells: usize) -> Self {
        Self { cells: vec![rho; cells], degenerate: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        self.cells.iter().try_for_each(Rho::validate)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (cell_id, r) in self.cells.iter().enumerate() {
            w.serialize(RhoRow { cell_id, rho1: r.rho1, rho2: r.rho2, rho3: r.rho3, rho4: r.rho4 })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rows: Vec<RhoRow> = csv::Reader::from_reader(input).deserialize().collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.cell_id);
        if rows.iter().enumerate().any(|(i, r)| r.cell_id != i) {
            return Err(Error::InvalidParameter("cell ids must be 0..C without gaps".into()));
        }
        let params = Self {
            cells: rows.iter().map(|r| Rho::new(r.rho1, r.rho2, r.rho3, r.rho4)).collect(),
            degenerate: Vec::new(),
        };
        params.validate()?;
        Ok(params)
    }
}

/// Positive part of an autocorrelation function, lags 1..=max_lag.
struct Target {
    lags: Vec<u64>,
    values: Vec<f64>,
}

impl Target {
    fn new(acf: &[f64], max_lag: usize) -> Self {
        let (lags, values) = (1..=max_lag.min(acf.len() - 1))
            .filter(|&l| acf[l] > 0.0)
            .map(|l| (l as u64, acf[l]))
            .unzip();
        Self { lags, values }
    }

    /// Sum of squared gaps between `w(lag) / w(0)` and the ACF.
    fn objective(&self, rho: &Rho) -> f64 {
        self.lags
            .iter()
            .zip(&self.values)
            .map(|(&l, &a)| (0.5 * weight_at(l, rho) - a).powi(2))
            .sum()
    }
}

/// Objective of `rho` against the positive part of `acf`.
pub fn rho_objective(acf: &[f64], max_lag: usize, rho: &Rho) -> f64 {
    Target::new(acf, max_lag).objective(rho)
}

fn unit_grid() -> Vec<f64> {
    (0..=UNIT_GRID_STEPS).map(|i| i as f64 / UNIT_GRID_STEPS as f64).collect()
}

/// Exhaustive search over the coarse grid. Power tables are built once so
/// each candidate costs one pass over the lags.
fn grid_search(target: &Target) -> (Rho, f64) {
    let grid = unit_grid();
    let lags = &target.lags;
    let table = |base: f64, exps: &dyn Fn(u64) -> f64| -> Vec<f64> { lags.iter().map(|&l| base.powf(exps(l))).collect() };
    let decay: Vec<Vec<f64>> = grid.iter().map(|&g| table(g, &|l| l as f64)).collect();
    let long: Vec<Vec<f64>> = RHO2_GRID.iter().map(|&g| table(g, &|l| l as f64)).collect();
    let daily: Vec<Vec<f64>> = grid.iter().map(|&g| table(g, &|l| seasonal_exponent(l, DAILY_PERIOD))).collect();
    let weekly: Vec<Vec<f64>> = grid.iter().map(|&g| table(g, &|l| seasonal_exponent(l, WEEKLY_PERIOD))).collect();

    let mut best = (Rho::new(0.0, RHO2_GRID[0], 0.0, 0.0), f64::INFINITY);
    let mut seasonal = vec![0.0; lags.len()];
    for (k2, l2) in long.iter().enumerate() {
        for (k3, d3) in daily.iter().enumerate() {
            for (k4, w4) in weekly.iter().enumerate() {
                for (i, s) in seasonal.iter_mut().enumerate() {
                    *s = l2[i] * d3[i] * w4[i];
                }
                for (k1, d1) in decay.iter().enumerate() {
                    let mut obj = 0.0;
                    for i in 0..lags.len() {
                        let gap = 0.5 * (d1[i] + seasonal[i]) - target.values[i];
                        obj += gap * gap;
                    }
                    if obj < best.1 {
                        best = (Rho::new(grid[k1], RHO2_GRID[k2], grid[k3], grid[k4]), obj);
                    }
                }
            }
        }
    }
    best
}

fn clamp_unit(x: [f64; 4]) -> [f64; 4] {
    x.map(|v| v.clamp(0.0, 1.0))
}

/// Nelder–Mead simplex search. Returns the best vertex and its value.
pub(crate) fn nelder_mead<const N: usize>(
    f: impl Fn(&[f64; N]) -> f64,
    start: [f64; N],
    step: [f64; N],
    max_iter: usize,
    tol: f64,
) -> ([f64; N], f64) {
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, f(&start)));
    for i in 0..N {
        let mut v = start;
        v[i] += step[i];
        simplex.push((v, f(&v)));
    }
    let combine = |a: &[f64; N], b: &[f64; N], t: f64| -> [f64; N] {
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = a[i] + t * (b[i] - a[i]);
        }
        out
    };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[N].1 - simplex[0].1 <= tol {
            break;
        }
        let mut centroid = [0.0; N];
        for (v, _) in &simplex[..N] {
            for i in 0..N {
                centroid[i] += v[i] / N as f64;
            }
        }
        let worst = simplex[N];
        let reflected = combine(&centroid, &worst.0, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst.0, -2.0);
            let fe = f(&expanded);
            simplex[N] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let (towards, fbase) = if fr < worst.1 { (reflected, fr) } else { (worst.0, worst.1) };
            let contracted = combine(&centroid, &towards, 0.5);
            let fc = f(&contracted);
            if fc < fbase {
                simplex[N] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    v.0 = combine(&best, &v.0, 0.5);
                    v.1 = f(&v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Grid search followed by box-projected Nelder–Mead; the refinement is
/// kept only when it does not lose to the best grid point.
fn fit_cell(target: &Target) -> Rho {
    if target.lags.is_empty() {
        return Rho::new(0.0, FALLBACK_RHO2, 1.0, 1.0);
    }
    let (grid_best, grid_obj) = grid_search(target);
    let start = grid_best.as_array();
    let base = [0.05, 0.005, 0.05, 0.05];
    let step: [f64; 4] = std::array::from_fn(|i| if start[i] + base[i] > 1.0 { -base[i] } else { base[i] });
    let (x, _) = nelder_mead(|x| target.objective(&Rho::from_array(clamp_unit(*x))), start, step, 400, 1e-14);
    let refined = Rho::from_array(clamp_unit(x));
    if target.objective(&refined) <= grid_obj {
        refined
    } else {
        grid_best
    }
}

/// Fits one rho quadruple per cell. `None` marks a degenerate cell, which
/// receives `(0, median rho2, 1, 1)` with the median over fitted cells.
pub fn fit_rhos(acfs: &[Option<Vec<f64>>], max_lag: usize) -> Result<RhoParams> {
    if max_lag == 0 {
        return Err(Error::InvalidParameter("max_lag must be at least 1".into()));
    }
    if max_lag < 2 * WEEKLY_PERIOD as usize {
        log::warn!("max_lag {max_lag} is shorter than two weeks; seasonal terms are poorly identified");
    }
    let mut fitted: Vec<Option<Rho>> = Vec::with_capacity(acfs.len());
    for a in acfs {
        fitted.push(match a {
            Some(a) if a.len() > 1 => Some(fit_cell(&Target::new(a, max_lag))),
            _ => None,
        });
    }
    let mut rho2: Vec<f64> = fitted.iter().flatten().map(|r| r.rho2).collect();
    rho2.sort_by(f64::total_cmp);
    let median = match rho2.len() {
        0 => FALLBACK_RHO2,
        n if n % 2 == 1 => rho2[n / 2],
        n => 0.5 * (rho2[n / 2 - 1] + rho2[n / 2]),
    };
    let degenerate = fitted.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(i, _)| i).collect();
    let cells = fitted.into_iter().map(|r| r.unwrap_or(Rho::new(0.0, median, 1.0, 1.0))).collect();
    Ok(RhoParams { cells, degenerate })
}
