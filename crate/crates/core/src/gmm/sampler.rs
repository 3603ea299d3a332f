//! Metropolis-within-Gibbs sampler for the time-varying mixture.
//!
//! One sweep updates, in order: latent component allocations (Gibbs),
//! component means and covariances (Normal-Inverse-Wishart conjugate draws),
//! each transformed weight `q[r][b]` (random-walk Metropolis with the CAR
//! conditional as prior and the allocation counts as multinomial
//! likelihood), then per-series CAR mean (normal), variance (inverse gamma)
//! and persistence (random-walk Metropolis on `[0, PSI_MAX)`).

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use super::car::{normal_logpdf, CarParams, CarStructure, PSI_MAX};
use super::GmmPriors;
use crate::density::{Cov2, Gaussian2};
use crate::geom::Point;

pub(crate) struct Sampler {
    points: Vec<Point>,
    cycle_pos: Vec<usize>,
    m: usize,
    cycle: usize,
    day: usize,
    pub gaussians: Vec<Gaussian2>,
    /// q[r][b]
    pub q: Vec<Vec<f64>>,
    /// p[b][j]
    pub p: Vec<Vec<f64>>,
    log_p: Vec<Vec<f64>>,
    pub car: Vec<CarParams>,
    counts: Vec<Vec<u32>>,
    structure: CarStructure,
    priors: GmmPriors,
    mu0: Point,
    psi0: Cov2,
    q_step: f64,
    psi_step: f64,
    rng: ChaCha8Rng,
    pub q_moves: (u64, u64),
    pub psi_moves: (u64, u64),
}

#[derive(Default, Clone, Copy)]
struct Suff {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
}

pub(crate) struct SamplerInit {
    pub points: Vec<Point>,
    pub cycle_pos: Vec<usize>,
    pub cycle: usize,
    pub day: usize,
    pub means: Vec<Point>,
    pub cov: Cov2,
    pub priors: GmmPriors,
    pub q_step: f64,
    pub psi_step: f64,
    pub rng: ChaCha8Rng,
}

fn log_sum_exp_with_zero(q: &[f64]) -> f64 {
    let max = q.iter().cloned().fold(0.0f64, f64::max);
    let s: f64 = q.iter().map(|v| (v - max).exp()).sum::<f64>() + (-max).exp();
    max + s.ln()
}

impl Sampler {
    pub fn new(init: SamplerInit) -> Self {
        let m = init.means.len();
        let n = init.points.len();
        let mu0 = Point::new(
            init.points.iter().map(|p| p.x).sum::<f64>() / n as f64,
            init.points.iter().map(|p| p.y).sum::<f64>() / n as f64,
        );
        let cov = if init.cov.is_spd() { init.cov } else { Cov2::isotropic(1.0) };
        let gaussians = init
            .means
            .iter()
            .map(|&mu| Gaussian2::new(mu, cov).expect("SPD checked"))
            .collect();
        let uniform = vec![1.0 / m as f64; m];
        let mut s = Self {
            cycle_pos: init.cycle_pos,
            points: init.points,
            m,
            cycle: init.cycle,
            day: init.day,
            gaussians,
            q: vec![vec![0.0; init.cycle]; m - 1],
            p: vec![uniform.clone(); init.cycle],
            log_p: vec![uniform.iter().map(|v| v.ln()).collect(); init.cycle],
            car: vec![CarParams { a: 0.0, psi: 0.1, nu2: 1.0 }; m - 1],
            counts: vec![vec![0; m]; init.cycle],
            structure: CarStructure::new(init.cycle, init.day),
            psi0: Cov2::isotropic(init.priors.psi0_scale),
            priors: init.priors,
            mu0,
            q_step: init.q_step,
            psi_step: init.psi_step,
            rng: init.rng,
            q_moves: (0, 0),
            psi_moves: (0, 0),
        };
        for b in 0..s.cycle {
            s.refresh_row(b);
        }
        s
    }

    fn q_row(&self, b: usize) -> Vec<f64> {
        self.q.iter().map(|series| series[b]).collect()
    }

    fn refresh_row(&mut self, b: usize) {
        let row = self.q_row(b);
        let lse = log_sum_exp_with_zero(&row);
        for j in 0..self.m {
            let qj = if j + 1 < self.m { row[j] } else { 0.0 };
            self.log_p[b][j] = qj - lse;
            self.p[b][j] = self.log_p[b][j].exp();
        }
    }

    /// One full sweep. Returns the log posterior at the parameters the
    /// sweep started from.
    pub fn sweep(&mut self) -> f64 {
        let prior = self.log_prior();
        let (loglik, suff) = self.allocate();
        self.update_components(&suff);
        if self.m > 1 {
            self.update_weights();
            self.update_car();
        }
        loglik + prior
    }

    fn allocate(&mut self) -> (f64, Vec<Suff>) {
        let m = self.m;
        let mut suff = vec![Suff::default(); m];
        self.counts.iter_mut().for_each(|row| row.iter_mut().for_each(|c| *c = 0));
        let mut lp = vec![0.0; m];
        let mut loglik = 0.0;
        for i in 0..self.points.len() {
            let s = self.points[i];
            let b = self.cycle_pos[i];
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                lp[j] = self.log_p[b][j] + self.gaussians[j].log_pdf(s);
                max = max.max(lp[j]);
            }
            let mut total = 0.0;
            for v in lp.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            loglik += max + total.ln();
            let target = self.rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut z = m - 1;
            for (j, v) in lp.iter().enumerate() {
                acc += v;
                if target < acc {
                    z = j;
                    break;
                }
            }
            self.counts[b][z] += 1;
            let st = &mut suff[z];
            st.n += 1.0;
            st.sx += s.x;
            st.sy += s.y;
            st.sxx += s.x * s.x;
            st.sxy += s.x * s.y;
            st.syy += s.y * s.y;
        }
        (loglik, suff)
    }

    fn update_components(&mut self, suff: &[Suff]) {
        let (k0, nu0) = (self.priors.kappa0, self.priors.nu0);
        for (j, st) in suff.iter().enumerate() {
            let (mean, scatter) = if st.n > 0.0 {
                let mx = st.sx / st.n;
                let my = st.sy / st.n;
                (
                    Point::new(mx, my),
                    Cov2::new(st.sxx - st.n * mx * mx, st.sxy - st.n * mx * my, st.syy - st.n * my * my),
                )
            } else {
                (self.mu0, Cov2::new(0.0, 0.0, 0.0))
            };
            let kn = k0 + st.n;
            let mun = Point::new(
                (k0 * self.mu0.x + st.n * mean.x) / kn,
                (k0 * self.mu0.y + st.n * mean.y) / kn,
            );
            let shrink = k0 * st.n / kn;
            let dx = mean.x - self.mu0.x;
            let dy = mean.y - self.mu0.y;
            let psin = Cov2::new(
                self.psi0.xx + scatter.xx + shrink * dx * dx,
                self.psi0.xy + scatter.xy + shrink * dx * dy,
                self.psi0.yy + scatter.yy + shrink * dy * dy,
            );
            let sigma = sample_inverse_wishart(&mut self.rng, nu0 + st.n, psin);
            if !sigma.is_spd() {
                continue;
            }
            let scaled = Cov2::new(sigma.xx / kn, sigma.xy / kn, sigma.yy / kn);
            let mu = Gaussian2::new(mun, scaled).map(|g| g.sample(&mut self.rng));
            if let (Ok(mu), Ok(g)) = (mu, Gaussian2::new(mun, sigma)) {
                self.gaussians[j] = Gaussian2::new(mu, g.cov).unwrap_or(self.gaussians[j]);
            }
        }
    }

    fn weight_loglik(&self, b: usize, row: &[f64]) -> f64 {
        let counts = &self.counts[b];
        let total: u32 = counts.iter().sum();
        let lin: f64 = row.iter().zip(counts).map(|(q, &c)| q * c as f64).sum();
        lin - total as f64 * log_sum_exp_with_zero(row)
    }

    fn update_weights(&mut self) {
        for r in 0..self.m - 1 {
            let params = self.car[r];
            for b in 0..self.cycle {
                let cond_mean = super::car::car_conditional_mean(&self.q[r], b, &params, self.day);
                let mut row = self.q_row(b);
                let current = row[r];
                let z: f64 = self.rng.sample(StandardNormal);
                let proposal = current + self.q_step * z;
                let lp_cur = normal_logpdf(current, cond_mean, params.nu2) + self.weight_loglik(b, &row);
                row[r] = proposal;
                let lp_prop = normal_logpdf(proposal, cond_mean, params.nu2) + self.weight_loglik(b, &row);
                self.q_moves.1 += 1;
                if self.rng.random::<f64>().ln() < lp_prop - lp_cur {
                    self.q[r][b] = proposal;
                    self.refresh_row(b);
                    self.q_moves.0 += 1;
                }
            }
        }
    }

    fn update_car(&mut self) {
        let n = self.cycle as f64;
        for r in 0..self.m - 1 {
            let series = &self.q[r];
            let mut par = self.car[r];

            let sum: f64 = series.iter().sum();
            let prec = self.structure.ones_form(par.psi) / par.nu2 + 1.0 / self.priors.a_var;
            let mean = (1.0 - 4.0 * par.psi) * sum / par.nu2 / prec;
            let z: f64 = self.rng.sample(StandardNormal);
            par.a = mean + z / prec.sqrt();

            let quad = self.structure.quad_form(series, par.a, par.psi);
            let shape = self.priors.nu2_shape + 0.5 * n;
            let rate = self.priors.nu2_scale + 0.5 * quad;
            let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
            par.nu2 = 1.0 / g.sample(&mut self.rng);

            let z: f64 = self.rng.sample(StandardNormal);
            let proposal = par.psi + self.psi_step * z;
            self.psi_moves.1 += 1;
            if (0.0..PSI_MAX).contains(&proposal) {
                let target = |psi: f64| {
                    0.5 * self.structure.log_det(psi)
                        - 0.5 * self.structure.quad_form(series, par.a, psi) / par.nu2
                };
                if self.rng.random::<f64>().ln() < target(proposal) - target(par.psi) {
                    par.psi = proposal;
                    self.psi_moves.0 += 1;
                }
            }
            self.car[r] = par;
        }
    }

    fn log_prior(&self) -> f64 {
        let mut lp = 0.0;
        for g in &self.gaussians {
            let k0 = self.priors.kappa0;
            let scaled = Cov2::new(g.cov.xx / k0, g.cov.xy / k0, g.cov.yy / k0);
            if let Ok(prior_mean) = Gaussian2::new(self.mu0, scaled) {
                lp += prior_mean.log_pdf(g.mean);
            }
            lp += inverse_wishart_logpdf(g.cov, self.priors.nu0, self.psi0);
        }
        for (r, par) in self.car.iter().enumerate() {
            lp += self.structure.joint_logdensity(&self.q[r], par);
            lp += normal_logpdf(par.a, 0.0, self.priors.a_var);
            let (al, be) = (self.priors.nu2_shape, self.priors.nu2_scale);
            lp += al * be.ln() - libm::lgamma(al) - (al + 1.0) * par.nu2.ln() - be / par.nu2;
            lp -= PSI_MAX.ln();
        }
        lp
    }
}

/// Draws `Sigma ~ IW(dof, scale)` via a Bartlett draw of `Sigma^-1 ~ W(dof, scale^-1)`.
pub(crate) fn sample_inverse_wishart<R: Rng + ?Sized>(rng: &mut R, dof: f64, scale: Cov2) -> Cov2 {
    let (l11, l21, l22) = scale.inverse().cholesky();
    let c1 = ChiSquared::new(dof).expect("dof > 0").sample(rng).sqrt();
    let c2 = ChiSquared::new(dof - 1.0).expect("dof > 1").sample(rng).sqrt();
    let n21: f64 = rng.sample(StandardNormal);
    // B = L A with A = [[c1, 0], [n21, c2]]
    let b11 = l11 * c1;
    let b21 = l21 * c1 + l22 * n21;
    let b22 = l22 * c2;
    let w = Cov2::new(b11 * b11, b11 * b21, b21 * b21 + b22 * b22);
    w.inverse()
}

fn inverse_wishart_logpdf(sigma: Cov2, dof: f64, scale: Cov2) -> f64 {
    let p = 2.0;
    let inv = sigma.inverse();
    let trace = scale.xx * inv.xx + 2.0 * scale.xy * inv.xy + scale.yy * inv.yy;
    let lmvgamma = 0.5 * PI.ln() + libm::lgamma(0.5 * dof) + libm::lgamma(0.5 * dof - 0.5);
    0.5 * dof * scale.det().ln() - 0.5 * dof * p * 2f64.ln() - lmvgamma
        - 0.5 * (dof + p + 1.0) * sigma.det().ln()
        - 0.5 * trace
}
