use nalgebra::{DMatrix, DVector, LU};

use super::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::kde::gaussian_kernel;

/// Pivots this small relative to the largest make the system singular.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Factorised deformation operator for one cloud, strength and bandwidth.
///
/// The correction term `k_x' (I + lambda L K)^-1 lambda L k_s` is evaluated
/// as `c_x . k_s` with `c_x = lambda L (I + lambda K L)^-1 k_x`, so a single
/// LU factorisation of `I + lambda K L` serves every pair.
#[derive(Debug)]
pub struct WarpSystem {
    cloud: PointCloud,
    lambda: f64,
    h: f64,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl WarpSystem {
    pub fn new(cloud: PointCloud, lambda: f64, h: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {lambda}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
        }
        let n = cloud.len();
        let k = cloud.gram(h);
        // M' = I + lambda K L; column j of K L is deg_j K e_j - sum over neighbours of K e_m
        let mut m = DMatrix::<f64>::identity(n, n);
        if lambda > 0.0 {
            for j in 0..n {
                let deg = cloud.degree(j) as f64;
                let mut col = k.column(j) * deg;
                for &nb in cloud.neighbors(j) {
                    col -= k.column(nb);
                }
                let mut target = m.column_mut(j);
                target.axpy(lambda, &col, 1.0);
            }
        }
        let lu = m.lu();
        let u = lu.u();
        let diag = u.diagonal();
        let max = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = diag.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !(min > PIVOT_TOLERANCE * max) || !min.is_finite() {
            return Err(Error::Singular { lambda });
        }
        Ok(Self { cloud, lambda, h, lu })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn base_kernel(&self, x: Point, s: Point) -> f64 {
        gaussian_kernel(x, s, self.h)
    }

    /// `k_x`: base kernel between `x` and every cloud point.
    pub fn kernel_vector(&self, x: Point) -> DVector<f64> {
        DVector::from_iterator(self.cloud.len(), self.cloud.points().iter().map(|&z| gaussian_kernel(x, z, self.h)))
    }

    /// `lambda L (I + lambda K L)^-1 g`: cloud weights whose kernel sum is
    /// the correction subtracted from `g`'s owner.
    pub fn correction_weights(&self, g: &DVector<f64>) -> DVector<f64> {
        if self.lambda == 0.0 {
            return DVector::zeros(self.cloud.len());
        }
        let y = self.lu.solve(g).expect("factorisation checked at construction");
        let ly = self.cloud.laplacian_apply(y.as_slice());
        DVector::from_iterator(ly.len(), ly.into_iter().map(|v| self.lambda * v))
    }

    /// Deformed kernel `k(x, s) - k_x' (I + lambda L K)^-1 lambda L k_s`.
    pub fn warped_kernel(&self, x: Point, s: Point) -> f64 {
        let c = self.correction_weights(&self.kernel_vector(x));
        self.base_kernel(x, s) - c.dot(&self.kernel_vector(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
        (0..n).map(|_| Point::new(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0))).collect()
    }

    fn system(n: usize, lambda: f64, seed: u64) -> (WarpSystem, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = PointCloud::new(random_points(n, &mut rng), 5).unwrap();
        (WarpSystem::new(cloud, lambda, 0.8).unwrap(), rng)
    }

    /// Direct evaluation with dense `L`, `K` and an explicit inverse.
    fn dense_warped(sys: &WarpSystem, x: Point, s: Point) -> f64 {
        let n = sys.cloud().len();
        let l = sys.cloud().laplacian();
        let k = sys.cloud().gram(sys.bandwidth());
        let m = DMatrix::identity(n, n) + &l * &k * sys.lambda();
        let inv = m.try_inverse().unwrap();
        let kx = sys.kernel_vector(x);
        let ks = sys.kernel_vector(s);
        sys.base_kernel(x, s) - (kx.transpose() * inv * (&l * ks) * sys.lambda())[(0, 0)]
    }

    #[test]
    fn zero_lambda_leaves_kernel_unchanged() {
        let (sys, mut rng) = system(30, 0.0, 1);
        for _ in 0..20 {
            let p = random_points(2, &mut rng);
            assert_eq!(sys.warped_kernel(p[0], p[1]), sys.base_kernel(p[0], p[1]));
        }
    }

    #[test]
    fn single_point_cloud_has_no_correction() {
        let cloud = PointCloud::new(vec![Point::new(1.0, 1.0)], 5).unwrap();
        let sys = WarpSystem::new(cloud, 3.0, 1.0).unwrap();
        let (x, s) = (Point::new(0.0, 0.5), Point::new(1.5, 1.0));
        assert_eq!(sys.warped_kernel(x, s), sys.base_kernel(x, s));
    }

    #[test]
    fn matches_dense_formula_and_is_symmetric() {
        let (sys, mut rng) = system(50, 1.0, 2);
        for _ in 0..100 {
            let p = random_points(2, &mut rng);
            let a = sys.warped_kernel(p[0], p[1]);
            let b = sys.warped_kernel(p[1], p[0]);
            assert!((a - b).abs() < 1e-8);
            assert!((a - dense_warped(&sys, p[0], p[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn warped_gram_is_symmetric_psd() {
        let (sys, mut rng) = system(50, 1.0, 3);
        let pts = random_points(20, &mut rng);
        let g = DMatrix::from_fn(20, 20, |i, j| sys.warped_kernel(pts[i], pts[j]));
        assert!((&g - g.transpose()).abs().max() < 1e-8);
        let sym = (&g + g.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        assert!(eig.min() > -1e-8, "min eigenvalue {}", eig.min());
    }

    #[test]
    fn deviation_vanishes_monotonically_with_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = PointCloud::new(random_points(50, &mut rng), 5).unwrap();
        let pairs: Vec<Vec<Point>> = (0..30).map(|_| random_points(2, &mut rng)).collect();
        let mut last = f64::INFINITY;
        for lambda in [1.0, 0.1, 0.01, 0.001] {
            let sys = WarpSystem::new(cloud.clone(), lambda, 0.8).unwrap();
            let dev = pairs
                .iter()
                .map(|p| (sys.warped_kernel(p[0], p[1]) - sys.base_kernel(p[0], p[1])).abs())
                .fold(0.0, f64::max);
            assert!(dev < last, "deviation {dev} at lambda {lambda} did not shrink");
            last = dev;
        }
    }

    #[test]
    fn laplacian_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = PointCloud::new(random_points(200, &mut rng), 5).unwrap();
        let l = cloud.laplacian();
        for _ in 0..100 {
            let v = DVector::from_fn(200, |_, _| rng.random_range(-1.0..1.0));
            assert!(v.dot(&(&l * &v)) >= -1e-10);
        }
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let cloud = PointCloud::new(vec![Point::new(1.0, 1.0)], 5).unwrap();
        assert!(WarpSystem::new(cloud, -1.0, 1.0).is_err());
    }
}
