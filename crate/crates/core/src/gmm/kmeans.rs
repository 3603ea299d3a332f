use rand::Rng;

use crate::density::Cov2;
use crate::geom::Point;

/// Lloyd's algorithm with k-means++ seeding. Returns centres and labels.
pub fn kmeans<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R, max_iter: usize) -> (Vec<Point>, Vec<usize>) {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist2(centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc >= target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[next];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist2(c));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let best = nearest(&centers, *p);
            if best != *l {
                *l = best;
                changed = true;
            }
        }
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (l, p) in labels.iter().zip(points) {
            sums[*l].0 += p.x;
            sums[*l].1 += p.y;
            sums[*l].2 += 1;
        }
        for (c, (sx, sy, cnt)) in centers.iter_mut().zip(sums) {
            if cnt > 0 {
                *c = Point::new(sx / cnt as f64, sy / cnt as f64);
            }
        }
        if !changed {
            break;
        }
    }
    (centers, labels)
}

fn nearest(centers: &[Point], p: Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = p.dist2(*c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Within-cluster scatter pooled over all clusters.
pub fn pooled_covariance(points: &[Point], centers: &[Point], labels: &[usize]) -> Cov2 {
    let mut acc = Cov2::new(0.0, 0.0, 0.0);
    for (p, &l) in points.iter().zip(labels) {
        let dx = p.x - centers[l].x;
        let dy = p.y - centers[l].y;
        acc.xx += dx * dx;
        acc.xy += dx * dy;
        acc.yy += dy * dy;
    }
    let dof = (points.len().saturating_sub(centers.len())).max(1) as f64;
    Cov2::new(acc.xx / dof, acc.xy / dof, acc.yy / dof)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..50 {
            let o = (i % 7) as f64 * 0.1;
            pts.push(Point::new(o, o));
            pts.push(Point::new(10.0 + o, 10.0 - o));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (centers, labels) = kmeans(&pts, 2, &mut rng, 50);
        assert_ne!(labels[0], labels[1]);
        let near_origin = centers.iter().filter(|c| c.x < 1.0).count();
        assert_eq!(near_origin, 1);
        let cov = pooled_covariance(&pts, &centers, &labels);
        assert!(cov.xx < 0.1 && cov.yy < 0.1);
    }
}
