use nalgebra::DMatrix;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::geom::Point;
use crate::kde::{gaussian_kernel, history_window};
use crate::rng;

/// Unlabelled historical locations joined by a symmetric k-nearest-neighbour graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    /// Sorted neighbour lists of the symmetrised graph.
    neighbors: Vec<Vec<usize>>,
}

/// Coordinates plus undirected edges `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudSpec {
    pub points: Vec<Point>,
    pub edges: Vec<(usize, usize)>,
}

impl PointCloud {
    /// Joins each point to its `k` nearest neighbours (Euclidean, ties by
    /// index) and keeps an edge if either endpoint chose it.
    pub fn new(points: Vec<Point>, k: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientData("point cloud needs at least one point".into()));
        }
        if k == 0 {
            return Err(Error::InvalidParameter("k_neighbors must be at least 1".into()));
        }
        let n = points.len();
        let k = k.min(n - 1);
        let mut neighbors = vec![Vec::new(); n];
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            cand.clear();
            cand.extend((0..n).filter(|&j| j != i).map(|j| (points[i].dist2(points[j]), j)));
            if k < cand.len() {
                cand.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            for &(_, j) in &cand[..k] {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { points, neighbors })
    }

    pub fn from_spec(spec: &CloudSpec) -> Result<Self> {
        let n = spec.points.len();
        if n == 0 {
            return Err(Error::InsufficientData("point cloud needs at least one point".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &spec.edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidParameter(format!("edge ({i}, {j}) is invalid for {n} points")));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { points: spec.points.clone(), neighbors })
    }

    pub fn to_spec(&self) -> CloudSpec {
        CloudSpec { points: self.points.clone(), edges: self.edges() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency();
        for i in 0..self.len() {
            l[(i, i)] = self.degree(i) as f64;
        }
        l
    }

    /// `L v` without forming `L`.
    pub fn laplacian_apply(&self, v: &[f64]) -> Vec<f64> {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(i, list)| list.len() as f64 * v[i] - list.iter().map(|&j| v[j]).sum::<f64>())
            .collect()
    }

    /// Gram matrix of the base kernel over the cloud.
    pub fn gram(&self, h: f64) -> DMatrix<f64> {
        let n = self.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = gaussian_kernel(self.points[i], self.points[i], h);
            for j in 0..i {
                let v = gaussian_kernel(self.points[i], self.points[j], h);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// Samples `n` events without replacement from the last `weeks_back` weeks
/// of `log` and links them into a `k_neighbors` graph.
pub fn build_cloud(log: &EventLog, n: usize, weeks_back: usize, k_neighbors: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidParameter("cloud size must be at least 1".into()));
    }
    let window = history_window(log, weeks_back);
    let events = log.window(window.clone());
    if events.len() < n {
        return Err(Error::InsufficientData(format!(
            "cloud of {n} points needs at least as many events in {window:?}, found {}",
            events.len()
        )));
    }
    let mut rng = rng::substream(seed, rng::CLOUD);
    let mut picks = index::sample(&mut rng, events.len(), n).into_vec();
    picks.sort_unstable();
    PointCloud::new(picks.iter().map(|&i| events[i].s).collect(), k_neighbors)
}
