//! Planar geometry: coordinates in km, the admissible spatial domain, and
//! the two regular tilings used throughout (quadrature lattices and coarse
//! cell grids).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Axis-aligned rectangle, closed on all sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let b = Self { x_min, x_max, y_min, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::InvalidDomain(format!(
                "bounding box {self:?} must have positive area"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// Simple polygon given by its vertices (implicitly closed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidDomain(
                "a mask polygon needs at least three vertices".into(),
            ));
        }
        Ok(Self { vertices })
    }

    /// Even-odd ray casting.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

/// The admissible region: a bounding box, optionally narrowed by a polygon mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialDomain {
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Polygon>,
}

impl SpatialDomain {
    pub fn new(bbox: BBox, mask: Option<Polygon>) -> Result<Self> {
        bbox.validate()?;
        if let Some(poly) = &mask {
            if poly.vertices.len() < 3 {
                return Err(Error::InvalidDomain("mask needs at least three vertices".into()));
            }
            if let Some(v) = poly.vertices.iter().find(|v| !bbox.contains(**v)) {
                return Err(Error::InvalidDomain(format!(
                    "mask vertex ({}, {}) lies outside the bounding box",
                    v.x, v.y
                )));
            }
        }
        Ok(Self { bbox, mask })
    }

    pub fn rect(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        Self::new(BBox::new(x_min, x_max, y_min, y_max)?, None)
    }

    pub fn contains(&self, p: Point) -> bool {
        self.bbox.contains(p) && self.mask.as_ref().is_none_or(|m| m.contains(p))
    }

    pub fn is_masked(&self) -> bool {
        self.mask.is_some()
    }
}

/// Midpoint quadrature lattice over the bounding box. Site `(ix, iy)` is
/// stored at `iy * nx + ix`; sites outside the domain are flagged.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub cell_area: f64,
    inside: Vec<bool>,
}

impl Lattice {
    pub fn new(domain: &SpatialDomain, nx: usize, ny: usize) -> Self {
        let b = domain.bbox;
        let dx = b.width() / nx as f64;
        let dy = b.height() / ny as f64;
        let xs: Vec<f64> = (0..nx).map(|i| b.x_min + (i as f64 + 0.5) * dx).collect();
        let ys: Vec<f64> = (0..ny).map(|j| b.y_min + (j as f64 + 0.5) * dy).collect();
        let mut inside = Vec::with_capacity(nx * ny);
        for &y in &ys {
            for &x in &xs {
                inside.push(domain.contains(Point::new(x, y)));
            }
        }
        Self { nx, ny, xs, ys, cell_area: dx * dy, inside }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, idx: usize) -> Point {
        Point::new(self.xs[idx % self.nx], self.ys[idx / self.nx])
    }

    pub fn inside(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn inside_mask(&self) -> &[bool] {
        &self.inside
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Sum of `values * cell_area` over in-domain sites.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.inside)
            .filter(|(_, &ins)| ins)
            .map(|(v, _)| v)
            .sum::<f64>()
            * self.cell_area
    }
}

/// Coarse rectangular tiling of a bounding box into `nx * ny` equal cells.
/// Cell `(ix, iy)` has id `iy * nx + ix`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub bbox: BBox,
    pub nx: usize,
    pub ny: usize,
}

impl CellGrid {
    pub fn new(bbox: BBox, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidParameter("cell grid needs nx, ny >= 1".into()));
        }
        Ok(Self { bbox, nx, ny })
    }

    /// Tiling into cells of (approximately) 1 km x 1 km: each axis is split
    /// into `round(extent)` equal pieces.
    pub fn unit_km(bbox: BBox) -> Self {
        let nx = (bbox.width().round() as usize).max(1);
        let ny = (bbox.height().round() as usize).max(1);
        Self { bbox, nx, ny }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_width(&self) -> f64 {
        self.bbox.width() / self.nx as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.bbox.height() / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_height()
    }

    /// Column and row of the cell containing `p`; points on the far edges
    /// (or slightly outside) are clamped into the boundary cells.
    pub fn cell_xy(&self, p: Point) -> (usize, usize) {
        let fx = ((p.x - self.bbox.x_min) / self.cell_width()).floor();
        let fy = ((p.y - self.bbox.y_min) / self.cell_height()).floor();
        let ix = (fx.max(0.0) as usize).min(self.nx - 1);
        let iy = (fy.max(0.0) as usize).min(self.ny - 1);
        (ix, iy)
    }

    pub fn cell_of(&self, p: Point) -> usize {
        let (ix, iy) = self.cell_xy(p);
        iy * self.nx + ix
    }

    pub fn cell_bbox(&self, id: usize) -> BBox {
        let (ix, iy) = (id % self.nx, id / self.nx);
        let (w, h) = (self.cell_width(), self.cell_height());
        BBox {
            x_min: self.bbox.x_min + ix as f64 * w,
            x_max: self.bbox.x_min + (ix + 1) as f64 * w,
            y_min: self.bbox.y_min + iy as f64 * h,
            y_max: self.bbox.y_min + (iy + 1) as f64 * h,
        }
    }

    pub fn x_edges(&self) -> Vec<f64> {
        (0..=self.nx)
            .map(|i| self.bbox.x_min + i as f64 * self.cell_width())
            .collect()
    }

    pub fn y_edges(&self) -> Vec<f64> {
        (0..=self.ny)
            .map(|i| self.bbox.y_min + i as f64 * self.cell_height())
            .collect()
    }

    /// Fraction of each cell lying inside `domain`, from a `sub x sub`
    /// midpoint sample per cell (exactly 1 everywhere for unmasked domains).
    pub fn inside_fractions(&self, domain: &SpatialDomain, sub: usize) -> Vec<f64> {
        if !domain.is_masked() {
            return vec![1.0; self.len()];
        }
        (0..self.len())
            .map(|c| {
                let b = self.cell_bbox(c);
                let mut hits = 0usize;
                for j in 0..sub {
                    for i in 0..sub {
                        let p = Point::new(
                            b.x_min + (i as f64 + 0.5) * b.width() / sub as f64,
                            b.y_min + (j as f64 + 0.5) * b.height() / sub as f64,
                        );
                        if domain.contains(p) {
                            hits += 1;
                        }
                    }
                }
                hits as f64 / (sub * sub) as f64
            })
            .collect()
    }
}
