//! Predictive spatial densities for sparse spatio-temporal event streams.
//!
//! The intensity of events in hourly period `t` is modelled as
//! `gamma_t(s) = delta_t * f_t(s)`; this crate estimates the spatial density
//! `f_t` with three estimators (a time-varying Gaussian mixture with CAR
//! smoothing of its weights, a spatio-temporally weighted KDE, and a kernel
//! warped along a point-cloud graph Laplacian), two baselines, a ground-truth
//! simulator and an evaluation harness.

pub mod baselines;
pub mod density;
pub mod error;
pub mod eval;
pub mod events;
pub mod geom;
pub mod gmm;
pub mod kde;
pub mod mixture;
pub mod rng;
pub mod simulate;
pub mod stkde;
pub mod warp;

pub use density::{bivariate_gaussian, rasterize, Cov2, DensityGrid, DensityModel, Gaussian2};
pub use error::{Error, Result};
pub use events::{Clock, Event, EventLog, TimeGrid};
pub use geom::{BBox, CellGrid, Point, Polygon, SpatialDomain};
