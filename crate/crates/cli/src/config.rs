use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Flat run configuration. Every key is optional; the JSON file supplies a
/// base and command-line flags override it key by key.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,

    /// Ground-truth sidecar that supplies the domain and time grid of an event CSV.
    pub truth: Option<PathBuf>,
    /// `[x_min, x_max, y_min, y_max]` in km, used when no truth sidecar exists.
    pub bbox: Option<[f64; 4]>,
    pub periods_per_day: Option<usize>,

    pub scenario: Option<String>,
    pub weeks: Option<usize>,

    pub method: Option<String>,
    pub models: Option<Vec<String>>,
    pub test_weeks: Option<usize>,

    pub m: Option<usize>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,

    pub max_lag: Option<usize>,
    pub history_weeks: Option<usize>,
    pub cells_x: Option<usize>,
    pub cells_y: Option<usize>,
    pub weight_floor: Option<f64>,

    pub bandwidth: Option<f64>,
    pub naive_weeks: Option<usize>,

    pub cloud_size: Option<usize>,
    pub weeks_back: Option<usize>,
    pub k_neighbors: Option<usize>,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub h_grid: Option<Vec<f64>>,
    pub folds: Option<usize>,

    pub medic_weeks: Option<usize>,
    pub medic_years: Option<usize>,
    pub medic_epsilon: Option<f64>,

    pub start: Option<usize>,
    pub periods: Option<usize>,
    pub t: Option<usize>,
    pub grid_n: Option<usize>,
}

macro_rules! overlay_fields {
    ($dst:ident, $src:ident, $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", path.display())))
    }

    /// Replaces every key that `flags` sets.
    pub fn overlay(mut self, flags: RunConfig) -> Self {
        let dst = &mut self;
        let src = flags;
        overlay_fields!(
            dst, src, input, output, seed, truth, bbox, periods_per_day, scenario, weeks, method, models,
            test_weeks, m, iterations, burn_in, thin, max_lag, history_weeks, cells_x, cells_y, weight_floor,
            bandwidth, naive_weeks, cloud_size, weeks_back, k_neighbors, lambda, lambda_grid, h_grid, folds,
            medic_weeks, medic_years, medic_epsilon, start, periods, t, grid_n,
        );
        self
    }

    pub fn require_seed(&self) -> Result<u64, UsageError> {
        self.seed.ok_or_else(|| UsageError("--seed is required for this command".into()))
    }

    pub fn require_output(&self) -> Result<&Path, UsageError> {
        self.output.as_deref().ok_or_else(|| UsageError("--output is required".into()))
    }

    /// The input path, which must name an existing file.
    pub fn require_input(&self) -> Result<&Path, UsageError> {
        let path = self.input.as_deref().ok_or_else(|| UsageError("--input is required".into()))?;
        if !path.is_file() {
            return Err(UsageError(format!("input file not found: {}", path.display())));
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: RunConfig = serde_json::from_str(r#"{"seed": 1, "lambda": 0.5, "models": ["gmm"]}"#).unwrap();
        let flags = RunConfig { seed: Some(9), ..Default::default() };
        let merged = file.overlay(flags);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.lambda, Some(0.5));
        assert_eq!(merged.models.as_deref(), Some(&["gmm".to_string()][..]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"lamda": 1.0}"#).is_err());
    }
}
