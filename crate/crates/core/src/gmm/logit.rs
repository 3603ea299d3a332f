//! Multinomial logit map between the open simplex and R^(m-1), with the
//! last component as reference.

use crate::error::{Error, Result};

/// Weights below this are raised to it before transforming.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// `q_r = ln(p_r / p_m)` for `r < m`.
pub fn logit_transform(p: &[f64]) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::InvalidParameter("empty weight vector".into()));
    }
    if let Some(i) = p.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::SimplexBoundary(i));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("weights sum to {sum}, not 1")));
    }
    let last = p[p.len() - 1].ln();
    Ok(p[..p.len() - 1].iter().map(|v| v.ln() - last).collect())
}

/// Clamps weights to at least [`WEIGHT_FLOOR`], renormalises, then transforms.
pub fn logit_transform_clamped(p: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|v| v.max(WEIGHT_FLOOR)).collect();
    let z: f64 = clamped.iter().sum();
    let normed: Vec<f64> = clamped.iter().map(|v| v / z).collect();
    let last = normed[normed.len() - 1].ln();
    normed[..normed.len() - 1].iter().map(|v| v.ln() - last).collect()
}

/// Inverse map: softmax of `(q_1, ..., q_{m-1}, 0)`.
pub fn inverse_logit(q: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(q.len() + 1);
    inverse_logit_into(q, &mut out);
    out
}

pub(crate) fn inverse_logit_into(q: &[f64], out: &mut Vec<f64>) {
    let max = q.iter().cloned().fold(0.0f64, f64::max);
    out.clear();
    out.extend(q.iter().map(|v| (v - max).exp()));
    out.push((-max).exp());
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_weights_map_to_zero() {
        assert_eq!(logit_transform(&[0.5, 0.5]).unwrap(), vec![0.0]);
        let third = 1.0 / 3.0;
        let q = logit_transform(&[third, third, 1.0 - 2.0 * third]).unwrap();
        assert!(q.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn boundary_weights_are_rejected() {
        assert!(matches!(logit_transform(&[1.0, 0.0]), Err(Error::SimplexBoundary(1))));
        assert!(logit_transform(&[0.7, 0.7]).is_err());
    }

    #[test]
    fn clamping_keeps_values_finite() {
        let q = logit_transform_clamped(&[1.0, 0.0]);
        assert!(q[0].is_finite() && q[0] > 15.0);
    }

    proptest! {
        #[test]
        fn round_trip_recovers_simplex_point(raw in prop::collection::vec(0.01f64..1.0, 2..8)) {
            let z: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let back = inverse_logit(&logit_transform(&p).unwrap());
            for (a, b) in p.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
