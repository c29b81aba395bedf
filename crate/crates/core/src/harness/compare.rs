//! Trace distances and decoherence horizons.

use crate::error::{dim_err, Error, Result};
use crate::linalg::CMat;

/// ½ Σ σ_k(ρ − σ).
pub fn trace_distance(a: &CMat, b: &CMat) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return dim_err("matrices differ in shape");
    }
    let diff = a - b;
    let sv = diff
        .as_ref()
        .singular_values()
        .map_err(|e| Error::Numerical(format!("singular values failed: {e:?}")))?;
    Ok(0.5 * sv.iter().sum::<f64>())
}

/// Trace distance at every point of a shared time grid.
pub fn compare_trajectories(t_a: &[f64], a: &[CMat], t_b: &[f64], b: &[CMat]) -> Result<Vec<f64>> {
    if t_a.len() != t_b.len() || a.len() != t_a.len() || b.len() != t_b.len() {
        return dim_err("trajectories have different lengths");
    }
    if t_a.iter().zip(t_b).any(|(x, y)| (x - y).abs() > 1e-12 * x.abs().max(1.0)) {
        return Err(Error::Validation("trajectories use different time grids".into()));
    }
    a.iter().zip(b).map(|(x, y)| trace_distance(x, y)).collect()
}

/// First time at which |ρ_ab| has fallen to |ρ_ab(0)|/e, if it does.
pub fn decay_horizon(times: &[f64], rho: &[CMat], a: usize, b: usize) -> Option<f64> {
    let m0 = rho.first()?[(a, b)].norm();
    let target = m0 / std::f64::consts::E;
    times.iter().zip(rho).find(|(_, r)| r[(a, b)].norm() <= target).map(|(t, _)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, diag_matrix};

    fn pure(v: [c64; 2]) -> CMat {
        CMat::from_fn(2, 2, |a, b| v[a] * v[b].conj())
    }

    #[test]
    fn trace_distance_cases() {
        let a = diag_matrix(&[1.0, 0.0]);
        assert_eq!(trace_distance(&a, &a).unwrap(), 0.0);
        assert!((trace_distance(&a, &diag_matrix(&[0.9, 0.1])).unwrap() - 0.1).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let p = pure([c64::new(s, 0.0), c64::new(s, 0.0)]);
        let q = pure([c64::new(s, 0.0), c64::new(-s, 0.0)]);
        assert!((trace_distance(&p, &q).unwrap() - 1.0).abs() < 1e-14);
        assert!(trace_distance(&a, &CMat::zeros(3, 3)).is_err());
    }

    #[test]
    fn grids_must_match() {
        let r = vec![diag_matrix(&[1.0, 0.0]); 2];
        assert!(compare_trajectories(&[0.0, 1.0], &r, &[0.0, 1.5], &r).is_err());
        assert_eq!(compare_trajectories(&[0.0, 1.0], &r, &[0.0, 1.0], &r).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn horizon_of_exponential() {
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let rho: Vec<CMat> = times
            .iter()
            .map(|t| CMat::from_fn(2, 2, |a, b| if a == b { c64::new(0.5, 0.0) } else { c64::new(0.5 * (-t).exp(), 0.0) }))
            .collect();
        assert!((decay_horizon(&times, &rho, 0, 1).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(decay_horizon(&times[..5], &rho[..5], 0, 1), None);
    }
}
