//! Kernelized maximum mean discrepancy between two sample sets.

use crate::error::{Error, Result};
use crate::linalg;

/// exp(−‖a−b‖² / σ²).
pub fn gaussian_kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    (-linalg::dist_sq(a, b) / (sigma * sigma)).exp()
}

/// Median pairwise distance over the pooled samples; a serviceable
/// kernel bandwidth when none is specified.
pub fn median_heuristic_sigma(pooled: &[Vec<f64>]) -> f64 {
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(linalg::dist_sq(&pooled[i], &pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists[dists.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Unbiased three-term estimator: within-D and within-D' averages with
/// diagonals excluded, minus twice the cross average. May dip below zero
/// for matched sets.
pub fn mmd2(d: &[Vec<f64>], d_prime: &[Vec<f64>], kernel: impl Fn(&[f64], &[f64]) -> f64) -> Result<f64> {
    if d.len() < 2 || d_prime.len() < 2 {
        return Err(Error::InvalidArg(format!(
            "mmd2 needs >= 2 samples per set, got {} and {}",
            d.len(),
            d_prime.len()
        )));
    }
    let n = d.len() as f64;
    let m = d_prime.len() as f64;
    let mut within_d = 0.0;
    for i in 0..d.len() {
        for j in 0..d.len() {
            if i != j {
                within_d += kernel(&d[i], &d[j]);
            }
        }
    }
    within_d /= n * (n - 1.0);
    let mut within_dp = 0.0;
    for i in 0..d_prime.len() {
        for j in 0..d_prime.len() {
            if i != j {
                within_dp += kernel(&d_prime[i], &d_prime[j]);
            }
        }
    }
    within_dp /= m * (m - 1.0);
    let mut cross = 0.0;
    for x in d {
        for y in d_prime {
            cross += kernel(x, y);
        }
    }
    cross *= 2.0 / (n * m);
    Ok(within_d + within_dp - cross)
}
