//! Closed-form divergence and entropy helpers.

use crate::error::{Error, Result};

/// KL(N(μ, diag σ²) ‖ N(0, σ_p² I)), elementwise closed form.
pub fn kl_gaussian_diag(mean: &[f64], var: &[f64], prior_var: f64) -> Result<f64> {
    if mean.len() != var.len() {
        return Err(Error::shape("kl_gaussian_diag", "mean/var length mismatch"));
    }
    if prior_var <= 0.0 || var.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidArg("kl_gaussian_diag: variances must be positive".into()));
    }
    let mut kl = 0.0;
    for (m, v) in mean.iter().zip(var) {
        kl += 0.5 * (v / prior_var + m * m / prior_var - 1.0 - (v / prior_var).ln());
    }
    Ok(kl)
}

/// Shannon entropy of a categorical distribution with the 0·log 0 = 0
/// convention; a one-hot distribution has entropy exactly 0.
pub fn entropy_categorical(p: &[f64]) -> Result<f64> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&v| v < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArg(format!("entropy: not a distribution (sum {total})")));
    }
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn kl_of_prior_is_zero_and_nonnegative() {
        assert_eq!(kl_gaussian_diag(&[0.0, 0.0], &[2.0, 2.0], 2.0).unwrap(), 0.0);
        let mut rng = RngStream::new(1);
        for _ in 0..50 {
            let mean: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let var: Vec<f64> = (0..3).map(|_| 0.1 + rng.uniform() * 3.0).collect();
            assert!(kl_gaussian_diag(&mean, &var, 1.5).unwrap() >= 0.0);
        }
    }

    #[test]
    fn entropy_uniform_and_one_hot() {
        let c = 7;
        let p = vec![1.0 / c as f64; c];
        assert!((entropy_categorical(&p).unwrap() - (c as f64).ln()).abs() < 1e-12);
        assert_eq!(entropy_categorical(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q - log p] estimated from 1e5 draws, checked to 3 SE.
        let mut rng = RngStream::new(2);
        let mean = [0.4, -0.9];
        let var = [0.8, 1.7];
        let prior_var = 1.3;
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let mut term = 0.0;
            for d in 0..2 {
                let z = mean[d] + var[d].sqrt() * rng.normal();
                let log_q = -0.5 * ((z - mean[d]).powi(2) / var[d] + var[d].ln() + (2.0 * std::f64::consts::PI).ln());
                let log_p = -0.5 * (z * z / prior_var + prior_var.ln() + (2.0 * std::f64::consts::PI).ln());
                term += log_q - log_p;
            }
            sum += term;
            sum_sq += term * term;
        }
        let mc = sum / n as f64;
        let se = ((sum_sq / n as f64 - mc * mc) / n as f64).sqrt();
        let exact = kl_gaussian_diag(&mean, &var, prior_var).unwrap();
        assert!((mc - exact).abs() < 3.0 * se, "mc {mc}, exact {exact}, se {se}");
    }
}
