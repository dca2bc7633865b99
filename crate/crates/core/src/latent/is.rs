//! Importance-sampled estimates of the log-marginal likelihood
//! log p(x) = log ∫ p(x|z) p(z) dz, with Gaussian proposals.
//!
//! All weights are handled in log-space; the proposal equal to the prior
//! reduces the estimator to naive Monte Carlo, and the exact posterior
//! proposal has identically constant weights (zero variance).

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::rng::RngStream;
use crate::tape::log_sum_exp;

/// Full-covariance Gaussian usable both as sampler and density.
#[derive(Debug, Clone)]
pub struct GaussianProposal {
    pub mean: Vec<f64>,
    cov: Mat,
    sqrt_cov: Mat,
    log_det: f64,
}

impl GaussianProposal {
    pub fn new(mean: Vec<f64>, cov: Mat) -> Result<GaussianProposal> {
        if cov.len() != mean.len() {
            return Err(Error::shape("GaussianProposal", "mean/cov size mismatch"));
        }
        let sqrt_cov = linalg::spd_sqrt(&cov)?;
        let log_det = linalg::spd_log_det(&cov)?;
        Ok(GaussianProposal {
            mean,
            cov,
            sqrt_cov,
            log_det,
        })
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<GaussianProposal> {
        let d = mean.len();
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..d {
            cov[i][i] = var;
        }
        GaussianProposal::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.normal()).collect();
        let mut out = linalg::matvec(&self.sqrt_cov, &z);
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o += m;
        }
        out
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let centered = linalg::sub(x, &self.mean);
        let solved = linalg::solve(&self.cov, &centered)?;
        let quad = linalg::dot(&centered, &solved);
        Ok(-0.5 * (quad + self.log_det + self.dim() as f64 * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// log N(x; mean, I).
pub fn unit_gaussian_log_density(x: &[f64], mean: &[f64]) -> f64 {
    -0.5 * (linalg::dist_sq(x, mean) + x.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// log of (1/M) Σ_m p(x|z_m) p(z_m) / q(z_m) with z_m ~ q, where the
/// decoder gives the mean of p(x|z) = N(decoder(z), I) and the prior is
/// N(0, σ² I).
pub fn is_log_marginal<F>(
    x: &[f64],
    decoder: F,
    prior_sigma2: f64,
    proposal: &GaussianProposal,
    m: usize,
    rng: &mut RngStream,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if m == 0 {
        return Err(Error::InvalidArg("is_log_marginal: M >= 1 required".into()));
    }
    if prior_sigma2 <= 0.0 {
        return Err(Error::InvalidArg(format!("prior variance {prior_sigma2}")));
    }
    let k = proposal.dim() as f64;
    let mut log_weights = Vec::with_capacity(m);
    for _ in 0..m {
        let z = proposal.sample(rng);
        let mean = decoder(&z)?;
        if mean.len() != x.len() {
            return Err(Error::shape("is_log_marginal", "decoder output/x mismatch"));
        }
        let log_lik = unit_gaussian_log_density(x, &mean);
        let log_prior =
            -0.5 * (linalg::norm_sq(&z) / prior_sigma2 + k * prior_sigma2.ln() + k * (2.0 * std::f64::consts::PI).ln());
        let log_q = proposal.log_density(&z)?;
        log_weights.push(log_lik + log_prior - log_q);
    }
    Ok(log_sum_exp(&log_weights) - (m as f64).ln())
}
