//! Gaussian mixture EM with spherical unit-covariance components and a
//! uniform 1/M prior, plus the hard-EM (K-means) limit.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngStream;
use crate::tape::log_sum_exp;

/// Posterior responsibilities α_k^n ∝ exp(−‖xⁿ−μ_k‖² / (2β)), one
/// row-stochastic row per data point. β = 1 is the exact posterior;
/// β = 0 returns the one-hot nearest-mean assignment (ties to the
/// lowest index).
pub fn gmm_e_step(x: &[Vec<f64>], means: &[Vec<f64>], beta: f64) -> Result<Vec<Vec<f64>>> {
    if means.is_empty() {
        return Err(Error::InvalidArg("gmm_e_step: no components".into()));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidArg(format!("gmm_e_step: beta {beta}")));
    }
    let m = means.len();
    let mut out = Vec::with_capacity(x.len());
    for point in x {
        let d2: Vec<f64> = means.iter().map(|mu| linalg::dist_sq(point, mu)).collect();
        if beta == 0.0 {
            let mut best = 0;
            for k in 1..m {
                if d2[k] < d2[best] {
                    best = k;
                }
            }
            let mut row = vec![0.0; m];
            row[best] = 1.0;
            out.push(row);
        } else {
            let logits: Vec<f64> = d2.iter().map(|v| -v / (2.0 * beta)).collect();
            let lse = log_sum_exp(&logits);
            out.push(logits.iter().map(|v| (v - lse).exp()).collect());
        }
    }
    Ok(out)
}

/// Responsibility-weighted means. A component with no responsibility mass
/// is re-seeded at a random data point.
pub fn gmm_m_step(x: &[Vec<f64>], resp: &[Vec<f64>], rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    if x.is_empty() || resp.len() != x.len() {
        return Err(Error::shape("gmm_m_step", "data/responsibility mismatch"));
    }
    let m = resp[0].len();
    let d = x[0].len();
    let mut means = vec![vec![0.0; d]; m];
    for k in 0..m {
        let total: f64 = resp.iter().map(|r| r[k]).sum();
        if total < 1e-12 {
            means[k] = x[rng.below(x.len())].clone();
            continue;
        }
        for (point, r) in x.iter().zip(resp) {
            for j in 0..d {
                means[k][j] += r[k] / total * point[j];
            }
        }
    }
    Ok(means)
}

/// Variational objective: per-example expected log-likelihood under the
/// responsibilities plus prior and entropy terms, summed over the data.
/// At the exact-posterior responsibilities this equals Σ_n log p(xⁿ).
pub fn gmm_elbo(x: &[Vec<f64>], means: &[Vec<f64>], resp: &[Vec<f64>]) -> Result<f64> {
    if resp.len() != x.len() {
        return Err(Error::shape("gmm_elbo", "data/responsibility mismatch"));
    }
    let m = means.len() as f64;
    let d = x[0].len() as f64;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut j = 0.0;
    for (point, r) in x.iter().zip(resp) {
        let total: f64 = r.iter().sum();
        if (total - 1.0).abs() > 1e-10 || r.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArg(format!("gmm_elbo: responsibility row sums to {total}")));
        }
        for (k, mu) in means.iter().enumerate() {
            j += r[k] * (-0.5 * linalg::dist_sq(point, mu) - 0.5 * d * ln_2pi);
            if r[k] > 0.0 {
                j -= r[k] * r[k].ln();
            }
        }
        j -= m.ln();
    }
    Ok(j)
}

/// Exact log p(x) of the spherical mixture, for oracle checks.
pub fn gmm_log_density(point: &[f64], means: &[Vec<f64>]) -> f64 {
    let d = point.len() as f64;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let terms: Vec<f64> = means
        .iter()
        .map(|mu| -0.5 * linalg::dist_sq(point, mu) - 0.5 * d * ln_2pi - (means.len() as f64).ln())
        .collect();
    log_sum_exp(&terms)
}

#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub means: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub wcss: f64,
    pub iterations: usize,
    /// Iterations in which an emptied cluster had to be re-seeded; the
    /// WCSS monotonicity guarantee restarts after each of these.
    pub reseeds: usize,
}

pub fn within_cluster_ss(x: &[Vec<f64>], means: &[Vec<f64>], assignments: &[usize]) -> f64 {
    x.iter()
        .zip(assignments)
        .map(|(p, &a)| linalg::dist_sq(p, &means[a]))
        .sum()
}

/// Hard-EM clustering: alternate nearest-mean assignment and per-cluster
/// means, starting from K distinct data points, until the assignments
/// stop changing or `max_iters` passes.
pub fn kmeans_fit(x: &[Vec<f64>], k: usize, rng: &mut RngStream, max_iters: usize) -> Result<KmeansFit> {
    if k == 0 || k > x.len() {
        return Err(Error::InvalidArg(format!("kmeans: k = {k}, n = {}", x.len())));
    }
    let mut means: Vec<Vec<f64>> = rng.distinct_indices(k, x.len()).into_iter().map(|i| x[i].clone()).collect();
    let mut assignments = vec![usize::MAX; x.len()];
    let mut iterations = 0;
    let mut reseeds = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let resp = gmm_e_step(x, &means, 0.0)?;
        let new_assignments: Vec<usize> = resp
            .iter()
            .map(|row| row.iter().position(|&v| v == 1.0).unwrap())
            .collect();
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; x[0].len()]; k];
        for (point, &a) in x.iter().zip(&new_assignments) {
            counts[a] += 1;
            for j in 0..point.len() {
                sums[a][j] += point[j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                means[c] = x[rng.below(x.len())].clone();
                reseeds += 1;
            } else {
                for j in 0..sums[c].len() {
                    means[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        let converged = new_assignments == assignments;
        assignments = new_assignments;
        if converged {
            break;
        }
    }
    let wcss = within_cluster_ss(x, &means, &assignments);
    Ok(KmeansFit {
        means,
        assignments,
        wcss,
        iterations,
        reseeds,
    })
}
