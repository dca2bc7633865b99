//! Probabilistic PCA by exact coordinate-ascent EM.
//!
//! Model: z ~ N(0, σ² I), x | z ~ N(W z + b, I), with an approximate
//! posterior N(μ_n, I) per example. σ² = ∞ (improper flat prior) drops
//! the prior penalty and turns the E-step into the pseudoinverse; the
//! converged loading matrix then spans the principal subspace.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct PpcaModel {
    /// d×K loading matrix.
    pub w: Mat,
    pub b: Vec<f64>,
    /// Prior variance; `f64::INFINITY` selects the flat-prior mode.
    pub sigma2_prior: f64,
}

impl PpcaModel {
    pub fn latent_dim(&self) -> usize {
        self.w[0].len()
    }

    pub fn data_dim(&self) -> usize {
        self.w.len()
    }

    pub fn init(d: usize, k: usize, sigma2_prior: f64, rng: &mut RngStream) -> PpcaModel {
        let w = (0..d)
            .map(|_| (0..k).map(|_| rng.normal() / (d as f64).sqrt()).collect())
            .collect();
        PpcaModel {
            w,
            b: vec![0.0; d],
            sigma2_prior,
        }
    }
}

/// Posterior means μ_n = (WᵀW + σ⁻² I)⁻¹ Wᵀ (xⁿ − b); with σ² = ∞ the
/// normal matrix is WᵀW alone (the Moore-Penrose pseudoinverse route).
pub fn ppca_e_step(x: &[Vec<f64>], model: &PpcaModel) -> Result<Vec<Vec<f64>>> {
    let k = model.latent_dim();
    let wt = linalg::transpose(&model.w);
    let mut normal = linalg::matmul(&wt, &model.w);
    if model.sigma2_prior.is_finite() {
        for i in 0..k {
            normal[i][i] += 1.0 / model.sigma2_prior;
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for point in x {
        let centered = linalg::sub(point, &model.b);
        let rhs = linalg::matvec(&wt, &centered);
        out.push(linalg::solve(&normal, &rhs)?);
    }
    Ok(out)
}

/// Stationarity updates given posterior means: first the bias as the
/// average offset b = mean(xⁿ − W μ_n), then
/// W = (1/N Σ (xⁿ−b) μ_nᵀ) (I + 1/N Σ μ_n μ_nᵀ)⁻¹, with a 1e-10 ridge
/// retry if the second factor is singular.
pub fn ppca_m_step(x: &[Vec<f64>], mu: &[Vec<f64>], w_current: &Mat) -> Result<(Mat, Vec<f64>)> {
    if x.len() < 2 || mu.len() != x.len() {
        return Err(Error::InvalidArg("ppca_m_step: need N >= 2 paired points".into()));
    }
    let n = x.len() as f64;
    let d = x[0].len();
    let k = mu[0].len();

    let mut b = vec![0.0; d];
    for (point, m) in x.iter().zip(mu) {
        let wm = linalg::matvec(w_current, m);
        for j in 0..d {
            b[j] += (point[j] - wm[j]) / n;
        }
    }

    // Cross-moment (x−b)μᵀ and latent second moment I + μμᵀ averages.
    let mut cross = vec![vec![0.0; k]; d];
    let mut second = vec![vec![0.0; k]; k];
    for (point, m) in x.iter().zip(mu) {
        for i in 0..d {
            let xi = point[i] - b[i];
            for j in 0..k {
                cross[i][j] += xi * m[j] / n;
            }
        }
        for i in 0..k {
            for j in 0..k {
                second[i][j] += m[i] * m[j] / n;
            }
        }
    }
    for i in 0..k {
        second[i][i] += 1.0;
    }

    let solve_rows = |factor: &Mat| -> Result<Mat> {
        // W factor = cross  =>  factorᵀ Wᵀ = crossᵀ, row by row.
        let ft = linalg::transpose(factor);
        let mut w = vec![vec![0.0; k]; d];
        for i in 0..d {
            w[i] = linalg::solve(&ft, &cross[i])?;
        }
        Ok(w)
    };
    let w = match solve_rows(&second) {
        Ok(w) => w,
        Err(Error::Singular(_)) => {
            let mut ridged = second.clone();
            for i in 0..k {
                ridged[i][i] += 1e-10;
            }
            solve_rows(&ridged)?
        }
        Err(e) => return Err(e),
    };
    Ok((w, b))
}

/// Variational objective under q = N(μ_n, I), summed over examples. The
/// σ² = ∞ mode drops the (divergent) prior penalty.
pub fn ppca_elbo(x: &[Vec<f64>], model: &PpcaModel, mu: &[Vec<f64>]) -> f64 {
    let d = x[0].len() as f64;
    let k = mu[0].len() as f64;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let tr_wtw: f64 = model.w.iter().map(|row| linalg::norm_sq(row)).sum();
    let mut j = 0.0;
    for (point, m) in x.iter().zip(mu) {
        let recon = {
            let wm = linalg::matvec(&model.w, m);
            let mut s = 0.0;
            for i in 0..point.len() {
                let r = point[i] - wm[i] - model.b[i];
                s += r * r;
            }
            s
        };
        j += -0.5 * recon - 0.5 * tr_wtw - 0.5 * d * ln_2pi;
        if model.sigma2_prior.is_finite() {
            let s2 = model.sigma2_prior;
            j -= 0.5 * ((k + linalg::norm_sq(m)) / s2 - k + k * s2.ln());
        }
    }
    j
}

/// Run EM to convergence, returning the model, posterior means and the
/// per-iteration objective trace.
pub fn ppca_fit(
    x: &[Vec<f64>],
    k: usize,
    sigma2_prior: f64,
    iters: usize,
    rng: &mut RngStream,
) -> Result<(PpcaModel, Vec<Vec<f64>>, Vec<f64>)> {
    let d = x[0].len();
    let mut model = PpcaModel::init(d, k, sigma2_prior, rng);
    // Start the bias at the data mean so the first E-step is centered.
    model.b = linalg::mean_vec(x);
    let mut trace = Vec::with_capacity(iters);
    let mut mu = ppca_e_step(x, &model)?;
    for _ in 0..iters {
        let (w, b) = ppca_m_step(x, &mu, &model.w)?;
        model.w = w;
        model.b = b;
        mu = ppca_e_step(x, &model)?;
        trace.push(ppca_elbo(x, &model, &mu));
    }
    Ok((model, mu, trace))
}

/// Exact posterior p(z|x) = N((WᵀW + σ⁻²I)⁻¹Wᵀ(x−b), (WᵀW + σ⁻²I)⁻¹)
/// of the linear-Gaussian model.
pub fn ppca_exact_posterior(x: &[f64], model: &PpcaModel) -> Result<(Vec<f64>, Mat)> {
    let k = model.latent_dim();
    let wt = linalg::transpose(&model.w);
    let mut precision = linalg::matmul(&wt, &model.w);
    if model.sigma2_prior.is_finite() {
        for i in 0..k {
            precision[i][i] += 1.0 / model.sigma2_prior;
        }
    }
    let centered = linalg::sub(x, &model.b);
    let rhs = linalg::matvec(&wt, &centered);
    let mean = linalg::solve(&precision, &rhs)?;
    // Covariance = precision⁻¹ column by column.
    let mut cov = vec![vec![0.0; k]; k];
    for j in 0..k {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        let col = linalg::solve(&precision, &e)?;
        for i in 0..k {
            cov[i][j] = col[i];
        }
    }
    Ok((mean, cov))
}

/// Closed-form log N(x; b, I + σ² W Wᵀ), the marginal over observations
/// of the linear-Gaussian model.
pub fn linear_gaussian_log_marginal(x: &[f64], w: &Mat, b: &[f64], sigma2: f64) -> Result<f64> {
    let d = x.len();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            cov[i][j] = sigma2 * linalg::dot(&w[i], &w[j]);
        }
        cov[i][i] += 1.0;
    }
    let centered = linalg::sub(x, b);
    let solved = linalg::solve(&cov, &centered)?;
    let quad = linalg::dot(&centered, &solved);
    let log_det = linalg::spd_log_det(&cov)?;
    Ok(-0.5 * (quad + log_det + d as f64 * (2.0 * std::f64::consts::PI).ln()))
}
