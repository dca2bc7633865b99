//! Restricted Boltzmann machine over binary visible and hidden units.
//!
//! e(x, z) = −xᵀWz − xᵀb − zᵀc. The bipartite structure makes the
//! hidden marginalization a product over units, so the unnormalized
//! log-probability of a visible configuration is a product of experts:
//! log φ₀ = xᵀb plus one softplus expert per hidden unit.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tape::stable_sigmoid;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct RbmParams {
    /// |x|×|z| weights.
    pub w: Tensor,
    /// Visible biases, length |x|.
    pub b: Vec<f64>,
    /// Hidden biases, length |z|.
    pub c: Vec<f64>,
}

impl RbmParams {
    pub fn new(w: Tensor, b: Vec<f64>, c: Vec<f64>) -> Result<RbmParams> {
        if w.rank() != 2 || w.rows() != b.len() || w.cols() != c.len() {
            return Err(Error::shape(
                "RbmParams",
                format!("W {:?}, b {}, c {}", w.shape(), b.len(), c.len()),
            ));
        }
        if b.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("rbm biases"));
        }
        Ok(RbmParams { w, b, c })
    }

    pub fn init(visible: usize, hidden: usize, sd: f64, rng: &mut RngStream) -> Result<RbmParams> {
        RbmParams::new(
            Tensor::randn(vec![visible, hidden], sd, rng)?,
            vec![0.0; visible],
            vec![0.0; hidden],
        )
    }

    pub fn visible(&self) -> usize {
        self.b.len()
    }

    pub fn hidden(&self) -> usize {
        self.c.len()
    }

    /// Column j of W dotted with x.
    pub fn col_dot(&self, j: usize, x: &[u8]) -> f64 {
        let mut s = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 1 {
                s += self.w.at2(i, j);
            }
        }
        s
    }

    /// Row i of W dotted with z.
    pub fn row_dot(&self, i: usize, z: &[u8]) -> f64 {
        let mut s = 0.0;
        for (j, &zj) in z.iter().enumerate() {
            if zj == 1 {
                s += self.w.at2(i, j);
            }
        }
        s
    }
}

fn check_binary(name: &'static str, v: &[u8], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::shape(name, format!("{} units, got {}", len, v.len())));
    }
    if v.iter().any(|&b| b > 1) {
        return Err(Error::InvalidArg(format!("{name}: units must be 0/1")));
    }
    Ok(())
}

/// −xᵀWz − xᵀb − zᵀc.
pub fn rbm_energy(x: &[u8], z: &[u8], theta: &RbmParams) -> Result<f64> {
    check_binary("rbm_energy", x, theta.visible())?;
    check_binary("rbm_energy", z, theta.hidden())?;
    let mut e = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        if xi == 1 {
            e -= theta.b[i];
            for (j, &zj) in z.iter().enumerate() {
                if zj == 1 {
                    e -= theta.w.at2(i, j);
                }
            }
        }
    }
    for (j, &zj) in z.iter().enumerate() {
        if zj == 1 {
            e -= theta.c[j];
        }
    }
    Ok(e)
}

fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// log Σ_z exp(−e(x, z)) = xᵀb + Σ_j softplus(w_{·j}ᵀx + c_j).
pub fn rbm_unnorm_logp(x: &[u8], theta: &RbmParams) -> Result<f64> {
    check_binary("rbm_unnorm_logp", x, theta.visible())?;
    let mut lp = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        if xi == 1 {
            lp += theta.b[i];
        }
    }
    for j in 0..theta.hidden() {
        lp += softplus(theta.col_dot(j, x) + theta.c[j]);
    }
    Ok(lp)
}

/// P(z_j = 1 | x) = σ(w_{·j}ᵀx + c_j) for every hidden unit.
pub fn rbm_cond_hidden(x: &[u8], theta: &RbmParams) -> Result<Vec<f64>> {
    check_binary("rbm_cond_hidden", x, theta.visible())?;
    Ok((0..theta.hidden())
        .map(|j| stable_sigmoid(theta.col_dot(j, x) + theta.c[j]))
        .collect())
}

/// P(x_i = 1 | z) = σ(w_{i·}ᵀz + b_i) for every visible unit.
pub fn rbm_cond_visible(z: &[u8], theta: &RbmParams) -> Result<Vec<f64>> {
    check_binary("rbm_cond_visible", z, theta.hidden())?;
    Ok((0..theta.visible())
        .map(|i| stable_sigmoid(theta.row_dot(i, z) + theta.b[i]))
        .collect())
}

fn sample_bits(probs: &[f64], rng: &mut RngStream) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(rng.bernoulli(p))).collect()
}

/// k alternating block updates z ~ p(z|x), x ~ p(x|z). Every proposal is
/// accepted (the conditional proposal makes the M-H ratio exactly 1).
pub fn gibbs_sweep(x: &[u8], theta: &RbmParams, k: usize, rng: &mut RngStream) -> Result<Vec<u8>> {
    if k == 0 {
        return Err(Error::InvalidArg("gibbs_sweep: need k >= 1 steps".into()));
    }
    check_binary("gibbs_sweep", x, theta.visible())?;
    let mut state = x.to_vec();
    for _ in 0..k {
        let z = sample_bits(&rbm_cond_hidden(&state, theta)?, rng);
        state = sample_bits(&rbm_cond_visible(&z, theta)?, rng);
    }
    Ok(state)
}

pub fn index_to_bits(index: usize, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((index >> i) & 1) as u8).collect()
}

/// Exact p(x; θ) for all 2^|x| visible states by full enumeration over
/// both layers. Desk-scale oracle.
pub fn enumerate_visible_distribution(theta: &RbmParams) -> Result<Vec<f64>> {
    let nx = theta.visible();
    if nx > 16 {
        return Err(Error::InvalidArg(format!("enumeration over {nx} visible units is too large")));
    }
    let mut logs = Vec::with_capacity(1 << nx);
    for idx in 0..(1usize << nx) {
        logs.push(rbm_unnorm_logp(&index_to_bits(idx, nx), theta)?);
    }
    let log_z = crate::tape::log_sum_exp(&logs);
    Ok(logs.iter().map(|l| (l - log_z).exp()).collect())
}

/// Exact mean log-likelihood of a dataset under the enumerated partition
/// function.
pub fn rbm_exact_log_likelihood(data: &[Vec<u8>], theta: &RbmParams) -> Result<f64> {
    let nx = theta.visible();
    let mut logs = Vec::with_capacity(1 << nx);
    for idx in 0..(1usize << nx) {
        logs.push(rbm_unnorm_logp(&index_to_bits(idx, nx), theta)?);
    }
    let log_z = crate::tape::log_sum_exp(&logs);
    let mut total = 0.0;
    for x in data {
        total += rbm_unnorm_logp(x, theta)? - log_z;
    }
    Ok(total / data.len() as f64)
}
