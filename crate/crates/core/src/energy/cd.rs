//! Contrastive-divergence training for RBMs.
//!
//! The log-likelihood gradient is the free-energy gradient at the data
//! point minus its expectation under the model. CD-k replaces the model
//! expectation with a k-step Gibbs sample started at the data point;
//! persistent CD instead advances long-lived fantasy particles between
//! parameter updates.

use super::rbm::{gibbs_sweep, rbm_cond_hidden, RbmParams};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Gradient with respect to (W, b, c).
#[derive(Debug, Clone)]
pub struct RbmGrad {
    pub w: Tensor,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl RbmGrad {
    pub fn zeros(theta: &RbmParams) -> RbmGrad {
        RbmGrad {
            w: Tensor::zeros(vec![theta.visible(), theta.hidden()]),
            b: vec![0.0; theta.visible()],
            c: vec![0.0; theta.hidden()],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.w
            .data()
            .iter()
            .chain(&self.b)
            .chain(&self.c)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Analytic gradient of the free energy F(x) = −log Σ_z exp(−e(x,z)):
/// ∂F/∂w_ij = −x_i σ(w_{·j}ᵀx + c_j), ∂F/∂b_i = −x_i,
/// ∂F/∂c_j = −σ(w_{·j}ᵀx + c_j).
pub fn free_energy_grad(x: &[u8], theta: &RbmParams) -> Result<RbmGrad> {
    let hid = rbm_cond_hidden(x, theta)?;
    let (nx, nz) = (theta.visible(), theta.hidden());
    let mut g = RbmGrad::zeros(theta);
    for i in 0..nx {
        if x[i] == 1 {
            g.b[i] = -1.0;
            for j in 0..nz {
                g.w.data_mut()[i * nz + j] = -hid[j];
            }
        }
    }
    for j in 0..nz {
        g.c[j] = -hid[j];
    }
    Ok(g)
}

fn accumulate(into: &mut RbmGrad, g: &RbmGrad, sign: f64, scale: f64) {
    for (a, b) in into.w.data_mut().iter_mut().zip(g.w.data()) {
        *a += sign * scale * b;
    }
    for (a, b) in into.b.iter_mut().zip(&g.b) {
        *a += sign * scale * b;
    }
    for (a, b) in into.c.iter_mut().zip(&g.c) {
        *a += sign * scale * b;
    }
}

/// ∇F(x) − ∇F(x′) with x′ drawn by k Gibbs steps from x.
pub fn cd_k_gradient(x: &[u8], theta: &RbmParams, k: usize, rng: &mut RngStream) -> Result<RbmGrad> {
    let negative = gibbs_sweep(x, theta, k, rng)?;
    let mut g = RbmGrad::zeros(theta);
    accumulate(&mut g, &free_energy_grad(x, theta)?, 1.0, 1.0);
    accumulate(&mut g, &free_energy_grad(&negative, theta)?, -1.0, 1.0);
    Ok(g)
}

/// Fantasy particles advanced a fixed number of Gibbs steps per update.
#[derive(Debug, Clone)]
pub struct PcdBuffer {
    pub particles: Vec<Vec<u8>>,
    pub steps_per_update: usize,
}

impl PcdBuffer {
    /// Random binary particles. Defaults elsewhere: 25 particles, one
    /// Gibbs step per update.
    pub fn init(count: usize, theta: &RbmParams, rng: &mut RngStream) -> PcdBuffer {
        let particles = (0..count)
            .map(|_| (0..theta.visible()).map(|_| u8::from(rng.bernoulli(0.5))).collect())
            .collect();
        PcdBuffer {
            particles,
            steps_per_update: 1,
        }
    }
}

/// Advance every particle `steps_per_update` Gibbs steps under the
/// current parameters and return the mean free-energy gradient over the
/// refreshed particles (the negative-phase estimate).
pub fn pcd_update(buffer: &mut PcdBuffer, theta: &RbmParams, rng: &mut RngStream) -> Result<RbmGrad> {
    if buffer.particles.is_empty() {
        return Err(Error::InvalidArg("pcd_update: empty particle buffer".into()));
    }
    let scale = 1.0 / buffer.particles.len() as f64;
    let mut neg = RbmGrad::zeros(theta);
    for particle in buffer.particles.iter_mut() {
        if buffer.steps_per_update > 0 {
            *particle = gibbs_sweep(particle, theta, buffer.steps_per_update, rng)?;
        }
        let g = free_energy_grad(particle, theta)?;
        accumulate(&mut neg, &g, 1.0, scale);
    }
    Ok(neg)
}

/// Descend the loss: θ ← θ − α g.
pub fn rbm_apply_gradient(theta: &mut RbmParams, g: &RbmGrad, alpha: f64) {
    for (t, gv) in theta.w.data_mut().iter_mut().zip(g.w.data()) {
        *t -= alpha * gv;
    }
    for (t, gv) in theta.b.iter_mut().zip(&g.b) {
        *t -= alpha * gv;
    }
    for (t, gv) in theta.c.iter_mut().zip(&g.c) {
        *t -= alpha * gv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::rbm::{enumerate_visible_distribution, index_to_bits, rbm_exact_log_likelihood, rbm_unnorm_logp};

    fn small_rbm(seed: u64, nx: usize, nz: usize) -> RbmParams {
        let mut rng = RngStream::new(seed);
        RbmParams::init(nx, nz, 0.5, &mut rng).unwrap()
    }

    #[test]
    fn phases_cancel_when_chain_returns_to_start() {
        let theta = small_rbm(1, 4, 3);
        let x = vec![1u8, 0, 1, 0];
        let pos = free_energy_grad(&x, &theta).unwrap();
        let mut g = RbmGrad::zeros(&theta);
        accumulate(&mut g, &pos, 1.0, 1.0);
        accumulate(&mut g, &free_energy_grad(&x, &theta).unwrap(), -1.0, 1.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn free_energy_gradient_matches_finite_differences() {
        // F = −rbm_unnorm_logp; central differences on every coordinate.
        let theta = small_rbm(2, 3, 3);
        let x = vec![1u8, 1, 0];
        let g = free_energy_grad(&x, &theta).unwrap();
        let h = 1e-6;
        let fe = |t: &RbmParams| -rbm_unnorm_logp(&x, t).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut plus = theta.clone();
                plus.w.data_mut()[i * 3 + j] += h;
                let mut minus = theta.clone();
                minus.w.data_mut()[i * 3 + j] -= h;
                let fd = (fe(&plus) - fe(&minus)) / (2.0 * h);
                assert!((g.w.at2(i, j) - fd).abs() < 1e-6, "w[{i}][{j}]");
            }
        }
        for i in 0..3 {
            let mut plus = theta.clone();
            plus.b[i] += h;
            let mut minus = theta.clone();
            minus.b[i] -= h;
            let fd = (fe(&plus) - fe(&minus)) / (2.0 * h);
            assert!((g.b[i] - fd).abs() < 1e-6);
        }
        for j in 0..3 {
            let mut plus = theta.clone();
            plus.c[j] += h;
            let mut minus = theta.clone();
            minus.c[j] -= h;
            let fd = (fe(&plus) - fe(&minus)) / (2.0 * h);
            assert!((g.c[j] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn cd1_training_raises_exact_log_likelihood() {
        let mut theta = small_rbm(3, 4, 3);
        let data = vec![vec![1u8, 0, 1, 0], vec![0u8, 1, 0, 1]];
        let mut rng = RngStream::new(4);
        let before = rbm_exact_log_likelihood(&data, &theta).unwrap();
        for step in 0..500 {
            let x = &data[step % 2];
            let g = cd_k_gradient(x, &theta, 1, &mut rng).unwrap();
            rbm_apply_gradient(&mut theta, &g, 0.1);
        }
        let after = rbm_exact_log_likelihood(&data, &theta).unwrap();
        assert!(after - before >= 0.5, "log-likelihood gain {}", after - before);
    }

    #[test]
    fn cd_with_long_chains_approaches_exact_gradient() {
        // Expectation of the CD negative phase over seeds approaches the
        // enumerated model expectation as k grows.
        let theta = small_rbm(5, 4, 3);
        let x = vec![1u8, 1, 0, 0];
        let exact_dist = enumerate_visible_distribution(&theta).unwrap();
        let mut exact_neg = RbmGrad::zeros(&theta);
        for (idx, &p) in exact_dist.iter().enumerate() {
            let xs = index_to_bits(idx, 4);
            let g = free_energy_grad(&xs, &theta).unwrap();
            accumulate(&mut exact_neg, &g, 1.0, p);
        }
        let mut exact = RbmGrad::zeros(&theta);
        accumulate(&mut exact, &free_energy_grad(&x, &theta).unwrap(), 1.0, 1.0);
        accumulate(&mut exact, &exact_neg, -1.0, 1.0);

        let mut rng = RngStream::new(6);
        let trials = 4000;
        let mut avg = RbmGrad::zeros(&theta);
        for _ in 0..trials {
            let g = cd_k_gradient(&x, &theta, 20, &mut rng).unwrap();
            accumulate(&mut avg, &g, 1.0, 1.0 / trials as f64);
        }
        let mut max_diff = 0.0_f64;
        for (a, b) in avg.w.data().iter().zip(exact.w.data()) {
            max_diff = max_diff.max((a - b).abs());
        }
        for (a, b) in avg.b.iter().zip(&exact.b) {
            max_diff = max_diff.max((a - b).abs());
        }
        assert!(max_diff < 0.03, "CD-20 bias {max_diff}");
    }

    #[test]
    fn pcd_zero_steps_leaves_particles_alone_and_same_seed_reproduces() {
        let theta = small_rbm(7, 4, 2);
        let mut rng = RngStream::new(8);
        let mut buffer = PcdBuffer::init(5, &theta, &mut rng);
        buffer.steps_per_update = 0;
        let before = buffer.particles.clone();
        pcd_update(&mut buffer, &theta, &mut rng).unwrap();
        assert_eq!(buffer.particles, before);

        // Determinism: identical seed and buffer give identical updates.
        let mut rng_a = RngStream::new(9);
        let mut buf_a = PcdBuffer::init(5, &theta, &mut rng_a);
        let ga = pcd_update(&mut buf_a, &theta, &mut rng_a).unwrap();
        let mut rng_b = RngStream::new(9);
        let mut buf_b = PcdBuffer::init(5, &theta, &mut rng_b);
        let gb = pcd_update(&mut buf_b, &theta, &mut rng_b).unwrap();
        assert_eq!(ga.w.data(), gb.w.data());
        assert_eq!(buf_a.particles, buf_b.particles);
    }

    #[test]
    fn stationary_particles_approach_model_distribution() {
        let theta = small_rbm(10, 4, 3);
        let exact = enumerate_visible_distribution(&theta).unwrap();
        let mut rng = RngStream::new(11);
        let mut buffer = PcdBuffer::init(64, &theta, &mut rng);
        let mut counts = vec![0usize; 16];
        let mut total = 0usize;
        for update in 0..4000 {
            pcd_update(&mut buffer, &theta, &mut rng).unwrap();
            if update >= 500 {
                for p in &buffer.particles {
                    let idx = p.iter().enumerate().fold(0usize, |acc, (i, &b)| acc | ((b as usize) << i));
                    counts[idx] += 1;
                    total += 1;
                }
            }
        }
        let tv: f64 = counts
            .iter()
            .zip(&exact)
            .map(|(&c, &p)| (c as f64 / total as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.03, "total variation {tv}");
    }
}
