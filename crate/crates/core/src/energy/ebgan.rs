//! Adversarial training of a sampler network against an autoencoder
//! energy.
//!
//! The energy player lowers e(x) on data and raises it on generator
//! samples; the sampler player lowers the energy of its own samples
//! while an MMD² term against an inflated-Gaussian surrogate keeps its
//! output distribution from collapsing (the entropy side of the game).
//! The surrogate samples are treated as constants: no gradient flows
//! through them.

use super::mmd::{gaussian_kernel, median_heuristic_sigma, mmd2};
use crate::blocks::Stack;
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::Optimizer;
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct EbganModel {
    /// ε -> x sampler; parameters live in the generator store.
    pub generator: Stack,
    /// Autoencoder energy e(x) = ‖dec(enc(x)) − x‖²; parameters live in
    /// the energy store.
    pub encoder: Stack,
    pub decoder: Stack,
    pub noise_dim: usize,
}

#[derive(Debug, Clone)]
pub struct EbganConfig {
    /// Weight of the MMD² spread term.
    pub lambda: f64,
    /// Covariance inflation of the surrogate Gaussian (> 1).
    pub alpha: f64,
    /// Generator draws per step.
    pub samples: usize,
    /// Kernel bandwidth; None selects the median heuristic per batch.
    pub kernel_sigma: Option<f64>,
}

impl Default for EbganConfig {
    fn default() -> Self {
        EbganConfig {
            lambda: 1.0,
            alpha: 2.0,
            samples: 64,
            kernel_sigma: None,
        }
    }
}

impl EbganModel {
    pub fn energy_node(&self, tape: &mut Tape, energy_store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let code = self.encoder.forward(tape, energy_store, x)?;
        let recon = self.decoder.forward(tape, energy_store, code)?;
        let diff = tape.sub(recon, x)?;
        tape.dot(diff, diff)
    }

    pub fn energy_value(&self, energy_store: &ParamStore, x: &[f64]) -> Result<f64> {
        let code = self.encoder.eval(energy_store, x)?;
        let recon = self.decoder.eval(energy_store, &code)?;
        Ok(linalg::dist_sq(&recon, x))
    }

    pub fn sample(&self, gen_store: &ParamStore, rng: &mut RngStream) -> Result<Vec<f64>> {
        let eps: Vec<f64> = (0..self.noise_dim).map(|_| rng.normal()).collect();
        self.generator.eval(gen_store, &eps)
    }
}

/// Draw surrogate samples from N(μ̂, α Σ̂) of the generator batch, with a
/// 1e-8 ridge on a degenerate covariance.
fn inflated_gaussian_samples(
    gen_samples: &[Vec<f64>],
    alpha: f64,
    count: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    let mean = linalg::mean_vec(gen_samples);
    let d = mean.len();
    let mut cov = linalg::covariance(gen_samples);
    for i in 0..d {
        for j in 0..d {
            cov[i][j] *= alpha;
        }
        cov[i][i] += 1e-8;
    }
    let sqrt = linalg::spd_sqrt(&cov)?;
    Ok((0..count)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let mut s = linalg::matvec(&sqrt, &z);
            for (si, mi) in s.iter_mut().zip(&mean) {
                *si += mi;
            }
            s
        })
        .collect())
}

/// Loss pair at the current parameters:
/// energy player: mean e(data) − mean e(g(ε));
/// sampler player: mean e(g(ε)) + λ·MMD²(surrogate, generator samples).
pub fn ebgan_losses(
    batch: &[Vec<f64>],
    model: &EbganModel,
    gen_store: &ParamStore,
    energy_store: &ParamStore,
    config: &EbganConfig,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if config.alpha <= 1.0 {
        return Err(Error::InvalidArg(format!("inflation alpha {} must exceed 1", config.alpha)));
    }
    if config.lambda < 0.0 {
        return Err(Error::InvalidArg(format!("lambda {}", config.lambda)));
    }
    let gen: Vec<Vec<f64>> = (0..config.samples)
        .map(|_| model.sample(gen_store, rng))
        .collect::<Result<_>>()?;
    let mean_e_data: f64 = batch
        .iter()
        .map(|x| model.energy_value(energy_store, x))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / batch.len() as f64;
    let mean_e_gen: f64 = gen
        .iter()
        .map(|x| model.energy_value(energy_store, x))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / gen.len() as f64;
    let spread = if config.lambda > 0.0 {
        let surrogate = inflated_gaussian_samples(&gen, config.alpha, gen.len(), rng)?;
        let sigma = config.kernel_sigma.unwrap_or_else(|| {
            let mut pooled = surrogate.clone();
            pooled.extend(gen.iter().cloned());
            median_heuristic_sigma(&pooled)
        });
        mmd2(&surrogate, &gen, |a, b| gaussian_kernel(a, b, sigma))?
    } else {
        0.0
    };
    Ok((mean_e_data - mean_e_gen, mean_e_gen + config.lambda * spread))
}

/// Squared-exponential kernel between two tape nodes.
fn kernel_node(tape: &mut Tape, a: NodeId, b: NodeId, sigma: f64) -> Result<NodeId> {
    let diff = tape.sub(a, b)?;
    let d2 = tape.dot(diff, diff)?;
    let scaled = tape.affine(d2, -1.0 / (sigma * sigma), 0.0)?;
    tape.exp(scaled)
}

/// One gradient step for the energy player.
pub fn ebgan_energy_step(
    batch: &[Vec<f64>],
    model: &EbganModel,
    gen_store: &ParamStore,
    energy_store: &mut ParamStore,
    opt: &Optimizer,
    config: &EbganConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let gen: Vec<Vec<f64>> = (0..config.samples)
        .map(|_| model.sample(gen_store, rng))
        .collect::<Result<_>>()?;
    energy_store.zero_grads();
    let mut tape = Tape::new();
    let mut data_terms = Vec::new();
    for x in batch {
        let xn = tape.constant(Tensor::vector(x.clone())?);
        data_terms.push(model.energy_node(&mut tape, energy_store, xn)?);
    }
    let mut gen_terms = Vec::new();
    for g in &gen {
        let gn = tape.constant(Tensor::vector(g.clone())?);
        gen_terms.push(model.energy_node(&mut tape, energy_store, gn)?);
    }
    let data_stack = tape.concat(&data_terms)?;
    let data_mean = tape.mean(data_stack)?;
    let gen_stack = tape.concat(&gen_terms)?;
    let gen_mean = tape.mean(gen_stack)?;
    let loss = tape.sub(data_mean, gen_mean)?;
    let value = tape.scalar_value(loss)?;
    let grads = tape.backward(loss)?;
    tape.write_grads(&grads, energy_store)?;
    opt.step(energy_store)?;
    Ok(value)
}

/// One gradient step for the sampler player. Energy parameters enter the
/// tape as constants, so only the generator moves.
pub fn ebgan_sampler_step(
    model: &EbganModel,
    gen_store: &mut ParamStore,
    energy_store: &ParamStore,
    opt: &Optimizer,
    config: &EbganConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    gen_store.zero_grads();
    let mut tape = Tape::new();
    // Frozen copy of the energy parameters for this step.
    let frozen_energy = energy_store.clone();
    let mut gen_nodes = Vec::with_capacity(config.samples);
    let mut gen_values = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let eps: Vec<f64> = (0..model.noise_dim).map(|_| rng.normal()).collect();
        let eps_node = tape.constant(Tensor::vector(eps)?);
        let g = model.generator.forward(&mut tape, gen_store, eps_node)?;
        gen_values.push(tape.value(g).data().to_vec());
        gen_nodes.push(g);
    }
    let mut energy_terms = Vec::new();
    for &g in &gen_nodes {
        energy_terms.push(model.energy_node(&mut tape, &frozen_energy, g)?);
    }
    let stacked = tape.concat(&energy_terms)?;
    let mut loss = tape.mean(stacked)?;

    if config.lambda > 0.0 {
        let surrogate = inflated_gaussian_samples(&gen_values, config.alpha, gen_values.len(), rng)?;
        let sigma = config.kernel_sigma.unwrap_or_else(|| {
            let mut pooled = surrogate.clone();
            pooled.extend(gen_values.iter().cloned());
            median_heuristic_sigma(&pooled)
        });
        let n = surrogate.len() as f64;
        let m = gen_nodes.len() as f64;
        // (a): within-surrogate average, a constant.
        let mut within_s = 0.0;
        for i in 0..surrogate.len() {
            for j in 0..surrogate.len() {
                if i != j {
                    within_s += gaussian_kernel(&surrogate[i], &surrogate[j], sigma);
                }
            }
        }
        within_s /= n * (n - 1.0);
        // (b): within-generator average over node pairs.
        let mut within_g_terms = Vec::new();
        for i in 0..gen_nodes.len() {
            for j in 0..gen_nodes.len() {
                if i != j {
                    within_g_terms.push(kernel_node(&mut tape, gen_nodes[i], gen_nodes[j], sigma)?);
                }
            }
        }
        let wg = tape.concat(&within_g_terms)?;
        let wg_sum = tape.sum(wg)?;
        let wg_mean = tape.affine(wg_sum, 1.0 / (m * (m - 1.0)), within_s)?;
        // (c): cross average between constants and nodes.
        let mut cross_terms = Vec::new();
        for s in &surrogate {
            let sn = tape.constant(Tensor::vector(s.clone())?);
            for &g in &gen_nodes {
                cross_terms.push(kernel_node(&mut tape, sn, g, sigma)?);
            }
        }
        let cr = tape.concat(&cross_terms)?;
        let cr_sum = tape.sum(cr)?;
        let cr_scaled = tape.affine(cr_sum, -2.0 / (n * m), 0.0)?;
        let mmd = tape.add(wg_mean, cr_scaled)?;
        let weighted = tape.affine(mmd, config.lambda, 0.0)?;
        loss = tape.add(loss, weighted)?;
    }
    let value = tape.scalar_value(loss)?;
    let grads = tape.backward(loss)?;
    tape.write_grads(&grads, gen_store)?;
    opt.step(gen_store)?;
    Ok(value)
}

/// Alternate energy and sampler steps over minibatches of `data`.
#[allow(clippy::too_many_arguments)]
pub fn ebgan_train(
    data: &[Vec<f64>],
    model: &EbganModel,
    gen_store: &mut ParamStore,
    energy_store: &mut ParamStore,
    opt_energy: &Optimizer,
    opt_gen: &Optimizer,
    config: &EbganConfig,
    steps: usize,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<Vec<(f64, f64)>> {
    let mut log = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch: Vec<Vec<f64>> = (0..batch_size.min(data.len()))
            .map(|_| data[rng.below(data.len())].clone())
            .collect();
        let e_loss = ebgan_energy_step(&batch, model, gen_store, energy_store, opt_energy, config, rng)?;
        let g_loss = ebgan_sampler_step(model, gen_store, energy_store, opt_gen, config, rng)?;
        log.push((e_loss, g_loss));
    }
    Ok(log)
}
