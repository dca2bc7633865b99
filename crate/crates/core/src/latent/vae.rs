//! Variational autoencoder with amortized inference.
//!
//! The encoder maps x to the posterior mean, the sample is the
//! reparametrized z = G(x) + σ ε with ε ~ N(0, I), and the single-sample
//! objective (negated, constants dropped) is
//! ½‖x − F(G(x) + σε)‖² + (1/2σ²)‖G(x)‖².

use crate::blocks::Stack;
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub encoder: Stack,
    pub decoder: Stack,
    /// Prior variance σ²; its square root also scales the injected noise.
    pub sigma2_prior: f64,
    pub latent_dim: usize,
    /// Multiplier on the ‖G(x)‖² penalty; 1 is the plain objective.
    pub prior_weight: f64,
}

impl VaeModel {
    pub fn new(encoder: Stack, decoder: Stack, sigma2_prior: f64) -> Result<VaeModel> {
        let latent_dim = encoder.out_dim();
        if decoder.in_dim() != latent_dim {
            return Err(Error::shape(
                "VaeModel",
                format!("encoder out {latent_dim} vs decoder in {}", decoder.in_dim()),
            ));
        }
        if sigma2_prior <= 0.0 {
            return Err(Error::InvalidArg(format!("prior variance {sigma2_prior}")));
        }
        Ok(VaeModel {
            encoder,
            decoder,
            sigma2_prior,
            latent_dim,
            prior_weight: 1.0,
        })
    }
}

/// Build the single-sample loss on a fresh tape, drawing ε from the rng.
/// Fully differentiable through both networks.
pub fn vae_loss(x: &[f64], model: &VaeModel, store: &ParamStore, rng: &mut RngStream) -> Result<(f64, Tape, NodeId)> {
    let eps: Vec<f64> = (0..model.latent_dim).map(|_| rng.normal()).collect();
    let mut tape = Tape::new();
    let node = vae_loss_node(&mut tape, x, &eps, model, store)?;
    let loss = tape.scalar_value(node)?;
    Ok((loss, tape, node))
}

/// Loss with an explicit noise vector (deterministic given ε).
pub fn vae_loss_node(
    tape: &mut Tape,
    x: &[f64],
    eps: &[f64],
    model: &VaeModel,
    store: &ParamStore,
) -> Result<NodeId> {
    if eps.len() != model.latent_dim {
        return Err(Error::shape("vae_loss", format!("{} noise dims, latent {}", eps.len(), model.latent_dim)));
    }
    let x_in = tape.constant(Tensor::vector(x.to_vec())?);
    let mu = model.encoder.forward(tape, store, x_in)?;
    let sigma = model.sigma2_prior.sqrt();
    let noise = tape.constant(Tensor::vector(eps.iter().map(|e| sigma * e).collect())?);
    let z = tape.add(mu, noise)?;
    let recon = model.decoder.forward(tape, store, z)?;
    let target = tape.constant(Tensor::vector(x.to_vec())?);
    let diff = tape.sub(target, recon)?;
    let sq = tape.dot(diff, diff)?;
    let rec_loss = tape.affine(sq, 0.5, 0.0)?;
    if model.prior_weight == 0.0 {
        return Ok(rec_loss);
    }
    let mu_sq = tape.dot(mu, mu)?;
    let penalty = tape.affine(mu_sq, model.prior_weight / (2.0 * model.sigma2_prior), 0.0)?;
    tape.add(rec_loss, penalty)
}

/// One optimizer step on the mean single-sample loss over a batch.
pub fn vae_train_step(
    batch: &[Vec<f64>],
    model: &VaeModel,
    store: &mut ParamStore,
    opt: &Optimizer,
    rng: &mut RngStream,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArg("vae_train_step: empty batch".into()));
    }
    store.zero_grads();
    let noises: Vec<Vec<f64>> = batch
        .iter()
        .map(|_| (0..model.latent_dim).map(|_| rng.normal()).collect())
        .collect();
    let mut tape = Tape::new();
    let mut per_example = Vec::with_capacity(batch.len());
    for (x, eps) in batch.iter().zip(&noises) {
        per_example.push(vae_loss_node(&mut tape, x, eps, model, store)?);
    }
    let stacked = tape.concat(&per_example)?;
    let total = tape.mean(stacked)?;
    let loss = tape.scalar_value(total)?;
    let grads = tape.backward(total)?;
    tape.write_grads(&grads, store)?;
    opt.step(store)?;
    Ok(loss)
}
