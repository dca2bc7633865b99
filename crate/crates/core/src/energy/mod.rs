//! Undirected models: restricted Boltzmann machines with exact
//! small-instance oracles, Metropolis-Hastings and Gibbs samplers,
//! contrastive-divergence trainers, the kernelized two-sample
//! discrepancy, and adversarial sampler training.

mod cd;
mod ebgan;
mod mcmc;
mod mmd;
mod rbm;

pub use cd::{cd_k_gradient, pcd_update, rbm_apply_gradient, PcdBuffer, RbmGrad};
pub use ebgan::{ebgan_losses, ebgan_train, EbganConfig, EbganModel};
pub use mcmc::{mh_run, mh_step, MarkovChainState, Proposal, ScalarRandomWalk};
pub use mmd::{gaussian_kernel, median_heuristic_sigma, mmd2};
pub use rbm::{
    enumerate_visible_distribution, gibbs_sweep, rbm_cond_hidden, rbm_cond_visible, rbm_energy,
    rbm_exact_log_likelihood, rbm_unnorm_logp, RbmParams,
};
