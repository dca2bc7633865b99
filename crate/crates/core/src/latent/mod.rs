//! Latent-variable models trained by variational inference:
//! Gaussian mixtures with exact EM (and the hard-EM K-means limit),
//! probabilistic PCA, variational autoencoders with amortized inference,
//! importance-sampled log-marginals and mixture density networks.

mod gmm;
mod is;
mod kl;
mod mdn;
mod ppca;
mod vae;

pub use gmm::{gmm_e_step, gmm_elbo, gmm_m_step, kmeans_fit, KmeansFit};
pub use is::{is_log_marginal, GaussianProposal};
pub use kl::{entropy_categorical, kl_gaussian_diag};
pub use mdn::{mdn_credible_set, mdn_density, mdn_sample, MdnModel};
pub use ppca::{
    linear_gaussian_log_marginal, ppca_e_step, ppca_elbo, ppca_exact_posterior, ppca_fit, ppca_m_step,
    PpcaModel,
};
pub use vae::{vae_loss, vae_train_step, VaeModel};
