//! An energy-based machine-learning engine at desk scale.
//!
//! Everything is built on a dense rank-≤3 `f64` [`Tensor`] and a dynamic
//! reverse-mode [`Tape`]. On top of that sit the neural building blocks,
//! the classification loss family over per-class energies, first-order
//! optimizers, latent-variable models (GMM/K-means/PPCA/VAE/MDN),
//! undirected models with MCMC samplers, autoregressive sequence models,
//! policy-gradient reinforcement learning, ensembles, generalization-bound
//! calculators and sequential model-based hyperparameter optimization.
//!
//! Each training worker owns its `ParamStore`, `Tape` and `RngStream`;
//! nothing is shared mutably, so independent replicas (bootstrap members,
//! tuning trials, MCMC chains) can run concurrently on disjoint state.

pub mod autoreg;
pub mod blocks;
pub mod energy;
pub mod ensemble;
pub mod error;
pub mod hyperopt;
mod latent_tmp { }
pub mod latent;
pub mod linalg;
pub mod losses;
pub mod optim;
pub mod params;
pub mod rl;
pub mod rng;
pub mod stats;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use params::ParamStore;
pub use rng::RngStream;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
