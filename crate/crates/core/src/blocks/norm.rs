//! Batch and layer normalization.
//!
//! Both modes share the learned per-feature shift `m` and log-scale `s`
//! (scale = exp(s), so positivity is structural). Epsilon is added inside
//! the square root, which also floors the denominator for constant
//! inputs.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Batch,
    Layer,
}

#[derive(Debug, Clone)]
pub struct NormBlock {
    pub name: String,
    pub dim: usize,
    pub mode: NormMode,
    pub eps: f64,
    /// Retention factor of the running-statistics moving average.
    pub momentum: f64,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

impl NormBlock {
    pub fn new(
        store: &mut ParamStore,
        _rng: &mut RngStream,
        name: &str,
        dim: usize,
        mode: NormMode,
    ) -> Result<NormBlock> {
        store.insert(&format!("{name}.m"), Tensor::zeros(vec![dim]))?;
        store.insert(&format!("{name}.s"), Tensor::zeros(vec![dim]))?;
        Ok(NormBlock {
            name: name.to_string(),
            dim,
            mode,
            eps: 1e-8,
            momentum: 0.9,
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        })
    }

    pub fn shift_name(&self) -> String {
        format!("{}.m", self.name)
    }

    pub fn log_scale_name(&self) -> String {
        format!("{}.s", self.name)
    }

    pub fn running_stats(&self) -> (&[f64], &[f64]) {
        (&self.running_mean, &self.running_var)
    }

    pub fn set_running_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) {
        self.running_mean = mean;
        self.running_var = var;
    }

    /// Normalize an N×d batch per feature. Training mode standardizes
    /// against the batch statistics and updates the running averages;
    /// inference mode uses the stored running statistics.
    pub fn batch_norm(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        training: bool,
    ) -> Result<NodeId> {
        if self.mode != NormMode::Batch {
            return Err(Error::InvalidArg(format!("{}: not a batch-norm block", self.name)));
        }
        let rows = tape.value(x).rows();
        if tape.value(x).cols() != self.dim {
            return Err(Error::shape("batch_norm", format!("{} features, block dim {}", tape.value(x).cols(), self.dim)));
        }
        let (centered, sigma) = if training {
            if rows < 2 {
                // A single example would subtract itself out entirely.
                return Err(Error::InvalidArg("batch_norm: training mode needs batch size >= 2".into()));
            }
            let mu = tape.col_mean(x)?;
            let centered = tape.sub_row(x, mu)?;
            let sq = tape.mul(centered, centered)?;
            let var = tape.col_mean(sq)?;
            let var_eps = tape.affine(var, 1.0, self.eps)?;
            let sigma = tape.sqrt(var_eps)?;
            for j in 0..self.dim {
                self.running_mean[j] =
                    self.momentum * self.running_mean[j] + (1.0 - self.momentum) * tape.value(mu).data()[j];
                self.running_var[j] =
                    self.momentum * self.running_var[j] + (1.0 - self.momentum) * tape.value(var).data()[j];
            }
            (centered, sigma)
        } else {
            let mu = tape.constant(Tensor::vector(self.running_mean.clone())?);
            let sd: Vec<f64> = self.running_var.iter().map(|v| (v + self.eps).sqrt()).collect();
            let sigma = tape.constant(Tensor::vector(sd)?);
            let centered = tape.sub_row(x, mu)?;
            (centered, sigma)
        };
        let normalized = tape.div_row(centered, sigma)?;
        let s = tape.param(store, &self.log_scale_name())?;
        let scale = tape.exp(s)?;
        let m = tape.param(store, &self.shift_name())?;
        let scaled = tape.mul_row(normalized, scale)?;
        tape.add_row(scaled, m)
    }

    /// Normalize one vector across its dimensions:
    /// y = m + exp(s) ⊙ (x − μ) / sqrt(var + eps).
    pub fn layer_norm(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        if tape.value(x).rank() != 1 || tape.value(x).numel() != self.dim {
            return Err(Error::shape("layer_norm", format!("{:?}, block dim {}", tape.value(x).shape(), self.dim)));
        }
        let mu = tape.mean(x)?;
        let neg_mu = tape.neg(mu)?;
        let centered = tape.add_scalar(x, neg_mu)?;
        let sq = tape.mul(centered, centered)?;
        let var = tape.mean(sq)?;
        let var_eps = tape.affine(var, 1.0, self.eps)?;
        let sigma = tape.sqrt(var_eps)?;
        let normalized = tape.div_scalar(centered, sigma)?;
        let s = tape.param(store, &self.log_scale_name())?;
        let scale = tape.exp(s)?;
        let m = tape.param(store, &self.shift_name())?;
        let scaled = tape.mul(normalized, scale)?;
        tape.add(scaled, m)
    }
}


impl Tape {
    /// Convenience wrapper so `NormBlock::batch_norm` reads naturally at
    /// call sites that already hold the tape.
    pub fn batch_norm(
        &mut self,
        block: &mut NormBlock,
        store: &ParamStore,
        x: NodeId,
        training: bool,
    ) -> Result<NodeId> {
        block.batch_norm(self, store, x, training)
    }
}
