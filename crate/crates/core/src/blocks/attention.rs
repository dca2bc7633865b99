//! Multi-head attention with optional masking and rotary embeddings.
//!
//! Per head: k_i, q_i, v_i come from per-head linear blocks, weights are
//! α_i^j = softmax_j(q_iᵀ k_j) over unmasked j, and v̂_i is the weighted
//! value average. Heads concatenate into a final nonlinear linear layer,
//! layer norm is applied at h_i, and a residual path carries x_i (fixed
//! to the identity when |h| = |x|).

use super::{Activation, LinearBlock, NormBlock, NormMode};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tape::{Mask, NodeId, Tape};

#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub name: String,
    pub heads: usize,
    pub in_dim: usize,
    pub head_dim: usize,
    pub out_dim: usize,
    key: Vec<LinearBlock>,
    query: Vec<LinearBlock>,
    value: Vec<LinearBlock>,
    output: LinearBlock,
    norm: NormBlock,
    residual: Option<LinearBlock>,
    /// When set, queries and keys are rotated by position with this base.
    pub rope_base: Option<f64>,
}

impl AttentionBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        in_dim: usize,
        model_dim: usize,
        heads: usize,
        out_dim: usize,
        act: Activation,
    ) -> Result<AttentionBlock> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(Error::InvalidArg(format!(
                "attention {name}: model dim {model_dim} must divide into {heads} heads"
            )));
        }
        let head_dim = model_dim / heads;
        let mut key = Vec::new();
        let mut query = Vec::new();
        let mut value = Vec::new();
        for h in 0..heads {
            key.push(LinearBlock::new(store, rng, &format!("{name}.k{h}"), in_dim, head_dim, Activation::Identity)?);
            query.push(LinearBlock::new(store, rng, &format!("{name}.q{h}"), in_dim, head_dim, Activation::Identity)?);
            value.push(LinearBlock::new(store, rng, &format!("{name}.v{h}"), in_dim, head_dim, Activation::Identity)?);
        }
        let output = LinearBlock::new(store, rng, &format!("{name}.h"), model_dim, out_dim, act)?;
        let norm = NormBlock::new(store, rng, &format!("{name}.l"), out_dim, NormMode::Layer)?;
        let residual = if out_dim == in_dim {
            None
        } else {
            Some(LinearBlock::new(store, rng, &format!("{name}.r"), in_dim, out_dim, Activation::Identity)?)
        };
        Ok(AttentionBlock {
            name: name.to_string(),
            heads,
            in_dim,
            head_dim,
            out_dim,
            key,
            query,
            value,
            output,
            norm,
            residual,
            rope_base: None,
        })
    }

    fn rotate_rows(&self, tape: &mut Tape, m: NodeId, base: f64) -> Result<NodeId> {
        let n = tape.value(m).rows();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let r = tape.row(m, i)?;
            let angles = super::rope_angles(i as f64, self.head_dim, base);
            rows.push(tape.rotate_pairs(r, &angles)?);
        }
        tape.stack_rows(&rows)
    }

    /// x: (N, in_dim) -> (N, out_dim).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        mask: Option<&Mask>,
    ) -> Result<NodeId> {
        let n = tape.value(x).rows();
        if let Some(m) = mask {
            if m.size() != n {
                return Err(Error::shape("attention", format!("{n} items, mask size {}", m.size())));
            }
        }
        let full_mask;
        let mask = match mask {
            Some(m) => m,
            None => {
                full_mask = Mask::none(n);
                &full_mask
            }
        };
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let mut k = self.key[h].forward_rows(tape, store, x)?;
            let mut q = self.query[h].forward_rows(tape, store, x)?;
            let v = self.value[h].forward_rows(tape, store, x)?;
            if let Some(base) = self.rope_base {
                if self.head_dim % 2 != 0 {
                    return Err(Error::InvalidArg(format!(
                        "attention {}: rotary embedding needs even head dim, got {}",
                        self.name, self.head_dim
                    )));
                }
                q = self.rotate_rows(tape, q, base)?;
                k = self.rotate_rows(tape, k, base)?;
            }
            let scores = tape.matmul_nt(q, k)?;
            let alpha = tape.masked_softmax_rows(scores, mask)?;
            head_outputs.push(tape.matmul(alpha, v)?);
        }
        let combined = tape.concat_cols(&head_outputs)?;
        let projected = self.output.forward_rows(tape, store, combined)?;
        let mut normed_rows = Vec::with_capacity(n);
        for i in 0..n {
            let r = tape.row(projected, i)?;
            normed_rows.push(self.norm.layer_norm(tape, store, r)?);
        }
        let normed = tape.stack_rows(&normed_rows)?;
        let residual = match &self.residual {
            None => x,
            Some(block) => block.forward_rows(tape, store, x)?,
        };
        tape.add(normed, residual)
    }
}
