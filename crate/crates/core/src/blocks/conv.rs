//! 1-D convolution (correlation) over vector sequences with zero padding
//! and same-length output.

use crate::error::Result;
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Filter bank of K filters over d input channels, each of odd length
/// 2M+1, stored as a d×K×(2M+1) tensor.
#[derive(Debug, Clone)]
pub struct Conv1dBlock {
    pub name: String,
    pub in_channels: usize,
    pub filters: usize,
    pub half_width: usize,
}

impl Conv1dBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        in_channels: usize,
        filters: usize,
        half_width: usize,
    ) -> Result<Conv1dBlock> {
        let width = 2 * half_width + 1;
        let sd = 1.0 / ((in_channels * width) as f64).sqrt();
        store.insert(
            &format!("{name}.f"),
            Tensor::randn(vec![in_channels, filters, width], sd, rng)?,
        )?;
        Ok(Conv1dBlock {
            name: name.to_string(),
            in_channels,
            filters,
            half_width,
        })
    }

    pub fn filter_name(&self) -> String {
        format!("{}.f", self.name)
    }

    /// x: (T, d) -> (T, K); h[t][k] = Σ_{m'=-M..M} x[t+m']ᵀ f[·][k][m'+M].
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let f = tape.param(store, &self.filter_name())?;
        tape.conv1d(x, f)
    }
}
