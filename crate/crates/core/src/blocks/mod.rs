//! Differentiable neural building blocks and the input-normalization
//! preprocessors.
//!
//! Blocks hold configuration and the names of their parameters; tensors
//! live in a [`ParamStore`]. Weights initialize to N(0, 1/fan_in) and
//! biases to zero.

mod attention;
mod conv;
mod gru;
mod norm;

pub use attention::AttentionBlock;
pub use conv::Conv1dBlock;
pub use gru::GruBlock;
pub use norm::{NormBlock, NormMode};

use crate::error::{Error, Result};
use crate::linalg;
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Fully-connected layer y = act(W x + c) with W stored out×in.
#[derive(Debug, Clone)]
pub struct LinearBlock {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub act: Activation,
}

impl LinearBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        act: Activation,
    ) -> Result<LinearBlock> {
        let sd = 1.0 / (in_dim as f64).sqrt();
        store.insert(&format!("{name}.w"), Tensor::randn(vec![out_dim, in_dim], sd, rng)?)?;
        store.insert(&format!("{name}.b"), Tensor::zeros(vec![out_dim]))?;
        Ok(LinearBlock {
            name: name.to_string(),
            in_dim,
            out_dim,
            act,
        })
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        let y = tape.matvec(w, x)?;
        let y = tape.add(y, b)?;
        self.act.apply(tape, y)
    }

    /// Apply to every row of an N×in matrix: act(X Wᵀ + b).
    pub fn forward_rows(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        let y = tape.matmul_nt(x, w)?;
        let y = tape.add_row(y, b)?;
        self.act.apply(tape, y)
    }
}

/// A stack of linear layers; the declarative "program" used by the
/// classifier, VAE and MDN models.
#[derive(Debug, Clone)]
pub struct Stack {
    pub layers: Vec<LinearBlock>,
}

impl Stack {
    /// dims = [in, h1, ..., out]; hidden layers use `hidden_act`, the last
    /// layer `final_act`.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        dims: &[usize],
        hidden_act: Activation,
        final_act: Activation,
    ) -> Result<Stack> {
        if dims.len() < 2 {
            return Err(Error::InvalidArg(format!("stack {name}: need at least [in, out] dims")));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() { final_act } else { hidden_act };
            layers.push(LinearBlock::new(
                store,
                rng,
                &format!("{name}.{i}"),
                dims[i],
                dims[i + 1],
                act,
            )?);
        }
        Ok(Stack { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, store, h)?;
        }
        Ok(h)
    }

    /// Plain evaluation without a tape, for frozen predictors.
    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            let w = store.value(&layer.weight_name())?;
            let b = store.value(&layer.bias_name())?;
            let mut y: Vec<f64> = (0..layer.out_dim)
                .map(|i| linalg::dot(w.row_slice(i), &h) + b.data()[i])
                .collect();
            match layer.act {
                Activation::Identity => {}
                Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Tanh => y.iter_mut().for_each(|v| *v = v.tanh()),
                Activation::Sigmoid => y.iter_mut().for_each(|v| *v = crate::tape::stable_sigmoid(*v)),
            }
            h = y;
        }
        Ok(h)
    }
}

/// Center a batch and whiten it against its empirical covariance
/// (population convention, ridge 1e-8 on the diagonal). Returns the
/// transformed batch together with the stored mean and whitening matrix.
///
/// A covariance that stays rank-deficient even after the ridge (any
/// eigenvalue below 1e-10, e.g. a constant feature column) is an error.
pub fn center_and_whiten(x: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>, linalg::Mat)> {
    if x.len() < 2 {
        return Err(Error::InvalidArg("center_and_whiten: batch size < 2".into()));
    }
    let ridge = 1e-8;
    let mean = linalg::mean_vec(x);
    let d = mean.len();
    let mut cov = linalg::covariance(x);
    let (eigs, _) = linalg::eigen_sym(&cov)?;
    if eigs.iter().any(|&l| l < 1e-10) {
        return Err(Error::Singular(format!(
            "covariance eigenvalue {:.3e} below 1e-10",
            eigs.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    for i in 0..d {
        cov[i][i] += ridge;
    }
    let w = linalg::spd_inverse_sqrt(&cov)?;
    let transformed = x
        .iter()
        .map(|row| {
            let centered = linalg::sub(row, &mean);
            linalg::matvec(&w, &centered)
        })
        .collect();
    Ok((transformed, mean, w))
}

/// Sinusoidal positional encoding: dimension d of the vector for
/// position i is sin(i / L^(d/dim)) for even d and cos(i / L^((d-1)/dim))
/// for odd d. L defaults to 10000.
pub fn sinusoidal_pe(position: usize, dim: usize, l: f64) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::InvalidArg(format!("sinusoidal_pe: dim {dim} must be even")));
    }
    if l <= 0.0 {
        return Err(Error::InvalidArg(format!("sinusoidal_pe: L = {l}")));
    }
    let i = position as f64;
    Ok((0..dim)
        .map(|d| {
            if d % 2 == 0 {
                (i / l.powf(d as f64 / dim as f64)).sin()
            } else {
                (i / l.powf((d - 1) as f64 / dim as f64)).cos()
            }
        })
        .collect())
}

pub const PE_DEFAULT_BASE: f64 = 10000.0;

/// Rotation angles applied to pair k (1-based) at position m:
/// m * L^(k/dim).
pub fn rope_angles(position: f64, dim: usize, l: f64) -> Vec<f64> {
    (1..=dim / 2).map(|k| position * l.powf(k as f64 / dim as f64)).collect()
}

/// Rotate every consecutive pair of elements by its position-dependent
/// angle. Norm-preserving; the induced score ⟨rot(q, i), rot(k, j)⟩
/// depends on positions only through j - i.
pub fn rope_rotate(v: &[f64], position: f64, l: f64) -> Result<Vec<f64>> {
    if v.len() % 2 != 0 {
        return Err(Error::InvalidArg(format!("rope_rotate: dim {} must be even", v.len())));
    }
    let angles = rope_angles(position, v.len(), l);
    let mut out = vec![0.0; v.len()];
    for (k, &th) in angles.iter().enumerate() {
        let (c, s) = (th.cos(), th.sin());
        out[2 * k] = c * v[2 * k] - s * v[2 * k + 1];
        out[2 * k + 1] = s * v[2 * k] + c * v[2 * k + 1];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    #[test]
    fn whiten_two_points_1d() {
        let x = vec![vec![0.0], vec![2.0]];
        let (t, mean, _) = center_and_whiten(&x).unwrap();
        assert!((mean[0] - 1.0).abs() < 1e-12);
        assert!((t[0][0] + 1.0).abs() < 1e-4);
        assert!((t[1][0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn whiten_rejects_constant_column() {
        let x = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]];
        assert!(matches!(center_and_whiten(&x), Err(Error::Singular(_))));
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let mut rng = RngStream::new(11);
        let n = 10_000;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a = rng.normal();
                let b = rng.normal();
                let c = rng.normal();
                vec![2.0 * a + 1.0, a + 0.5 * b - 2.0, b + 0.3 * c]
            })
            .collect();
        let (t, _, _) = center_and_whiten(&x).unwrap();
        let cov = linalg::covariance(&t);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov[i][j] - want).abs() < 1e-6, "cov[{i}][{j}] = {}", cov[i][j]);
            }
        }
    }

    #[test]
    fn pe_position_zero_alternates_zero_one() {
        let e = sinusoidal_pe(0, 6, PE_DEFAULT_BASE).unwrap();
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pe_dim_zero_is_sin_of_position() {
        for i in [1usize, 3, 17] {
            let e = sinusoidal_pe(i, 4, PE_DEFAULT_BASE).unwrap();
            assert!((e[0] - (i as f64).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn rope_zero_position_is_identity() {
        let v = vec![0.3, -1.2, 0.7, 2.0];
        let r = rope_rotate(&v, 0.0, PE_DEFAULT_BASE).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn rope_preserves_norm() {
        let mut rng = RngStream::new(5);
        for _ in 0..20 {
            let v: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let m = rng.below(50) as f64;
            let r = rope_rotate(&v, m, PE_DEFAULT_BASE).unwrap();
            assert!((linalg::norm_sq(&r).sqrt() - linalg::norm_sq(&v).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn rope_rejects_odd_dim() {
        assert!(rope_rotate(&[1.0, 2.0, 3.0], 1.0, PE_DEFAULT_BASE).is_err());
    }

    #[test]
    fn rope_relative_position_identity() {
        // ⟨R_i q, R_j k⟩ = ⟨R_0 q, R_(j-i) k⟩.
        let mut rng = RngStream::new(9);
        for _ in 0..20 {
            let q: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let k: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let i = rng.below(20) as f64;
            let j = rng.below(20) as f64;
            let lhs = linalg::dot(
                &rope_rotate(&q, i, PE_DEFAULT_BASE).unwrap(),
                &rope_rotate(&k, j, PE_DEFAULT_BASE).unwrap(),
            );
            let rhs = linalg::dot(
                &rope_rotate(&q, 0.0, PE_DEFAULT_BASE).unwrap(),
                &rope_rotate(&k, j - i, PE_DEFAULT_BASE).unwrap(),
            );
            assert!((lhs - rhs).abs() < 1e-10, "lhs {lhs} rhs {rhs}");
        }
    }
}
