//! Mixture density networks: a shared feature extractor feeding K mean
//! heads and K log-variance heads, modeling
//! p(y|x) = Σ_z (1/K) N(y; μ_z(x), σ_z²(x) I).

use crate::blocks::{Activation, LinearBlock, Stack};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tape::{log_sum_exp, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MdnModel {
    pub feature: Stack,
    pub mean_heads: Vec<LinearBlock>,
    pub logvar_heads: Vec<LinearBlock>,
    pub components: usize,
    pub out_dim: usize,
}

impl MdnModel {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        components: usize,
    ) -> Result<MdnModel> {
        if components == 0 {
            return Err(Error::InvalidArg("mdn: need K >= 1 components".into()));
        }
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        let feature = if dims.len() == 1 {
            // No hidden layers: identity-sized passthrough feature.
            Stack::new(store, rng, &format!("{name}.f"), &[in_dim, in_dim], Activation::Tanh, Activation::Tanh)?
        } else {
            Stack::new(store, rng, &format!("{name}.f"), &dims, Activation::Tanh, Activation::Tanh)?
        };
        let fdim = feature.out_dim();
        let mut mean_heads = Vec::new();
        let mut logvar_heads = Vec::new();
        for k in 0..components {
            mean_heads.push(LinearBlock::new(store, rng, &format!("{name}.mu{k}"), fdim, out_dim, Activation::Identity)?);
            logvar_heads.push(LinearBlock::new(store, rng, &format!("{name}.lv{k}"), fdim, 1, Activation::Identity)?);
        }
        Ok(MdnModel {
            feature,
            mean_heads,
            logvar_heads,
            components,
            out_dim,
        })
    }

    /// Negative log mixture density of y given x, on the tape:
    /// ln K − logsumexp_z log N(y; μ_z, σ_z² I).
    pub fn loss_node(&self, tape: &mut Tape, store: &ParamStore, x: &[f64], y: &[f64]) -> Result<NodeId> {
        if y.len() != self.out_dim {
            return Err(Error::shape("mdn_loss", format!("target dim {}, model {}", y.len(), self.out_dim)));
        }
        let d = self.out_dim as f64;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let x_in = tape.constant(Tensor::vector(x.to_vec())?);
        let feat = self.feature.forward(tape, store, x_in)?;
        let y_in = tape.constant(Tensor::vector(y.to_vec())?);
        let mut comp_logs = Vec::with_capacity(self.components);
        for k in 0..self.components {
            let mu = self.mean_heads[k].forward(tape, store, feat)?;
            let lv_vec = self.logvar_heads[k].forward(tape, store, feat)?;
            let lv = tape.index(lv_vec, 0)?;
            let diff = tape.sub(y_in, mu)?;
            let sq = tape.dot(diff, diff)?;
            let neg_lv = tape.neg(lv)?;
            let inv_var = tape.exp(neg_lv)?;
            let quad = tape.mul(sq, inv_var)?;
            let quad = tape.affine(quad, -0.5, 0.0)?;
            // -(d/2)·lv - (d/2)·ln2π
            let lv_term = tape.affine(lv, -0.5 * d, -0.5 * d * ln_2pi)?;
            comp_logs.push(tape.add(quad, lv_term)?);
        }
        let stacked = tape.concat(&comp_logs)?;
        let lse = tape.log_sum_exp(stacked)?;
        tape.affine(lse, -1.0, (self.components as f64).ln())
    }

    /// Loss value only.
    pub fn loss(&self, store: &ParamStore, x: &[f64], y: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let node = self.loss_node(&mut tape, store, x, y)?;
        tape.scalar_value(node)
    }

    /// Per-component (mean, variance) at x, without a tape.
    pub fn predictive(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<(Vec<f64>, f64)>> {
        let feat = self.feature.eval(store, x)?;
        let mut out = Vec::with_capacity(self.components);
        for k in 0..self.components {
            let mu = eval_linear(&self.mean_heads[k], store, &feat)?;
            let lv = eval_linear(&self.logvar_heads[k], store, &feat)?[0];
            out.push((mu, lv.exp()));
        }
        Ok(out)
    }
}

fn eval_linear(block: &LinearBlock, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
    let w = store.value(&block.weight_name())?;
    let b = store.value(&block.bias_name())?;
    Ok((0..block.out_dim)
        .map(|i| crate::linalg::dot(w.row_slice(i), x) + b.data()[i])
        .collect())
}

/// Mixture density p(y|x).
pub fn mdn_density(model: &MdnModel, store: &ParamStore, x: &[f64], y: &[f64]) -> Result<f64> {
    let comps = model.predictive(store, x)?;
    let d = model.out_dim as f64;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let logs: Vec<f64> = comps
        .iter()
        .map(|(mu, var)| {
            -0.5 * crate::linalg::dist_sq(y, mu) / var - 0.5 * d * (var.ln() + ln_2pi) - (model.components as f64).ln()
        })
        .collect();
    Ok(log_sum_exp(&logs).exp())
}

/// Ancestral draw from the conditional mixture.
pub fn mdn_sample(model: &MdnModel, store: &ParamStore, x: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    let comps = model.predictive(store, x)?;
    let k = rng.below(model.components);
    let (mu, var) = &comps[k];
    Ok(mu.iter().map(|m| m + var.sqrt() * rng.normal()).collect())
}

/// Draw M samples, score each by the mixture density, and keep those at
/// or above the γ-quantile of the sampled densities. γ = 0 keeps every
/// sample; larger γ discards more low-density mass, so the retained set
/// carries the highest-density (1−γ) fraction.
pub fn mdn_credible_set(
    model: &MdnModel,
    store: &ParamStore,
    x: &[f64],
    m: usize,
    gamma: f64,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    if m < 10 {
        return Err(Error::InvalidArg(format!("credible set needs M >= 10, got {m}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArg(format!("gamma {gamma} outside [0, 1)")));
    }
    let samples: Vec<Vec<f64>> = (0..m).map(|_| mdn_sample(model, store, x, rng)).collect::<Result<_>>()?;
    let densities: Vec<f64> = samples
        .iter()
        .map(|y| mdn_density(model, store, x, y))
        .collect::<Result<_>>()?;
    let mut sorted = densities.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((gamma * m as f64) as usize).min(m - 1);
    let threshold = sorted[idx];
    Ok(samples
        .into_iter()
        .zip(densities)
        .filter(|(_, d)| *d >= threshold)
        .map(|(s, _)| s)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::finite_diff_check;

    fn constant_mdn(
        store: &mut ParamStore,
        rng: &mut RngStream,
        means: &[Vec<f64>],
        vars: &[f64],
    ) -> MdnModel {
        // Heads with zero weights and fixed biases give an x-independent mixture.
        let k = means.len();
        let d = means[0].len();
        let model = MdnModel::new(store, rng, "mdn", 1, &[2], d, k).unwrap();
        for (ki, (mu, var)) in means.iter().zip(vars).enumerate() {
            *store.value_mut(&format!("mdn.mu{ki}.w")).unwrap() = Tensor::zeros(vec![d, 2]);
            *store.value_mut(&format!("mdn.mu{ki}.b")).unwrap() = Tensor::vector(mu.clone()).unwrap();
            *store.value_mut(&format!("mdn.lv{ki}.w")).unwrap() = Tensor::zeros(vec![1, 2]);
            *store.value_mut(&format!("mdn.lv{ki}.b")).unwrap() = Tensor::vector(vec![var.ln()]).unwrap();
        }
        model
    }

    #[test]
    fn single_unit_variance_component_is_squared_error() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(1);
        let model = constant_mdn(&mut store, &mut rng, &[vec![0.5, -1.0]], &[1.0]);
        let y = [1.5, 0.0];
        let loss = model.loss(&store, &[0.0], &y).unwrap();
        let want = 0.5 * (1.0 + 1.0) + (2.0 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((loss - want).abs() < 1e-12, "loss {loss} want {want}");
    }

    #[test]
    fn tight_component_at_target_dominates() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(2);
        let model = constant_mdn(&mut store, &mut rng, &[vec![3.0], vec![-3.0]], &[1e-4, 1.0]);
        let loss = model.loss(&store, &[0.0], &[3.0]).unwrap();
        // log p ≈ log(1/K) + log N(peak of the tight component).
        let peak = -0.5 * (1e-4_f64.ln() + (2.0 * std::f64::consts::PI).ln());
        let want = -( (0.5_f64).ln() + peak );
        assert!((loss - want).abs() < 1e-6, "loss {loss} want {want}");
    }

    #[test]
    fn gradient_flows_through_both_heads() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(3);
        let model = MdnModel::new(&mut store, &mut rng, "mdn", 2, &[4], 1, 3).unwrap();
        let err = finite_diff_check(
            |tape, store| model.loss_node(tape, store, &[0.4, -0.6], &[0.8]),
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "fd error {err}");
    }

    #[test]
    fn loss_is_permutation_invariant_in_components() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(4);
        let a = constant_mdn(&mut store, &mut rng, &[vec![1.0], vec![-2.0]], &[0.5, 2.0]);
        let mut store_b = ParamStore::new();
        let mut rng_b = RngStream::new(5);
        let b = constant_mdn(&mut store_b, &mut rng_b, &[vec![-2.0], vec![1.0]], &[2.0, 0.5]);
        for y in [-3.0, 0.0, 1.2] {
            let la = a.loss(&store, &[0.0], &[y]).unwrap();
            let lb = b.loss(&store_b, &[0.0], &[y]).unwrap();
            assert!((la - lb).abs() < 1e-12);
        }
    }

    #[test]
    fn credible_set_gamma_zero_returns_all() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(6);
        let model = constant_mdn(&mut store, &mut rng, &[vec![0.0]], &[1.0]);
        let set = mdn_credible_set(&model, &store, &[0.0], 200, 0.0, &mut rng).unwrap();
        assert_eq!(set.len(), 200);
    }

    #[test]
    fn tight_gaussian_credible_set_concentrates() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(7);
        let model = constant_mdn(&mut store, &mut rng, &[vec![2.0]], &[0.04]);
        let set = mdn_credible_set(&model, &store, &[0.0], 500, 0.1, &mut rng).unwrap();
        let sd = 0.2;
        let inside = set.iter().filter(|y| (y[0] - 2.0).abs() <= 2.0 * sd).count();
        assert!(inside as f64 / set.len() as f64 > 0.95, "{inside}/{}", set.len());
    }

    #[test]
    fn separated_components_give_bimodal_credible_set() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(8);
        let model = constant_mdn(&mut store, &mut rng, &[vec![-5.0], vec![5.0]], &[0.25, 0.25]);
        let set = mdn_credible_set(&model, &store, &[0.0], 400, 0.2, &mut rng).unwrap();
        let near_a = set.iter().filter(|y| (y[0] + 5.0).abs() < 1.5).count();
        let near_b = set.iter().filter(|y| (y[0] - 5.0).abs() < 1.5).count();
        assert!(near_a > 50 && near_b > 50, "modes {near_a}/{near_b}");
        assert_eq!(near_a + near_b, set.len());
    }
}
