//! Classification losses over per-class energies.
//!
//! A classifier assigns one energy per class; lower is preferred. The
//! Boltzmann distribution over classes is softmax of the negated,
//! temperature-scaled energies, and the cross-entropy gradient splits
//! into a positive phase on the labelled class and a probability-weighted
//! negative phase over all classes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{log_sum_exp, NodeId, Tape};
use crate::tensor::Tensor;

/// One real energy per class plus the inverse temperature β (default 1;
/// β = 0 flattens the induced distribution to uniform).
#[derive(Debug, Clone)]
pub struct EnergyVector {
    values: Vec<f64>,
    beta: f64,
}

impl EnergyVector {
    pub fn new(values: Vec<f64>) -> Result<EnergyVector> {
        EnergyVector::with_beta(values, 1.0)
    }

    pub fn with_beta(values: Vec<f64>, beta: f64) -> Result<EnergyVector> {
        if values.len() < 2 {
            return Err(Error::InvalidArg(format!("energy vector needs >= 2 classes, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("energy vector"));
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidArg(format!("inverse temperature {beta} < 0")));
        }
        Ok(EnergyVector { values, beta })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn classes(&self) -> usize {
        self.values.len()
    }

    /// Lowest-energy class, ties broken by lowest index.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for i in 1..self.values.len() {
            if self.values[i] < self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Lowest-energy class excluding `skip`, ties broken by lowest index.
    pub fn argmin_excluding(&self, skip: usize) -> usize {
        let mut best = usize::MAX;
        for i in 0..self.values.len() {
            if i == skip {
                continue;
            }
            if best == usize::MAX || self.values[i] < self.values[best] {
                best = i;
            }
        }
        best
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.values.len() {
            return Err(Error::InvalidArg(format!("class {y} out of {}", self.values.len())));
        }
        Ok(())
    }
}

/// Softmax of -β·energies, computed with max subtraction.
pub fn energies_to_probs(e: &EnergyVector) -> Vec<f64> {
    let scaled: Vec<f64> = e.values.iter().map(|v| -e.beta * v).collect();
    let lse = log_sum_exp(&scaled);
    let mut p: Vec<f64> = scaled.iter().map(|v| (v - lse).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// 0 iff y attains the unique minimum energy (ties broken by lowest index).
pub fn zero_one_loss(e: &EnergyVector, y: usize) -> Result<f64> {
    e.check_class(y)?;
    Ok(if e.argmin() == y { 0.0 } else { 1.0 })
}

/// max(0, m + e_y - e_ŷ') with ŷ' the lowest-energy class other than y.
/// m = 0 gives the perceptron loss.
pub fn margin_loss(e: &EnergyVector, y: usize, margin: f64) -> Result<f64> {
    e.check_class(y)?;
    if margin < 0.0 {
        return Err(Error::InvalidArg(format!("margin {margin} < 0")));
    }
    let runner_up = e.argmin_excluding(y);
    Ok((margin + e.values[y] - e.values[runner_up]).max(0.0))
}

pub fn perceptron_loss(e: &EnergyVector, y: usize) -> Result<f64> {
    margin_loss(e, y, 0.0)
}

/// e_y + log Σ exp(-e_j), stable via max subtraction.
pub fn cross_entropy_loss(e: &EnergyVector, y: usize) -> Result<f64> {
    e.check_class(y)?;
    let negated: Vec<f64> = e.values.iter().map(|v| -v).collect();
    Ok(e.values[y] + log_sum_exp(&negated))
}

/// A model exposing per-class energies built on the tape, so that both
/// the loss value and the energy gradients are available.
pub trait EnergyModel {
    fn classes(&self) -> usize;

    /// Vector of per-class energies for input x.
    fn energies(&self, tape: &mut Tape, store: &ParamStore, x: &Tensor) -> Result<NodeId>;
}

pub type ParamGrads = BTreeMap<String, Tensor>;

/// Cross-entropy loss node for an energy model: e_y + log Σ exp(-e).
pub fn cross_entropy_node<M: EnergyModel>(
    model: &M,
    tape: &mut Tape,
    store: &ParamStore,
    x: &Tensor,
    y: usize,
) -> Result<NodeId> {
    if y >= model.classes() {
        return Err(Error::InvalidArg(format!("class {y} out of {}", model.classes())));
    }
    let e = model.energies(tape, store, x)?;
    let ey = tape.index(e, y)?;
    let neg = tape.neg(e)?;
    let lse = tape.log_sum_exp(neg)?;
    tape.add(ey, lse)
}

/// The Boltzmann-machine update: ∇θ e(x,y) − Σ_y' p(y'|x) ∇θ e(x,y'),
/// with p the softmax of -β·energies. Equals the backward sweep through
/// the cross-entropy loss at β = 1, but is computed here from per-class
/// sweeps and explicit probability weights.
pub fn boltzmann_grad_beta<M: EnergyModel>(
    model: &M,
    store: &ParamStore,
    x: &Tensor,
    y: usize,
    beta: f64,
) -> Result<ParamGrads> {
    let classes = model.classes();
    if y >= classes {
        return Err(Error::InvalidArg(format!("class {y} out of {classes}")));
    }
    let mut tape = Tape::new();
    let e = model.energies(&mut tape, store, x)?;
    let ev = EnergyVector::with_beta(tape.value(e).data().to_vec(), beta)?;
    let probs = energies_to_probs(&ev);

    let mut out: ParamGrads = BTreeMap::new();
    for class in 0..classes {
        let node = tape.index(e, class)?;
        let grads = tape.backward(node)?;
        let weight = if class == y { 1.0 - probs[class] } else { -probs[class] };
        if weight == 0.0 {
            continue;
        }
        for (id, name) in tape.param_bindings() {
            if let Some(g) = grads.get(*id) {
                let entry = out.entry(name.clone()).or_insert_with(|| {
                    Tensor::from_parts(g.shape().to_vec(), vec![0.0; g.numel()])
                });
                for (acc, &gv) in entry.data_mut().iter_mut().zip(g.data()) {
                    *acc += weight * gv;
                }
            }
        }
    }
    // Parameters untouched by any energy keep a zero gradient entry.
    for name in store.names() {
        if !out.contains_key(name) {
            let v = store.value(name)?;
            out.insert(name.clone(), Tensor::from_parts(v.shape().to_vec(), vec![0.0; v.numel()]));
        }
    }
    Ok(out)
}

pub fn boltzmann_grad<M: EnergyModel>(
    model: &M,
    store: &ParamStore,
    x: &Tensor,
    y: usize,
) -> Result<ParamGrads> {
    boltzmann_grad_beta(model, store, x, y, 1.0)
}

/// Linear energy e([x,y]) = -w_yᵀ x - b_y.
#[derive(Debug, Clone)]
pub struct LinearEnergy {
    pub classes: usize,
    pub dim: usize,
}

impl LinearEnergy {
    /// Registers "w" (C×d) and "b" (C).
    pub fn new(store: &mut ParamStore, rng: &mut crate::rng::RngStream, classes: usize, dim: usize) -> Result<LinearEnergy> {
        let sd = 1.0 / (dim as f64).sqrt();
        store.insert("w", Tensor::randn(vec![classes, dim], sd, rng)?)?;
        store.insert("b", Tensor::zeros(vec![classes]))?;
        Ok(LinearEnergy { classes, dim })
    }
}

impl EnergyModel for LinearEnergy {
    fn classes(&self) -> usize {
        self.classes
    }

    fn energies(&self, tape: &mut Tape, store: &ParamStore, x: &Tensor) -> Result<NodeId> {
        let w = tape.param(store, "w")?;
        let b = tape.param(store, "b")?;
        let xn = tape.constant(x.clone());
        let wx = tape.matvec(w, xn)?;
        let sum = tape.add(wx, b)?;
        tape.neg(sum)
    }
}

/// Energies from a feed-forward stack with C outputs.
#[derive(Debug, Clone)]
pub struct StackEnergy {
    pub stack: crate::blocks::Stack,
}

impl EnergyModel for StackEnergy {
    fn classes(&self) -> usize {
        self.stack.out_dim()
    }

    fn energies(&self, tape: &mut Tape, store: &ParamStore, x: &Tensor) -> Result<NodeId> {
        let xn = tape.constant(x.clone());
        self.stack.forward(tape, store, xn)
    }
}
