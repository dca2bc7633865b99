//! Named parameter storage with parallel gradient and optimizer-state slots.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    /// Optimizer state keyed by slot name (e.g. "m", "v", "accum").
    pub slots: BTreeMap<String, Tensor>,
}

/// name -> (value, grad, optimizer slots). Iteration order is the sorted
/// name order, which keeps every traversal deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::from_parts(value.shape().to_vec(), vec![0.0; value.numel()]);
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                grad,
                slots: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn add_grad(&mut self, name: &str, delta: &Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if !e.grad.same_shape(delta) {
            return Err(Error::shape(
                "add_grad",
                format!("{name}: grad {:?} vs delta {:?}", e.grad.shape(), delta.shape()),
            ));
        }
        for (g, d) in e.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|e| crate::linalg::norm_sq(e.grad.data()))
            .sum::<f64>()
            .sqrt()
    }
}

/// Build a scalar on a fresh tape, backward it, and accumulate the
/// parameter gradients into the store. Returns the loss value.
pub fn backprop<F>(store: &mut ParamStore, f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let loss = tape.scalar_value(out)?;
    let grads = tape.backward(out)?;
    tape.write_grads(&grads, store)?;
    Ok(loss)
}

/// Max over parameter coordinates of
/// |analytic - central difference| / max(1, |analytic|).
///
/// The program `f` must build the same scalar from the given store on
/// every call; it is re-evaluated at perturbed parameters, so the check
/// stays independent of the backward sweep it validates.
pub fn finite_diff_check<F>(f: F, store: &mut ParamStore, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArg(format!("finite_diff_check: h = {h}")));
    }
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let mut analytic: BTreeMap<String, Tensor> = BTreeMap::new();
    for (id, name) in tape.param_bindings() {
        let g = grads
            .get(*id)
            .cloned()
            .unwrap_or_else(|| Tensor::from_parts(tape.value(*id).shape().to_vec(), vec![0.0; tape.value(*id).numel()]));
        match analytic.get_mut(name) {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => {
                analytic.insert(name.clone(), g);
            }
        }
    }

    let names: Vec<String> = analytic.keys().cloned().collect();
    let mut worst = 0.0_f64;
    for name in &names {
        let n = store.value(name)?.numel();
        for i in 0..n {
            let orig = store.value(name)?.data()[i];
            store.value_mut(name)?.data_mut()[i] = orig + h;
            let plus = eval_scalar(&f, store, name, i)?;
            store.value_mut(name)?.data_mut()[i] = orig - h;
            let minus = eval_scalar(&f, store, name, i)?;
            store.value_mut(name)?.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let an = analytic[name].data()[i];
            let err = (an - fd).abs() / an.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn eval_scalar<F>(f: &F, store: &ParamStore, name: &str, coord: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store).map_err(|e| match e {
        Error::NonFinite { context } => Error::non_finite(format!("{context} while probing {name}[{coord}]")),
        other => other,
    })?;
    let v = tape.scalar_value(out)?;
    if !v.is_finite() {
        return Err(Error::non_finite(format!("objective at {name}[{coord}]")));
    }
    Ok(v)
}
