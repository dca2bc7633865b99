//! Gated recurrent unit.
//!
//! h_t = u_t ⊙ h_{t-1} + (1 - u_t) ⊙ h̃_t with
//! r_t = σ(W_r x_t + U_r h_{t-1} + b_r)        (reset gate)
//! u_t = σ(W_u x_t + U_u h_{t-1} + b_u)        (update gate)
//! h̃_t = tanh(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h)   (candidate state)

use crate::error::Result;
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GruBlock {
    pub name: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Result<GruBlock> {
        let sd_in = 1.0 / (in_dim as f64).sqrt();
        let sd_h = 1.0 / (hidden as f64).sqrt();
        for gate in ["r", "u", "h"] {
            store.insert(&format!("{name}.w_{gate}"), Tensor::randn(vec![hidden, in_dim], sd_in, rng)?)?;
            store.insert(&format!("{name}.u_{gate}"), Tensor::randn(vec![hidden, hidden], sd_h, rng)?)?;
            store.insert(&format!("{name}.b_{gate}"), Tensor::zeros(vec![hidden]))?;
        }
        store.insert(&format!("{name}.h0"), Tensor::zeros(vec![hidden]))?;
        Ok(GruBlock {
            name: name.to_string(),
            in_dim,
            hidden,
        })
    }

    pub fn initial_state(&self, tape: &mut Tape, store: &ParamStore) -> Result<NodeId> {
        tape.param(store, &format!("{}.h0", self.name))
    }

    fn gate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        gate: &str,
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        let w = tape.param(store, &format!("{}.w_{gate}", self.name))?;
        let u = tape.param(store, &format!("{}.u_{gate}", self.name))?;
        let b = tape.param(store, &format!("{}.b_{gate}", self.name))?;
        let wx = tape.matvec(w, x)?;
        let uh = tape.matvec(u, h)?;
        let pre = tape.add(wx, uh)?;
        tape.add(pre, b)
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, h_prev: NodeId) -> Result<NodeId> {
        let r_pre = self.gate(tape, store, "r", x, h_prev)?;
        let r = tape.sigmoid(r_pre)?;
        let u_pre = self.gate(tape, store, "u", x, h_prev)?;
        let u = tape.sigmoid(u_pre)?;
        let rh = tape.mul(r, h_prev)?;
        let w = tape.param(store, &format!("{}.w_h", self.name))?;
        let uu = tape.param(store, &format!("{}.u_h", self.name))?;
        let b = tape.param(store, &format!("{}.b_h", self.name))?;
        let wx = tape.matvec(w, x)?;
        let urh = tape.matvec(uu, rh)?;
        let pre = tape.add(wx, urh)?;
        let pre = tape.add(pre, b)?;
        let candidate = tape.tanh(pre)?;
        let keep = tape.mul(u, h_prev)?;
        let one_minus_u = tape.affine(u, -1.0, 1.0)?;
        let take = tape.mul(one_minus_u, candidate)?;
        tape.add(keep, take)
    }

    /// Sweep a sequence, returning h_1..h_T (starting from the learned h0).
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, xs: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut h = self.initial_state(tape, store)?;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            h = self.step(tape, store, x, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::tape::stable_sigmoid;

    fn setup(in_dim: usize, hidden: usize, seed: u64) -> (GruBlock, ParamStore, RngStream) {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed);
        let block = GruBlock::new(&mut store, &mut rng, "gru", in_dim, hidden).unwrap();
        (block, store, rng)
    }

    #[test]
    fn saturated_update_gate_keeps_previous_state() {
        let (block, mut store, mut rng) = setup(2, 3, 4);
        // b_u -> +inf makes u_t -> 1, so h_t = h_prev.
        *store.value_mut("gru.b_u").unwrap() = Tensor::vector(vec![50.0; 3]).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::randn(vec![2], 1.0, &mut rng).unwrap());
        let h_prev = tape.input(Tensor::vector(vec![0.3, -0.8, 1.2]).unwrap());
        let h = block.step(&mut tape, &store, x, h_prev).unwrap();
        for (a, b) in tape.value(h).data().iter().zip(&[0.3, -0.8, 1.2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_update_gate_takes_candidate() {
        let (block, mut store, mut rng) = setup(2, 3, 5);
        *store.value_mut("gru.b_u").unwrap() = Tensor::vector(vec![-50.0; 3]).unwrap();
        let mut tape = Tape::new();
        let xval = Tensor::randn(vec![2], 1.0, &mut rng).unwrap();
        let x = tape.input(xval.clone());
        let hval = vec![0.1, 0.2, -0.4];
        let h_prev = tape.input(Tensor::vector(hval.clone()).unwrap());
        let h = block.step(&mut tape, &store, x, h_prev).unwrap();
        // Straight-line candidate computation.
        let gate = |prefix: &str, xv: &[f64], hv: &[f64]| -> Vec<f64> {
            let w = store.value(&format!("gru.w_{prefix}")).unwrap();
            let u = store.value(&format!("gru.u_{prefix}")).unwrap();
            let b = store.value(&format!("gru.b_{prefix}")).unwrap();
            (0..3)
                .map(|i| linalg::dot(w.row_slice(i), xv) + linalg::dot(u.row_slice(i), hv) + b.data()[i])
                .collect()
        };
        let r: Vec<f64> = gate("r", xval.data(), &hval).iter().map(|&v| stable_sigmoid(v)).collect();
        let rh: Vec<f64> = r.iter().zip(&hval).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate("h", xval.data(), &rh).iter().map(|v| v.tanh()).collect();
        for (a, b) in tape.value(h).data().iter().zip(&cand) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_step_matches_straight_line_evaluator() {
        let (block, store, mut rng) = setup(3, 4, 6);
        for _ in 0..5 {
            let xval = Tensor::randn(vec![3], 1.0, &mut rng).unwrap();
            let hval = Tensor::randn(vec![4], 1.0, &mut rng).unwrap();
            let mut tape = Tape::new();
            let x = tape.input(xval.clone());
            let h_prev = tape.input(hval.clone());
            let h = block.step(&mut tape, &store, x, h_prev).unwrap();

            let gate = |prefix: &str| -> Vec<f64> {
                let w = store.value(&format!("gru.w_{prefix}")).unwrap();
                let u = store.value(&format!("gru.u_{prefix}")).unwrap();
                let b = store.value(&format!("gru.b_{prefix}")).unwrap();
                (0..4)
                    .map(|i| {
                        linalg::dot(w.row_slice(i), xval.data())
                            + linalg::dot(u.row_slice(i), hval.data())
                            + b.data()[i]
                    })
                    .collect()
            };
            let r: Vec<f64> = gate("r").iter().map(|&v| stable_sigmoid(v)).collect();
            let u: Vec<f64> = gate("u").iter().map(|&v| stable_sigmoid(v)).collect();
            let rh: Vec<f64> = r.iter().zip(hval.data()).map(|(a, b)| a * b).collect();
            let w_h = store.value("gru.w_h").unwrap();
            let u_h = store.value("gru.u_h").unwrap();
            let b_h = store.value("gru.b_h").unwrap();
            let cand: Vec<f64> = (0..4)
                .map(|i| {
                    (linalg::dot(w_h.row_slice(i), xval.data())
                        + linalg::dot(u_h.row_slice(i), &rh)
                        + b_h.data()[i])
                        .tanh()
                })
                .collect();
            let want: Vec<f64> = (0..4)
                .map(|i| u[i] * hval.data()[i] + (1.0 - u[i]) * cand[i])
                .collect();
            for (a, b) in tape.value(h).data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
