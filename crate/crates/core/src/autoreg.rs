//! Autoregressive sequence models over finite alphabets.
//!
//! The chain rule factorizes log p(x_1..x_T) into per-step conditionals.
//! Inputs are embedded symbols with a learned placeholder at position 0;
//! hidden state i may depend on symbols up to and including i, and its
//! head logits parameterize p(x_{i+1} | x_{≤i}). The recurrent and the
//! causally-masked attention backbones expose the same contract.

use crate::blocks::{sinusoidal_pe, Activation, AttentionBlock, GruBlock, PE_DEFAULT_BASE};
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tape::{log_sum_exp, Mask, NodeId, Tape};
use crate::tensor::Tensor;

/// N×N mask with entry (i, j) masked iff j >= i: position i attends to
/// strictly earlier positions only. Rendered as 0/∞ by `Mask::to_matrix`.
/// Row 0 is fully masked; the model prepends a placeholder row and lets
/// it attend to itself (it carries no sequence information).
pub fn causal_mask(n: usize) -> Result<Mask> {
    if n == 0 {
        return Err(Error::InvalidArg("causal_mask: N >= 1".into()));
    }
    Ok(Mask::causal(n))
}

#[derive(Debug, Clone)]
pub enum Backbone {
    Gru(GruBlock),
    /// Attention with sinusoidal positions added to the embeddings; an
    /// optional rotary base rotates queries and keys instead.
    Attention(AttentionBlock),
}

#[derive(Debug, Clone)]
pub struct ArModel {
    pub backbone: Backbone,
    pub alphabet: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    name: String,
}

impl ArModel {
    /// GRU backbone. Registers the embedding table ({name}.embed, one row
    /// per symbol), the placeholder vector, the backbone parameters and
    /// the output head ({name}.head_u / head_c).
    pub fn gru(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        alphabet: usize,
        embed_dim: usize,
        hidden_dim: usize,
    ) -> Result<ArModel> {
        ArModel::register_common(store, rng, name, alphabet, embed_dim, hidden_dim)?;
        let gru = GruBlock::new(store, rng, &format!("{name}.gru"), embed_dim, hidden_dim)?;
        Ok(ArModel {
            backbone: Backbone::Gru(gru),
            alphabet,
            embed_dim,
            hidden_dim,
            name: name.to_string(),
        })
    }

    /// Causally-masked attention backbone. `rope_base` switches position
    /// handling from additive sinusoidal encodings to rotary embeddings.
    pub fn attention(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        alphabet: usize,
        embed_dim: usize,
        heads: usize,
        rope_base: Option<f64>,
    ) -> Result<ArModel> {
        if embed_dim % 2 != 0 {
            return Err(Error::InvalidArg(format!("attention backbone needs even embed dim, got {embed_dim}")));
        }
        ArModel::register_common(store, rng, name, alphabet, embed_dim, embed_dim)?;
        let mut attn = AttentionBlock::new(
            store,
            rng,
            &format!("{name}.attn"),
            embed_dim,
            embed_dim,
            heads,
            embed_dim,
            Activation::Tanh,
        )?;
        attn.rope_base = rope_base;
        Ok(ArModel {
            backbone: Backbone::Attention(attn),
            alphabet,
            embed_dim,
            hidden_dim: embed_dim,
            name: name.to_string(),
        })
    }

    fn register_common(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        alphabet: usize,
        embed_dim: usize,
        hidden_dim: usize,
    ) -> Result<()> {
        if alphabet < 2 {
            return Err(Error::InvalidArg(format!("alphabet size {alphabet} < 2")));
        }
        let sd = 1.0 / (embed_dim as f64).sqrt();
        store.insert(&format!("{name}.embed"), Tensor::randn(vec![alphabet, embed_dim], sd, rng)?)?;
        store.insert(&format!("{name}.placeholder"), Tensor::randn(vec![embed_dim], sd, rng)?)?;
        let head_sd = 1.0 / (hidden_dim as f64).sqrt();
        store.insert(&format!("{name}.head_u"), Tensor::randn(vec![alphabet, hidden_dim], head_sd, rng)?)?;
        store.insert(&format!("{name}.head_c"), Tensor::zeros(vec![alphabet]))?;
        Ok(())
    }

    fn check_symbols(&self, seq: &[usize]) -> Result<()> {
        if let Some(&bad) = seq.iter().find(|&&s| s >= self.alphabet) {
            return Err(Error::InvalidArg(format!("symbol {bad} outside alphabet of {}", self.alphabet)));
        }
        Ok(())
    }

    fn embedded_inputs(&self, tape: &mut Tape, store: &ParamStore, seq: &[usize]) -> Result<Vec<NodeId>> {
        // Placeholder, then embeddings of x_1..x_{T-1}: inputs feeding the
        // hidden states whose heads predict x_1..x_T.
        let embed = tape.param(store, &format!("{}.embed", self.name))?;
        let mut inputs = vec![tape.param(store, &format!("{}.placeholder", self.name))?];
        for &symbol in &seq[..seq.len().saturating_sub(1)] {
            inputs.push(tape.row(embed, symbol)?);
        }
        Ok(inputs)
    }

    /// Hidden states h_0..h_{T-1}; h_i depends on symbols x_{≤i} only.
    fn hidden_states(&self, tape: &mut Tape, store: &ParamStore, seq: &[usize]) -> Result<Vec<NodeId>> {
        let inputs = self.embedded_inputs(tape, store, seq)?;
        match &self.backbone {
            Backbone::Gru(gru) => gru.run(tape, store, &inputs),
            Backbone::Attention(attn) => {
                let n = inputs.len();
                let mut with_pe = Vec::with_capacity(n);
                for (pos, &node) in inputs.iter().enumerate() {
                    if attn.rope_base.is_some() {
                        with_pe.push(node);
                    } else {
                        let pe = sinusoidal_pe(pos, self.embed_dim, PE_DEFAULT_BASE)?;
                        let pe_node = tape.constant(Tensor::vector(pe)?);
                        with_pe.push(tape.add(node, pe_node)?);
                    }
                }
                let x = tape.stack_rows(&with_pe)?;
                // Placeholder convention: row 0 attends to itself.
                let mut mask = Mask::causal(n);
                mask.set(0, 0, false);
                let h = attn.forward(tape, store, x, Some(&mask))?;
                (0..n).map(|i| tape.row(h, i)).collect()
            }
        }
    }

    fn logits(&self, tape: &mut Tape, store: &ParamStore, h: NodeId) -> Result<NodeId> {
        let u = tape.param(store, &format!("{}.head_u", self.name))?;
        let c = tape.param(store, &format!("{}.head_c", self.name))?;
        let uh = tape.matvec(u, h)?;
        tape.add(uh, c)
    }

    /// Negative log-probability of a sequence on the tape: the summed
    /// per-step cross-entropies of the chain-rule conditionals.
    pub fn nll_node(&self, tape: &mut Tape, store: &ParamStore, seq: &[usize]) -> Result<NodeId> {
        self.check_symbols(seq)?;
        if seq.is_empty() {
            return tape.scalar(0.0);
        }
        let hidden = self.hidden_states(tape, store, seq)?;
        let mut step_losses = Vec::with_capacity(seq.len());
        for (i, &symbol) in seq.iter().enumerate() {
            let logits = self.logits(tape, store, hidden[i])?;
            let target = tape.index(logits, symbol)?;
            let lse = tape.log_sum_exp(logits)?;
            step_losses.push(tape.sub(lse, target)?);
        }
        let stacked = tape.concat(&step_losses)?;
        tape.sum(stacked)
    }

    /// Exact log p(sequence) = Σ_i log p(x_i | x_{<i}).
    pub fn log_prob(&self, store: &ParamStore, seq: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let nll = self.nll_node(&mut tape, store, seq)?;
        Ok(-tape.scalar_value(nll)?)
    }

    /// Conditional distribution p(x_{i+1} = · | prefix).
    pub fn next_distribution(&self, store: &ParamStore, prefix: &[usize]) -> Result<Vec<f64>> {
        self.check_symbols(prefix)?;
        // Hidden state for the next position comes from the sequence
        // (prefix, dummy): the dummy's embedding never feeds that state.
        let mut seq = prefix.to_vec();
        seq.push(0);
        let mut tape = Tape::new();
        let hidden = self.hidden_states(&mut tape, store, &seq)?;
        let logits = self.logits(&mut tape, store, hidden[prefix.len()])?;
        let values = tape.value(logits).data().to_vec();
        let lse = log_sum_exp(&values);
        Ok(values.iter().map(|v| (v - lse).exp()).collect())
    }

    /// Ancestral sampling, one conditional at a time.
    pub fn sample(&self, store: &ParamStore, len: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
        if len == 0 {
            return Err(Error::InvalidArg("ar_sample: T >= 1".into()));
        }
        let mut seq = Vec::with_capacity(len);
        for _ in 0..len {
            let probs = self.next_distribution(store, &seq)?;
            seq.push(rng.categorical(&probs));
        }
        Ok(seq)
    }
}

/// One optimizer step on the mean per-sequence NLL of a batch with
/// possibly different lengths. Returns the mean NLL. Empty sequences
/// contribute zero loss.
pub fn ar_train_step(
    batch: &[Vec<usize>],
    model: &ArModel,
    store: &mut ParamStore,
    opt: &Optimizer,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArg("ar_train_step: empty batch".into()));
    }
    store.zero_grads();
    let mut tape = Tape::new();
    let mut per_seq = Vec::with_capacity(batch.len());
    for seq in batch {
        per_seq.push(model.nll_node(&mut tape, store, seq)?);
    }
    let stacked = tape.concat(&per_seq)?;
    let mean = tape.mean(stacked)?;
    let loss = tape.scalar_value(mean)?;
    let grads = tape.backward(mean)?;
    tape.write_grads(&grads, store)?;
    opt.step(store)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gru_model(seed: u64, alphabet: usize) -> (ArModel, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed);
        let model = ArModel::gru(&mut store, &mut rng, "ar", alphabet, 4, 6).unwrap();
        (model, store)
    }

    fn attn_model(seed: u64, alphabet: usize) -> (ArModel, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed);
        let model = ArModel::attention(&mut store, &mut rng, "ar", alphabet, 4, 2, None).unwrap();
        (model, store)
    }

    #[test]
    fn causal_mask_matches_convention() {
        let m = causal_mask(2).unwrap();
        let inf = f64::INFINITY;
        assert_eq!(m.to_matrix(), vec![vec![inf, inf], vec![0.0, inf]]);
    }

    #[test]
    fn shortest_sequence_attends_only_to_placeholder() {
        // With one symbol the only input row is the placeholder, and the
        // conditional must not depend on that symbol's identity.
        let (model, store) = attn_model(1, 3);
        let p0 = model.next_distribution(&store, &[]).unwrap();
        let sum: f64 = p0.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_head_weights_give_uniform_conditionals() {
        for (model, mut store) in [gru_model(2, 3), attn_model(3, 3)] {
            *store.value_mut("ar.head_u").unwrap() = Tensor::zeros(vec![3, model.hidden_dim]);
            let t = 4;
            let seq = vec![1usize, 0, 2, 1];
            let lp = model.log_prob(&store, &seq).unwrap();
            assert!((lp - (t as f64) * (-(3.0_f64).ln())).abs() < 1e-12, "lp {lp}");
        }
    }

    #[test]
    fn probabilities_sum_to_one_over_all_sequences() {
        // Σ over all C^T sequences of exp(log p) = 1.
        for (model, store) in [gru_model(4, 2), attn_model(5, 2)] {
            let t = 3;
            let mut total = 0.0;
            for idx in 0..(1usize << t) {
                let seq: Vec<usize> = (0..t).map(|i| (idx >> i) & 1).collect();
                total += model.log_prob(&store, &seq).unwrap().exp();
            }
            assert!((total - 1.0).abs() < 1e-10, "total {total}");
        }
    }

    #[test]
    fn chain_rule_additivity() {
        let (model, store) = gru_model(6, 3);
        let seq = vec![2usize, 0, 1, 1, 2];
        let lp_full = model.log_prob(&store, &seq).unwrap();
        // log p(prefix) + Σ log p(x_i | prefix..) over the suffix.
        let lp_prefix = model.log_prob(&store, &seq[..2]).unwrap();
        let mut lp_suffix = 0.0;
        for i in 2..seq.len() {
            let cond = model.next_distribution(&store, &seq[..i]).unwrap();
            lp_suffix += cond[seq[i]].ln();
        }
        assert!((lp_full - lp_prefix - lp_suffix).abs() < 1e-10);
    }

    #[test]
    fn conditionals_normalize() {
        for (model, store) in [gru_model(7, 4), attn_model(8, 4)] {
            for prefix in [vec![], vec![1], vec![3, 0, 2]] {
                let p = model.next_distribution(&store, &prefix).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_causality_is_exact() {
        // log p(x_i | x_{<i}) is untouched by any change at positions >= i.
        let (model, store) = attn_model(9, 3);
        let base = vec![1usize, 2, 0, 1, 2];
        for i in 1..base.len() {
            let cond_base = model.next_distribution(&store, &base[..i]).unwrap();
            let mut altered = base.clone();
            altered[i] = (altered[i] + 1) % 3;
            if i + 1 < altered.len() {
                altered[i + 1] = (altered[i + 1] + 2) % 3;
            }
            let cond_altered = model.next_distribution(&store, &altered[..i]).unwrap();
            for (a, b) in cond_base.iter().zip(&cond_altered) {
                assert_eq!(a, b, "conditional at {i} depends on the future");
            }
        }
    }

    #[test]
    fn deterministic_model_emits_constant_sequence() {
        let (model, mut store) = gru_model(10, 3);
        // Huge bias on symbol 2 pins every conditional.
        *store.value_mut("ar.head_c").unwrap() = Tensor::vector(vec![0.0, 0.0, 50.0]).unwrap();
        *store.value_mut("ar.head_u").unwrap() = Tensor::zeros(vec![3, model.hidden_dim]);
        let mut rng = RngStream::new(11);
        let seq = model.sample(&store, 6, &mut rng).unwrap();
        assert_eq!(seq, vec![2; 6]);
    }

    #[test]
    fn sampling_matches_first_position_conditional() {
        let (model, store) = gru_model(12, 3);
        let probs = model.next_distribution(&store, &[]).unwrap();
        let mut rng = RngStream::new(13);
        let n = 100_000;
        let mut counts = vec![0usize; 3];
        for _ in 0..n {
            counts[model.sample(&store, 1, &mut rng).unwrap()[0]] += 1;
        }
        for c in 0..3 {
            let freq = counts[c] as f64 / n as f64;
            let se = (probs[c] * (1.0 - probs[c]) / n as f64).sqrt();
            assert!((freq - probs[c]).abs() < 3.0 * se + 1e-4, "class {c}: {freq} vs {}", probs[c]);
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let (model, store) = attn_model(14, 3);
        let a = model.sample(&store, 5, &mut RngStream::new(42)).unwrap();
        let b = model.sample(&store, 5, &mut RngStream::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_alphabet_symbol_is_an_error() {
        let (model, store) = gru_model(15, 3);
        assert!(model.log_prob(&store, &[0, 3]).is_err());
    }

    #[test]
    fn training_memorizes_a_repeated_sequence() {
        let (model, mut store) = gru_model(16, 3);
        let opt = Optimizer::adam(0.05);
        let batch = vec![vec![0usize, 1, 2, 1, 0]];
        let mut first = 0.0;
        let mut last = 0.0;
        for step in 0..200 {
            let nll = ar_train_step(&batch, &model, &mut store, &opt).unwrap();
            if step == 0 {
                first = nll;
            }
            last = nll;
        }
        assert!(last < 0.05 && last < first, "nll {first} -> {last}");
    }

    #[test]
    fn gradient_check_at_random_init() {
        for (model, mut store) in [gru_model(17, 3), attn_model(18, 3)] {
            let seq = vec![1usize, 0, 2];
            let err = crate::params::finite_diff_check(
                |tape, store| model.nll_node(tape, store, &seq),
                &mut store,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "fd error {err}");
        }
    }

    #[test]
    fn empty_sequences_contribute_zero_loss() {
        let (model, mut store) = gru_model(19, 3);
        let opt = Optimizer::sgd(1e-9);
        let nll = ar_train_step(&[vec![]], &model, &mut store, &opt).unwrap();
        assert_eq!(nll, 0.0);
    }
}
