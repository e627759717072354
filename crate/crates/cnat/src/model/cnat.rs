use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    build_self_attention_mask, mask_node, sinusoidal_pe, Bind, DecoderLayer, EncoderLayer,
    Linear, Mode,
};
use super::ModelConfig;
use crate::data::{BOS_ID, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParamStore, Scalar};

/// Repeat each source token by its fertility. Strict contract: the
/// fertility sum must be positive; inference callers apply the
/// most-confident-position fallback before calling this.
pub fn copy_by_fertility(x: &[usize], fertility: &[usize]) -> Result<Vec<usize>> {
    if x.len() != fertility.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: fertility.len(),
        });
    }
    let total: usize = fertility.iter().sum();
    if total == 0 {
        return Err(Error::EmptyDecoderInput);
    }
    let mut y = Vec::with_capacity(total);
    for (&tok, &f) in x.iter().zip(fertility) {
        for _ in 0..f {
            y.push(tok);
        }
    }
    Ok(y)
}

/// Result of one generation call.
#[derive(Clone, Debug)]
pub struct GenerationOutput {
    pub label: usize,
    pub label_dist: Vec<f64>,
    pub explanation: Vec<usize>,
    /// Per-token distributions over the vocabulary; empty when
    /// explanation generation was skipped.
    pub token_dists: Vec<Vec<f64>>,
    pub fertility: Vec<usize>,
    pub latency_ns: u128,
    /// AR decode hit `t_max` before emitting EOS.
    pub truncated: bool,
    pub decoder_passes: usize,
}

/// The C-NAT model: all learnable parameters plus configuration.
pub struct CnatModel<F: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    embed: ParamId,
    pe: Vec<F>,
    enc: Vec<EncoderLayer>,
    dec: Vec<DecoderLayer>,
    fert_head: Linear,
    expl_head: Linear,
    label_hidden: Linear,
    label_out: Linear,
    decoder_passes: AtomicUsize,
}

impl<F: Scalar> Clone for CnatModel<F> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            embed: self.embed,
            pe: self.pe.clone(),
            enc: self.enc.clone(),
            dec: self.dec.clone(),
            fert_head: self.fert_head.clone(),
            expl_head: self.expl_head.clone(),
            label_hidden: self.label_hidden.clone(),
            label_out: self.label_out.clone(),
            decoder_passes: AtomicUsize::new(0),
        }
    }
}

impl<F: Scalar> CnatModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;

        let mut emb = super::layers::xavier::<F>(&mut rng, config.vocab_size, d);
        // PAD row pinned to zero so padding never leaks signal.
        for v in &mut emb[PAD_ID * d..(PAD_ID + 1) * d] {
            *v = F::zero();
        }
        let embed = store.add("embed", [config.vocab_size, d], emb);

        let enc = (0..config.enc_layers)
            .map(|i| {
                EncoderLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("enc.{i}"),
                    d,
                    config.heads,
                    config.d_ff,
                )
            })
            .collect();
        let dec = (0..config.dec_layers)
            .map(|i| {
                DecoderLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("dec.{i}"),
                    d,
                    config.heads,
                    config.d_ff,
                )
            })
            .collect();
        let fert_head = Linear::new(&mut store, &mut rng, "fert", d, config.f_max + 1);
        let expl_head = Linear::new(&mut store, &mut rng, "expl", d, config.vocab_size);
        let label_hidden = Linear::new(&mut store, &mut rng, "label.hidden", d, d);
        let label_out = Linear::new(&mut store, &mut rng, "label.out", d, config.labels);

        let pe = sinusoidal_pe(config.t_max, d)
            .into_iter()
            .map(F::from_f64)
            .collect();

        Ok(Self {
            config,
            params: store,
            embed,
            pe,
            enc,
            dec,
            fert_head,
            expl_head,
            label_hidden,
            label_out,
            decoder_passes: AtomicUsize::new(0),
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.config.mode = mode;
    }

    /// Decoder forward passes since construction (instrumentation hook).
    pub fn decoder_pass_count(&self) -> usize {
        self.decoder_passes.load(Ordering::Relaxed)
    }

    /// Zero the PAD embedding row's gradient; called by training loops so
    /// the pinned row never moves.
    pub fn zero_pad_grad(&mut self) {
        let d = self.config.d_model;
        let p = self.params.get_mut(self.embed);
        for g in &mut p.grad[PAD_ID * d..(PAD_ID + 1) * d] {
            *g = F::zero();
        }
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embed
    }

    fn pe_node(&self, g: &mut Graph<F>, t: usize) -> NodeId {
        let d = self.config.d_model;
        g.constant(self.pe[..t * d].to_vec(), [t, d])
    }

    /// Token embedding + positional encoding + dropout.
    fn embed_sequence(&self, g: &mut Graph<F>, bind: &Bind<F>, ids: &[usize]) -> Result<NodeId> {
        let table = bind.node(g, self.embed);
        let emb = g.gather(table, ids)?;
        let pe = self.pe_node(g, ids.len());
        let x = g.add(emb, pe);
        Ok(g.dropout(x, self.config.dropout))
    }

    /// Encoder stack: per-token contextual representations `[S, d]`.
    pub fn encode(&self, g: &mut Graph<F>, bind: &Bind<F>, ids: &[usize]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if ids.len() > self.config.t_max {
            return Err(Error::LengthOverflow {
                len: ids.len(),
                max: self.config.t_max,
            });
        }
        let mut x = self.embed_sequence(g, bind, ids)?;
        for layer in &self.enc {
            x = layer.forward(g, bind, x, None, self.config.dropout);
        }
        Ok(x)
    }

    /// Per-position fertility logits `[S, f_max+1]`.
    pub fn fertility_logits(&self, g: &mut Graph<F>, bind: &Bind<F>, h: NodeId) -> NodeId {
        self.fert_head.forward(g, bind, h)
    }

    /// Inference fertilities: per-position argmax over the logits.
    pub fn predict_fertility(&self, g: &mut Graph<F>, bind: &Bind<F>, h: NodeId) -> (Vec<usize>, NodeId) {
        let logits = self.fertility_logits(g, bind, h);
        (argmax_rows(g.data(logits), self.config.f_max + 1), logits)
    }

    /// Decoder stack over a copied token sequence, `[T, d]`.
    pub fn decode(
        &self,
        g: &mut Graph<F>,
        bind: &Bind<F>,
        y_ids: &[usize],
        enc_h: NodeId,
    ) -> Result<NodeId> {
        if y_ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if y_ids.len() > self.config.t_max {
            return Err(Error::LengthOverflow {
                len: y_ids.len(),
                max: self.config.t_max,
            });
        }
        self.decoder_passes.fetch_add(1, Ordering::Relaxed);
        let t = y_ids.len();
        let allowed = build_self_attention_mask(t, self.config.mode);
        let mask = mask_node(g, &allowed, t);
        let pe = self.pe_node(g, t);
        let mut x = self.embed_sequence(g, bind, y_ids)?;
        for layer in &self.dec {
            x = layer.forward(g, bind, x, pe, enc_h, Some(mask), self.config.dropout);
        }
        Ok(x)
    }

    /// Vocabulary logits per decoder position `[T, V]`.
    pub fn explanation_logits(&self, g: &mut Graph<F>, bind: &Bind<F>, h_d: NodeId) -> NodeId {
        self.expl_head.forward(g, bind, h_d)
    }

    /// Per-position token distributions `p_E(e_t) = softmax(h_d_t)`.
    pub fn predict_explanation(
        &self,
        g: &mut Graph<F>,
        bind: &Bind<F>,
        h_d: NodeId,
    ) -> Result<NodeId> {
        let logits = self.explanation_logits(g, bind, h_d);
        g.softmax_rows(logits)
    }

    /// Label logits: per-position MLP (hidden + ReLU + projection), then
    /// mean pooling over positions. `[1, labels]`.
    pub fn label_logits(&self, g: &mut Graph<F>, bind: &Bind<F>, h_d: NodeId) -> NodeId {
        let hidden = self.label_hidden.forward(g, bind, h_d);
        let hidden = g.relu(hidden);
        let per_pos = self.label_out.forward(g, bind, hidden);
        g.mean_rows(per_pos)
    }

    /// Label distribution `[1, labels]`.
    pub fn predict_label(&self, g: &mut Graph<F>, bind: &Bind<F>, h_d: NodeId) -> Result<NodeId> {
        let logits = self.label_logits(g, bind, h_d);
        g.softmax_rows(logits)
    }

    /// One parallel decode: label always, explanation when `explain`.
    pub fn generate(&self, ids: &[usize], explain: bool) -> Result<GenerationOutput> {
        self.generate_with(ids, explain, None)
    }

    /// Like [`CnatModel::generate`] but with an optional fertility
    /// override, used by the latency benchmark to pin the decode length.
    pub fn generate_with(
        &self,
        ids: &[usize],
        explain: bool,
        force_fertility: Option<&[usize]>,
    ) -> Result<GenerationOutput> {
        let mut g = Graph::inference();
        let bind = Bind::frozen(&self.params);
        let h = self.encode(&mut g, &bind, ids)?;
        let passes_before = self.decoder_pass_count();

        let start = Instant::now();
        let fertility = match force_fertility {
            Some(f) => f.to_vec(),
            None => {
                let (mut fert, logits) = self.predict_fertility(&mut g, &bind, h);
                if fert.iter().sum::<usize>() == 0 {
                    // force the position most confident in fertility 1
                    let probs = g.softmax_rows(logits)?;
                    let cols = self.config.f_max + 1;
                    let best = (0..ids.len())
                        .max_by(|&a, &b| {
                            let pa = g.data(probs)[a * cols + 1];
                            let pb = g.data(probs)[b * cols + 1];
                            pa.partial_cmp(&pb).unwrap()
                        })
                        .unwrap();
                    fert[best] = 1;
                }
                fert
            }
        };
        let y = copy_by_fertility(ids, &fertility)?;
        let h_d = self.decode(&mut g, &bind, &y, h)?;
        let label_dist = self.predict_label(&mut g, &bind, h_d)?;
        let (explanation, token_dists) = if explain {
            let dists = self.predict_explanation(&mut g, &bind, h_d)?;
            let v = self.config.vocab_size;
            let tokens = argmax_rows(g.data(dists), v);
            let rows = (0..y.len())
                .map(|i| {
                    g.data(dists)[i * v..(i + 1) * v]
                        .iter()
                        .map(|p| p.as_f64())
                        .collect()
                })
                .collect();
            (tokens, rows)
        } else {
            (Vec::new(), Vec::new())
        };
        let latency_ns = start.elapsed().as_nanos();

        let label_dist: Vec<f64> = g.data(label_dist).iter().map(|p| p.as_f64()).collect();
        let label = argmax_f64(&label_dist);
        Ok(GenerationOutput {
            label,
            label_dist,
            explanation,
            token_dists,
            fertility,
            latency_ns,
            truncated: false,
            decoder_passes: self.decoder_pass_count() - passes_before,
        })
    }

    /// Autoregressive ablation decode: emits tokens one at a time with a
    /// causal mask until EOS or `t_max`; one decoder pass per token.
    pub fn generate_autoregressive(&self, ids: &[usize]) -> Result<GenerationOutput> {
        self.generate_autoregressive_with(ids, None)
    }

    /// `force_len` pins the emitted length (EOS ignored), for benchmarks.
    pub fn generate_autoregressive_with(
        &self,
        ids: &[usize],
        force_len: Option<usize>,
    ) -> Result<GenerationOutput> {
        let d = self.config.d_model;
        // Encode once outside the timed region; each step re-injects H as
        // a constant so only decoder passes are measured.
        let h_data = {
            let mut g = Graph::inference();
            let bind = Bind::frozen(&self.params);
            let h = self.encode(&mut g, &bind, ids)?;
            g.data(h).to_vec()
        };
        let s = ids.len();
        let limit = force_len.unwrap_or(self.config.t_max).min(self.config.t_max);
        let passes_before = self.decoder_pass_count();

        let mut emitted: Vec<usize> = Vec::new();
        let mut token_dists: Vec<Vec<f64>> = Vec::new();
        let mut truncated = false;
        let mut label_dist: Vec<f64> = vec![0.0; self.config.labels];

        let start = Instant::now();
        loop {
            let mut g = Graph::inference();
            let bind = Bind::frozen(&self.params);
            let h = g.constant(h_data.clone(), [s, d]);
            let mut prefix = vec![BOS_ID];
            prefix.extend_from_slice(&emitted);
            let h_d = self.decode(&mut g, &bind, &prefix, h)?;
            let last = g.slice_rows(h_d, prefix.len() - 1, prefix.len());
            let logits = self.explanation_logits(&mut g, &bind, last);
            let dist = g.softmax_rows(logits)?;
            let probs: Vec<f64> = g.data(dist).iter().map(|p| p.as_f64()).collect();
            let tok = argmax_f64(&probs);

            let stop_on_eos = force_len.is_none() && tok == EOS_ID;
            if !stop_on_eos {
                emitted.push(tok);
                token_dists.push(probs);
            }
            let done = stop_on_eos || emitted.len() >= limit;
            if done {
                if !stop_on_eos && force_len.is_none() && emitted.len() >= limit {
                    truncated = true;
                }
                let ld = self.predict_label(&mut g, &bind, h_d)?;
                label_dist = g.data(ld).iter().map(|p| p.as_f64()).collect();
                break;
            }
        }
        let latency_ns = start.elapsed().as_nanos();

        let label = argmax_f64(&label_dist);
        Ok(GenerationOutput {
            label,
            label_dist,
            explanation: emitted,
            token_dists,
            fertility: Vec::new(),
            latency_ns,
            truncated,
            decoder_passes: self.decoder_pass_count() - passes_before,
        })
    }
}

pub(crate) fn argmax_rows<F: Scalar>(data: &[F], cols: usize) -> Vec<usize> {
    data.chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

pub(crate) fn argmax_f64(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(mode: Mode) -> CnatModel<f64> {
        let mut cfg = ModelConfig {
            vocab_size: 24,
            d_model: 16,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            d_ff: 32,
            f_max: 3,
            t_max: 16,
            dropout: 0.0,
            labels: 3,
            mode: Mode::Nar,
        };
        cfg.mode = mode;
        CnatModel::new(cfg, 123).unwrap()
    }

    #[test]
    fn copy_by_fertility_examples() {
        assert_eq!(copy_by_fertility(&[7, 9], &[2, 1]).unwrap(), vec![7, 7, 9]);
        assert_eq!(copy_by_fertility(&[5, 6, 7], &[0, 3, 1]).unwrap(), vec![6, 6, 6, 7]);
        assert!(matches!(
            copy_by_fertility(&[5, 6], &[0, 0]),
            Err(Error::EmptyDecoderInput)
        ));
        assert!(matches!(
            copy_by_fertility(&[5, 6], &[1]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn generate_is_deterministic_and_counts_one_pass() {
        let m = model(Mode::Nar);
        let ids = [5, 9, 12];
        let a = m.generate(&ids, true).unwrap();
        let b = m.generate(&ids, true).unwrap();
        assert_eq!(a.decoder_passes, 1);
        assert_eq!(a.label, b.label);
        assert_eq!(a.explanation, b.explanation);
        assert_eq!(a.fertility, b.fertility);
        assert_eq!(a.label_dist, b.label_dist);
        assert_eq!(a.explanation.len(), a.fertility.iter().sum::<usize>());
        assert!((a.label_dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn generate_without_explain_skips_token_dists() {
        let m = model(Mode::Nar);
        let out = m.generate(&[5, 9, 12], false).unwrap();
        assert!(out.explanation.is_empty());
        assert!(out.token_dists.is_empty());
        // the label must not depend on the explain flag
        let with = m.generate(&[5, 9, 12], true).unwrap();
        assert_eq!(out.label, with.label);
        assert_eq!(out.label_dist, with.label_dist);
    }

    #[test]
    fn zero_fertility_falls_back_to_single_position() {
        let m = model(Mode::Nar);
        let mut g = Graph::inference();
        let bind = Bind::frozen(&m.params);
        // whatever the predicted fertilities are, forcing them all to zero
        // through the public path must still produce one decoder token
        let h = m.encode(&mut g, &bind, &[5, 6, 7]).unwrap();
        let (fert, _) = m.predict_fertility(&mut g, &bind, h);
        let out = m.generate(&[5, 6, 7], true).unwrap();
        assert!(out.fertility.iter().sum::<usize>() >= 1);
        assert_eq!(fert.len(), 3);
    }

    #[test]
    fn positional_attention_weights_ignore_content() {
        // queries and keys come from the positional encoding, so the
        // positional attention pattern must be identical for different
        // value inputs of the same length
        let m = model(Mode::Nar);
        let layer = &m.dec[0];
        let mut g = Graph::inference();
        let bind = Bind::frozen(&m.params);
        let d = m.config.d_model;
        let pe = m.pe_node(&mut g, 4);
        let x1 = g.constant(super::super::layers::xavier(&mut ChaCha8Rng::seed_from_u64(1), 4, d), [4, d]);
        let x2 = g.constant(super::super::layers::xavier(&mut ChaCha8Rng::seed_from_u64(2), 4, d), [4, d]);
        let (_, w1) = layer.pos_attn.forward_with_weights(&mut g, &bind, pe, pe, x1, None);
        let (_, w2) = layer.pos_attn.forward_with_weights(&mut g, &bind, pe, pe, x2, None);
        for (a, b) in w1.iter().zip(&w2) {
            assert_eq!(g.data(*a), g.data(*b));
        }
    }

    #[test]
    fn label_head_is_permutation_invariant() {
        let m = model(Mode::Nar);
        let d = m.config.d_model;
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| super::super::layers::xavier(&mut ChaCha8Rng::seed_from_u64(i), 1, d))
            .collect();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let perm: Vec<f64> = [2usize, 0, 3, 1]
            .iter()
            .flat_map(|&i| rows[i].clone())
            .collect();
        let mut g = Graph::inference();
        let bind = Bind::frozen(&m.params);
        let a = g.constant(flat, [4, d]);
        let b = g.constant(perm, [4, d]);
        let la = m.label_logits(&mut g, &bind, a);
        let lb = m.label_logits(&mut g, &bind, b);
        let va = g.data(la).to_vec();
        let vb = g.data(lb).to_vec();
        for (x, y) in va.iter().zip(&vb) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn ar_decode_counts_one_pass_per_token() {
        let mut m = model(Mode::Ar);
        m.set_mode(Mode::Ar);
        let out = m.generate_autoregressive_with(&[5, 9, 12], Some(4)).unwrap();
        assert_eq!(out.explanation.len(), 4);
        assert_eq!(out.decoder_passes, 4);
        assert!(out.fertility.is_empty());
    }

    #[test]
    fn ar_decode_stops_or_truncates() {
        let m = model(Mode::Ar);
        let out = m.generate_autoregressive(&[5, 9, 12]).unwrap();
        assert!(out.explanation.len() <= m.config.t_max);
        if out.explanation.len() == m.config.t_max {
            assert!(out.truncated);
        }
        assert!(!out.explanation.contains(&EOS_ID) || out.truncated);
    }

    #[test]
    fn encode_rejects_empty_and_overlong() {
        let m = model(Mode::Nar);
        let mut g = Graph::inference();
        let bind = Bind::frozen(&m.params);
        assert!(matches!(
            m.encode(&mut g, &bind, &[]),
            Err(Error::EmptyInput)
        ));
        let long = vec![5usize; 17];
        assert!(matches!(
            m.encode(&mut g, &bind, &long),
            Err(Error::LengthOverflow { .. })
        ));
    }

    #[test]
    fn explanation_distributions_are_rows_of_softmax() {
        let m = model(Mode::Nar);
        let out = m.generate(&[5, 9, 12], true).unwrap();
        for row in &out.token_dists {
            assert_eq!(row.len(), m.config.vocab_size);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
