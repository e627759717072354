use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    build_self_attention_mask, mask_node, sinusoidal_pe, Bind, EncoderLayer, Linear, Mode,
};
use crate::data::{BOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParamStore, Scalar};

/// Configuration of the decoder-only causal LM used as fluency
/// discriminator during training and perplexity scorer at evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub t_max: usize,
    pub dropout: f64,
}

impl LmConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            heads: 4,
            layers: 2,
            d_ff: 128,
            t_max: 64,
            dropout: 0.1,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "kind = lm\nvocab_size = {}\nd_model = {}\nheads = {}\nlayers = {}\n\
             d_ff = {}\nt_max = {}\ndropout = {}\n",
            self.vocab_size,
            self.d_model,
            self.heads,
            self.layers,
            self.d_ff,
            self.t_max,
            self.dropout
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg = crate::data::config::ConfigFile::parse(text)?;
        let get = |k: &str| -> Result<usize> {
            cfg.get_parsed::<usize>("", k)?
                .ok_or_else(|| Error::BadCheckpoint(format!("missing config key {k}")))
        };
        Ok(Self {
            vocab_size: get("vocab_size")?,
            d_model: get("d_model")?,
            heads: get("heads")?,
            layers: get("layers")?,
            d_ff: get("d_ff")?,
            t_max: get("t_max")?,
            dropout: cfg.get_or("", "dropout", 0.1)?,
        })
    }
}

/// Decoder-only causal language model over the shared vocabulary.
pub struct LmModel<F: Scalar> {
    pub config: LmConfig,
    pub params: ParamStore<F>,
    embed: ParamId,
    pe: Vec<F>,
    layers: Vec<EncoderLayer>,
    out: Linear,
}

impl<F: Scalar> Clone for LmModel<F> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            embed: self.embed,
            pe: self.pe.clone(),
            layers: self.layers.clone(),
            out: self.out.clone(),
        }
    }
}

impl<F: Scalar> LmModel<F> {
    pub fn new(config: LmConfig, seed: u64) -> Result<Self> {
        if config.d_model % config.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "lm d_model {} not divisible by heads {}",
                config.d_model, config.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let mut emb = super::layers::xavier::<F>(&mut rng, config.vocab_size, d);
        for v in &mut emb[PAD_ID * d..(PAD_ID + 1) * d] {
            *v = F::zero();
        }
        let embed = store.add("embed", [config.vocab_size, d], emb);
        let layers = (0..config.layers)
            .map(|i| {
                EncoderLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("lm.{i}"),
                    d,
                    config.heads,
                    config.d_ff,
                )
            })
            .collect();
        let out = Linear::new(&mut store, &mut rng, "lm.out", d, config.vocab_size);
        let pe = sinusoidal_pe(config.t_max, d)
            .into_iter()
            .map(F::from_f64)
            .collect();
        Ok(Self {
            config,
            params: store,
            embed,
            pe,
            layers,
            out,
        })
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embed
    }

    pub fn zero_pad_grad(&mut self) {
        let d = self.config.d_model;
        let p = self.params.get_mut(self.embed);
        for g in &mut p.grad[PAD_ID * d..(PAD_ID + 1) * d] {
            *g = F::zero();
        }
    }

    fn pe_node(&self, g: &mut Graph<F>, t: usize) -> NodeId {
        let d = self.config.d_model;
        g.constant(self.pe[..t * d].to_vec(), [t, d])
    }

    /// Causal transformer over input embedding rows; vocabulary logits
    /// per position `[T, V]`.
    pub fn forward_embedded(
        &self,
        g: &mut Graph<F>,
        bind: &Bind<F>,
        emb: NodeId,
    ) -> Result<NodeId> {
        let t = g.shape(emb)[0];
        if t > self.config.t_max {
            return Err(Error::LengthOverflow {
                len: t,
                max: self.config.t_max,
            });
        }
        let pe = self.pe_node(g, t);
        let mut x = g.add(emb, pe);
        x = g.dropout(x, self.config.dropout);
        let allowed = build_self_attention_mask(t, Mode::Ar);
        let mask = mask_node(g, &allowed, t);
        for layer in &self.layers {
            x = layer.forward(g, bind, x, Some(mask), self.config.dropout);
        }
        Ok(self.out.forward(g, bind, x))
    }

    /// Next-token logits for a token-id sequence shifted right behind BOS:
    /// row `t` predicts `ids[t]`.
    pub fn forward_ids(&self, g: &mut Graph<F>, bind: &Bind<F>, ids: &[usize]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut input = vec![BOS_ID];
        input.extend_from_slice(&ids[..ids.len() - 1]);
        let table = bind.node(g, self.embed);
        let emb = g.gather(table, &input)?;
        self.forward_embedded(g, bind, emb)
    }

    /// `sum_t log p_LM(token_t | prefix)` for a token-id sequence.
    pub fn log_likelihood_ids(&self, g: &mut Graph<F>, bind: &Bind<F>, ids: &[usize]) -> Result<NodeId> {
        let logits = self.forward_ids(g, bind, ids)?;
        let logp = g.log_softmax_rows(logits)?;
        let v = self.config.vocab_size;
        let mut onehot = vec![F::zero(); ids.len() * v];
        for (t, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(Error::BadTokenId { id, vocab: v });
            }
            onehot[t * v + id] = F::one();
        }
        let oh = g.constant(onehot, [ids.len(), v]);
        let picked = g.mul(logp, oh);
        Ok(g.sum_all(picked))
    }

    /// Expected log-likelihood of soft token distributions `probs [T, V]`:
    /// the soft embedding `P_t . EmbTable` is the LM input at `t`, and the
    /// score is `sum_t <P_t, log p_LM(.|prefix)>`. Differentiable w.r.t.
    /// `probs`; LM parameters stay frozen when bound frozen.
    pub fn log_likelihood_soft(
        &self,
        g: &mut Graph<F>,
        bind: &Bind<F>,
        probs: NodeId,
    ) -> Result<NodeId> {
        let [t, v] = g.shape(probs);
        if v != self.config.vocab_size {
            return Err(Error::VocabMismatch {
                model: v,
                lm: self.config.vocab_size,
            });
        }
        if t > self.config.t_max {
            return Err(Error::LengthOverflow {
                len: t,
                max: self.config.t_max,
            });
        }
        let table = bind.node(g, self.embed);
        let bos = g.gather(table, &[BOS_ID])?;
        let input = if t > 1 {
            let soft = g.matmul(probs, table);
            let prefix = g.slice_rows(soft, 0, t - 1);
            g.concat_rows(bos, prefix)
        } else {
            bos
        };
        let logits = self.forward_embedded(g, bind, input)?;
        let logp = g.log_softmax_rows(logits)?;
        let picked = g.mul(logp, probs);
        Ok(g.sum_all(picked))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm() -> LmModel<f64> {
        let cfg = LmConfig {
            vocab_size: 12,
            d_model: 16,
            heads: 2,
            layers: 1,
            d_ff: 32,
            t_max: 16,
            dropout: 0.0,
        };
        LmModel::new(cfg, 42).unwrap()
    }

    #[test]
    fn one_hot_soft_matches_id_path() {
        let m = lm();
        let ids = [5, 7, 6, 9];
        let mut g = Graph::inference();
        let bind = Bind::frozen(&m.params);
        let ll_ids = m.log_likelihood_ids(&mut g, &bind, &ids).unwrap();
        let v = m.config.vocab_size;
        let mut onehot = vec![0.0; ids.len() * v];
        for (t, &id) in ids.iter().enumerate() {
            onehot[t * v + id] = 1.0;
        }
        let p = g.constant(onehot, [ids.len(), v]);
        let ll_soft = m.log_likelihood_soft(&mut g, &bind, p).unwrap();
        let a = g.scalar_value(ll_ids);
        let b = g.scalar_value(ll_soft);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn uniform_lm_scores_minus_log_v() {
        // zero output projection -> uniform next-token distribution
        let mut m = lm();
        let w = m.out.w;
        let b = m.out.b;
        for x in &mut m.params.get_mut(w).data {
            *x = 0.0;
        }
        for x in &mut m.params.get_mut(b).data {
            *x = 0.0;
        }
        let ids = [3, 4, 5];
        let mut g = Graph::inference();
        let bind = Bind::frozen(&m.params);
        let ll = m.log_likelihood_ids(&mut g, &bind, &ids).unwrap();
        let per_token = g.scalar_value(ll) / ids.len() as f64;
        assert!((per_token + (m.config.vocab_size as f64).ln()).abs() < 1e-10);
    }

    #[test]
    fn soft_gradient_matches_finite_differences() {
        use crate::numcore::gradcheck::{central_diff, max_rel_error};
        let m = lm();
        let v = m.config.vocab_size;
        let t = 3;
        // a valid softmax-ish input (positive, rows sum to 1)
        let base: Vec<f64> = (0..t * v)
            .map(|i| 1.0 / v as f64 + 0.01 * ((i % 5) as f64 - 2.0) / v as f64)
            .collect();
        let forward = |p: &[f64]| {
            let mut g = Graph::inference();
            let bind = Bind::frozen(&m.params);
            let pn = g.constant(p.to_vec(), [t, v]);
            let ll = m.log_likelihood_soft(&mut g, &bind, pn).unwrap();
            g.scalar_value(ll)
        };
        let numeric = central_diff(&base, 1e-6, forward);
        let mut g = Graph::inference();
        let bind = Bind::frozen(&m.params);
        let pn = g.leaf(base.clone(), [t, v]);
        let ll = m.log_likelihood_soft(&mut g, &bind, pn).unwrap();
        g.backward(ll).unwrap();
        let err = max_rel_error(g.grad(pn).unwrap(), &numeric);
        assert!(err < 1e-3, "rel error {err}");
    }

    #[test]
    fn rejects_vocab_mismatch() {
        let m = lm();
        let mut g = Graph::inference();
        let bind = Bind::frozen(&m.params);
        let p = g.constant(vec![0.1; 2 * 9], [2, 9]);
        assert!(matches!(
            m.log_likelihood_soft(&mut g, &bind, p),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn rejects_length_overflow() {
        let m = lm();
        let ids: Vec<usize> = (0..20).map(|i| i % 10).collect();
        let mut g = Graph::inference();
        let bind = Bind::frozen(&m.params);
        assert!(matches!(
            m.log_likelihood_ids(&mut g, &bind, &ids),
            Err(Error::LengthOverflow { .. })
        ));
    }
}
