use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{sinusoidal_pe, Bind, EncoderLayer, Linear};
use crate::data::PAD_ID;
use crate::error::{Error, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParamStore, Scalar};

/// Configuration of the encoder-only classifier used as the rationality
/// judge and as a supervised baseline for pseudo-labelled data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub t_max: usize,
    pub dropout: f64,
    pub labels: usize,
}

impl ClassifierConfig {
    pub fn desk(vocab_size: usize, labels: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            heads: 4,
            layers: 2,
            d_ff: 128,
            t_max: 96,
            dropout: 0.1,
            labels,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "kind = classifier\nvocab_size = {}\nd_model = {}\nheads = {}\nlayers = {}\n\
             d_ff = {}\nt_max = {}\ndropout = {}\nlabels = {}\n",
            self.vocab_size,
            self.d_model,
            self.heads,
            self.layers,
            self.d_ff,
            self.t_max,
            self.dropout,
            self.labels
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
            labels: get("labels")?,
        })
    }
}

/// Encoder stack with a mean-pooled MLP label head.
pub struct Classifier<F: Scalar> {
    pub config: ClassifierConfig,
    pub params: ParamStore<F>,
    embed: ParamId,
    pe: Vec<F>,
    layers: Vec<EncoderLayer>,
    hidden: Linear,
    out: Linear,
}

impl<F: Scalar> Clone for Classifier<F> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            embed: self.embed,
            pe: self.pe.clone(),
            layers: self.layers.clone(),
            hidden: self.hidden.clone(),
            out: self.out.clone(),
        }
    }
}

impl<F: Scalar> Classifier<F> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        if config.d_model % config.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "classifier d_model {} not divisible by heads {}",
                config.d_model, config.heads
            )));
        }
        if config.labels < 2 {
            return Err(Error::InvalidConfig("label count must be >= 2".into()));
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
                    &format!("clf.{i}"),
                    d,
                    config.heads,
                    config.d_ff,
                )
            })
            .collect();
        let hidden = Linear::new(&mut store, &mut rng, "clf.hidden", d, d);
        let out = Linear::new(&mut store, &mut rng, "clf.out", d, config.labels);
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
            hidden,
            out,
        })
    }

    pub fn zero_pad_grad(&mut self) {
        let d = self.config.d_model;
        let p = self.params.get_mut(self.embed);
        for g in &mut p.grad[PAD_ID * d..(PAD_ID + 1) * d] {
            *g = F::zero();
        }
    }

    /// Label logits `[1, L]` for a token-id sequence.
    pub fn logits(&self, g: &mut Graph<F>, bind: &Bind<F>, ids: &[usize]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if ids.len() > self.config.t_max {
            return Err(Error::LengthOverflow {
                len: ids.len(),
                max: self.config.t_max,
            });
        }
        let d = self.config.d_model;
        let table = bind.node(g, self.embed);
        let emb = g.gather(table, ids)?;
        let pe = g.constant(self.pe[..ids.len() * d].to_vec(), [ids.len(), d]);
        let mut x = g.add(emb, pe);
        x = g.dropout(x, self.config.dropout);
        for layer in &self.layers {
            x = layer.forward(g, bind, x, None, self.config.dropout);
        }
        let h = self.hidden.forward(g, bind, x);
        let h = g.relu(h);
        let h = self.out.forward(g, bind, h);
        Ok(g.mean_rows(h))
    }

    /// Most likely label for a token-id sequence.
    pub fn predict(&self, ids: &[usize]) -> Result<usize> {
        let mut g = Graph::inference();
        let bind = Bind::frozen(&self.params);
        let logits = self.logits(&mut g, &bind, ids)?;
        let row = g.data(logits);
        let mut best = 0;
        for i in 1..row.len() {
            if row[i] > row[best] {
                best = i;
            }
        }
        Ok(best)
    }
}
