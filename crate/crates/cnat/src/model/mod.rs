//! The C-NAT network: encoder stack, non-autoregressive decoder stack,
//! fertility predictor, explanation predictor and label predictor, plus an
//! autoregressive decode mode, a small causal LM (discriminator/scorer)
//! and an encoder-only classifier used as baseline and judge.

pub mod checkpoint;
mod classifier;
mod cnat;
pub mod layers;
mod lm;

pub use classifier::{Classifier, ClassifierConfig};
pub use cnat::{copy_by_fertility, CnatModel, GenerationOutput};
pub use layers::{build_self_attention_mask, sinusoidal_pe, Mode};
pub use lm::{LmConfig, LmModel};

use crate::error::{Error, Result};

/// Architecture configuration of a C-NAT model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_ff: usize,
    pub f_max: usize,
    pub t_max: usize,
    pub dropout: f64,
    pub labels: usize,
    pub mode: Mode,
}

impl ModelConfig {
    /// Full-scale defaults: d=512, 8 heads, 6+6 layers, dropout 0.3.
    pub fn full_scale(vocab_size: usize, labels: usize) -> Self {
        Self {
            vocab_size,
            d_model: 512,
            heads: 8,
            enc_layers: 6,
            dec_layers: 6,
            d_ff: 2048,
            f_max: 3,
            t_max: 64,
            dropout: 0.3,
            labels,
            mode: Mode::Nar,
        }
    }

    /// Desk-scale preset: d=128, 4 heads, 2+2 layers.
    pub fn desk(vocab_size: usize, labels: usize) -> Self {
        Self {
            vocab_size,
            d_model: 128,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            d_ff: 256,
            f_max: 3,
            t_max: 64,
            dropout: 0.1,
            labels,
            mode: Mode::Nar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.f_max < 1 {
            return Err(Error::InvalidConfig("f_max must be >= 1".into()));
        }
        if self.labels < 2 {
            return Err(Error::InvalidConfig("label count must be >= 2".into()));
        }
        if self.vocab_size == 0 || self.d_model == 0 || self.t_max == 0 {
            return Err(Error::InvalidConfig("zero-sized dimension".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "kind = cnat\nvocab_size = {}\nd_model = {}\nheads = {}\nenc_layers = {}\n\
             dec_layers = {}\nd_ff = {}\nf_max = {}\nt_max = {}\ndropout = {}\n\
             labels = {}\nmode = {}\n",
            self.vocab_size,
            self.d_model,
            self.heads,
            self.enc_layers,
            self.dec_layers,
            self.d_ff,
            self.f_max,
            self.t_max,
            self.dropout,
            self.labels,
            self.mode
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg = crate::data::config::ConfigFile::parse(text)?;
        let get = |k: &str| -> Result<usize> {
            cfg.get_parsed::<usize>("", k)?
                .ok_or_else(|| Error::BadCheckpoint(format!("missing config key {k}")))
        };
        let mode: Mode = cfg
            .get("", "mode")
            .unwrap_or("nar")
            .parse()
            .map_err(Error::InvalidConfig)?;
        let out = Self {
            vocab_size: get("vocab_size")?,
            d_model: get("d_model")?,
            heads: get("heads")?,
            enc_layers: get("enc_layers")?,
            dec_layers: get("dec_layers")?,
            d_ff: get("d_ff")?,
            f_max: get("f_max")?,
            t_max: get("t_max")?,
            dropout: cfg.get_or("", "dropout", 0.1)?,
            labels: get("labels")?,
            mode,
        };
        out.validate()?;
        Ok(out)
    }
}
