//! Eq.-(1) objective, fertility target derivation, LM pre-training, and
//! the seeded training loops for the three supervision regimes.

mod fertility;
mod losses;

pub use fertility::target_fertility;
pub use losses::{
    explanation_loss, fertility_loss, label_loss, lm_fluency_loss, total_loss, LossWeights,
};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Example, Provenance, Vocab, BOS_ID, EOS_ID};
use crate::error::{Error, Result};
use crate::model::layers::Bind;
use crate::model::{copy_by_fertility, CnatModel, LmModel, Mode};
use crate::numcore::{AdamState, Graph, Scalar};

/// Supervision regime of a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Full,
    Weak,
    Unsup,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Full => write!(f, "full"),
            Regime::Weak => write!(f, "weak"),
            Regime::Unsup => write!(f, "unsup"),
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Regime::Full),
            "weak" => Ok(Regime::Weak),
            "unsup" => Ok(Regime::Unsup),
            other => Err(format!("unknown regime `{other}` (expected full|weak|unsup)")),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub regime: Regime,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Full,
            steps: 500,
            batch_size: 8,
            lr: 4e-5,
            weights: LossWeights::default(),
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("step budget must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        self.weights.validate()
    }
}

/// One line of the metric history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub label_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expl_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fert_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_loss: Option<f64>,
    pub grad_norm: f64,
}

/// Append metric history as line-delimited JSON.
pub fn write_history(path: &Path, history: &[StepMetrics]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for m in history {
        serde_json::to_writer(&mut file, m)
            .map_err(|e| Error::InvalidConfig(format!("metric serialization: {e}")))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

struct Prepared {
    input_ids: Vec<usize>,
    expl_ids: Vec<usize>,
    label: usize,
    fert: Vec<usize>,
}

fn check_regime(regime: Regime, dataset: &[Example]) -> Result<()> {
    let mismatch = |reason: &str| {
        Err(Error::RegimeDataMismatch {
            regime: regime.to_string(),
            reason: reason.to_string(),
        })
    };
    for ex in dataset {
        if ex.label.is_none() {
            return mismatch("record without a label");
        }
        if ex.explanation.is_none() {
            return mismatch("record without an explanation");
        }
        match regime {
            Regime::Full => {
                if ex.provenance != Provenance::Human {
                    return mismatch("full supervision requires human-provenance records");
                }
            }
            Regime::Weak => {}
            Regime::Unsup => {
                if ex.provenance != Provenance::Pseudo {
                    return mismatch(
                        "unsupervised training expects pseudo-provenance explanation targets",
                    );
                }
            }
        }
    }
    Ok(())
}

fn prepare<F: Scalar>(
    model: &CnatModel<F>,
    dataset: &[Example],
    vocab: &Vocab,
) -> Result<Vec<Prepared>> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(dataset.len());
    for ex in dataset {
        let input_ids = vocab.encode_tokens(&ex.input_tokens());
        if input_ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if input_ids.len() > cfg.t_max {
            return Err(Error::LengthOverflow {
                len: input_ids.len(),
                max: cfg.t_max,
            });
        }
        let label = ex.label.expect("checked by regime validation");
        if label >= cfg.labels {
            return Err(Error::BadTarget {
                index: label,
                classes: cfg.labels,
            });
        }
        let expl = ex.explanation.as_ref().expect("checked by regime validation");
        let expl_ids = vocab.encode_tokens(&tokenize(expl));
        if expl_ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if expl_ids.len() > cfg.t_max {
            return Err(Error::LengthOverflow {
                len: expl_ids.len(),
                max: cfg.t_max,
            });
        }
        let fert = match cfg.mode {
            Mode::Nar => target_fertility(
                input_ids.len(),
                expl_ids.len(),
                ex.alignment.as_deref(),
                cfg.f_max,
            )?,
            Mode::Ar => Vec::new(),
        };
        out.push(Prepared {
            input_ids,
            expl_ids,
            label,
            fert,
        });
    }
    Ok(out)
}

/// A training run in progress: optimizer state, shuffled data order and
/// step counter, so callers can interleave training with evaluation.
pub struct TrainSession<F: Scalar> {
    cfg: TrainConfig,
    prepared: Vec<Prepared>,
    opt: AdamState<F>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl<F: Scalar> TrainSession<F> {
    pub fn new(
        model: &CnatModel<F>,
        lm: Option<&LmModel<F>>,
        dataset: &[Example],
        vocab: &Vocab,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::EmptyInput);
        }
        if vocab.len() != model.config.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "vocab size {} does not match model vocab {}",
                vocab.len(),
                model.config.vocab_size
            )));
        }
        if let Some(lm) = lm {
            if lm.config.vocab_size != model.config.vocab_size {
                return Err(Error::VocabMismatch {
                    model: model.config.vocab_size,
                    lm: lm.config.vocab_size,
                });
            }
        }
        check_regime(cfg.regime, dataset)?;
        let prepared = prepare(model, dataset, vocab)?;
        let opt = AdamState::new(&model.params, cfg.lr);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let order = (0..prepared.len()).collect();
        Ok(Self {
            cfg,
            prepared,
            opt,
            rng,
            order,
            cursor: 0,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size.min(self.prepared.len()) {
            if self.cursor == 0 {
                self.order.shuffle(&mut self.rng);
            }
            batch.push(self.order[self.cursor]);
            self.cursor = (self.cursor + 1) % self.order.len();
        }
        batch
    }

    /// Run `n` optimizer steps; one metric record per step.
    pub fn run_steps(
        &mut self,
        model: &mut CnatModel<F>,
        lm: Option<&LmModel<F>>,
        n: usize,
    ) -> Result<Vec<StepMetrics>> {
        let mut history = Vec::with_capacity(n);
        for _ in 0..n {
            let batch = self.next_batch();
            let b = batch.len();
            model.params.zero_grads();
            let mut sums = [0.0f64; 4];
            let mut lm_sum = 0.0f64;
            let mut has = [false; 3];
            for &idx in &batch {
                let ex = &self.prepared[idx];
                let graph_seed: u64 = self.rng.gen();
                let mut g = Graph::train(ChaCha8Rng::seed_from_u64(graph_seed));
                let bind = Bind::trainable(&model.params);

                let enc_h = model.encode(&mut g, &bind, &ex.input_ids)?;
                let (l_fert, y_ids, targets) = match model.config.mode {
                    Mode::Nar => {
                        let fl = model.fertility_logits(&mut g, &bind, enc_h);
                        let lf =
                            fertility_loss(&mut g, fl, &ex.fert, model.config.f_max)?;
                        let y = copy_by_fertility(&ex.input_ids, &ex.fert)?;
                        (Some(lf), y, ex.expl_ids.clone())
                    }
                    Mode::Ar => {
                        // teacher forcing: predict each token (and EOS)
                        // from the BOS-shifted prefix
                        let mut y = vec![BOS_ID];
                        y.extend_from_slice(&ex.expl_ids);
                        let mut t = ex.expl_ids.clone();
                        t.push(EOS_ID);
                        (None, y, t)
                    }
                };
                let h_d = model.decode(&mut g, &bind, &y_ids, enc_h)?;
                let expl_logits = model.explanation_logits(&mut g, &bind, h_d);
                let l_expl = explanation_loss(&mut g, expl_logits, &targets)?;
                let label_logits = model.label_logits(&mut g, &bind, h_d);
                let l_label = label_loss(&mut g, label_logits, ex.label)?;
                let l_lm = match lm {
                    Some(lm) if self.cfg.weights.lambda_lm > 0.0 => {
                        let lm_bind = Bind::frozen(&lm.params);
                        let probs = g.softmax_rows(expl_logits)?;
                        Some(lm_fluency_loss(&mut g, lm, &lm_bind, probs)?)
                    }
                    _ => None,
                };
                let total =
                    total_loss(&mut g, l_label, Some(l_expl), l_fert, l_lm, &self.cfg.weights)?;

                sums[0] += g.scalar_value(total).as_f64();
                sums[1] += g.scalar_value(l_label).as_f64();
                sums[2] += g.scalar_value(l_expl).as_f64();
                if let Some(lf) = l_fert {
                    sums[3] += g.scalar_value(lf).as_f64();
                    has[1] = true;
                }
                if let Some(n) = l_lm {
                    lm_sum += g.scalar_value(n).as_f64();
                    has[2] = true;
                }

                let scaled = g.scale(total, F::from_f64(1.0 / b as f64));
                g.backward(scaled)?;
                g.collect_param_grads(&mut model.params);
            }
            let grad_norm = model.params.grad_norm();
            model.zero_pad_grad();
            model.params.clip_grad_norm(self.cfg.clip_norm);
            self.opt.step(&mut model.params)?;
            self.step += 1;

            history.push(StepMetrics {
                step: self.step,
                loss: sums[0] / b as f64,
                label_loss: sums[1] / b as f64,
                expl_loss: Some(sums[2] / b as f64),
                fert_loss: has[1].then(|| sums[3] / b as f64),
                lm_loss: has[2].then(|| lm_sum / b as f64),
                grad_norm,
            });
        }
        Ok(history)
    }
}

/// One-shot training entry point: build a session and run the full budget.
pub fn train<F: Scalar>(
    model: &mut CnatModel<F>,
    lm: Option<&LmModel<F>>,
    dataset: &[Example],
    vocab: &Vocab,
    cfg: TrainConfig,
) -> Result<Vec<StepMetrics>> {
    let steps = cfg.steps;
    let mut session = TrainSession::new(model, lm, dataset, vocab, cfg)?;
    session.run_steps(model, lm, steps)
}

/// Hyperparameters of LM pre-training.
#[derive(Clone, Debug)]
pub struct LmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            batch_size: 8,
            lr: 1e-3,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

/// Token-id training sequences for the LM: each explanation plus EOS.
pub fn lm_corpus(dataset: &[Example], vocab: &Vocab) -> Vec<Vec<usize>> {
    dataset
        .iter()
        .filter_map(|ex| ex.explanation.as_ref())
        .map(|e| {
            let mut ids = vocab.encode_tokens(&tokenize(e));
            ids.push(EOS_ID);
            ids
        })
        .filter(|ids| ids.len() > 1)
        .collect()
}

/// Next-token cross-entropy pre-training of the causal LM. Returns the
/// per-step mean NLL history.
pub fn pretrain_lm<F: Scalar>(
    lm: &mut LmModel<F>,
    sequences: &[Vec<usize>],
    cfg: &LmTrainConfig,
) -> Result<Vec<StepMetrics>> {
    if sequences.is_empty() || sequences.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptyInput);
    }
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("lm step/batch budget must be >= 1".into()));
    }
    let mut opt = AdamState::new(&lm.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut cursor = 0usize;
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let b = cfg.batch_size.min(sequences.len());
        lm.params.zero_grads();
        let mut nll_sum = 0.0;
        for _ in 0..b {
            if cursor == 0 {
                order.shuffle(&mut rng);
            }
            let seq = &sequences[order[cursor]];
            cursor = (cursor + 1) % order.len();

            let graph_seed: u64 = rng.gen();
            let mut g = Graph::train(ChaCha8Rng::seed_from_u64(graph_seed));
            let bind = Bind::trainable(&lm.params);
            let logits = lm.forward_ids(&mut g, &bind, seq)?;
            let targets: Vec<Option<usize>> = seq.iter().map(|&t| Some(t)).collect();
            let nll = g.cross_entropy_rows(logits, &targets)?;
            nll_sum += g.scalar_value(nll).as_f64();
            let scaled = g.scale(nll, F::from_f64(1.0 / b as f64));
            g.backward(scaled)?;
            g.collect_param_grads(&mut lm.params);
        }
        let grad_norm = lm.params.grad_norm();
        lm.zero_pad_grad();
        lm.params.clip_grad_norm(cfg.clip_norm);
        opt.step(&mut lm.params)?;
        let mean_nll = nll_sum / b as f64;
        if !mean_nll.is_finite() {
            return Err(Error::NonFiniteLoss("lm pretraining"));
        }
        history.push(StepMetrics {
            step,
            loss: mean_nll,
            label_loss: 0.0,
            expl_loss: None,
            fert_loss: None,
            lm_loss: None,
            grad_norm,
        });
    }
    Ok(history)
}
