use crate::data::PAD_ID;
use crate::error::{Error, Result};
use crate::model::layers::Bind;
use crate::model::LmModel;
use crate::numcore::{Graph, NodeId, Scalar};

/// Coefficients of Eq.-style total objective
/// `L = L_L + lambda_e * L_E + lambda_f * L_F + lambda_lm * L_LM`.
/// The label term's coefficient is fixed at 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_e: f64,
    pub lambda_f: f64,
    pub lambda_lm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_e: 1.0,
            lambda_f: 0.5,
            lambda_lm: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_e < 0.0 || self.lambda_f < 0.0 || self.lambda_lm < 0.0 {
            return Err(Error::InvalidConfig(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// L_L: cross-entropy of label logits `[1, L]` against the gold label.
pub fn label_loss<F: Scalar>(g: &mut Graph<F>, logits: NodeId, gold: usize) -> Result<NodeId> {
    g.cross_entropy_rows(logits, &[Some(gold)])
}

/// L_E: mean per-token cross-entropy of explanation logits `[T, V]`
/// against teacher-forced gold tokens; PAD positions are excluded.
pub fn explanation_loss<F: Scalar>(
    g: &mut Graph<F>,
    logits: NodeId,
    gold: &[usize],
) -> Result<NodeId> {
    let rows = g.shape(logits)[0];
    if gold.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            got: gold.len(),
        });
    }
    let targets: Vec<Option<usize>> = gold
        .iter()
        .map(|&t| if t == PAD_ID { None } else { Some(t) })
        .collect();
    g.cross_entropy_rows(logits, &targets)
}

/// L_F: mean per-position cross-entropy of fertility logits
/// `[S, f_max+1]` against target fertilities.
pub fn fertility_loss<F: Scalar>(
    g: &mut Graph<F>,
    logits: NodeId,
    target: &[usize],
    f_max: usize,
) -> Result<NodeId> {
    let rows = g.shape(logits)[0];
    if target.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            got: target.len(),
        });
    }
    for &t in target {
        if t > f_max {
            return Err(Error::FertilityOverflow { target: t, max: f_max });
        }
    }
    let targets: Vec<Option<usize>> = target.iter().map(|&t| Some(t)).collect();
    g.cross_entropy_rows(logits, &targets)
}

/// L_LM: negative mean per-token expected log-likelihood of the predicted
/// token distributions under the frozen LM, via soft embeddings.
pub fn lm_fluency_loss<F: Scalar>(
    g: &mut Graph<F>,
    lm: &LmModel<F>,
    lm_bind: &Bind<F>,
    token_dists: NodeId,
) -> Result<NodeId> {
    let t = g.shape(token_dists)[0];
    let ll = lm.log_likelihood_soft(g, lm_bind, token_dists)?;
    Ok(g.scale(ll, F::from_f64(-1.0 / t as f64)))
}

/// `L = L_L + lambda_e * L_E + lambda_f * L_F + lambda_lm * L_LM`; absent
/// optional parts contribute nothing. Every present part must be finite.
pub fn total_loss<F: Scalar>(
    g: &mut Graph<F>,
    l_label: NodeId,
    l_expl: Option<NodeId>,
    l_fert: Option<NodeId>,
    l_lm: Option<NodeId>,
    weights: &LossWeights,
) -> Result<NodeId> {
    weights.validate()?;
    let check = |g: &Graph<F>, n: NodeId, name: &'static str| -> Result<()> {
        if !g.scalar_value(n).as_f64().is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
        Ok(())
    };
    check(g, l_label, "label")?;
    let mut total = l_label;
    if let Some(e) = l_expl {
        check(g, e, "explanation")?;
        let w = g.scale(e, F::from_f64(weights.lambda_e));
        total = g.add(total, w);
    }
    if let Some(f) = l_fert {
        check(g, f, "fertility")?;
        let w = g.scale(f, F::from_f64(weights.lambda_f));
        total = g.add(total, w);
    }
    if let Some(l) = l_lm {
        check(g, l, "lm")?;
        let w = g.scale(l, F::from_f64(weights.lambda_lm));
        total = g.add(total, w);
    }
    Ok(total)
}
