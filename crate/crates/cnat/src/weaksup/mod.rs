//! Weakly-supervised data factory: labeling functions with explanation
//! templates, independent-accuracy label-model weight learning, weighted
//! vote aggregation, pseudo-explanation instantiation and combined
//! dataset assembly.

mod rules;

pub use rules::{Atom, Rule};

use rayon::prelude::*;

use crate::data::synthetic::TaskKind;
use crate::data::{Example, Provenance};
use crate::error::{Error, Result};

/// One labeling function: a rule, the label it votes for, and the
/// explanation template used when it wins.
#[derive(Clone, Debug)]
pub struct LabelingFunction {
    pub name: String,
    pub label: usize,
    pub rule: Rule,
    pub template: String,
    /// Learned accuracy weight; 0.5 (the prior) until `learn_weights`.
    pub weight: f64,
}

/// A parsed LF config: the functions plus the marked-entity inventory.
#[derive(Clone, Debug)]
pub struct LfSet {
    pub lfs: Vec<LabelingFunction>,
    pub entities: Vec<String>,
}

fn template_slots(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        out.push(&rest[start + 1..start + len]);
        rest = &rest[start + len + 1..];
    }
    out
}

/// Parse an LF config file: an optional `[entities]` section (`names =`
/// space-separated) and one `[lf.<name>]` section per labeling function
/// with `label`, `rule` and `template` keys. All structural problems
/// surface here as `BadRule`, never during application.
pub fn load_lf_config(text: &str, num_labels: usize) -> Result<LfSet> {
    let cfg = crate::data::config::ConfigFile::parse(text)?;
    let entities: Vec<String> = cfg
        .get("entities", "names")
        .map(|names| names.split_whitespace().map(|s| s.to_lowercase()).collect())
        .unwrap_or_default();
    let mut lfs = Vec::new();
    for section in cfg.section_names() {
        let Some(name) = section.strip_prefix("lf.") else {
            continue;
        };
        let bad = |reason: String| Error::BadRule {
            rule: section.to_string(),
            reason,
        };
        let label: usize = cfg
            .get(section, "label")
            .ok_or_else(|| bad("missing label".into()))?
            .parse()
            .map_err(|_| bad("label is not an integer".into()))?;
        if label >= num_labels {
            return Err(bad(format!("label {label} out of range for {num_labels} labels")));
        }
        let rule_text = cfg
            .get(section, "rule")
            .ok_or_else(|| bad("missing rule".into()))?;
        let rule = Rule::parse(rule_text)?;
        let template = cfg
            .get(section, "template")
            .ok_or_else(|| bad("missing template".into()))?
            .to_string();
        for slot in template_slots(&template) {
            let supported = match slot {
                "A" | "B" => true,
                "keyword" => rule.has_positive_token(),
                "E1" => rule.uses_near() || rule.uses_new_entity(),
                "E2" => rule.uses_near(),
                _ => false,
            };
            if !supported {
                return Err(bad(format!("template slot {{{slot}}} has no extraction rule")));
            }
        }
        if (rule.uses_near() || rule.uses_new_entity()) && entities.is_empty() {
            return Err(bad("rule needs an [entities] inventory".into()));
        }
        lfs.push(LabelingFunction {
            name: name.to_string(),
            label,
            rule,
            template,
            weight: 0.5,
        });
    }
    if lfs.is_empty() {
        return Err(Error::BadRule {
            rule: "<config>".into(),
            reason: "no [lf.*] sections".into(),
        });
    }
    Ok(LfSet { lfs, entities })
}

/// Per-(example, LF) votes; `None` is ABSTAIN.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteMatrix {
    pub votes: Vec<Vec<Option<usize>>>,
}

impl VoteMatrix {
    pub fn rows(&self) -> usize {
        self.votes.len()
    }
}

/// Evaluate every LF on one example.
pub fn apply_lfs_row(ex: &Example, set: &LfSet) -> Vec<Option<usize>> {
    set.lfs
        .iter()
        .map(|lf| lf.rule.eval(ex, &set.entities).then_some(lf.label))
        .collect()
}

/// Evaluate every LF on every example (parallel over examples).
pub fn apply_lfs(examples: &[Example], set: &LfSet) -> VoteMatrix {
    let votes = examples
        .par_iter()
        .map(|ex| apply_lfs_row(ex, set))
        .collect();
    VoteMatrix { votes }
}

/// Learned accuracy weights, with a flag per LF that never voted (its
/// weight stays at the 0.5 prior).
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedWeights {
    pub w: Vec<f64>,
    pub never_voted: Vec<bool>,
}

const W_MIN: f64 = 0.05;
const W_MAX: f64 = 0.95;

/// Log marginal likelihood of a vote matrix under the independent-LF
/// generative model: labels latent and uniform; a voting LF is correct
/// with probability `w_m`, otherwise its error spreads uniformly over the
/// remaining labels. Abstains carry no information.
pub fn log_marginal_likelihood(votes: &VoteMatrix, w: &[f64], num_labels: usize) -> f64 {
    let l = num_labels as f64;
    votes
        .votes
        .iter()
        .map(|row| {
            let mut marginal = 0.0;
            for y in 0..num_labels {
                let mut p = 1.0 / l;
                for (m, vote) in row.iter().enumerate() {
                    if let Some(v) = vote {
                        p *= if *v == y { w[m] } else { (1.0 - w[m]) / (l - 1.0) };
                    }
                }
                marginal += p;
            }
            marginal.max(f64::MIN_POSITIVE).ln()
        })
        .sum()
}

/// Fit the label model by gradient ascent on the weight logits. The
/// marginal likelihood is multimodal, so the ascent restarts from a set
/// of deterministic initializations (uniform and one-reliable-voter
/// patterns) and keeps the best-scoring solution.
pub fn learn_weights(votes: &VoteMatrix, num_labels: usize) -> Result<LearnedWeights> {
    let m_count = votes.votes.first().map_or(0, |r| r.len());
    if votes.votes.iter().flatten().all(|v| v.is_none()) {
        return Err(Error::EmptyInput);
    }
    let never_voted: Vec<bool> = (0..m_count)
        .map(|m| votes.votes.iter().all(|row| row[m].is_none()))
        .collect();
    let mut inits: Vec<Vec<f64>> = vec![
        vec![0.7; m_count],
        vec![0.3; m_count],
        vec![0.9; m_count],
    ];
    for lead in 0..m_count {
        let mut w = vec![0.2; m_count];
        w[lead] = 0.9;
        inits.push(w);
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for init in inits {
        let w = ascend(votes, num_labels, &init);
        let ll = log_marginal_likelihood(votes, &w, num_labels);
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, w));
        }
    }
    let w: Vec<f64> = best
        .expect("at least one initialization")
        .1
        .into_iter()
        .zip(&never_voted)
        .map(|(w, &never)| if never { 0.5 } else { w })
        .collect();
    Ok(LearnedWeights { w, never_voted })
}

fn ascend(votes: &VoteMatrix, num_labels: usize, init: &[f64]) -> Vec<f64> {
    let m_count = init.len();
    let l = num_labels as f64;
    // logit parameterization keeps w in (0,1)
    let mut theta: Vec<f64> = init.iter().map(|w| (w / (1.0 - w)).ln()).collect();
    let lr = 1.0;
    let iters = 20000;
    for _ in 0..iters {
        let mut grad = vec![0.0f64; m_count];
        for row in &votes.votes {
            let mut probs = vec![0.0f64; num_labels];
            for (y, p) in probs.iter_mut().enumerate() {
                let mut acc = 1.0 / l;
                for (m, vote) in row.iter().enumerate() {
                    if let Some(v) = vote {
                        let w = sigmoid(theta[m]);
                        acc *= if *v == y { w } else { (1.0 - w) / (l - 1.0) };
                    }
                }
                *p = acc;
            }
            let total: f64 = probs.iter().sum();
            if total <= 0.0 {
                continue;
            }
            for (m, vote) in row.iter().enumerate() {
                let Some(v) = vote else { continue };
                let w = sigmoid(theta[m]);
                let mut dw = 0.0;
                for (y, p) in probs.iter().enumerate() {
                    let r = p / total;
                    dw += r * if *v == y { 1.0 / w } else { -1.0 / (1.0 - w) };
                }
                grad[m] += dw * w * (1.0 - w);
            }
        }
        let n = votes.votes.len() as f64;
        let mut max_step = 0.0f64;
        for (t, g) in theta.iter_mut().zip(&grad) {
            let step = lr * g / n;
            *t += step;
            let lim = (W_MAX / (1.0 - W_MAX)).ln();
            *t = t.clamp(-lim, lim);
            max_step = max_step.max(step.abs());
        }
        if max_step < 1e-10 {
            break;
        }
    }
    theta.iter().map(|t| sigmoid(*t).clamp(W_MIN, W_MAX)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weighted vote aggregation: sum the weights of the LFs voting each
/// label and return the argmax; ties break to the lowest label id;
/// all-abstain rows return `None`.
pub fn aggregate(row: &[Option<usize>], w: &[f64], num_labels: usize) -> Option<usize> {
    let mut sums = vec![0.0f64; num_labels];
    let mut any = false;
    for (m, vote) in row.iter().enumerate() {
        if let Some(v) = vote {
            sums[*v] += w[m];
            any = true;
        }
    }
    if !any {
        return None;
    }
    let mut best = 0;
    for (label, &s) in sums.iter().enumerate() {
        if s > sums[best] {
            best = label;
        }
    }
    Some(best)
}

/// Instantiate the template of the winning LF (the voter of the winning
/// label with the largest weight). `None` means a slot failed to extract
/// and the record should be dropped.
pub fn make_pseudo_explanation(
    ex: &Example,
    row: &[Option<usize>],
    set: &LfSet,
) -> Option<(usize, String)> {
    let weights: Vec<f64> = set.lfs.iter().map(|lf| lf.weight).collect();
    let winner = aggregate(row, &weights, set.lfs.iter().map(|l| l.label).max()? + 1)?;
    let lf = set
        .lfs
        .iter()
        .zip(row)
        .filter(|(lf, vote)| **vote == Some(winner) && lf.label == winner)
        .map(|(lf, _)| lf)
        .max_by(|a, b| a.weight.partial_cmp(&b.weight).unwrap())?;
    let mut text = lf.template.clone();
    for slot in template_slots(&lf.template) {
        let value = match slot {
            "A" => Some(ex.segment_a.to_lowercase()),
            "B" => ex.segment_b.as_ref().map(|b| b.to_lowercase()),
            "keyword" => lf.rule.matched_keyword(ex),
            "E1" => lf.rule.matched_entities(ex, &set.entities).map(|(a, _)| a),
            "E2" => lf
                .rule
                .matched_entities(ex, &set.entities)
                .and_then(|(_, b)| b),
            _ => None,
        }?;
        text = text.replace(&format!("{{{slot}}}"), &value);
    }
    Some((winner, text))
}

/// Counters from combined-dataset assembly.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PseudoStats {
    pub total_unlabeled: usize,
    pub covered: usize,
    pub dropped: usize,
    pub pseudo_added: usize,
}

impl PseudoStats {
    pub fn coverage(&self) -> f64 {
        if self.total_unlabeled == 0 {
            0.0
        } else {
            self.covered as f64 / self.total_unlabeled as f64
        }
    }
}

/// Annotated records kept verbatim; unlabeled records that receive a
/// non-abstain pseudo label and a successfully instantiated explanation
/// join with pseudo provenance; the rest are excluded.
pub fn build_combined_dataset(
    annotated: &[Example],
    unlabeled: &[Example],
    set: &LfSet,
) -> (Vec<Example>, PseudoStats) {
    let mut out: Vec<Example> = annotated.to_vec();
    let mut stats = PseudoStats {
        total_unlabeled: unlabeled.len(),
        ..Default::default()
    };
    let votes = apply_lfs(unlabeled, set);
    for (ex, row) in unlabeled.iter().zip(&votes.votes) {
        let weights: Vec<f64> = set.lfs.iter().map(|lf| lf.weight).collect();
        let num_labels = set.lfs.iter().map(|l| l.label).max().unwrap_or(0) + 1;
        if aggregate(row, &weights, num_labels).is_none() {
            continue;
        }
        stats.covered += 1;
        match make_pseudo_explanation(ex, row, set) {
            Some((label, explanation)) => {
                let mut pseudo = ex.clone();
                pseudo.label = Some(label);
                pseudo.explanation = Some(explanation);
                pseudo.provenance = Provenance::Pseudo;
                pseudo.alignment = None;
                out.push(pseudo);
                stats.pseudo_added += 1;
            }
            None => stats.dropped += 1,
        }
    }
    (out, stats)
}

/// Built-in LF config for each synthetic task.
pub fn default_lf_config(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Sp => {
            "[entities]\n\
             names = alice bob carol david emma frank grace henry\n\
             \n\
             [lf.married]\n\
             label = 1\n\
             rule = token married and near 8\n\
             template = the sentence says {E1} is married to {E2}\n\
             \n\
             [lf.wife]\n\
             label = 1\n\
             rule = token wife and near 8\n\
             template = the sentence says {E1} is married to {E2}\n\
             \n\
             [lf.husband]\n\
             label = 1\n\
             rule = token husband and near 8\n\
             template = the sentence says {E1} is married to {E2}\n\
             \n\
             [lf.no_marriage_words]\n\
             label = 0\n\
             rule = not token married and not token wife and not token husband and near 8\n\
             template = the sentence does not say {E1} is married to {E2}\n"
        }
        TaskKind::Nli => {
            "[entities]\n\
             names = cat dog bird fox horse cow owl frog\n\
             \n\
             [lf.entail_subset]\n\
             label = 0\n\
             rule = b_subset_a\n\
             template = the premise states that {B}\n\
             \n\
             [lf.neutral_new_entity]\n\
             label = 2\n\
             rule = new_entity_b\n\
             template = the premise does not mention the {E1}\n\
             \n\
             [lf.contra_conflict]\n\
             label = 1\n\
             rule = not b_subset_a and not new_entity_b\n\
             template = the premise says not {B}\n"
        }
    }
}
