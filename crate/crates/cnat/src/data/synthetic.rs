//! Seeded synthetic task families: an NLI-shaped pair task (premise /
//! hypothesis) and an SP-shaped single-segment task with two marked
//! person entities. Every generated label is recomputable from the text
//! by a fixed rule, and gold explanations carry a token alignment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tokenize, Example, Provenance};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Nli,
    Sp,
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nli" => Ok(TaskKind::Nli),
            "sp" => Ok(TaskKind::Sp),
            other => Err(format!("unknown task `{other}` (expected nli|sp)")),
        }
    }
}

pub const NLI_LABELS: [&str; 3] = ["entailment", "contradiction", "neutral"];
pub const SP_LABELS: [&str; 2] = ["not_spouse", "spouse"];

#[derive(Clone, Debug)]
pub struct SyntheticTaskConfig {
    pub task: TaskKind,
    /// Animal nouns for NLI, person names for SP.
    pub entities: Vec<String>,
    pub attributes: Vec<String>,
    pub verbs: Vec<String>,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl SyntheticTaskConfig {
    pub fn default_nli(seed: u64) -> Self {
        Self {
            task: TaskKind::Nli,
            entities: words(&["cat", "dog", "bird", "fox", "horse", "cow", "owl", "frog"]),
            attributes: words(&["red", "blue", "green", "small", "big", "old", "young", "gray"]),
            verbs: words(&["sits", "runs", "sleeps", "jumps", "sings", "waits", "hides", "eats"]),
            seed,
            train_size: 2048,
            val_size: 256,
            test_size: 256,
        }
    }

    pub fn default_sp(seed: u64) -> Self {
        Self {
            task: TaskKind::Sp,
            entities: words(&[
                "alice", "bob", "carol", "david", "emma", "frank", "grace", "henry",
            ]),
            attributes: Vec::new(),
            verbs: Vec::new(),
            seed,
            train_size: 2048,
            val_size: 256,
            test_size: 256,
        }
    }

    pub fn label_count(&self) -> usize {
        match self.task {
            TaskKind::Nli => NLI_LABELS.len(),
            TaskKind::Sp => SP_LABELS.len(),
        }
    }

    pub fn label_names(&self) -> &'static [&'static str] {
        match self.task {
            TaskKind::Nli => &NLI_LABELS,
            TaskKind::Sp => &SP_LABELS,
        }
    }
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

const SPOUSE_TEMPLATES: [&str; 4] = [
    "{A} and {B} are married",
    "{A} is the wife of {B}",
    "{A} is the husband of {B}",
    "{A} married {B} last year",
];
const NOT_SPOUSE_TEMPLATES: [&str; 4] = [
    "{A} works with {B}",
    "{A} and {B} are friends",
    "{A} met {B} at the office",
    "{A} is the boss of {B}",
];
const SPOUSE_KEYWORDS: [&str; 3] = ["married", "wife", "husband"];

/// Generate label-balanced train/val/test splits.
pub fn generate(cfg: &SyntheticTaskConfig) -> Result<Splits> {
    match cfg.task {
        TaskKind::Nli => {
            if cfg.entities.len() < 3 || cfg.attributes.len() < 3 || cfg.verbs.is_empty() {
                return Err(Error::BalanceInfeasible(
                    "NLI needs >=3 entities, >=3 attributes and >=1 verb".into(),
                ));
            }
        }
        TaskKind::Sp => {
            if cfg.entities.len() < 2 {
                return Err(Error::BalanceInfeasible("SP needs >=2 names".into()));
            }
        }
    }
    let labels = cfg.label_count();
    for (name, size) in [
        ("train", cfg.train_size),
        ("val", cfg.val_size),
        ("test", cfg.test_size),
    ] {
        if size < labels {
            return Err(Error::BalanceInfeasible(format!(
                "{name} split size {size} below label count {labels}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next_id = 0u64;
    let mut make_split = |size: usize, rng: &mut ChaCha8Rng| -> Vec<Example> {
        (0..size)
            .map(|i| {
                let label = i % labels;
                let ex = match cfg.task {
                    TaskKind::Nli => gen_nli(cfg, label, next_id, rng),
                    TaskKind::Sp => gen_sp(cfg, label, next_id, rng),
                };
                next_id += 1;
                ex
            })
            .collect()
    };
    let train = make_split(cfg.train_size, &mut rng);
    let val = make_split(cfg.val_size, &mut rng);
    let test = make_split(cfg.test_size, &mut rng);
    Ok(Splits { train, val, test })
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &'a [String], exclude: &[&str]) -> &'a String {
    loop {
        let w = pool.choose(rng).unwrap();
        if !exclude.contains(&w.as_str()) {
            return w;
        }
    }
}

fn gen_nli(cfg: &SyntheticTaskConfig, label: usize, id: u64, rng: &mut ChaCha8Rng) -> Example {
    let e1 = pick(rng, &cfg.entities, &[]).clone();
    let e2 = pick(rng, &cfg.entities, &[&e1]).clone();
    let a1 = pick(rng, &cfg.attributes, &[]).clone();
    let a2 = pick(rng, &cfg.attributes, &[&a1]).clone();
    let v1 = pick(rng, &cfg.verbs, &[]).clone();
    let v2 = pick(rng, &cfg.verbs, &[]).clone();
    let premise = format!("the {a1} {e1} {v1} and the {a2} {e2} {v2}");

    let which = rng.gen_range(0..2usize);
    let (ent, attr, verb) = if which == 0 {
        (&e1, &a1, &v1)
    } else {
        (&e2, &a2, &v2)
    };
    let (hypothesis, explanation) = match label {
        0 => (
            format!("the {ent} {verb}"),
            format!("the premise states that the {ent} {verb}"),
        ),
        1 => {
            let conflict = pick(rng, &cfg.attributes, &[&a1, &a2]).clone();
            (
                format!("the {conflict} {ent} {verb}"),
                format!("the premise says the {ent} is {attr} not {conflict}"),
            )
        }
        _ => {
            let e3 = pick(rng, &cfg.entities, &[&e1, &e2]).clone();
            let a3 = pick(rng, &cfg.attributes, &[&a1, &a2]).clone();
            let v3 = pick(rng, &cfg.verbs, &[]).clone();
            (
                format!("the {a3} {e3} {v3}"),
                format!("the premise does not mention the {e3}"),
            )
        }
    };

    finish_example(id, premise, Some(hypothesis), label, explanation)
}

fn gen_sp(cfg: &SyntheticTaskConfig, label: usize, id: u64, rng: &mut ChaCha8Rng) -> Example {
    let a = pick(rng, &cfg.entities, &[]).clone();
    let b = pick(rng, &cfg.entities, &[&a]).clone();
    let templates = if label == 1 {
        &SPOUSE_TEMPLATES
    } else {
        &NOT_SPOUSE_TEMPLATES
    };
    let sentence = templates
        .choose(rng)
        .unwrap()
        .replace("{A}", &a)
        .replace("{B}", &b);
    let explanation = if label == 1 {
        format!("the sentence says {a} is married to {b}")
    } else {
        format!("the sentence does not say {a} is married to {b}")
    };
    finish_example(id, sentence, None, label, explanation)
}

fn finish_example(
    id: u64,
    segment_a: String,
    segment_b: Option<String>,
    label: usize,
    explanation: String,
) -> Example {
    let mut ex = Example {
        id,
        segment_a,
        segment_b,
        label: Some(label),
        explanation: Some(explanation),
        provenance: Provenance::Human,
        alignment: None,
    };
    let input = ex.input_tokens();
    let expl = tokenize(ex.explanation.as_ref().unwrap());
    ex.alignment = Some(align_tokens(&expl, &input));
    ex
}

/// For each target token, the input position it copies from: first exact
/// occurrence, else the position of the previous aligned token.
pub fn align_tokens(target: &[String], input: &[String]) -> Vec<usize> {
    let mut out = Vec::with_capacity(target.len());
    let mut last = 0usize;
    for tok in target {
        let pos = input.iter().position(|t| t == tok).unwrap_or(last);
        out.push(pos);
        last = pos;
    }
    out
}

/// Recompute the gold label from the text alone; the oracle for generated
/// data. Returns `None` when the text does not parse against the
/// inventories.
pub fn recompute_label(cfg: &SyntheticTaskConfig, ex: &Example) -> Option<usize> {
    match cfg.task {
        TaskKind::Sp => {
            let toks = tokenize(&ex.segment_a);
            let spouse = toks.iter().any(|t| SPOUSE_KEYWORDS.contains(&t.as_str()));
            Some(if spouse { 1 } else { 0 })
        }
        TaskKind::Nli => {
            let prem = tokenize(&ex.segment_a);
            let hyp = tokenize(ex.segment_b.as_deref()?);
            // premise facts: entity -> (attribute before it, verb after it)
            let mut facts: Vec<(&str, Option<&str>, Option<&str>)> = Vec::new();
            for (i, tok) in prem.iter().enumerate() {
                if cfg.entities.iter().any(|e| e == tok) {
                    let attr = i
                        .checked_sub(1)
                        .map(|j| prem[j].as_str())
                        .filter(|t| cfg.attributes.iter().any(|a| a == t));
                    let verb = prem
                        .get(i + 1)
                        .map(|t| t.as_str())
                        .filter(|t| cfg.verbs.iter().any(|v| v == *t));
                    facts.push((tok, attr, verb));
                }
            }
            let ent = hyp.iter().find(|t| cfg.entities.iter().any(|e| &e == t))?;
            let attr = hyp
                .iter()
                .find(|t| cfg.attributes.iter().any(|a| &a == t))
                .map(|s| s.as_str());
            let verb = hyp
                .iter()
                .find(|t| cfg.verbs.iter().any(|v| &v == t))
                .map(|s| s.as_str());
            let fact = match facts.iter().find(|(e, _, _)| e == &ent.as_str()) {
                None => return Some(2),
                Some(f) => f,
            };
            if let (Some(h), Some(p)) = (attr, fact.1) {
                if h != p {
                    return Some(1);
                }
            }
            if verb.is_some() && verb == fact.2 {
                Some(0)
            } else {
                Some(2)
            }
        }
    }
}
