//! The labeling-function rule DSL. A rule is a conjunction of optionally
//! negated atoms:
//!
//! - `token <w>`     — token `w` occurs in the input (either segment)
//! - `substr <text>` — `text` occurs as a substring of the raw input
//! - `b_subset_a`    — every segment-b token also occurs in segment a
//! - `near <k>`      — two distinct marked entities occur within `k`
//!   tokens of each other in segment a
//! - `new_entity_b`  — a marked entity occurs in segment b but not in a
//!
//! Marked entities come from the `[entities]` section of the LF config.
//! Malformed rules fail at load time with `BadRule`, never at apply time.

use crate::data::{tokenize, Example};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Atom {
    Token(String),
    Substr(String),
    BSubsetA,
    Near(usize),
    NewEntityB,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub clauses: Vec<(bool, Atom)>,
    pub source: String,
}

fn bad(rule: &str, reason: impl Into<String>) -> Error {
    Error::BadRule {
        rule: rule.to_string(),
        reason: reason.into(),
    }
}

impl Rule {
    pub fn parse(text: &str) -> Result<Self> {
        let mut clauses = Vec::new();
        for part in text.split(" and ") {
            let part = part.trim();
            if part.is_empty() {
                return Err(bad(text, "empty clause"));
            }
            let (negated, atom_text) = match part.strip_prefix("not ") {
                Some(rest) => (true, rest.trim()),
                None => (false, part),
            };
            let mut words = atom_text.split_whitespace();
            let head = words.next().ok_or_else(|| bad(text, "empty atom"))?;
            let atom = match head {
                "token" => {
                    let w = words.next().ok_or_else(|| bad(text, "token atom needs a word"))?;
                    if words.next().is_some() {
                        return Err(bad(text, "token atom takes exactly one word"));
                    }
                    Atom::Token(w.to_lowercase())
                }
                "substr" => {
                    let rest: Vec<&str> = words.collect();
                    if rest.is_empty() {
                        return Err(bad(text, "substr atom needs text"));
                    }
                    Atom::Substr(rest.join(" ").to_lowercase())
                }
                "b_subset_a" => {
                    if words.next().is_some() {
                        return Err(bad(text, "b_subset_a takes no arguments"));
                    }
                    Atom::BSubsetA
                }
                "near" => {
                    let k = words
                        .next()
                        .ok_or_else(|| bad(text, "near atom needs a distance"))?;
                    let k: usize = k
                        .parse()
                        .map_err(|_| bad(text, format!("bad near distance `{k}`")))?;
                    if k == 0 {
                        return Err(bad(text, "near distance must be >= 1"));
                    }
                    if words.next().is_some() {
                        return Err(bad(text, "near atom takes exactly one distance"));
                    }
                    Atom::Near(k)
                }
                "new_entity_b" => {
                    if words.next().is_some() {
                        return Err(bad(text, "new_entity_b takes no arguments"));
                    }
                    Atom::NewEntityB
                }
                other => return Err(bad(text, format!("unknown atom `{other}`"))),
            };
            clauses.push((negated, atom));
        }
        if clauses.is_empty() {
            return Err(bad(text, "rule has no clauses"));
        }
        Ok(Self {
            clauses,
            source: text.to_string(),
        })
    }

    pub fn uses_near(&self) -> bool {
        self.clauses.iter().any(|(_, a)| matches!(a, Atom::Near(_)))
    }

    pub fn uses_new_entity(&self) -> bool {
        self.clauses.iter().any(|(_, a)| matches!(a, Atom::NewEntityB))
    }

    /// True when a non-negated `token` atom exists (the `{keyword}` slot
    /// source).
    pub fn has_positive_token(&self) -> bool {
        self.clauses
            .iter()
            .any(|(neg, a)| !neg && matches!(a, Atom::Token(_)))
    }

    pub fn eval(&self, ex: &Example, entities: &[String]) -> bool {
        self.clauses
            .iter()
            .all(|(neg, atom)| eval_atom(atom, ex, entities) != *neg)
    }

    /// First present token from a positive `token` atom.
    pub fn matched_keyword(&self, ex: &Example) -> Option<String> {
        let toks = ex.input_tokens();
        self.clauses.iter().find_map(|(neg, a)| match a {
            Atom::Token(w) if !neg && toks.iter().any(|t| t == w) => Some(w.clone()),
            _ => None,
        })
    }

    /// Entity pair matched by a `near` atom, or the new entity matched by
    /// `new_entity_b` (paired with itself in the second slot's absence).
    pub fn matched_entities(&self, ex: &Example, entities: &[String]) -> Option<(String, Option<String>)> {
        for (neg, atom) in &self.clauses {
            if *neg {
                continue;
            }
            match atom {
                Atom::Near(k) => {
                    if let Some((a, b)) = near_pair(ex, entities, *k) {
                        return Some((a, Some(b)));
                    }
                }
                Atom::NewEntityB => {
                    if let Some(e) = new_entity(ex, entities) {
                        return Some((e, None));
                    }
                }
                _ => {}
            }
        }
        None
    }
}

fn eval_atom(atom: &Atom, ex: &Example, entities: &[String]) -> bool {
    match atom {
        Atom::Token(w) => ex.input_tokens().iter().any(|t| t == w),
        Atom::Substr(s) => {
            let mut text = ex.segment_a.to_lowercase();
            if let Some(b) = &ex.segment_b {
                text.push(' ');
                text.push_str(&b.to_lowercase());
            }
            text.contains(s)
        }
        Atom::BSubsetA => match &ex.segment_b {
            None => false,
            Some(b) => {
                let a_toks = tokenize(&ex.segment_a);
                tokenize(b).iter().all(|t| a_toks.contains(t))
            }
        },
        Atom::Near(k) => near_pair(ex, entities, *k).is_some(),
        Atom::NewEntityB => new_entity(ex, entities).is_some(),
    }
}

fn near_pair(ex: &Example, entities: &[String], k: usize) -> Option<(String, String)> {
    let toks = tokenize(&ex.segment_a);
    let hits: Vec<(usize, &String)> = toks
        .iter()
        .enumerate()
        .filter(|(_, t)| entities.contains(t))
        .map(|(i, t)| (i, t))
        .collect();
    for (i, (pa, a)) in hits.iter().enumerate() {
        for (pb, b) in hits.iter().skip(i + 1) {
            if a != b && pb - pa <= k {
                return Some(((*a).clone(), (*b).clone()));
            }
        }
    }
    None
}

fn new_entity(ex: &Example, entities: &[String]) -> Option<String> {
    let b = ex.segment_b.as_ref()?;
    let a_toks = tokenize(&ex.segment_a);
    tokenize(b)
        .into_iter()
        .find(|t| entities.contains(t) && !a_toks.contains(t))
}
