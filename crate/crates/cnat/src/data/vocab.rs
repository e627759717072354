use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const SEP_ID: usize = 4;

pub(crate) const SEP_TOKEN: &str = "<sep>";
const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>"];

/// Bidirectional string<->id map with fixed special tokens.
/// Non-special entries are ordered by frequency, then lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocab {
    /// Build from text streams (each item is tokenized); stable ordering
    /// makes construction deterministic for a given corpus.
    pub fn build<'a>(texts: impl Iterator<Item = &'a str>) -> Self {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in super::tokenize(text) {
                if SPECIALS.contains(&tok.as_str()) {
                    continue;
                }
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = freq.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(entries.into_iter().map(|(t, _)| t));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            id_to_token,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        *self
            .token_to_id
            .get(&token.to_lowercase())
            .unwrap_or(&UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// Encode already-tokenized text; OOV maps to UNK.
    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.encode_tokens(&super::tokenize(text))
    }

    /// Inverse of encode for in-vocab text: joins tokens with spaces.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Specials are implicit; persist only the learned entries in order.
        let body = self.id_to_token[SPECIALS.len()..].join("\n");
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for line in body.lines() {
            let tok = line.trim();
            if tok.is_empty() {
                continue;
            }
            if SPECIALS.contains(&tok) {
                return Err(Error::InvalidConfig(format!(
                    "special token `{tok}` in vocab file"
                )));
            }
            id_to_token.push(tok.to_string());
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            id_to_token,
            token_to_id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vocab {
        Vocab::build("a cat sits a cat a".split_whitespace())
    }

    #[test]
    fn specials_pinned() {
        let v = toy();
        assert_eq!(v.id("<pad>"), PAD_ID);
        assert_eq!(v.id("<sep>"), SEP_ID);
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = toy();
        // a:3, cat:2, sits:1
        assert_eq!(v.token(5), "a");
        assert_eq!(v.token(6), "cat");
        assert_eq!(v.token(7), "sits");
    }

    #[test]
    fn encode_normalizes_case() {
        let v = toy();
        assert_eq!(
            v.encode("A cat Sits"),
            vec![v.id("a"), v.id("cat"), v.id("sits")]
        );
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = toy();
        assert_eq!(v.encode("dog")[0], UNK_ID);
    }

    #[test]
    fn round_trip_in_vocab_sentence() {
        let v = toy();
        let text = "a cat sits";
        assert_eq!(v.decode(&v.encode(text)), text);
    }

    #[test]
    fn save_load_round_trip() {
        let v = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }
}
