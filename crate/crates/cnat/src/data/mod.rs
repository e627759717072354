//! Dataset records, tokenization, file formats and the synthetic tasks.

pub mod config;
pub mod synthetic;
mod vocab;

pub use vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID, SEP_ID, UNK_ID};

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a record's label/explanation came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Pseudo,
}

/// One dataset record: input text (one or two segments), optional gold
/// label and explanation, and a provenance flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub segment_a: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub provenance: Provenance,
    /// Gold alignment: for each explanation token, the index of the input
    /// token it was derived from. Present only on synthetic gold data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Vec<usize>>,
}

impl Example {
    /// Input token strings: `segment_a [SEP] segment_b`.
    pub fn input_tokens(&self) -> Vec<String> {
        let mut toks = tokenize(&self.segment_a);
        if let Some(b) = &self.segment_b {
            toks.push(vocab::SEP_TOKEN.to_string());
            toks.extend(tokenize(b));
        }
        toks
    }
}

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

/// Load a line-delimited dataset; malformed lines report their line number.
pub fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for ex in examples {
        serde_json::to_writer(&mut file, ex)
            .map_err(|e| Error::MalformedRecord {
                line: 0,
                reason: e.to_string(),
            })?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
