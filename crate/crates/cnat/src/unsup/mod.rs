//! Unsupervised pseudo-explanation targets: a deterministic
//! back-translation surrogate (synonym substitution, segment reordering,
//! connective insertion) plus a pluggable external translation client
//! that falls back to the surrogate on failure.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{tokenize, Example, Provenance};
use crate::error::{Error, Result};

/// Connectives the surrogate may insert between or before segments.
pub const CONNECTIVES: [&str; 4] = ["and", "also", "indeed", "so"];

/// External round-trip translation endpoint: two text-in/text-out HTTP
/// requests (forward language pair, then reverse).
#[derive(Clone, Debug)]
pub struct ExternalConfig {
    pub host: String,
    pub port: u16,
    pub forward_path: String,
    pub reverse_path: String,
    pub timeout_ms: u64,
    pub retries: usize,
    pub max_in_flight: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8765,
            forward_path: "/translate/forward".into(),
            reverse_path: "/translate/reverse".into(),
            timeout_ms: 2000,
            retries: 2,
            max_in_flight: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub enum ParaphraserMode {
    Surrogate,
    External(ExternalConfig),
}

/// Generates noisy paraphrases of inputs to serve as explanation targets.
pub struct Paraphraser {
    pub mode: ParaphraserMode,
    pub synonyms: BTreeMap<String, String>,
    pub reorder: bool,
    pub insert_connectives: bool,
    pub seed: u64,
    fallbacks: AtomicUsize,
}

impl Paraphraser {
    pub fn surrogate(seed: u64) -> Self {
        Self {
            mode: ParaphraserMode::Surrogate,
            synonyms: default_synonyms(),
            reorder: true,
            insert_connectives: true,
            seed,
            fallbacks: AtomicUsize::new(0),
        }
    }

    /// Degenerate surrogate: no synonyms, no reordering, no connectives —
    /// the paraphrase restates the input.
    pub fn identity(seed: u64) -> Self {
        Self {
            mode: ParaphraserMode::Surrogate,
            synonyms: BTreeMap::new(),
            reorder: false,
            insert_connectives: false,
            seed,
            fallbacks: AtomicUsize::new(0),
        }
    }

    /// Times the external endpoint failed and the surrogate stepped in.
    pub fn fallback_count(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    fn example_rng(&self, ex: &Example) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ ex.id.wrapping_mul(0x9e3779b97f4a7c15))
    }

    fn surrogate_paraphrase(&self, ex: &Example, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut segs: Vec<Vec<String>> = Vec::new();
        segs.push(tokenize(&ex.segment_a));
        if let Some(b) = &ex.segment_b {
            segs.push(tokenize(b));
        }
        if self.reorder && segs.len() == 2 && rng.gen_bool(0.5) {
            segs.swap(0, 1);
        }
        let mut out: Vec<String> = Vec::new();
        for (i, seg) in segs.iter().enumerate() {
            if i > 0 {
                out.push(CONNECTIVES[rng.gen_range(0..CONNECTIVES.len())].to_string());
            }
            for tok in seg {
                match self.synonyms.get(tok) {
                    Some(s) if rng.gen_bool(0.8) => out.push(s.clone()),
                    _ => out.push(tok.clone()),
                }
            }
        }
        if self.insert_connectives && rng.gen_bool(0.3) {
            out.insert(0, CONNECTIVES[rng.gen_range(0..CONNECTIVES.len())].to_string());
        }
        out
    }

    /// Pseudo explanation target for one example: never empty, at most
    /// `f_max` tokens per input token.
    pub fn pseudo_target(&self, ex: &Example, f_max: usize) -> Result<String> {
        let input_len = ex.input_tokens().len();
        if input_len == 0 {
            return Err(Error::EmptyInput);
        }
        let mut rng = self.example_rng(ex);
        let mut tokens = match &self.mode {
            ParaphraserMode::Surrogate => self.surrogate_paraphrase(ex, &mut rng),
            ParaphraserMode::External(cfg) => match round_trip(cfg, ex) {
                Ok(text) => {
                    let toks = tokenize(&text);
                    if toks.is_empty() {
                        self.note_fallback(ex, "endpoint returned empty text");
                        self.surrogate_paraphrase(ex, &mut rng)
                    } else {
                        toks
                    }
                }
                Err(e) => {
                    self.note_fallback(ex, &e.to_string());
                    self.surrogate_paraphrase(ex, &mut rng)
                }
            },
        };
        let cap = f_max * input_len;
        tokens.truncate(cap.max(1));
        Ok(tokens.join(" "))
    }

    fn note_fallback(&self, ex: &Example, reason: &str) {
        self.fallbacks.fetch_add(1, Ordering::Relaxed);
        eprintln!(
            "warning: external paraphrase failed for record {} ({reason}); using surrogate",
            ex.id
        );
    }
}

/// Two-column synonym table: `word synonym` per line; `#` comments.
pub fn load_synonyms(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::InvalidConfig(format!(
                "synonym table line {}: expected two columns, got `{line}`",
                i + 1
            )));
        };
        map.insert(a.to_lowercase(), b.to_lowercase());
    }
    Ok(map)
}

/// Synonyms covering the synthetic inventories.
pub fn default_synonyms() -> BTreeMap<String, String> {
    [
        ("cat", "feline"),
        ("dog", "hound"),
        ("bird", "sparrow"),
        ("fox", "vixen"),
        ("runs", "sprints"),
        ("sleeps", "rests"),
        ("sits", "perches"),
        ("red", "crimson"),
        ("blue", "azure"),
        ("small", "little"),
        ("big", "large"),
        ("married", "wed"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

struct Semaphore {
    count: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            count: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut c = self.count.lock().unwrap();
        while *c == 0 {
            c = self.cv.wait(c).unwrap();
        }
        *c -= 1;
    }

    fn release(&self) {
        *self.count.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

fn http_post(cfg: &ExternalConfig, path: &str, body: &str) -> Result<String> {
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let mut last = None;
    for _ in 0..=cfg.retries {
        match try_post(&addr, &cfg.host, path, body, cfg.timeout_ms) {
            Ok(text) => return Ok(text),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::EndpointFailure("no attempts made".into())))
}

fn try_post(addr: &str, host: &str, path: &str, body: &str, timeout_ms: u64) -> Result<String> {
    let fail = |e: std::io::Error| Error::EndpointFailure(format!("{addr}{path}: {e}"));
    let timeout = Duration::from_millis(timeout_ms);
    let sock_addr = addr
        .parse()
        .map_err(|e| Error::EndpointFailure(format!("bad address {addr}: {e}")))?;
    let mut stream = TcpStream::connect_timeout(&sock_addr, timeout).map_err(fail)?;
    stream.set_read_timeout(Some(timeout)).map_err(fail)?;
    stream.set_write_timeout(Some(timeout)).map_err(fail)?;
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: text/plain\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(request.as_bytes()).map_err(fail)?;
    let mut response = String::new();
    stream.read_to_string(&mut response).map_err(fail)?;
    let (head, rest) = response
        .split_once("\r\n\r\n")
        .ok_or_else(|| Error::EndpointFailure(format!("{addr}{path}: malformed response")))?;
    let status = head.lines().next().unwrap_or_default();
    if !status.contains(" 200") {
        return Err(Error::EndpointFailure(format!("{addr}{path}: {status}")));
    }
    Ok(rest.trim().to_string())
}

fn round_trip(cfg: &ExternalConfig, ex: &Example) -> Result<String> {
    let mut text = ex.segment_a.clone();
    if let Some(b) = &ex.segment_b {
        text.push_str(" and ");
        text.push_str(b);
    }
    let foreign = http_post(cfg, &cfg.forward_path, &text)?;
    http_post(cfg, &cfg.reverse_path, &foreign)
}

/// Give every record a pseudo explanation target; gold labels are kept,
/// provenance becomes pseudo. Parallel over records; external requests
/// are bounded by `max_in_flight`.
pub fn build_unsup_dataset(
    examples: &[Example],
    paraphraser: &Paraphraser,
    f_max: usize,
) -> Result<Vec<Example>> {
    let sem = match &paraphraser.mode {
        ParaphraserMode::External(cfg) => Some(Semaphore::new(cfg.max_in_flight)),
        ParaphraserMode::Surrogate => None,
    };
    examples
        .par_iter()
        .map(|ex| {
            if let Some(sem) = &sem {
                sem.acquire();
            }
            let target = paraphraser.pseudo_target(ex, f_max);
            if let Some(sem) = &sem {
                sem.release();
            }
            let mut out = ex.clone();
            out.explanation = Some(target?);
            out.provenance = Provenance::Pseudo;
            out.alignment = None;
            Ok(out)
        })
        .collect()
}
