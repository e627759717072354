//! C-NAT: a non-autoregressive transformer that predicts a classification
//! label and generates a sentence-level natural-language explanation in a
//! single parallel decode. Supports fully-supervised, weakly-supervised
//! (labeling functions + data programming) and unsupervised
//! (back-translation surrogate) training, plus a metric suite and an
//! AR-vs-NAR decode latency benchmark.

pub mod data;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod numcore;
pub mod training;
pub mod unsup;
pub mod weaksup;

pub use error::{Error, Result};
