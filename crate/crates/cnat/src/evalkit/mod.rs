//! Metric suite (Acc, NE-Acc, BLEU, PPL, Inter-Rep, Rationality) and the
//! single-sequence NAR-vs-AR latency benchmark.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Example, Vocab, BOS_ID, EOS_ID, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::model::layers::Bind;
use crate::model::{Classifier, ClassifierConfig, CnatModel, LmModel};
use crate::numcore::{AdamState, Graph, Scalar};

/// One row of Table-2-style results. Latency fields are filled only by
/// the benchmark path; metric-only evaluation leaves them `None`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub ne_accuracy: f64,
    pub bleu: f64,
    pub perplexity: Option<f64>,
    pub inter_rep: f64,
    pub rationality: Option<f64>,
    pub mean_latency_ns: Option<f64>,
    pub speedup: Option<f64>,
    pub baseline: Option<String>,
}

impl EvalReport {
    /// Plain aligned table, one metric per row.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let mut row = |name: &str, v: String| {
            let _ = writeln!(s, "{name:<16} {v}");
        };
        row("Acc", format!("{:.2}", self.accuracy));
        row("NE-Acc", format!("{:.2}", self.ne_accuracy));
        row("BLEU", format!("{:.2}", self.bleu));
        match self.perplexity {
            Some(p) => row("PPL", format!("{p:.2}")),
            None => row("PPL", "-".into()),
        }
        row("Inter-Rep", format!("{:.4}", self.inter_rep));
        match self.rationality {
            Some(r) => row("Rationality", format!("{r:.2}")),
            None => row("Rationality", "-".into()),
        }
        if let Some(l) = self.mean_latency_ns {
            row("Latency", format!("{:.3} ms", l / 1.0e6));
        }
        if let (Some(sp), Some(base)) = (self.speedup, &self.baseline) {
            row("Speedup", format!("{sp:.2}x vs {base}"));
        }
        s
    }

    /// Structured `key = value` record (deterministic field order).
    pub fn to_record(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Percent of predictions equal to golds.
pub fn accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyEval);
    }
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            expected: golds.len(),
            got: predictions.len(),
        });
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 with brevity penalty and no smoothing. Orders the
/// candidate corpus is too short to populate are excluded from the
/// geometric mean; an included order with zero matches zeroes the score.
pub fn bleu(candidates: &[String], references: &[String]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyEval);
    }
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch {
            expected: references.len(),
            got: candidates.len(),
        });
    }
    let cands: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(c)).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    for (c, r) in cands.iter().zip(&refs) {
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (gram, count) in ngram_counts(c, n) {
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..4 {
        if total[n] == 0 {
            continue;
        }
        orders += 1;
        if matched[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let c_len: usize = cands.iter().map(Vec::len).sum();
    let r_len: usize = refs.iter().map(Vec::len).sum();
    if c_len == 0 {
        return Ok(0.0);
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / orders as f64).exp())
}

/// exp(mean per-token NLL) of the corpus under the scorer LM. Tokens the
/// scorer does not know (id >= its vocab) are mapped to UNK; each
/// sentence is EOS-terminated, matching the LM's training corpus.
pub fn perplexity<F: Scalar>(
    explanations: &[String],
    scorer: &LmModel<F>,
    vocab: &Vocab,
) -> Result<f64> {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for text in explanations {
        let mut ids = vocab.encode_tokens(&tokenize(text));
        ids.push(EOS_ID);
        for id in &mut ids {
            if *id >= scorer.config.vocab_size {
                *id = UNK_ID;
            }
        }
        let mut g = Graph::inference();
        let bind = Bind::frozen(&scorer.params);
        let ll = scorer.log_likelihood_ids(&mut g, &bind, &ids)?;
        nll -= g.scalar_value(ll).as_f64();
        tokens += ids.len();
    }
    if tokens == 0 {
        return Err(Error::EmptyEval);
    }
    Ok((nll / tokens as f64).exp())
}

/// Cumulative bigram-overlap ratio: for each explanation in corpus
/// order, the fraction of its bigram occurrences already seen in earlier
/// explanations, averaged over the set. Lower is more diverse.
pub fn inter_rep(explanations: &[String]) -> Result<f64> {
    if explanations.len() < 2 {
        return Err(Error::EmptyEval);
    }
    let mut seen: std::collections::HashSet<(String, String)> = Default::default();
    let mut sum = 0.0;
    for text in explanations {
        let toks = tokenize(text);
        let bigrams: Vec<(String, String)> = toks
            .windows(2)
            .map(|w| (w[0].clone(), w[1].clone()))
            .collect();
        if !bigrams.is_empty() {
            let hit = bigrams.iter().filter(|b| seen.contains(b)).count();
            sum += hit as f64 / bigrams.len() as f64;
        }
        seen.extend(bigrams);
    }
    Ok(sum / explanations.len() as f64)
}

/// Judge input: input text, separator, explanation text — truncated to
/// the judge's context window.
pub fn judge_input_ids(vocab: &Vocab, input: &str, explanation: &str, t_max: usize) -> Vec<usize> {
    let text = format!("{input} <sep> {explanation}");
    let mut ids = vocab.encode(&text);
    ids.truncate(t_max);
    ids
}

/// Percent of items where the judge classifier, fed (input, generated
/// explanation), agrees with the model's own predicted label.
pub fn rationality<F: Scalar>(
    inputs: &[String],
    predicted_labels: &[usize],
    explanations: &[String],
    judge: &Classifier<F>,
    vocab: &Vocab,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyEval);
    }
    if inputs.len() != predicted_labels.len() || inputs.len() != explanations.len() {
        return Err(Error::LengthMismatch {
            expected: inputs.len(),
            got: predicted_labels.len().min(explanations.len()),
        });
    }
    let mut agree = 0usize;
    for ((input, &label), expl) in inputs.iter().zip(predicted_labels).zip(explanations) {
        let ids = judge_input_ids(vocab, input, expl, judge.config.t_max);
        if !ids.is_empty() && judge.predict(&ids)? == label {
            agree += 1;
        }
    }
    Ok(100.0 * agree as f64 / inputs.len() as f64)
}

/// Train the rationality judge on gold (input, explanation) -> label
/// pairs from an annotated dataset.
pub fn train_judge<F: Scalar>(
    dataset: &[Example],
    vocab: &Vocab,
    config: ClassifierConfig,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<Classifier<F>> {
    let pairs: Vec<(String, String, usize)> = dataset
        .iter()
        .filter_map(|ex| {
            let expl = ex.explanation.as_ref()?;
            let label = ex.label?;
            let input = ex.input_tokens().join(" ");
            Some((input, expl.clone(), label))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut judge = Classifier::new(config, seed)?;
    let mut opt = AdamState::new(&judge.params, lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a75_6467);
    for _ in 0..steps {
        let (input, expl, label) = &pairs[rng.gen_range(0..pairs.len())];
        // word dropout on the explanation segment: gold explanations are
        // template-separable, so without it the judge never learns input
        // features and collapses on any non-template explanation
        let kept: Vec<&str> = expl
            .split_whitespace()
            .filter(|_| rng.gen_bool(0.5))
            .collect();
        let ids = judge_input_ids(vocab, input, &kept.join(" "), judge.config.t_max);
        let ids = &ids;
        let mut g = Graph::train(ChaCha8Rng::seed_from_u64(rng.gen()));
        let loss = {
            let bind = Bind::trainable(&judge.params);
            let logits = judge.logits(&mut g, &bind, ids)?;
            g.cross_entropy_rows(logits, &[Some(*label)])?
        };
        g.backward(loss)?;
        g.collect_param_grads(&mut judge.params);
        judge.params.clip_grad_norm(1.0);
        opt.step(&mut judge.params)?;
        judge.params.zero_grads();
    }
    Ok(judge)
}

/// Accuracy of the judge itself on gold pairs (its training signal).
pub fn judge_accuracy<F: Scalar>(
    dataset: &[Example],
    vocab: &Vocab,
    judge: &Classifier<F>,
) -> Result<f64> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for ex in dataset {
        let (Some(expl), Some(label)) = (ex.explanation.as_ref(), ex.label) else {
            continue;
        };
        let input = ex.input_tokens().join(" ");
        let ids = judge_input_ids(vocab, &input, expl, judge.config.t_max);
        preds.push(judge.predict(&ids)?);
        golds.push(label);
    }
    accuracy(&preds, &golds)
}

/// Per-example timing row of the benchmark CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: String,
    pub length: usize,
    pub latency_ns: u128,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchResult {
    pub latency_nar_ns: f64,
    pub latency_ar_ns: f64,
    pub speedup: f64,
    pub rows: Vec<BenchRow>,
}

/// Median of chunk means: dampens timing jitter without discarding the
/// per-example rows.
pub fn median_of_means(samples: &[u128], chunks: usize) -> f64 {
    assert!(!samples.is_empty());
    let chunks = chunks.clamp(1, samples.len());
    let per = samples.len().div_ceil(chunks);
    let mut means: Vec<f64> = samples
        .chunks(per)
        .map(|c| c.iter().map(|&x| x as f64).sum::<f64>() / c.len() as f64)
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = means.len();
    if n % 2 == 1 {
        means[n / 2]
    } else {
        (means[n / 2 - 1] + means[n / 2]) / 2.0
    }
}

const WARMUPS: usize = 10;
const MOM_CHUNKS: usize = 5;

/// Benchmark two single-sequence decode callables over the same inputs.
/// Each returns (emitted length, latency ns); 10 warm-up decodes per
/// callable are discarded, reported latency is the median of 5 chunk
/// means, speedup = baseline latency / primary latency.
pub fn bench_callables(
    primary: &mut dyn FnMut(&[usize]) -> Result<(usize, u128)>,
    baseline: &mut dyn FnMut(&[usize]) -> Result<(usize, u128)>,
    primary_name: &str,
    baseline_name: &str,
    inputs: &[Vec<usize>],
) -> Result<BenchResult> {
    if inputs.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut rows = Vec::new();
    let run = |f: &mut dyn FnMut(&[usize]) -> Result<(usize, u128)>,
                   name: &str,
                   rows: &mut Vec<BenchRow>|
     -> Result<Vec<u128>> {
        for _ in 0..WARMUPS {
            f(&inputs[0])?;
        }
        let mut lats = Vec::with_capacity(inputs.len());
        for ids in inputs {
            let (len, ns) = f(ids)?;
            lats.push(ns);
            rows.push(BenchRow {
                mode: name.to_string(),
                length: len,
                latency_ns: ns,
            });
        }
        Ok(lats)
    };
    let lat_p = run(primary, primary_name, &mut rows)?;
    let lat_b = run(baseline, baseline_name, &mut rows)?;
    let latency_nar_ns = median_of_means(&lat_p, MOM_CHUNKS);
    let latency_ar_ns = median_of_means(&lat_b, MOM_CHUNKS);
    Ok(BenchResult {
        latency_nar_ns,
        latency_ar_ns,
        speedup: latency_ar_ns / latency_nar_ns,
        rows,
    })
}

/// Time NAR decode vs the AR ablation per example, batch size 1. When
/// `force_len` is set, both modes are pinned to emit exactly that many
/// tokens so the comparison is length-matched.
pub fn bench_latency<F: Scalar>(
    model_nar: &CnatModel<F>,
    model_ar: &CnatModel<F>,
    inputs: &[Vec<usize>],
    force_len: Option<usize>,
) -> Result<BenchResult> {
    let mut nar = |ids: &[usize]| -> Result<(usize, u128)> {
        let out = match force_len {
            Some(t) => {
                let fert = pinned_fertility(ids.len(), t);
                model_nar.generate_with(ids, true, Some(&fert))?
            }
            None => model_nar.generate(ids, true)?,
        };
        Ok((out.explanation.len(), out.latency_ns))
    };
    let mut ar = |ids: &[usize]| -> Result<(usize, u128)> {
        let out = model_ar.generate_autoregressive_with(ids, force_len)?;
        Ok((out.explanation.len(), out.latency_ns))
    };
    bench_callables(&mut nar, &mut ar, "nar", "ar", inputs)
}

/// Fertility vector summing to exactly `t` over `s` source positions.
pub fn pinned_fertility(s: usize, t: usize) -> Vec<usize> {
    let mut fert = vec![t / s; s];
    for f in fert.iter_mut().take(t % s) {
        *f += 1;
    }
    fert
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut s = String::from("mode,length,latency_ns\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.mode, r.length, r.latency_ns);
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn strip_specials(ids: &[usize]) -> Vec<usize> {
    ids.iter()
        .copied()
        .filter(|&id| id != PAD_ID && id != BOS_ID && id != EOS_ID)
        .collect()
}

/// Run the full metric suite of a trained model over a labeled test set.
/// The scorer LM and judge are optional; their metrics are omitted when
/// absent. Latency fields are not populated here (see `bench_latency`).
pub fn evaluate<F: Scalar>(
    model: &CnatModel<F>,
    test: &[Example],
    vocab: &Vocab,
    scorer: Option<&LmModel<F>>,
    judge: Option<&Classifier<F>>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut preds = Vec::new();
    let mut ne_preds = Vec::new();
    let mut golds = Vec::new();
    let mut gen_texts = Vec::new();
    let mut gold_texts = Vec::new();
    let mut inputs = Vec::new();
    for ex in test {
        let label = ex.label.ok_or(Error::RegimeDataMismatch {
            regime: "eval".into(),
            reason: format!("record {} has no gold label", ex.id),
        })?;
        let input = ex.input_tokens().join(" ");
        let ids = vocab.encode(&input);
        let out = model.generate(&ids, true)?;
        let ne_out = model.generate(&ids, false)?;
        preds.push(out.label);
        ne_preds.push(ne_out.label);
        golds.push(label);
        gen_texts.push(vocab.decode(&strip_specials(&out.explanation)));
        gold_texts.push(ex.explanation.clone().unwrap_or_default());
        inputs.push(input);
    }
    let report = EvalReport {
        accuracy: accuracy(&preds, &golds)?,
        ne_accuracy: accuracy(&ne_preds, &golds)?,
        bleu: bleu(&gen_texts, &gold_texts)?,
        perplexity: match scorer {
            Some(lm) => Some(perplexity(&gen_texts, lm, vocab)?),
            None => None,
        },
        inter_rep: if gen_texts.len() >= 2 {
            inter_rep(&gen_texts)?
        } else {
            0.0
        },
        rationality: match judge {
            Some(j) => Some(rationality(&inputs, &preds, &gen_texts, j, vocab)?),
            None => None,
        },
        mean_latency_ns: None,
        speedup: None,
        baseline: None,
    };
    Ok(report)
}
