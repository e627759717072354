//! Command-line entry point: data generation, the three training
//! regimes, evaluation, single-input generation, weak labeling, pseudo
//! target construction, LM pre-training and the latency benchmark.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cnat::data::config::ConfigFile;
use cnat::data::synthetic::{self, SyntheticTaskConfig, TaskKind};
use cnat::data::{load_dataset, save_dataset, Example, Vocab};
use cnat::evalkit;
use cnat::model::checkpoint;
use cnat::model::{ClassifierConfig, CnatModel, LmConfig, LmModel, ModelConfig};
use cnat::training::{
    self, lm_corpus, pretrain_lm, write_history, LmTrainConfig, LossWeights, Regime, TrainConfig,
};
use cnat::unsup::{
    self, build_unsup_dataset, ExternalConfig, Paraphraser, ParaphraserMode,
};
use cnat::weaksup::{
    apply_lfs, build_combined_dataset, default_lf_config, learn_weights, load_lf_config,
};

/// Numeric type for all CLI work; f64 is reserved for gradient checks.
type F = f32;

#[derive(Parser)]
#[command(name = "cnat", version, about = "Non-autoregressive classifier with parallel explanation generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file with [section] headers
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value: section.key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ConfigFile> {
        let mut cfg = match &self.config {
            Some(path) => ConfigFile::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ConfigFile::default(),
        };
        for spec in &self.overrides {
            cfg.set_override(spec)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/val/test splits and a vocabulary
    GenData {
        /// Task family: nli (premise/hypothesis) or sp (spouse extraction)
        #[arg(long, default_value = "nli")]
        task: TaskKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 2048)]
        train_size: usize,
        #[arg(long, default_value_t = 256)]
        val_size: usize,
        #[arg(long, default_value_t = 256)]
        test_size: usize,
    },
    /// Train a C-NAT model under a supervision regime
    Train {
        #[arg(long)]
        regime: Regime,
        /// Training dataset (JSONL)
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Output checkpoint path
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Optional pre-trained LM checkpoint for the fluency loss
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Metric history output (JSONL)
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the metric suite on a test set
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Scorer LM checkpoint for perplexity
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Judge classifier checkpoint for rationality
        #[arg(long)]
        judge: Option<PathBuf>,
        /// Train a judge on this annotated dataset instead of loading one
        #[arg(long, conflicts_with = "judge")]
        train_judge: Option<PathBuf>,
        /// Where to save a freshly trained judge
        #[arg(long)]
        save_judge: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report as JSON here
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Classify and explain one input
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// First (or only) input segment
        #[arg(long)]
        text: String,
        /// Second input segment (hypothesis), if the task has one
        #[arg(long)]
        text_b: Option<String>,
        /// Skip explanation generation (NE-Acc path)
        #[arg(long)]
        no_explain: bool,
    },
    /// Apply labeling functions and build a combined weak dataset
    WeakLabel {
        /// Annotated seed records, kept verbatim (JSONL)
        #[arg(long)]
        annotated: PathBuf,
        /// Unlabeled records to pseudo-label (JSONL)
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Labeling-function config file; defaults to the task's built-in set
        #[arg(long)]
        lf_config: Option<PathBuf>,
        #[arg(long, default_value = "sp")]
        task: TaskKind,
    },
    /// Paraphrase inputs into pseudo explanation targets
    MakePseudo {
        /// Labeled records lacking explanations (JSONL)
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Per-source-token length budget for targets
        #[arg(long, default_value_t = 3)]
        f_max: usize,
        /// Two-column synonym table file (default: built-in table)
        #[arg(long)]
        synonyms: Option<PathBuf>,
        /// Paraphrase backend
        #[arg(long, default_value = "surrogate")]
        mode: String,
        /// External endpoint as host:port (mode = external)
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value_t = 2000)]
        timeout_ms: u64,
        #[arg(long, default_value_t = 2)]
        retries: usize,
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
    },
    /// Pre-train the explanation language model
    PretrainLm {
        /// Dataset whose explanations form the LM corpus (JSONL)
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Single-sequence decode latency: NAR vs the AR ablation
    Bench {
        /// NAR model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// AR ablation checkpoint (defaults to --model run in AR mode)
        #[arg(long)]
        model_ar: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Comma-separated decode modes to time
        #[arg(long, default_value = "nar,ar")]
        modes: String,
        /// Pin both modes to this emitted length
        #[arg(long)]
        force_len: Option<usize>,
        /// Per-example CSV output
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Cap the number of benchmarked examples
        #[arg(long, default_value_t = 64)]
        limit: usize,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CNAT_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("CNAT_THREADS = {v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing worker pool")?;
    }
    Ok(())
}

fn run() -> anyhow::Result<()> {
    init_threads()?;
    match Cli::parse().command {
        Command::GenData {
            task,
            out,
            seed,
            train_size,
            val_size,
            test_size,
        } => gen_data(task, &out, seed, train_size, val_size, test_size),
        Command::Train {
            regime,
            data,
            vocab,
            out,
            seed,
            lm,
            history,
            config,
        } => cmd_train(regime, &data, &vocab, &out, seed, lm.as_deref(), history.as_deref(), &config),
        Command::Eval {
            model,
            data,
            vocab,
            lm,
            judge,
            train_judge,
            save_judge,
            seed,
            report,
            config,
        } => cmd_eval(
            &model,
            &data,
            &vocab,
            lm.as_deref(),
            judge.as_deref(),
            train_judge.as_deref(),
            save_judge.as_deref(),
            seed,
            report.as_deref(),
            &config,
        ),
        Command::Generate {
            model,
            vocab,
            text,
            text_b,
            no_explain,
        } => cmd_generate(&model, &vocab, &text, text_b.as_deref(), no_explain),
        Command::WeakLabel {
            annotated,
            unlabeled,
            out,
            lf_config,
            task,
        } => cmd_weak_label(&annotated, &unlabeled, &out, lf_config.as_deref(), task),
        Command::MakePseudo {
            data,
            out,
            seed,
            f_max,
            synonyms,
            mode,
            endpoint,
            timeout_ms,
            retries,
            max_in_flight,
        } => cmd_make_pseudo(
            &data,
            &out,
            seed,
            f_max,
            synonyms.as_deref(),
            &mode,
            endpoint.as_deref(),
            timeout_ms,
            retries,
            max_in_flight,
        ),
        Command::PretrainLm {
            data,
            vocab,
            out,
            seed,
            history,
            config,
        } => cmd_pretrain_lm(&data, &vocab, &out, seed, history.as_deref(), &config),
        Command::Bench {
            model,
            model_ar,
            data,
            vocab,
            modes,
            force_len,
            csv,
            limit,
        } => cmd_bench(
            &model,
            model_ar.as_deref(),
            &data,
            &vocab,
            &modes,
            force_len,
            csv.as_deref(),
            limit,
        ),
    }
}

fn gen_data(
    task: TaskKind,
    out: &Path,
    seed: u64,
    train_size: usize,
    val_size: usize,
    test_size: usize,
) -> anyhow::Result<()> {
    let base = match task {
        TaskKind::Nli => SyntheticTaskConfig::default_nli(seed),
        TaskKind::Sp => SyntheticTaskConfig::default_sp(seed),
    };
    let cfg = SyntheticTaskConfig {
        train_size,
        val_size,
        test_size,
        ..base
    };
    let splits = synthetic::generate(&cfg)?;
    std::fs::create_dir_all(out)?;
    save_dataset(&out.join("train.jsonl"), &splits.train)?;
    save_dataset(&out.join("val.jsonl"), &splits.val)?;
    save_dataset(&out.join("test.jsonl"), &splits.test)?;

    // vocabulary covers the training split plus the words the pseudo
    // pipelines can introduce (connectives, synonym targets), so weak and
    // unsupervised targets stay representable
    let mut corpus: Vec<String> = Vec::new();
    for ex in &splits.train {
        corpus.push(ex.input_tokens().join(" "));
        if let Some(e) = &ex.explanation {
            corpus.push(e.clone());
        }
    }
    corpus.extend(unsup::CONNECTIVES.iter().map(|s| s.to_string()));
    corpus.extend(unsup::default_synonyms().into_values());
    let vocab = Vocab::build(corpus.iter().map(|s| s.as_str()));
    vocab.save(&out.join("vocab.txt"))?;

    println!(
        "wrote {} train / {} val / {} test records and {} vocab entries to {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        vocab.len(),
        out.display()
    );
    Ok(())
}

fn labels_in(dataset: &[Example]) -> usize {
    dataset
        .iter()
        .filter_map(|e| e.label)
        .max()
        .map_or(2, |m| (m + 1).max(2))
}

fn model_config(cfg: &ConfigFile, vocab_size: usize, labels: usize) -> anyhow::Result<ModelConfig> {
    let mut c = ModelConfig::desk(vocab_size, labels);
    c.d_model = cfg.get_or("model", "d_model", c.d_model)?;
    c.heads = cfg.get_or("model", "heads", c.heads)?;
    c.enc_layers = cfg.get_or("model", "enc_layers", c.enc_layers)?;
    c.dec_layers = cfg.get_or("model", "dec_layers", c.dec_layers)?;
    c.d_ff = cfg.get_or("model", "d_ff", c.d_ff)?;
    c.f_max = cfg.get_or("model", "f_max", c.f_max)?;
    c.t_max = cfg.get_or("model", "t_max", c.t_max)?;
    c.dropout = cfg.get_or("model", "dropout", c.dropout)?;
    c.labels = cfg.get_or("model", "labels", c.labels)?;
    if let Some(mode) = cfg.get("model", "mode") {
        c.mode = mode.parse().map_err(cnat::Error::InvalidConfig)?;
    }
    c.validate()?;
    Ok(c)
}

fn train_config(cfg: &ConfigFile, regime: Regime, seed: u64) -> anyhow::Result<TrainConfig> {
    let d = TrainConfig::default();
    let weights = LossWeights {
        lambda_e: cfg.get_or("train", "lambda_e", d.weights.lambda_e)?,
        lambda_f: cfg.get_or("train", "lambda_f", d.weights.lambda_f)?,
        lambda_lm: cfg.get_or("train", "lambda_lm", d.weights.lambda_lm)?,
    };
    Ok(TrainConfig {
        regime,
        steps: cfg.get_or("train", "steps", d.steps)?,
        batch_size: cfg.get_or("train", "batch_size", d.batch_size)?,
        lr: cfg.get_or("train", "lr", d.lr)?,
        weights,
        clip_norm: cfg.get_or("train", "clip_norm", d.clip_norm)?,
        seed,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    regime: Regime,
    data: &Path,
    vocab_path: &Path,
    out: &Path,
    seed: u64,
    lm_path: Option<&Path>,
    history_path: Option<&Path>,
    config: &ConfigArgs,
) -> anyhow::Result<()> {
    let cfg = config.load()?;
    let dataset = load_dataset(data)?;
    let vocab = Vocab::load(vocab_path)?;
    let labels = cfg.get_or("model", "labels", labels_in(&dataset))?;
    let model_cfg = model_config(&cfg, vocab.len(), labels)?;
    let train_cfg = train_config(&cfg, regime, seed)?;
    let lm = match lm_path {
        Some(p) => Some(checkpoint::load_lm::<F>(p)?),
        None => None,
    };
    let mut model = CnatModel::<F>::new(model_cfg, seed)?;
    println!(
        "training {} regime on {} records ({} steps, batch {}, lr {})",
        regime,
        dataset.len(),
        train_cfg.steps,
        train_cfg.batch_size,
        train_cfg.lr
    );
    let total = train_cfg.steps;
    let mut session =
        training::TrainSession::new(&model, lm.as_ref(), &dataset, &vocab, train_cfg)?;
    let mut history = Vec::with_capacity(total);
    let chunk = 50usize;
    while session.step_count() < total {
        let n = chunk.min(total - session.step_count());
        history.extend(session.run_steps(&mut model, lm.as_ref(), n)?);
        let last = history.last().unwrap();
        println!("step {:>6}  loss {:.4}", last.step, last.loss);
    }
    checkpoint::save_model(out, &model)?;
    if let Some(h) = history_path {
        write_history(h, &history)?;
    }
    println!("saved checkpoint to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    model_path: &Path,
    data: &Path,
    vocab_path: &Path,
    lm_path: Option<&Path>,
    judge_path: Option<&Path>,
    train_judge_data: Option<&Path>,
    save_judge: Option<&Path>,
    seed: u64,
    report_path: Option<&Path>,
    config: &ConfigArgs,
) -> anyhow::Result<()> {
    let cfg = config.load()?;
    let model = checkpoint::load_model::<F>(model_path)?;
    let test = load_dataset(data)?;
    let vocab = Vocab::load(vocab_path)?;
    let lm = match lm_path {
        Some(p) => Some(checkpoint::load_lm::<F>(p)?),
        None => None,
    };
    let judge = match (judge_path, train_judge_data) {
        (Some(p), _) => Some(checkpoint::load_classifier::<F>(p)?),
        (None, Some(train_path)) => {
            let train_set = load_dataset(train_path)?;
            let mut jc = ClassifierConfig::desk(vocab.len(), labels_in(&train_set));
            jc.t_max = cfg.get_or("judge", "t_max", jc.t_max)?;
            let steps = cfg.get_or("judge", "steps", 1500)?;
            let lr = cfg.get_or("judge", "lr", 1e-3)?;
            println!("training judge on {} records ({steps} steps)", train_set.len());
            let judge = evalkit::train_judge::<F>(&train_set, &vocab, jc, steps, lr, seed)?;
            let acc = evalkit::judge_accuracy(&train_set, &vocab, &judge)?;
            println!("judge training accuracy {acc:.2}");
            if let Some(p) = save_judge {
                checkpoint::save_classifier(p, &judge)?;
            }
            Some(judge)
        }
        (None, None) => None,
    };
    let report = evalkit::evaluate(&model, &test, &vocab, lm.as_ref(), judge.as_ref())?;
    print!("{}", report.to_table());
    if let Some(p) = report_path {
        std::fs::write(p, report.to_record())?;
    }
    Ok(())
}

fn cmd_generate(
    model_path: &Path,
    vocab_path: &Path,
    text: &str,
    text_b: Option<&str>,
    no_explain: bool,
) -> anyhow::Result<()> {
    let model = checkpoint::load_model::<F>(model_path)?;
    let vocab = Vocab::load(vocab_path)?;
    let ex = Example {
        id: 0,
        segment_a: text.to_string(),
        segment_b: text_b.map(|s| s.to_string()),
        label: None,
        explanation: None,
        provenance: cnat::data::Provenance::Human,
        alignment: None,
    };
    let ids = vocab.encode_tokens(&ex.input_tokens());
    let out = model.generate(&ids, !no_explain)?;
    println!("label: {}", out.label);
    println!(
        "label distribution: [{}]",
        out.label_dist
            .iter()
            .map(|p| format!("{p:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if !no_explain {
        println!("explanation: {}", vocab.decode(&out.explanation));
        println!("fertility: {:?}", out.fertility);
    }
    println!("decoder passes: {}", out.decoder_passes);
    println!("latency: {:.3} ms", out.latency_ns as f64 / 1.0e6);
    Ok(())
}

fn cmd_weak_label(
    annotated_path: &Path,
    unlabeled_path: &Path,
    out: &Path,
    lf_config: Option<&Path>,
    task: TaskKind,
) -> anyhow::Result<()> {
    let annotated = load_dataset(annotated_path)?;
    let unlabeled = load_dataset(unlabeled_path)?;
    let num_labels = match task {
        TaskKind::Nli => 3,
        TaskKind::Sp => 2,
    };
    let text = match lf_config {
        Some(p) => std::fs::read_to_string(p)?,
        None => default_lf_config(task).to_string(),
    };
    let mut set = load_lf_config(&text, num_labels)?;
    let votes = apply_lfs(&unlabeled, &set);
    let learned = learn_weights(&votes, num_labels)?;
    for (lf, (&w, &never)) in set
        .lfs
        .iter_mut()
        .zip(learned.w.iter().zip(&learned.never_voted))
    {
        lf.weight = w;
        let tag = if never { " (never voted)" } else { "" };
        println!("lf {:<24} label {}  weight {:.3}{tag}", lf.name, lf.label, w);
    }
    let (combined, stats) = build_combined_dataset(&annotated, &unlabeled, &set);
    save_dataset(out, &combined)?;
    println!(
        "coverage {:.1}%  pseudo added {}  dropped {}  combined size {}",
        100.0 * stats.coverage(),
        stats.pseudo_added,
        stats.dropped,
        combined.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_make_pseudo(
    data: &Path,
    out: &Path,
    seed: u64,
    f_max: usize,
    synonyms: Option<&Path>,
    mode: &str,
    endpoint: Option<&str>,
    timeout_ms: u64,
    retries: usize,
    max_in_flight: usize,
) -> anyhow::Result<()> {
    let dataset = load_dataset(data)?;
    let mut paraphraser = Paraphraser::surrogate(seed);
    if let Some(p) = synonyms {
        paraphraser.synonyms = unsup::load_synonyms(&std::fs::read_to_string(p)?)?;
    }
    match mode {
        "surrogate" => {}
        "external" => {
            let mut cfg = ExternalConfig {
                timeout_ms,
                retries,
                max_in_flight,
                ..ExternalConfig::default()
            };
            if let Some(ep) = endpoint {
                let (host, port) = ep
                    .rsplit_once(':')
                    .context("endpoint must be host:port")?;
                cfg.host = host.to_string();
                cfg.port = port.parse().context("endpoint port")?;
            }
            paraphraser.mode = ParaphraserMode::External(cfg);
        }
        other => bail!("unknown paraphrase mode `{other}` (expected surrogate|external)"),
    }
    let pseudo = build_unsup_dataset(&dataset, &paraphraser, f_max)?;
    save_dataset(out, &pseudo)?;
    let fallbacks = paraphraser.fallback_count();
    if fallbacks > 0 {
        println!("{fallbacks} records fell back to the surrogate paraphraser");
    }
    println!("wrote {} pseudo-target records to {}", pseudo.len(), out.display());
    Ok(())
}

fn cmd_pretrain_lm(
    data: &Path,
    vocab_path: &Path,
    out: &Path,
    seed: u64,
    history_path: Option<&Path>,
    config: &ConfigArgs,
) -> anyhow::Result<()> {
    let cfg = config.load()?;
    let dataset = load_dataset(data)?;
    let vocab = Vocab::load(vocab_path)?;
    let mut lm_cfg = LmConfig::desk(vocab.len());
    lm_cfg.d_model = cfg.get_or("lm", "d_model", lm_cfg.d_model)?;
    lm_cfg.heads = cfg.get_or("lm", "heads", lm_cfg.heads)?;
    lm_cfg.layers = cfg.get_or("lm", "layers", lm_cfg.layers)?;
    lm_cfg.d_ff = cfg.get_or("lm", "d_ff", lm_cfg.d_ff)?;
    lm_cfg.t_max = cfg.get_or("lm", "t_max", lm_cfg.t_max)?;
    lm_cfg.dropout = cfg.get_or("lm", "dropout", lm_cfg.dropout)?;
    let d = LmTrainConfig::default();
    let train_cfg = LmTrainConfig {
        steps: cfg.get_or("lm", "steps", d.steps)?,
        batch_size: cfg.get_or("lm", "batch_size", d.batch_size)?,
        lr: cfg.get_or("lm", "lr", d.lr)?,
        clip_norm: cfg.get_or("lm", "clip_norm", d.clip_norm)?,
        seed,
    };
    let corpus = lm_corpus(&dataset, &vocab);
    println!(
        "pre-training LM on {} explanation sequences ({} steps)",
        corpus.len(),
        train_cfg.steps
    );
    let mut lm = LmModel::<F>::new(lm_cfg, seed)?;
    let history = pretrain_lm(&mut lm, &corpus, &train_cfg)?;
    let last = history.last().unwrap();
    println!("final mean NLL {:.4} (ppl {:.2})", last.loss, last.loss.exp());
    checkpoint::save_lm(out, &lm)?;
    if let Some(h) = history_path {
        write_history(h, &history)?;
    }
    println!("saved LM checkpoint to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    model_path: &Path,
    model_ar_path: Option<&Path>,
    data: &Path,
    vocab_path: &Path,
    modes: &str,
    force_len: Option<usize>,
    csv: Option<&Path>,
    limit: usize,
) -> anyhow::Result<()> {
    let modes: Vec<&str> = modes.split(',').map(str::trim).collect();
    for m in &modes {
        if !matches!(*m, "nar" | "ar") {
            bail!("unknown mode `{m}` (expected nar,ar)");
        }
    }
    if !modes.contains(&"nar") || !modes.contains(&"ar") {
        bail!("the benchmark compares both modes; pass --modes nar,ar");
    }
    let model_nar = checkpoint::load_model::<F>(model_path)?;
    let model_ar = match model_ar_path {
        Some(p) => checkpoint::load_model::<F>(p)?,
        None => {
            let mut m = checkpoint::load_model::<F>(model_path)?;
            m.set_mode(cnat::model::Mode::Ar);
            m
        }
    };
    let test = load_dataset(data)?;
    let vocab = Vocab::load(vocab_path)?;
    let inputs: Vec<Vec<usize>> = test
        .iter()
        .take(limit)
        .map(|ex| vocab.encode_tokens(&ex.input_tokens()))
        .collect();
    let result = evalkit::bench_latency(&model_nar, &model_ar, &inputs, force_len)?;
    println!(
        "nar latency {:.3} ms   ar latency {:.3} ms   speedup {:.2}x",
        result.latency_nar_ns / 1.0e6,
        result.latency_ar_ns / 1.0e6,
        result.speedup
    );
    if let Some(p) = csv {
        evalkit::write_bench_csv(p, &result.rows)?;
        println!("wrote per-example timings to {}", p.display());
    }
    Ok(())
}
