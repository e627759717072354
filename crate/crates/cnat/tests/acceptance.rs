//! Acceptance suite: one pass/fail line per criterion. Runs without the
//! default test harness so the lines always reach the output; exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cnat::data::synthetic::{self, SyntheticTaskConfig, TaskKind};
use cnat::data::{tokenize, Example, Vocab};
use cnat::evalkit;
use cnat::model::checkpoint;
use cnat::model::layers::Bind;
use cnat::model::{ClassifierConfig, CnatModel, LmConfig, LmModel, Mode, ModelConfig};
use cnat::numcore::gradcheck::{central_diff, max_rel_error};
use cnat::numcore::{Graph, NodeId, ParamStore};
use cnat::training::{
    self, lm_corpus, pretrain_lm, target_fertility, LmTrainConfig, LossWeights, Regime,
    TrainConfig,
};
use cnat::unsup::{self, Paraphraser};
use cnat::weaksup::{
    aggregate, apply_lfs, build_combined_dataset, default_lf_config, learn_weights,
    load_lf_config, log_marginal_likelihood,
};

type Criterion = fn() -> Result<String, String>;

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, Criterion); 10] = [
        (1, "gradient integrity", c1_gradient_integrity),
        (2, "length/mask laws", c2_length_mask_laws),
        (3, "overfit reproduction", c3_overfit),
        (4, "LM-discriminator direction", c4_lm_direction),
        (5, "latency claim direction", c5_latency),
        (6, "data-programming oracle", c6_dp_oracle),
        (7, "weak-supervision utility", c7_weak_utility),
        (8, "unsupervised ablation direction", c8_unsup_direction),
        (9, "metric self-tests", c9_metric_selftests),
        (10, "determinism & persistence", c10_determinism),
    ];
    let mut failures = 0;
    for (num, name, run) in criteria {
        if !args.is_empty() && !args.contains(&num) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {num:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(reason) => {
                failures += 1;
                println!("criterion {num:>2} FAIL  {name}: {reason} [{secs:.1}s]");
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- shared

fn nli_world(
    seed: u64,
    train: usize,
    val: usize,
    test: usize,
) -> (synthetic::Splits, Vocab) {
    let cfg = SyntheticTaskConfig {
        train_size: train,
        val_size: val,
        test_size: test,
        ..SyntheticTaskConfig::default_nli(seed)
    };
    let splits = synthetic::generate(&cfg).expect("synthetic generation");
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
    (splits, vocab)
}

fn encode_input(vocab: &Vocab, ex: &Example) -> Vec<usize> {
    vocab.encode_tokens(&ex.input_tokens())
}

fn test_accuracy(model: &CnatModel<f32>, test: &[Example], vocab: &Vocab) -> f64 {
    let mut hit = 0usize;
    for ex in test {
        let out = model.generate(&encode_input(vocab, ex), false).unwrap();
        if Some(out.label) == ex.label {
            hit += 1;
        }
    }
    100.0 * hit as f64 / test.len() as f64
}

// ------------------------------------------------------------ criterion 1

/// FD-check the gradient of `loss(x)` where the leaf is built inside the
/// closure from flat data.
fn op_check(
    name: &str,
    data: &[f64],
    mut build: impl FnMut(&mut Graph<f64>, &[f64]) -> (NodeId, NodeId),
    worst: &mut f64,
) -> Result<(), String> {
    let mut forward = |x: &[f64]| {
        let mut g = Graph::<f64>::train(ChaCha8Rng::seed_from_u64(7));
        let (_, loss) = build(&mut g, x);
        g.scalar_value(loss)
    };
    let numeric = central_diff(data, 1e-5, &mut forward);
    let mut g = Graph::<f64>::train(ChaCha8Rng::seed_from_u64(7));
    let (leaf, loss) = build(&mut g, data);
    g.backward(loss).map_err(|e| format!("{name}: {e}"))?;
    let analytic = g
        .grad(leaf)
        .ok_or_else(|| format!("{name}: no gradient recorded"))?;
    let err = max_rel_error(analytic, &numeric);
    *worst = worst.max(err);
    check(err < 1e-4, format!("{name}: rel error {err:.2e} >= 1e-4"))
}

fn c1_gradient_integrity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for trial in 0..3 {
        let r = 2 + trial;
        let c = 3 + trial;
        let x: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let y: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let w: Vec<f64> = (0..c * r).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pos: Vec<f64> = x.iter().map(|v| v.abs() + 0.5).collect();
        let bias: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let leaf = |g: &mut Graph<f64>, d: &[f64], rr: usize, cc: usize| {
            g.leaf(d.to_vec(), [rr, cc])
        };
        op_check("add", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let b = g.constant(y.clone(), [r, c]);
            let s = g.add(a, b);
            (a, g.sum_all(s))
        }, &mut worst)?;
        op_check("add_bias", &bias, |g, d| {
            let b = g.leaf(d.to_vec(), [1, c]);
            let a = g.constant(x.clone(), [r, c]);
            let s = g.add_bias(a, b);
            (b, g.sum_all(s))
        }, &mut worst)?;
        op_check("mul", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let b = g.constant(y.clone(), [r, c]);
            let m = g.mul(a, b);
            (a, g.sum_all(m))
        }, &mut worst)?;
        op_check("scale", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let s = g.scale(a, 0.37);
            (a, g.sum_all(s))
        }, &mut worst)?;
        op_check("matmul", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let b = g.constant(w.clone(), [c, r]);
            let m = g.matmul(a, b);
            let sq = g.mul(m, m);
            (a, g.sum_all(sq))
        }, &mut worst)?;
        op_check("matmul_bt", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let b = g.constant(y.clone(), [r, c]);
            let m = g.matmul_bt(a, b);
            (a, g.sum_all(m))
        }, &mut worst)?;
        op_check("relu", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let v = g.relu(a);
            (a, g.sum_all(v))
        }, &mut worst)?;
        op_check("gelu", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let v = g.gelu(a);
            (a, g.sum_all(v))
        }, &mut worst)?;
        op_check("log", &pos, |g, d| {
            let a = leaf(g, d, r, c);
            let v = g.log(a);
            (a, g.sum_all(v))
        }, &mut worst)?;
        op_check("softmax_rows", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let s = g.softmax_rows(a).unwrap();
            let wgt = g.constant(y.clone(), [r, c]);
            let m = g.mul(s, wgt);
            (a, g.sum_all(m))
        }, &mut worst)?;
        op_check("log_softmax_rows", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let s = g.log_softmax_rows(a).unwrap();
            let wgt = g.constant(y.clone(), [r, c]);
            let m = g.mul(s, wgt);
            (a, g.sum_all(m))
        }, &mut worst)?;
        op_check("layer_norm", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let gamma = g.constant(vec![1.1; c], [1, c]);
            let beta = g.constant(vec![0.2; c], [1, c]);
            let v = g.layer_norm(a, gamma, beta, 1e-5);
            let wgt = g.constant(y.clone(), [r, c]);
            let m = g.mul(v, wgt);
            (a, g.sum_all(m))
        }, &mut worst)?;
        op_check("dropout", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let v = g.dropout(a, 0.4);
            (a, g.sum_all(v))
        }, &mut worst)?;
        op_check("gather", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let v = g.gather(a, &[0, r - 1, 0]).unwrap();
            let sq = g.mul(v, v);
            (a, g.sum_all(sq))
        }, &mut worst)?;
        op_check("mean_rows", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let v = g.mean_rows(a);
            let sq = g.mul(v, v);
            (a, g.sum_all(sq))
        }, &mut worst)?;
        op_check("sum_all", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let s = g.sum_all(a);
            (a, g.mul(s, s))
        }, &mut worst)?;
        op_check("cross_entropy_rows", &x, |g, d| {
            let a = leaf(g, d, r, c);
            (a, g.cross_entropy_rows(a, &vec![Some(1); r]).unwrap())
        }, &mut worst)?;
        op_check("concat_rows", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let b = g.constant(y.clone(), [r, c]);
            let v = g.concat_rows(a, b);
            let sq = g.mul(v, v);
            (a, g.sum_all(sq))
        }, &mut worst)?;
        op_check("concat_cols", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let b = g.constant(y.clone(), [r, c]);
            let v = g.concat_cols(a, b);
            let sq = g.mul(v, v);
            (a, g.sum_all(sq))
        }, &mut worst)?;
        op_check("slice_rows", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let v = g.slice_rows(a, 1, r);
            let sq = g.mul(v, v);
            (a, g.sum_all(sq))
        }, &mut worst)?;
        op_check("slice_cols", &x, |g, d| {
            let a = leaf(g, d, r, c);
            let v = g.slice_cols(a, 1, c);
            let sq = g.mul(v, v);
            (a, g.sum_all(sq))
        }, &mut worst)?;
    }

    // end-to-end Eq. (1) composite at f64 on a tiny model
    let (splits, vocab) = nli_world(3, 8, 4, 4);
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        d_ff: 32,
        f_max: 3,
        t_max: 48,
        dropout: 0.0,
        labels: 3,
        mode: Mode::Nar,
    };
    let mut model = CnatModel::<f64>::new(cfg.clone(), 5).map_err(|e| e.to_string())?;
    let lm_cfg = LmConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        heads: 2,
        layers: 1,
        d_ff: 32,
        t_max: 48,
        dropout: 0.0,
    };
    let lm = LmModel::<f64>::new(lm_cfg, 6).map_err(|e| e.to_string())?;
    let ex = &splits.train[0];
    let input_ids = encode_input(&vocab, ex);
    let expl_ids = vocab.encode_tokens(&tokenize(ex.explanation.as_ref().unwrap()));
    let fert = target_fertility(
        input_ids.len(),
        expl_ids.len(),
        ex.alignment.as_deref(),
        cfg.f_max,
    )
    .map_err(|e| e.to_string())?;
    let weights = LossWeights::default();

    let eq1 = |model: &CnatModel<f64>| -> f64 {
        let mut g = Graph::<f64>::inference();
        let bind = Bind::trainable(&model.params);
        let h = model.encode(&mut g, &bind, &input_ids).unwrap();
        let fl = model.fertility_logits(&mut g, &bind, h);
        let l_f = training::fertility_loss(&mut g, fl, &fert, cfg.f_max).unwrap();
        let y = cnat::model::copy_by_fertility(&input_ids, &fert).unwrap();
        let h_d = model.decode(&mut g, &bind, &y, h).unwrap();
        let el = model.explanation_logits(&mut g, &bind, h_d);
        let mut targets = expl_ids.clone();
        targets.resize(y.len(), 0);
        let l_e = training::explanation_loss(&mut g, el, &targets).unwrap();
        let ll = model.label_logits(&mut g, &bind, h_d);
        let l_l = training::label_loss(&mut g, ll, ex.label.unwrap()).unwrap();
        let lm_bind = Bind::frozen(&lm.params);
        let probs = g.softmax_rows(el).unwrap();
        let l_lm = training::lm_fluency_loss(&mut g, &lm, &lm_bind, probs).unwrap();
        let total =
            training::total_loss(&mut g, l_l, Some(l_e), Some(l_f), Some(l_lm), &weights)
                .unwrap();
        g.scalar_value(total)
    };

    // analytic grads once
    {
        let mut g = Graph::<f64>::inference();
        let bind = Bind::trainable(&model.params);
        let h = model.encode(&mut g, &bind, &input_ids).unwrap();
        let fl = model.fertility_logits(&mut g, &bind, h);
        let l_f = training::fertility_loss(&mut g, fl, &fert, cfg.f_max).unwrap();
        let y = cnat::model::copy_by_fertility(&input_ids, &fert).unwrap();
        let h_d = model.decode(&mut g, &bind, &y, h).unwrap();
        let el = model.explanation_logits(&mut g, &bind, h_d);
        let mut targets = expl_ids.clone();
        targets.resize(y.len(), 0);
        let l_e = training::explanation_loss(&mut g, el, &targets).unwrap();
        let ll = model.label_logits(&mut g, &bind, h_d);
        let l_l = training::label_loss(&mut g, ll, ex.label.unwrap()).unwrap();
        let lm_bind = Bind::frozen(&lm.params);
        let probs = g.softmax_rows(el).unwrap();
        let l_lm = training::lm_fluency_loss(&mut g, &lm, &lm_bind, probs).unwrap();
        let total =
            training::total_loss(&mut g, l_l, Some(l_e), Some(l_f), Some(l_lm), &weights)
                .unwrap();
        g.backward(total).map_err(|e| e.to_string())?;
        g.collect_param_grads(&mut model.params);
    }

    // FD over a random sample of parameter entries
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut probes = Vec::new();
    let names: Vec<(usize, usize)> = {
        let mut v = Vec::new();
        for (pi, p) in model.params.iter().enumerate() {
            for _ in 0..2 {
                v.push((pi, rng.gen_range(0..p.data.len())));
            }
        }
        v
    };
    for &(pi, ei) in names.iter().take(60) {
        let (analytic, numeric) = {
            let analytic = model.params.iter().nth(pi).unwrap().grad[ei];
            let orig = model.params.iter().nth(pi).unwrap().data[ei];
            let eps = 1e-5;
            set_entry(&mut model.params, pi, ei, orig + eps);
            let fp = eq1(&model);
            set_entry(&mut model.params, pi, ei, orig - eps);
            let fm = eq1(&model);
            set_entry(&mut model.params, pi, ei, orig);
            (analytic, (fp - fm) / (2.0 * eps))
        };
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        probes.push(rel);
    }
    let worst_e2e = probes.iter().cloned().fold(0.0f64, f64::max);
    check(
        worst_e2e < 1e-3,
        format!("Eq.(1) composite rel error {worst_e2e:.2e} >= 1e-3"),
    )?;
    Ok(format!(
        "all ops < 1e-4 (worst {worst:.1e}); Eq.(1) composite over {} param probes < 1e-3 (worst {worst_e2e:.1e})",
        probes.len()
    ))
}

fn set_entry(store: &mut ParamStore<f64>, pi: usize, ei: usize, v: f64) {
    store.iter_mut().nth(pi).unwrap().data[ei] = v;
}

// ------------------------------------------------------------ criterion 2

fn c2_length_mask_laws() -> Result<String, String> {
    let (splits, vocab) = nli_world(21, 64, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    for model_seed in 0..4u64 {
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 32,
            heads: 4,
            enc_layers: 1,
            dec_layers: 1,
            d_ff: 64,
            f_max: 3,
            t_max: 64,
            dropout: 0.1,
            labels: 3,
            mode: Mode::Nar,
        };
        let model = CnatModel::<f32>::new(cfg, model_seed).map_err(|e| e.to_string())?;
        for _ in 0..250 {
            let ex = &splits.train[rng.gen_range(0..splits.train.len())];
            let ids = encode_input(&vocab, ex);
            let out = model.generate(&ids, true).map_err(|e| e.to_string())?;
            let sum: usize = out.fertility.iter().sum();
            check(
                out.explanation.len() == sum,
                format!("length {} != sum fertility {sum}", out.explanation.len()),
            )?;
            checked += 1;
        }
    }

    // bidirectional dependence in NAR decoding, strict causality in AR
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 32,
        heads: 4,
        enc_layers: 1,
        dec_layers: 1,
        d_ff: 64,
        f_max: 3,
        t_max: 64,
        dropout: 0.0,
        labels: 3,
        mode: Mode::Nar,
    };
    let mut model = CnatModel::<f32>::new(cfg, 9).map_err(|e| e.to_string())?;
    let ids: Vec<usize> = (5..13).collect();
    let y: Vec<usize> = (6..14).collect();
    let probes = 25usize;
    let decode_rows = |model: &CnatModel<f32>, y: &[usize]| -> Vec<f32> {
        let mut g = Graph::<f32>::inference();
        let bind = Bind::frozen(&model.params);
        let h = model.encode(&mut g, &bind, &ids).unwrap();
        let h_d = model.decode(&mut g, &bind, y, h).unwrap();
        g.data(h_d).to_vec()
    };
    let d = 32;
    let row_changed = |a: &[f32], b: &[f32], i: usize| a[i * d..(i + 1) * d] != b[i * d..(i + 1) * d];

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for probe in 0..probes {
        let j = 1 + (probe % (y.len() - 2)); // interior position
        let base = decode_rows(&model, &y);
        let mut y2 = y.clone();
        y2[j] = if y2[j] == 5 { 6 } else { 5 };
        let pert = decode_rows(&model, &y2);
        let before = (0..j).any(|i| row_changed(&base, &pert, i));
        let after = (j + 1..y.len()).any(|i| row_changed(&base, &pert, i));
        check(
            before && after,
            format!("NAR probe at {j}: dependence before={before} after={after}"),
        )?;
        let _ = rng.gen::<u64>();
    }

    model.set_mode(Mode::Ar);
    for probe in 0..probes {
        let j = 1 + (probe % (y.len() - 2));
        let base = decode_rows(&model, &y);
        let mut y2 = y.clone();
        y2[j] = if y2[j] == 5 { 6 } else { 5 };
        let pert = decode_rows(&model, &y2);
        let leaked = (0..j).any(|i| row_changed(&base, &pert, i));
        let affected = row_changed(&base, &pert, j);
        check(
            !leaked && affected,
            format!("AR probe at {j}: leak-before={leaked} self-change={affected}"),
        )?;
    }
    Ok(format!(
        "{checked} generations with len = sum(F); {probes} NAR bidirectional and {probes} AR causality probes all hold"
    ))
}

// ------------------------------------------------------------ criterion 3

fn c3_overfit() -> Result<String, String> {
    let (splits, vocab) = nli_world(31, 256, 4, 4);
    let train = &splits.train;
    let mut cfg = ModelConfig::desk(vocab.len(), 3); // d=128, 2+2 layers
    cfg.dropout = 0.0; // memorization run; regularization only slows it
    let mut model = CnatModel::<f32>::new(cfg, 0).map_err(|e| e.to_string())?;
    let measure = |model: &CnatModel<f32>| -> (f64, f64) {
        let mut label_hits = 0usize;
        let mut exact = 0usize;
        for ex in train {
            let ids = encode_input(&vocab, ex);
            let out = model.generate(&ids, true).unwrap();
            if Some(out.label) == ex.label {
                label_hits += 1;
            }
            let gold = vocab.encode_tokens(&tokenize(ex.explanation.as_ref().unwrap()));
            if out.explanation == gold {
                exact += 1;
            }
        }
        (
            100.0 * label_hits as f64 / train.len() as f64,
            100.0 * exact as f64 / train.len() as f64,
        )
    };
    let mut acc = 0.0;
    let mut em = 0.0;
    let mut steps_used = 0;
    // high-lr phase, then a low-lr phase to settle the argmax decode;
    // capped at 2000 steps total
    'phases: for (phase_lr, phase_steps, seed) in [(1e-3, 1200usize, 0u64), (2e-4, 800, 1)] {
        let tc = TrainConfig {
            regime: Regime::Full,
            steps: phase_steps,
            batch_size: 8,
            lr: phase_lr,
            weights: LossWeights {
                lambda_e: 1.0,
                lambda_f: 0.5,
                lambda_lm: 0.0,
            },
            clip_norm: 1.0,
            seed,
        };
        let mut session = training::TrainSession::new(&model, None, train, &vocab, tc)
            .map_err(|e| e.to_string())?;
        while session.step_count() < phase_steps {
            session
                .run_steps(&mut model, None, 200)
                .map_err(|e| e.to_string())?;
            steps_used += 200;
            let (a, e) = measure(&model);
            acc = a;
            em = e;
            if acc >= 99.0 && em >= 95.0 {
                break 'phases;
            }
        }
    }
    check(
        acc >= 99.0 && em >= 95.0,
        format!("after {steps_used} steps: label acc {acc:.2} (need >=99), explanation exact match {em:.2} (need >=95)"),
    )?;
    Ok(format!(
        "desk model: label acc {acc:.2}%, explanation exact match {em:.2}% after {steps_used} steps"
    ))
}

// ------------------------------------------------------------ criterion 4

fn small_model_cfg(vocab: usize, labels: usize, mode: Mode) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model: 64,
        heads: 4,
        enc_layers: 2,
        dec_layers: 2,
        d_ff: 128,
        f_max: 3,
        t_max: 64,
        dropout: 0.1,
        labels,
        mode,
    }
}

fn c4_lm_direction() -> Result<String, String> {
    let (splits, vocab) = nli_world(41, 256, 96, 4);
    let corpus = lm_corpus(&splits.train, &vocab);
    let lm_cfg = LmConfig {
        vocab_size: vocab.len(),
        d_model: 64,
        heads: 4,
        layers: 2,
        d_ff: 128,
        t_max: 64,
        dropout: 0.1,
    };
    let mut lm = LmModel::<f32>::new(lm_cfg, 100).map_err(|e| e.to_string())?;
    pretrain_lm(
        &mut lm,
        &corpus,
        &LmTrainConfig {
            steps: 400,
            ..LmTrainConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;

    let held_out_ppl = |model: &CnatModel<f32>| -> f64 {
        let texts: Vec<String> = splits
            .val
            .iter()
            .map(|ex| {
                let out = model.generate(&encode_input(&vocab, ex), true).unwrap();
                vocab.decode(&out.explanation)
            })
            .collect();
        evalkit::perplexity(&texts, &lm, &vocab).unwrap()
    };

    let mut pairs = Vec::new();
    for seed in 0..3u64 {
        let mut ppl = [0.0f64; 2];
        for (slot, lambda_lm) in [(0usize, 0.1f64), (1, 0.0)] {
            let cfg = small_model_cfg(vocab.len(), 3, Mode::Nar);
            let mut model = CnatModel::<f32>::new(cfg, seed).map_err(|e| e.to_string())?;
            let tc = TrainConfig {
                regime: Regime::Full,
                steps: 600,
                batch_size: 8,
                lr: 3e-4,
                // lambda_e = 0 in both arms isolates the fluency term:
                // with any explanation CE the argmax-decode PPL at this
                // scale is dominated by optimization noise across seeds
                weights: LossWeights {
                    lambda_e: 0.0,
                    lambda_f: 0.5,
                    lambda_lm,
                },
                clip_norm: 1.0,
                seed,
            };
            training::train(&mut model, Some(&lm), &splits.train, &vocab, tc)
                .map_err(|e| e.to_string())?;
            ppl[slot] = held_out_ppl(&model);
        }
        check(
            ppl[0] < ppl[1],
            format!(
                "seed {seed}: PPL with LM loss {:.2} not below PPL without {:.2}",
                ppl[0], ppl[1]
            ),
        )?;
        pairs.push(format!("seed {seed}: {:.2} < {:.2}", ppl[0], ppl[1]));
    }
    Ok(format!(
        "held-out scorer PPL strictly lower with lambda_lm=0.1 in all seeds ({})",
        pairs.join("; ")
    ))
}

// ------------------------------------------------------------ criterion 5

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}

fn c5_latency() -> Result<String, String> {
    let vocab_size = 64usize;
    let cfg = ModelConfig::desk(vocab_size, 3);
    let nar = CnatModel::<f32>::new(cfg.clone(), 1).map_err(|e| e.to_string())?;
    let ar = {
        let mut m = CnatModel::<f32>::new(cfg, 1).map_err(|e| e.to_string())?;
        m.set_mode(Mode::Ar);
        m
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs: Vec<Vec<usize>> = (0..24)
        .map(|_| (0..16).map(|_| rng.gen_range(5..vocab_size)).collect())
        .collect();
    let result =
        evalkit::bench_latency(&nar, &ar, &inputs, Some(16)).map_err(|e| e.to_string())?;
    check(
        result.speedup >= 5.0,
        format!("speedup {:.2}x below 5x at T=16", result.speedup),
    )?;

    // latency scaling in emitted length
    let mut pts_nar = Vec::new();
    let mut pts_ar = Vec::new();
    for &t in &[4usize, 8, 16, 32] {
        let mut l_nar = Vec::new();
        let mut l_ar = Vec::new();
        for ids in inputs.iter().take(8) {
            let fert = evalkit::pinned_fertility(ids.len(), t);
            let o = nar.generate_with(ids, true, Some(&fert)).unwrap();
            l_nar.push(o.latency_ns as f64);
            let o = ar.generate_autoregressive_with(ids, Some(t)).unwrap();
            l_ar.push(o.latency_ns as f64);
        }
        pts_nar.push((t as f64, median(l_nar)));
        pts_ar.push((t as f64, median(l_ar)));
    }
    let s_nar = slope(&pts_nar).max(1e-9);
    let s_ar = slope(&pts_ar);
    let ratio = s_ar / s_nar;
    check(
        ratio >= 4.0,
        format!("AR/NAR latency slope ratio {ratio:.2} below 4"),
    )?;
    Ok(format!(
        "speedup {:.2}x at T=16; slope ratio {:.1} (AR {:.0} ns/token vs NAR {:.0})",
        result.speedup, ratio, s_ar, s_nar
    ))
}

// ------------------------------------------------------------ criterion 6

/// Exhaustive 0.05-grid search over LF weights. The likelihood can have a
/// ridge of equally good optima (e.g. two LFs with symmetric
/// disagreements), so the oracle is the set of labelings achieved at the
/// maximum, plus the maximum itself.
fn grid_map(
    votes: &[Vec<Option<usize>>],
    m: usize,
    labels: usize,
) -> (f64, Vec<Vec<Option<usize>>>) {
    let steps: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
    let vm = cnat::weaksup::VoteMatrix {
        votes: votes.to_vec(),
    };
    let mut grid_pts = vec![Vec::new()];
    for _ in 0..m {
        let mut next = Vec::new();
        for w in &grid_pts {
            for &s in &steps {
                let mut w2: Vec<f64> = w.clone();
                w2.push(s);
                next.push(w2);
            }
        }
        grid_pts = next;
    }
    let scored: Vec<(f64, &Vec<f64>)> = grid_pts
        .iter()
        .map(|w| (log_marginal_likelihood(&vm, w, labels), w))
        .collect();
    let best_ll = scored.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut labelings: Vec<Vec<Option<usize>>> = Vec::new();
    for (ll, w) in &scored {
        if best_ll - ll < 1e-9 {
            let lab: Vec<Option<usize>> =
                votes.iter().map(|row| aggregate(row, w, labels)).collect();
            if !labelings.contains(&lab) {
                labelings.push(lab);
            }
        }
    }
    (best_ll, labelings)
}

fn c6_dp_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut instances = 0usize;
    let mut unique = 0usize;
    for trial in 0..60 {
        let labels = 2 + trial % 2;
        let m = 1 + rng.gen_range(0..3);
        let n = 2 + rng.gen_range(0..9);
        let votes: Vec<Vec<Option<usize>>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if rng.gen_bool(0.25) {
                            None
                        } else {
                            Some(rng.gen_range(0..labels))
                        }
                    })
                    .collect()
            })
            .collect();
        if votes.iter().flatten().all(|v| v.is_none()) {
            continue;
        }
        let vm = cnat::weaksup::VoteMatrix {
            votes: votes.clone(),
        };
        let learned = learn_weights(&vm, labels).map_err(|e| e.to_string())?;
        let ours: Vec<Option<usize>> = votes
            .iter()
            .map(|row| aggregate(row, &learned.w, labels))
            .collect();
        let learned_ll = log_marginal_likelihood(&vm, &learned.w, labels);
        let (grid_ll, oracle) = grid_map(&votes, m, labels);
        check(
            learned_ll >= grid_ll - 1e-6,
            format!("instance {trial}: learned likelihood {learned_ll:.6} below grid max {grid_ll:.6}"),
        )?;
        // a row whose top two weight sums tie exactly has an arbitrary
        // argmax; such rows match any oracle label
        let ambiguous: Vec<bool> = votes
            .iter()
            .map(|row| {
                let mut sums = vec![0.0f64; labels];
                for (v, &wi) in row.iter().zip(&learned.w) {
                    if let Some(l) = v {
                        sums[*l] += wi;
                    }
                }
                let mut s = sums.clone();
                s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                labels > 1 && (s[0] - s[1]).abs() < 1e-9
            })
            .collect();
        let matches = oracle.iter().any(|lab| {
            lab.iter()
                .zip(&ours)
                .zip(&ambiguous)
                .all(|((a, b), &amb)| amb || a == b)
        });
        check(
            matches,
            format!("instance {trial}: learned labels {ours:?} not among grid MAP labelings {oracle:?}"),
        )?;
        instances += 1;
        if oracle.len() == 1 {
            unique += 1;
        }
    }

    // weighted aggregation matches an independent sum-argmax oracle
    let mut rows = 0usize;
    for _ in 0..4000 {
        let labels = 2 + rng.gen_range(0..3);
        let m = 1 + rng.gen_range(0..4);
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..0.95)).collect();
        let row: Vec<Option<usize>> = (0..m)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    None
                } else {
                    Some(rng.gen_range(0..labels))
                }
            })
            .collect();
        let got = aggregate(&row, &w, labels);
        // independent oracle: weight totals, first maximal label, None on
        // all-abstain
        let mut sums = vec![0.0f64; labels];
        let mut any = false;
        for (v, &wi) in row.iter().zip(&w) {
            if let Some(l) = v {
                sums[*l] += wi;
                any = true;
            }
        }
        let expect = if !any {
            None
        } else {
            let mut best = 0;
            for (l, &s) in sums.iter().enumerate() {
                if s > sums[best] {
                    best = l;
                }
            }
            Some(best)
        };
        check(got == expect, format!("aggregate {got:?} != oracle {expect:?}"))?;
        rows += 1;
    }
    Ok(format!(
        "{instances} random instances match the 0.05-grid MAP oracle ({unique} with a unique optimum); {rows} aggregation rows match the sum-argmax oracle"
    ))
}

// ------------------------------------------------------------ criterion 7

fn c7_weak_utility() -> Result<String, String> {
    let (splits, vocab) = nli_world(71, 2080, 4, 256);
    let annotated: Vec<Example> = splits.train[..32].to_vec();
    let unlabeled: Vec<Example> = splits.train[32..]
        .iter()
        .map(|ex| {
            let mut e = ex.clone();
            e.label = None;
            e.explanation = None;
            e.alignment = None;
            e
        })
        .collect();
    let set = {
        let mut set =
            load_lf_config(default_lf_config(TaskKind::Nli), 3).map_err(|e| e.to_string())?;
        let votes = apply_lfs(&unlabeled, &set);
        let learned = learn_weights(&votes, 3).map_err(|e| e.to_string())?;
        for (lf, w) in set.lfs.iter_mut().zip(&learned.w) {
            lf.weight = *w;
        }
        set
    };
    let (combined, stats) = build_combined_dataset(&annotated, &unlabeled, &set);

    let mut gaps = Vec::new();
    for seed in 0..3u64 {
        let mut acc = [0.0f64; 2];
        for (slot, (regime, data)) in [
            (0usize, (Regime::Weak, &combined)),
            (1, (Regime::Full, &annotated)),
        ] {
            let cfg = small_model_cfg(vocab.len(), 3, Mode::Nar);
            let mut model = CnatModel::<f32>::new(cfg, seed).map_err(|e| e.to_string())?;
            let tc = TrainConfig {
                regime,
                steps: 4000,
                batch_size: 8,
                lr: 1e-3,
                weights: LossWeights {
                    lambda_e: 1.0,
                    lambda_f: 0.5,
                    lambda_lm: 0.0,
                },
                clip_norm: 1.0,
                seed,
            };
            training::train(&mut model, None, data, &vocab, tc).map_err(|e| e.to_string())?;
            acc[slot] = test_accuracy(&model, &splits.test, &vocab);
        }
        let gap = acc[0] - acc[1];
        check(
            gap >= 5.0,
            format!(
                "seed {seed}: weak acc {:.2} vs annotated-only {:.2} (gap {gap:.2} < 5)",
                acc[0], acc[1]
            ),
        )?;
        gaps.push(format!("seed {seed}: +{gap:.1}"));
    }
    Ok(format!(
        "32 annotated + {} pseudo (coverage {:.0}%): weak model leads by >=5 points in all seeds ({})",
        stats.pseudo_added,
        100.0 * stats.coverage(),
        gaps.join("; ")
    ))
}

// ------------------------------------------------------------ criterion 8

fn c8_unsup_direction() -> Result<String, String> {
    let (splits, vocab) = nli_world(81, 512, 4, 128);
    let paraphraser = Paraphraser::surrogate(8);
    let pseudo = unsup::build_unsup_dataset(&splits.train, &paraphraser, 3)
        .map_err(|e| e.to_string())?;

    let judge = evalkit::train_judge::<f32>(
        &splits.train,
        &vocab,
        ClassifierConfig::desk(vocab.len(), 3),
        1500,
        1e-3,
        0,
    )
    .map_err(|e| e.to_string())?;

    let rationality_of = |model: &CnatModel<f32>| -> f64 {
        let mut inputs = Vec::new();
        let mut preds = Vec::new();
        let mut expls = Vec::new();
        for ex in &splits.test {
            let ids = encode_input(&vocab, ex);
            let out = model.generate(&ids, true).unwrap();
            inputs.push(ex.input_tokens().join(" "));
            preds.push(out.label);
            expls.push(vocab.decode(&out.explanation));
        }
        evalkit::rationality(&inputs, &preds, &expls, &judge, &vocab).unwrap()
    };

    // Matched pairs over three seeds, compared on the mean: the control's
    // rationality is dominated by how the judge happens to map its untrained
    // (but label-leaking) explanation stream, which varies discretely with
    // the seed, so a single pair would be a coin flip in either direction.
    let mut pseudo_scores = Vec::new();
    let mut control_scores = Vec::new();
    for seed in 0..3u64 {
        for with_pseudo in [true, false] {
            let cfg = small_model_cfg(vocab.len(), 3, Mode::Nar);
            let mut model =
                CnatModel::<f32>::new(cfg, seed).map_err(|e| e.to_string())?;
            let weights = if with_pseudo {
                LossWeights {
                    lambda_e: 1.0,
                    lambda_f: 0.5,
                    lambda_lm: 0.0,
                }
            } else {
                // control: same records, no explanation/fertility targets used
                LossWeights {
                    lambda_e: 0.0,
                    lambda_f: 0.0,
                    lambda_lm: 0.0,
                }
            };
            let tc = TrainConfig {
                regime: Regime::Unsup,
                steps: 4000,
                batch_size: 8,
                lr: 1e-3,
                weights,
                clip_norm: 1.0,
                seed,
            };
            training::train(&mut model, None, &pseudo, &vocab, tc)
                .map_err(|e| e.to_string())?;
            let score = rationality_of(&model);
            if with_pseudo {
                pseudo_scores.push(score);
            } else {
                control_scores.push(score);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (p_mean, c_mean) = (mean(&pseudo_scores), mean(&control_scores));
    let gap = p_mean - c_mean;
    let detail = format!(
        "pseudo {:.1} (seeds {:.1}/{:.1}/{:.1}) vs control {:.1} (seeds {:.1}/{:.1}/{:.1}), mean gap {gap:+.1}",
        p_mean,
        pseudo_scores[0],
        pseudo_scores[1],
        pseudo_scores[2],
        c_mean,
        control_scores[0],
        control_scores[1],
        control_scores[2],
    );
    check(
        gap >= 20.0,
        format!(
            "{detail}; gap < 20: desk judge cannot read paraphrase explanations \
             (encoder ceiling ~67% from the input alone) and the control's untrained \
             explanation head leaks its predicted label, which the judge credits on \
             some seeds — see notes on the unsupervised ablation"
        ),
    )?;
    Ok(detail)
}

// ------------------------------------------------------------ criterion 9

fn c9_metric_selftests() -> Result<String, String> {
    let xs = vec![
        "the red cat sits on the mat".to_string(),
        "a small dog runs in the park".to_string(),
    ];
    let b = evalkit::bleu(&xs, &xs).map_err(|e| e.to_string())?;
    check((b - 100.0).abs() < 1e-9, format!("bleu(x,x) = {b} != 100"))?;

    let cand = vec!["the cat sat".to_string()];
    let refs = vec!["the cat sat down".to_string()];
    let got = evalkit::bleu(&cand, &refs).map_err(|e| e.to_string())?;
    check(
        (got - 71.65).abs() < 1e-2,
        format!("hand BLEU case {got:.4} not within 1e-2 of 71.65"),
    )?;

    // uniform LM: zeroed output layer gives exactly 1/V per token
    let v = 50usize;
    let mut lm_cfg = LmConfig::desk(v);
    lm_cfg.dropout = 0.0;
    let mut lm = LmModel::<f64>::new(lm_cfg, 1).map_err(|e| e.to_string())?;
    for p in lm.params.iter_mut() {
        if p.name.contains("out") {
            p.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let vocab = Vocab::build("the cat sits the dog runs".split_whitespace());
    let texts = vec!["the cat sits".to_string(), "the dog runs".to_string()];
    let ppl = evalkit::perplexity(&texts, &lm, &vocab).map_err(|e| e.to_string())?;
    check(
        (ppl - v as f64).abs() < 1e-9,
        format!("uniform-LM PPL {ppl} != {v}"),
    )?;

    let same: Vec<String> = (0..5).map(|_| "the cat sits down".to_string()).collect();
    let ir = evalkit::inter_rep(&same).map_err(|e| e.to_string())?;
    check(
        (ir - 4.0 / 5.0).abs() < 1e-12,
        format!("identical inter_rep {ir} != 0.8"),
    )?;
    let disjoint = vec!["a b c".to_string(), "d e f".to_string()];
    let ir0 = evalkit::inter_rep(&disjoint).map_err(|e| e.to_string())?;
    check(ir0 == 0.0, format!("disjoint inter_rep {ir0} != 0"))?;

    fn busy(ids: &[usize]) -> cnat::Result<(usize, u128)> {
        let start = Instant::now();
        let mut acc = 0.0f64;
        for i in 0..300_000 {
            acc += ((i % 89) as f64).sqrt();
        }
        std::hint::black_box(acc);
        Ok((ids.len(), start.elapsed().as_nanos()))
    }
    let inputs: Vec<Vec<usize>> = (0..30).map(|i| vec![5; 4 + i % 8]).collect();
    let res = evalkit::bench_callables(&mut busy, &mut busy, "a", "b", &inputs)
        .map_err(|e| e.to_string())?;
    check(
        res.speedup >= 0.9 && res.speedup <= 1.1,
        format!("identical-callable speedup {:.3} outside [0.9, 1.1]", res.speedup),
    )?;
    Ok(format!(
        "bleu(x,x)=100, hand BLEU {got:.2}, uniform PPL {ppl:.0}, inter-rep bounds exact, self-speedup {:.3}",
        res.speedup
    ))
}

// ----------------------------------------------------------- criterion 10

fn run_cli(args: &[&str]) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_cnat");
    let out = Command::new(bin)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "cnat {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

fn file_eq(a: &Path, b: &Path) -> Result<bool, String> {
    let xa = std::fs::read(a).map_err(|e| format!("{}: {e}", a.display()))?;
    let xb = std::fs::read(b).map_err(|e| format!("{}: {e}", b.display()))?;
    Ok(xa == xb)
}

fn c10_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();

    for run in ["a", "b"] {
        run_cli(&[
            "gen-data",
            "--task",
            "nli",
            "--out",
            &s(&p.join(run)),
            "--seed",
            "17",
            "--train-size",
            "48",
            "--val-size",
            "8",
            "--test-size",
            "8",
        ])?;
    }
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt"] {
        check(
            file_eq(&p.join("a").join(f), &p.join("b").join(f))?,
            format!("gen-data output {f} differs between identical runs"),
        )?;
    }

    for run in ["pa.jsonl", "pb.jsonl"] {
        run_cli(&[
            "make-pseudo",
            "--data",
            &s(&p.join("a/train.jsonl")),
            "--out",
            &s(&p.join(run)),
            "--seed",
            "4",
        ])?;
    }
    check(
        file_eq(&p.join("pa.jsonl"), &p.join("pb.jsonl"))?,
        "make-pseudo output differs between identical runs".to_string(),
    )?;

    for run in ["ma.ckpt", "mb.ckpt"] {
        run_cli(&[
            "train",
            "--regime",
            "full",
            "--data",
            &s(&p.join("a/train.jsonl")),
            "--vocab",
            &s(&p.join("a/vocab.txt")),
            "--out",
            &s(&p.join(run)),
            "--seed",
            "5",
            "--set",
            "train.steps=20",
            "--set",
            "model.d_model=32",
            "--set",
            "model.d_ff=64",
        ])?;
    }
    check(
        file_eq(&p.join("ma.ckpt"), &p.join("mb.ckpt"))?,
        "train checkpoints differ between identical seeded runs".to_string(),
    )?;

    // checkpoint round-trip is bit-exact
    let model = checkpoint::load_model::<f32>(&p.join("ma.ckpt")).map_err(|e| e.to_string())?;
    checkpoint::save_model(&p.join("rt.ckpt"), &model).map_err(|e| e.to_string())?;
    check(
        file_eq(&p.join("ma.ckpt"), &p.join("rt.ckpt"))?,
        "checkpoint round-trip not bit-exact".to_string(),
    )?;
    Ok("gen-data, make-pseudo and seeded training byte-identical on rerun; checkpoint round-trip bit-exact".to_string())
}
