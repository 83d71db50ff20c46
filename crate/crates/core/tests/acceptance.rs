//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speechground::autograd::{grad_check, grad_check_many, GradError, Graph, Tensor, Var};
use speechground::corpus::{CorpusStats, Register};
use speechground::embeddings::EmbeddingSet;
use speechground::encoder::{load_checkpoint, EncoderConfig, EncoderVars, SpeechEncoder};
use speechground::features::{mfcc, FeatureMatrix, MfccConfig};
use speechground::retrieval::{
    evaluate, evaluate_cross_register, median_rank, rank_candidates, recall_at, SeedModels, TestSet,
};
use speechground::synth::{bag_of_words_embedding, random_unit_vectors, sine_speech};
use speechground::training::{margin_loss, Dataset, TrainConfig, Trainer, ValidationMetrics};

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const RANKING_INSTANCES: usize = 200;
const RANKING_MAX_N: usize = 50;
const MEMO_RECALL: f64 = 0.95;
const MEMO_EPOCHS: usize = 200;
const MEMO_BUDGET: Duration = Duration::from_secs(300);
const NULL_CANDIDATES: usize = 1000;
const NULL_RANGE: (f64, f64) = (400.0, 600.0);
const TABLE_TOL: f64 = 0.005;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, GradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random_tensor(&mut rng, g.shape(y)));
    let prod = g.mul(y, w)?;
    g.sum_all(prod)
}

fn unary(shape: &[usize], op: impl Fn(&mut Graph<f64>, Var) -> Result<Var, GradError>) -> f64 {
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(31), shape);
    grad_check(|g, x| op(g, x).and_then(|y| weighted_sum(g, y, 7)), &x, GRAD_EPS).unwrap()
}

fn binary(sa: &[usize], sb: &[usize], op: impl Fn(&mut Graph<f64>, Var, Var) -> Result<Var, GradError>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let inputs = [random_tensor(&mut rng, sa), random_tensor(&mut rng, sb)];
    grad_check_many(
        |g, v| op(g, v[0], v[1]).and_then(|y| weighted_sum(g, y, 8)),
        &inputs,
        GRAD_EPS,
    )
    .unwrap()
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    // relu input kept away from the kink
    let relu_in = {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..12)
            .map(|_| rng.gen_range(0.1..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Tensor::new(vec![4, 3], data).unwrap()
    };
    let mut cases: Vec<(&str, f64)> = vec![
        ("matmul", binary(&[3, 4], &[4, 2], |g, a, b| g.matmul(a, b))),
        ("add", binary(&[3, 4], &[3, 4], |g, a, b| g.add(a, b))),
        ("add_broadcast", binary(&[3, 4], &[4], |g, a, b| g.add(a, b))),
        ("sub", binary(&[2, 3, 4], &[3, 4], |g, a, b| g.sub(a, b))),
        ("mul", binary(&[5, 3], &[3], |g, a, b| g.mul(a, b))),
        ("scale", unary(&[4, 3], |g, x| g.scale(x, 2.5))),
        ("add_scalar", unary(&[4, 3], |g, x| g.add_scalar(x, -0.4))),
        ("sigmoid", unary(&[4, 3], |g, x| g.sigmoid(x))),
        ("tanh", unary(&[4, 3], |g, x| g.tanh(x))),
        ("softmax", unary(&[4, 3], |g, x| g.softmax(x, 1))),
        ("concat", binary(&[2, 3], &[4, 3], |g, a, b| g.concat(&[a, b], 0))),
        ("slice", unary(&[5, 3], |g, x| g.slice(x, 0, 1, 3))),
        ("transpose", unary(&[5, 3], |g, x| g.transpose(x))),
        ("reshape", unary(&[6, 2], |g, x| g.reshape(x, vec![4, 3]))),
        ("sum", unary(&[4, 3], |g, x| g.sum(x, 0))),
        ("mean", unary(&[4, 3], |g, x| g.mean(x, 1))),
        ("sum_all", unary(&[4, 3], |g, x| g.sum_all(x))),
        ("l2_normalize", unary(&[4, 3], |g, x| g.l2_normalize(x, 1, 1e-12))),
        (
            "cosine_similarity",
            binary(&[3, 5], &[3, 5], |g, a, b| g.cosine_similarity(a, b)),
        ),
        ("unfold", unary(&[9, 2], |g, x| g.unfold(x, 3, 2))),
        ("map", unary(&[3, 3], |g, x| g.map(x, f64::exp, |_, y| y))),
        (
            "relu",
            grad_check(|g, x| g.relu(x).and_then(|y| weighted_sum(g, y, 9)), &relu_in, GRAD_EPS).unwrap(),
        ),
    ];

    // encode two utterances, score against two targets and apply the margin loss
    let cfg = EncoderConfig {
        input_dim: 39,
        conv_channels: 4,
        conv_kernel: 3,
        conv_stride: 2,
        gru_hidden: 3,
        gru_layers: 2,
        embed_dim: 5,
        attention_dim: 4,
        init_seed: 11,
    };
    let encoder = SpeechEncoder::<f64>::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params: Vec<Tensor<f64>> = encoder.params().iter().map(|(_, t)| t.clone()).collect();
    for p in &mut params {
        *p = random_tensor(&mut rng, p.shape());
    }
    let xs = [random_tensor(&mut rng, &[12, 39]), random_tensor(&mut rng, &[12, 39])];
    let targets = random_tensor(&mut rng, &[2, 5]);
    let full = grad_check_many(
        |g, vars| {
            let bound = EncoderVars::from_vars(cfg, vars.to_vec());
            let mut rows = Vec::new();
            for x in &xs {
                let xv = g.constant(x.clone());
                rows.push(bound.encode(g, xv).map_err(|e| match e {
                    speechground::encoder::EncoderError::Graph(ge) => ge,
                    other => panic!("{other}"),
                })?);
            }
            let speech = g.concat(&rows, 0)?;
            let t = g.constant(targets.clone());
            let t = g.l2_normalize(t, 1, 1e-12)?;
            let tt = g.transpose(t)?;
            let sims = g.matmul(speech, tt)?;
            Ok(margin_loss(g, sims, 0.9).expect("two-item batch"))
        },
        &params,
        GRAD_EPS,
    )
    .unwrap();
    cases.push(("encode+margin_loss", full));

    let elapsed = start.elapsed();
    let worst = cases
        .iter()
        .cloned()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    ensure(worst.1 <= GRAD_TOL, || {
        format!("{} has relative error {:.2e} > {GRAD_TOL:.0e}", worst.0, worst.1)
    })?;
    ensure(elapsed < GRAD_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} checks, worst {:.2e} ({}), {:.1}s",
        cases.len(),
        worst.1,
        worst.0,
        elapsed.as_secs_f64()
    ))
}

/// Rank by sorting every candidate: descending similarity, true item last
/// among equals.
fn oracle_rank(query: &[f32], candidates: &[Vec<f32>], truth: usize) -> usize {
    let norm = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let q: Vec<f64> = query.iter().map(|&x| x as f64 / norm(query)).collect();
    let mut scored: Vec<(f64, bool)> = candidates
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let n = norm(c);
            (c.iter().zip(&q).map(|(&a, b)| a as f64 / n * b).sum(), j == truth)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.iter().position(|s| s.1).unwrap() + 1
}

fn oracle_median(ranks: &[usize]) -> f64 {
    let mut s = ranks.to_vec();
    s.sort();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    }
}

fn ranking_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ties = 0;
    for instance in 0..RANKING_INSTANCES {
        let n = rng.gen_range(1..=RANKING_MAX_N);
        let dim = rng.gen_range(2..=8);
        let mut candidates: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        match instance % 4 {
            // all candidates identical up to power-of-two scaling
            0 => {
                for j in 1..n {
                    candidates[j] = candidates[0].iter().map(|x| x * (1 << (j % 4)) as f32).collect();
                }
                ties += 1;
            }
            // blocks of duplicated candidates
            1 => {
                for j in 0..n {
                    candidates[j] = candidates[j - j % 3].clone();
                }
                ties += 1;
            }
            _ => {}
        }
        let queries: Vec<Vec<f32>> = (0..n)
            .map(|i| {
                if instance % 8 == 5 {
                    candidates[i].clone()
                } else {
                    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
                }
            })
            .collect();
        let mut ranks = Vec::new();
        for (i, q) in queries.iter().enumerate() {
            let got = rank_candidates(q, &candidates, i).map_err(|e| e.to_string())?;
            let want = oracle_rank(q, &candidates, i);
            ensure(got == want, || {
                format!("instance {instance}, query {i}: rank {got}, oracle {want}")
            })?;
            if instance % 4 == 0 {
                ensure(got == n, || {
                    format!("instance {instance}: all-ties rank {got}, expected {n}")
                })?;
            }
            ranks.push(got);
        }
        for k in [1, 5, 10, n] {
            let want = ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
            let got = recall_at(&ranks, k);
            ensure(got == want, || {
                format!("instance {instance}: recall@{k} {got}, oracle {want}")
            })?;
        }
        ensure(recall_at(&ranks, n) == 1.0, || {
            format!("instance {instance}: recall@N below 1")
        })?;
        let (got, want) = (median_rank(&ranks), oracle_median(&ranks));
        ensure(got == want, || {
            format!("instance {instance}: median {got}, oracle {want}")
        })?;
    }
    Ok(format!(
        "{RANKING_INSTANCES} instances ({ties} with constructed ties) agree exactly"
    ))
}

/// Random 2 to 4 word utterances over `vocab`, as sine-speech features.
fn sine_corpus(
    rng: &mut ChaCha8Rng,
    vocab: &[String],
    n: usize,
    prefix: &str,
) -> (Vec<FeatureMatrix>, Vec<Vec<String>>) {
    let cfg = MfccConfig::default();
    let mut feats = Vec::with_capacity(n);
    let mut words = Vec::with_capacity(n);
    for i in 0..n {
        let len = rng.gen_range(2..=4);
        let tokens: Vec<String> = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
        feats.push(
            mfcc(&sine_speech(&tokens), &cfg)
                .unwrap()
                .with_id(format!("{prefix}{i}")),
        );
        words.push(tokens);
    }
    (feats, words)
}

fn vocabulary(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn random_targets(feats: &[FeatureMatrix], dim: usize, seed: u64) -> EmbeddingSet {
    let mut set = EmbeddingSet::new(dim).unwrap();
    for (f, v) in feats.iter().zip(random_unit_vectors(feats.len(), dim, seed)) {
        set.push(f.utterance_id(), &v).unwrap();
    }
    set
}

fn scaled_encoder(seed: u64) -> SpeechEncoder<f32> {
    SpeechEncoder::new(EncoderConfig {
        gru_hidden: 32,
        embed_dim: 32,
        init_seed: seed,
        ..EncoderConfig::default()
    })
    .unwrap()
}

fn toy_memorization() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (feats, _) = sine_corpus(&mut rng, &vocabulary("w", 30), 50, "u");
    let targets = random_targets(&feats, 32, 101);
    let data = Dataset::new(&feats, &targets).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: MEMO_EPOCHS,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(scaled_encoder(1), cfg).map_err(|e| e.to_string())?;
    let mut reached = None;
    let mut validator = |enc: &SpeechEncoder<f32>, epoch: usize| {
        let r = evaluate(enc, &feats, &targets, "train")?;
        if r.recall1 >= MEMO_RECALL && reached.is_none() {
            reached = Some(epoch);
        }
        Ok(ValidationMetrics::from(&r))
    };
    let report = trainer.fit(&data, &mut validator).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let losses: Vec<f64> = report.log.iter().take(5).map(|r| r.mean_loss).collect();
    let loss_text = losses.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>().join(" ");
    let mut problems = Vec::new();
    if !losses.windows(2).all(|w| w[1] < w[0]) {
        problems.push(format!("loss not strictly decreasing over epochs 1-5: {loss_text}"));
    }
    match reached {
        None => problems.push(format!(
            "best train recall@1 {:.3} < {MEMO_RECALL}",
            report.best_val_recall1
        )),
        Some(_) if elapsed > MEMO_BUDGET => problems.push(format!("took {elapsed:?}")),
        Some(_) => {}
    }
    let summary = format!(
        "recall@1 >= {MEMO_RECALL} at epoch {}, losses {loss_text}, {:.0}s",
        reached.map_or("-".into(), |e| e.to_string()),
        elapsed.as_secs_f64()
    );
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", problems.join("; ")))
    }
}

fn null_model() -> Check {
    let vocab = vocabulary("n", 200);
    let mut medians = Vec::new();
    for seed in 1..=5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (feats, _) = sine_corpus(&mut rng, &vocab, NULL_CANDIDATES, "q");
        let targets = random_targets(&feats, 32, 900 + seed);
        let report = evaluate(&scaled_encoder(seed), &feats, &targets, "null").map_err(|e| e.to_string())?;
        medians.push(report.median_rank);
    }
    let text = medians.iter().map(|m| format!("{m}")).collect::<Vec<_>>().join(", ");
    ensure(
        medians.iter().all(|m| (NULL_RANGE.0..=NULL_RANGE.1).contains(m)),
        || format!("median ranks {text} outside [{}, {}]", NULL_RANGE.0, NULL_RANGE.1),
    )?;
    Ok(format!("median ranks {text}"))
}

fn table_arithmetic() -> Check {
    let n = 21_465;
    let columns = [
        (
            "CDS",
            CorpusStats::from_counts(3_170, 97_118, n, 3.37 * n as f64),
            [0.033, 4.52, 1.34],
        ),
        (
            "ADS",
            CorpusStats::from_counts(5_665, 203_084, n, 3.46 * n as f64),
            [0.028, 9.46, 2.74],
        ),
    ];
    let mut lines = Vec::new();
    let mut failed = false;
    for (name, s, [ttr, wpu, wps]) in columns {
        for (cell, got, want) in [
            ("type/token", s.type_token_ratio, ttr),
            ("words/utterance", s.words_per_utterance, wpu),
            ("words/second", s.words_per_second, wps),
        ] {
            let ok = (got - want).abs() <= TABLE_TOL;
            failed |= !ok;
            lines.push(format!(
                "{name} {cell} {got:.4} vs {want}{}",
                if ok { "" } else { " (outside tolerance)" }
            ));
        }
    }
    if failed {
        Err(lines.join(", "))
    } else {
        Ok(lines.join(", "))
    }
}

fn bow_targets(sets: &[(&[FeatureMatrix], &[Vec<String>])], dim: usize) -> EmbeddingSet {
    let mut out = EmbeddingSet::new(dim).unwrap();
    for (feats, words) in sets {
        for (f, w) in feats.iter().zip(words.iter()) {
            out.push(f.utterance_id(), &bag_of_words_embedding(w, dim)).unwrap();
        }
    }
    out
}

fn cross_register() -> Check {
    const DIM: usize = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cds_vocab = vocabulary("cds_word_", 12);
    let ads_vocab = vocabulary("ads_word_", 12);
    let (cds_train, cds_train_w) = sine_corpus(&mut rng, &cds_vocab, 120, "cds_train_");
    let (cds_test, cds_test_w) = sine_corpus(&mut rng, &cds_vocab, 30, "cds_test_");
    let (ads_train, ads_train_w) = sine_corpus(&mut rng, &ads_vocab, 120, "ads_train_");
    let (ads_test, ads_test_w) = sine_corpus(&mut rng, &ads_vocab, 30, "ads_test_");
    let targets = bow_targets(
        &[
            (&cds_train, &cds_train_w),
            (&cds_test, &cds_test_w),
            (&ads_train, &ads_train_w),
            (&ads_test, &ads_test_w),
        ],
        DIM,
    );
    let cfg = TrainConfig {
        epochs: 40,
        lr_max: 1e-3,
        seed: 5,
        ..TrainConfig::default()
    };
    let train = |feats: &[FeatureMatrix]| -> Result<SpeechEncoder<f32>, String> {
        let data = Dataset::new(feats, &targets).map_err(|e| e.to_string())?;
        let encoder = SpeechEncoder::new(EncoderConfig {
            gru_hidden: 32,
            gru_layers: 1,
            embed_dim: DIM,
            init_seed: 5,
            ..EncoderConfig::default()
        })
        .unwrap();
        let mut trainer = Trainer::new(encoder, cfg.clone()).map_err(|e| e.to_string())?;
        for epoch in 1..=cfg.epochs {
            trainer.train_epoch(&data, epoch).map_err(|e| e.to_string())?;
        }
        Ok(trainer.into_encoder())
    };
    let cds_model = train(&cds_train)?;
    let ads_model = train(&ads_train)?;
    let models = [SeedModels {
        seed: 5,
        cds: &cds_model,
        ads: &ads_model,
    }];
    let matrix = evaluate_cross_register(&models, &cds_test, &ads_test, &targets).map_err(|e| e.to_string())?;
    let r1 = |m: Register, t: TestSet| matrix.get(m, t).recall1;
    let cells = [
        (Register::Cds, TestSet::Cds, TestSet::Ads),
        (Register::Ads, TestSet::Ads, TestSet::Cds),
    ];
    let combined = matrix.get(Register::Cds, TestSet::Combined).n_candidates;
    ensure(combined == cds_test.len() + ads_test.len(), || {
        format!("combined pool has {combined} candidates")
    })?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (model, matched, crossed) in cells {
        let (m, c) = (r1(model, matched), r1(model, crossed));
        ok &= m > c;
        parts.push(format!("{model} model matched {m:.3} vs crossed {c:.3}"));
    }
    if ok {
        Ok(parts.join(", "))
    } else {
        Err(parts.join(", "))
    }
}

fn determinism_and_resume() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (feats, _) = sine_corpus(&mut rng, &vocabulary("d", 10), 20, "d");
    let targets = random_targets(&feats, 8, 10);
    let data = Dataset::new(&feats, &targets).map_err(|e| e.to_string())?;
    let encoder_cfg = EncoderConfig {
        conv_channels: 8,
        gru_hidden: 8,
        gru_layers: 2,
        embed_dim: 8,
        attention_dim: 8,
        init_seed: 3,
        ..EncoderConfig::default()
    };
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str, epochs: usize, from: Option<&str>| -> Result<std::path::PathBuf, String> {
        let dir = root.path().join(name);
        let cfg = TrainConfig {
            epochs,
            batch_size: 8,
            seed: 4,
            checkpoint_dir: Some(dir.clone()),
            ..TrainConfig::default()
        };
        let mut trainer = match from {
            Some(path) => {
                let ck = load_checkpoint(root.path().join(path)).map_err(|e| e.to_string())?;
                Trainer::from_checkpoint(ck, cfg)
            }
            None => Trainer::new(SpeechEncoder::new(encoder_cfg).unwrap(), cfg),
        }
        .map_err(|e| e.to_string())?;
        let mut validator = speechground::training::RetrievalValidator {
            items: &feats,
            targets: &targets,
        };
        trainer.fit(&data, &mut validator).map_err(|e| e.to_string())?;
        Ok(dir)
    };
    let read = |p: std::path::PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let a = run("a", 6, None)?;
    let b = run("b", 6, None)?;
    ensure(
        read(a.join("trajectory.csv"))? == read(b.join("trajectory.csv"))?,
        || "trajectory CSVs of identical runs differ".into(),
    )?;
    ensure(read(a.join("epoch_6.sgck"))? == read(b.join("epoch_6.sgck"))?, || {
        "final checkpoints of identical runs differ".into()
    })?;
    run("c", 3, None)?;
    let c = run("c", 6, Some("c/epoch_3.sgck"))?;
    ensure(
        read(a.join("trajectory.csv"))? == read(c.join("trajectory.csv"))?,
        || "resumed trajectory differs from the uninterrupted run".into(),
    )?;
    ensure(read(a.join("epoch_6.sgck"))? == read(c.join("epoch_6.sgck"))?, || {
        "resumed parameters differ from the uninterrupted run".into()
    })?;
    Ok("identical trajectories and checkpoints across runs and across a resume at epoch 3".into())
}

fn best_epoch_selection() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (feats, _) = sine_corpus(&mut rng, &vocabulary("b", 6), 6, "b");
    let targets = random_targets(&feats, 4, 22);
    let data = Dataset::new(&feats, &targets).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sequence = [0.1, 0.3, 0.3, 0.2];
    let cfg = TrainConfig {
        epochs: sequence.len(),
        batch_size: 3,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..TrainConfig::default()
    };
    let encoder = SpeechEncoder::new(EncoderConfig {
        conv_channels: 4,
        gru_hidden: 4,
        gru_layers: 1,
        embed_dim: 4,
        attention_dim: 4,
        ..EncoderConfig::default()
    })
    .unwrap();
    let mut trainer = Trainer::new(encoder, cfg).map_err(|e| e.to_string())?;
    let mut injected = |_: &SpeechEncoder<f32>, epoch: usize| {
        let r = sequence[epoch - 1];
        Ok(ValidationMetrics {
            recall1: r,
            recall5: r,
            recall10: r,
            median_rank: 1.0,
        })
    };
    let report = trainer.fit(&data, &mut injected).map_err(|e| e.to_string())?;
    ensure(report.best_epoch == 2, || {
        format!("selected epoch {}", report.best_epoch)
    })?;
    let best = fs::read(dir.path().join("best.sgck")).map_err(|e| e.to_string())?;
    let second = fs::read(dir.path().join("epoch_2.sgck")).map_err(|e| e.to_string())?;
    ensure(best == second, || "best.sgck is not the epoch 2 checkpoint".into())?;
    Ok(format!("recall@1 sequence {sequence:?} selects epoch 2"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("ranking oracle equivalence", ranking_oracle),
        ("toy memorization", toy_memorization),
        ("null-model sanity", null_model),
        ("descriptive statistics arithmetic", table_arithmetic),
        ("cross-register harness", cross_register),
        ("determinism and persistence", determinism_and_resume),
        ("best-epoch selection", best_epoch_selection),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
