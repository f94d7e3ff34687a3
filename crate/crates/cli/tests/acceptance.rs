//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p exist-cli --test acceptance`. The real-data
//! ingestion check runs only when `EXIST_TRAIN_TSV` and `EXIST_TEST_TSV`
//! point at the EXIST 2021 files.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use exist_core::corpus::{
    self, derive_task1, derive_task1_probs, LabeledDataset, Language, Post, Provenance, Schema, Source, Task, Task1Label,
    Task2Label,
};
use exist_core::evalfuse::{self, argmax, late_fuse, EvalReport, PredictionRecord, Predictions, RunPrediction};
use exist_core::model::{EncoderConfig, EncoderModel, HeadKind, Targets};
use exist_core::preprocess::{self, PipelineId};
use exist_core::tokenizer::{self, is_special, Encoding, TokenizerModel, CLS_ID, MASK_ID, PAD_ID, SEP_ID, UNK_ID};
use exist_core::train::{self, mlm_corrupt, MaskRule, Preset, TrainMode, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{brute_metrics, fixtures_dir, reference_preprocess};

const METRIC_TOL: f64 = 1e-12;
const METRIC_CASES: usize = 1000;
const METRIC_LIMIT: Duration = Duration::from_secs(10);
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_LIMIT: Duration = Duration::from_secs(120);
const MLM_MIN_SELECTIONS: usize = 100_000;
const MLM_FREQ_TOL: f64 = 0.01;
const RANDOM_UNICODE_STRINGS: usize = 10_000;
const LEARN_MAX_EPOCHS: usize = 30;
const LEARN_MARGIN: f64 = 0.15;
const LEARN_LIMIT: Duration = Duration::from_secs(300);
const EXIST_TRAIN_ROWS: usize = 6977;
const EXIST_TEST_ROWS: usize = 4368;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

fn post(id: String, task: Task, label: usize) -> Post {
    let (t1, t2) = match task {
        Task::Task1 => (Some(Task1Label::ALL[label]), None),
        Task::Task2 => {
            let l = Task2Label::ALL[label];
            (Some(derive_task1(l)), Some(l))
        }
    };
    Post::new(id, Source::Twitter, Language::En, "text", t1, t2, Provenance::Original).unwrap()
}

fn truth_set(task: Task, labels: &[usize]) -> LabeledDataset {
    let posts = labels.iter().enumerate().map(|(i, &l)| post(format!("i{i}"), task, l)).collect();
    LabeledDataset::new("truth", posts).unwrap()
}

fn hard(labels: &[usize]) -> Vec<(String, usize)> {
    labels.iter().enumerate().map(|(i, &l)| (format!("i{i}"), l)).collect()
}

fn report_matches(r: &EvalReport, truth: &[usize], pred: &[usize], k: usize) -> Result<(), String> {
    let b = brute_metrics(truth, pred, k);
    let close = |a: f64, b: f64| (a - b).abs() <= METRIC_TOL;
    check(close(r.accuracy, b.accuracy), || format!("accuracy {} vs oracle {}", r.accuracy, b.accuracy))?;
    check(close(r.macro_f1, b.macro_f1), || format!("macro F1 {} vs oracle {}", r.macro_f1, b.macro_f1))?;
    for (c, (m, o)) in r.per_class.iter().zip(&b.per_class).enumerate() {
        check(close(m.precision, o.0) && close(m.recall, o.1) && close(m.f1, o.2), || {
            format!("class {c}: ({}, {}, {}) vs oracle {o:?}", m.precision, m.recall, m.f1)
        })?;
    }
    check(r.per_class.len() == k, || format!("{} classes reported, expected {k}", r.per_class.len()))
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..METRIC_CASES {
        let task = if rng.gen_bool(0.5) { Task::Task1 } else { Task::Task2 };
        let k = task.n_classes();
        let n = rng.gen_range(1..=60);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let ds = truth_set(task, &truth);
        let r = evalfuse::evaluate(Predictions::Hard(&hard(&pred)), &ds, task).map_err(|e| e.to_string())?;
        report_matches(&r, &truth, &pred, k).map_err(|e| format!("case {case}: {e}"))?;
    }

    // truth [A,A,B,B], pred [A,B,B,B]
    let ds = truth_set(Task::Task1, &[0, 0, 1, 1]);
    let r = evalfuse::evaluate(Predictions::Hard(&hard(&[0, 1, 1, 1])), &ds, Task::Task1).map_err(|e| e.to_string())?;
    let exact = [r.accuracy, r.per_class[0].f1, r.per_class[1].f1, r.macro_f1];
    let want = [0.75, 2.0 / 3.0, 0.8, (2.0 / 3.0 + 0.8) / 2.0];
    check(exact.iter().zip(&want).all(|(a, b)| (a - b).abs() <= METRIC_TOL), || {
        format!("[A,A,B,B]/[A,B,B,B] gave {exact:?}")
    })?;
    check((r.macro_f1 - 0.7333).abs() < 5e-5, || format!("macro F1 {} is not 0.7333", r.macro_f1))?;

    let r = evalfuse::evaluate(Predictions::Hard(&hard(&[0, 0, 0, 0])), &ds, Task::Task1).map_err(|e| e.to_string())?;
    check((r.accuracy - 0.5).abs() <= METRIC_TOL && (r.macro_f1 - 1.0 / 3.0).abs() <= METRIC_TOL, || {
        format!("single-class predictions gave {} / {}", r.accuracy, r.macro_f1)
    })?;
    let r = evalfuse::evaluate(Predictions::Hard(&hard(&[0, 0, 1, 1])), &ds, Task::Task1).map_err(|e| e.to_string())?;
    check(r.accuracy == 1.0 && r.macro_f1 == 1.0, || "perfect predictions are not 1.0".into())?;

    // the bundled pred/truth files carry the same case
    let truth = corpus::load_tsv(fixtures_dir().join("eval_truth.tsv"), Schema::Generic).map_err(|e| e.to_string())?;
    let pred = evalfuse::read_predictions(fixtures_dir().join("eval_pred.jsonl")).map_err(|e| e.to_string())?;
    let r = evalfuse::evaluate(Predictions::Probs(&pred), &truth, Task::Task1).map_err(|e| e.to_string())?;
    check((r.macro_f1 - want[3]).abs() <= METRIC_TOL && r.accuracy == 0.75, || {
        format!("fixture files gave {} / {}", r.accuracy, r.macro_f1)
    })?;
    within(start, METRIC_LIMIT)?;
    Ok(format!("{METRIC_CASES} random cases within {METRIC_TOL:e}, hand fixtures exact, {:.1?}", start.elapsed()))
}

fn toy_model(head: HeadKind, seed: u64) -> EncoderModel {
    let cfg = EncoderConfig {
        vocab_size: 40,
        d_model: 12,
        n_layers: 2,
        n_heads: 3,
        d_ffn: 20,
        max_len: 6,
        dropout_prob: 0.1,
        seed,
    };
    let mut m = EncoderModel::init(cfg, head).unwrap();
    // move every parameter off its initial value so no path is trivially zero
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for (info, t) in m.params_mut().tensors_mut() {
        let base = if info.name.ends_with("gain") { 1.0 } else { 0.0 };
        for x in t.iter_mut() {
            *x = base + 0.3 * (rng.gen::<f64>() * 2.0 - 1.0);
        }
    }
    m
}

fn padded(ids: &[u32], len: usize) -> Encoding {
    let mut v = ids.to_vec();
    v.resize(len, PAD_ID);
    Encoding::from_ids(v)
}

/// Largest relative error per tensor, from central differences on every entry.
fn gradient_errors(m: &EncoderModel, batch: &[Encoding], targets: Targets<'_>) -> Vec<(String, f64)> {
    let (_, grads) = m.loss_and_grads(batch, targets, None).unwrap();
    let mut probe = m.clone();
    let mut out = Vec::new();
    for (ti, (info, g)) in grads.tensors().into_iter().enumerate() {
        let mut worst = 0.0f64;
        for (k, &analytic) in g.iter().enumerate() {
            let orig = probe.params().tensors()[ti].1[k];
            probe.params_mut().tensors_mut()[ti].1[k] = orig + GRAD_STEP;
            let up = probe.loss_and_grads(batch, targets, None).unwrap().0;
            probe.params_mut().tensors_mut()[ti].1[k] = orig - GRAD_STEP;
            let down = probe.loss_and_grads(batch, targets, None).unwrap().0;
            probe.params_mut().tensors_mut()[ti].1[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        out.push((info.name.clone(), worst));
    }
    out
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cls = toy_model(HeadKind::Classifier { n_classes: 6 }, 3);
    let batch = vec![padded(&[CLS_ID, 7, 19, SEP_ID], 6), padded(&[CLS_ID, 33, 8, 21, 9, SEP_ID], 6)];
    let mut errors = gradient_errors(&cls, &batch, Targets::Classes(&[4, 1]));
    let mlm = toy_model(HeadKind::Mlm, 4);
    let batch = vec![padded(&[CLS_ID, MASK_ID, 19, SEP_ID], 6), padded(&[CLS_ID, 33, MASK_ID, 11, 9, SEP_ID], 6)];
    let targets = vec![
        vec![None, Some(12), None, None, None, None],
        vec![None, Some(33), Some(24), None, Some(9), None],
    ];
    errors.extend(gradient_errors(&mlm, &batch, Targets::Mlm(&targets)));

    let mut names: Vec<String> = cls.params().tensors().iter().map(|t| t.0.name.clone()).collect();
    names.extend(mlm.params().tensors().iter().map(|t| t.0.name.clone()));
    names.sort();
    names.dedup();
    let mut checked: Vec<String> = errors.iter().map(|e| e.0.clone()).collect();
    checked.sort();
    checked.dedup();
    check(names == checked, || format!("tensors not checked: {:?}", names.iter().filter(|n| !checked.contains(n)).collect::<Vec<_>>()))?;
    let (name, worst) = errors.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    check(worst < GRAD_REL_TOL, || format!("{name}: relative error {worst:e} exceeds {GRAD_REL_TOL:e}"))?;
    within(start, GRAD_LIMIT)?;
    Ok(format!("{} tensors, worst relative error {worst:.1e} ({name}), {:.1?}", names.len(), start.elapsed()))
}

fn mlm_statistics() -> Outcome {
    let vocab: Vec<String> = tokenizer::SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain((0..995).map(|i| format!("w{i}")))
        .collect();
    let tm = TokenizerModel::from_tokens(vocab, true).map_err(|e| e.to_string())?;
    let v = tm.vocab_size() as f64;
    let rule = MaskRule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut selected, mut masked, mut kept, mut other, mut positions) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut special_hits = 0usize;
    while selected < 2 * MLM_MIN_SELECTIONS {
        // specials interleaved with ordinary ids, padding at the end
        let mut ids = vec![CLS_ID];
        for j in 0..200 {
            ids.push(if j % 10 == 3 { UNK_ID } else { rng.gen_range(5..tm.vocab_size() as u32) });
        }
        ids.push(SEP_ID);
        ids.extend([PAD_ID; 20]);
        let enc = Encoding::from_ids(ids);
        let out = mlm_corrupt(&enc, &tm, &rule, &mut rng).map_err(|e| e.to_string())?;
        for (pos, (&orig, &now)) in enc.ids.iter().zip(&out.input.ids).enumerate() {
            if is_special(orig) {
                if out.targets[pos].is_some() || now != orig {
                    special_hits += 1;
                }
                continue;
            }
            positions += 1;
            if let Some(t) = out.targets[pos] {
                check(t == orig, || format!("target {t} is not the original id {orig}"))?;
                selected += 1;
                if now == MASK_ID {
                    masked += 1;
                } else if now == orig {
                    kept += 1;
                } else {
                    check(!is_special(now), || format!("random replacement drew special id {now}"))?;
                    other += 1;
                }
            } else {
                check(now == orig, || "unselected position changed".into())?;
            }
        }
    }
    check(special_hits == 0, || format!("{special_hits} special positions corrupted"))?;
    let n = selected as f64;
    // a random replacement equal to the original looks like a kept token
    let p_same = 1.0 / (v - 5.0);
    let expected = [0.8, 0.1 + 0.1 * p_same, 0.1 * (1.0 - p_same)];
    let observed = [masked as f64 / n, kept as f64 / n, other as f64 / n];
    for (name, (o, e)) in ["mask", "keep", "random"].iter().zip(observed.iter().zip(&expected)) {
        check((o - e).abs() <= MLM_FREQ_TOL, || format!("{name} frequency {o:.4}, expected {e:.4}"))?;
    }
    let rate = n / positions as f64;
    check((rate - rule.mask_prob).abs() <= MLM_FREQ_TOL, || format!("selection rate {rate:.4}"))?;
    Ok(format!(
        "{selected} selections: mask {:.4} keep {:.4} random {:.4}, 0 special corruptions",
        observed[0], observed[1], observed[2]
    ))
}

/// Blocks whose letter and digit properties have not changed in recent
/// Unicode versions.
const STABLE_BLOCKS: &[(u32, u32)] = &[
    (0x00a0, 0x024f),
    (0x0370, 0x03ff),
    (0x0400, 0x04ff),
    (0x0600, 0x06ff),
    (0x0900, 0x097f),
    (0x2000, 0x206f),
    (0x2150, 0x218b),
    (0x3000, 0x303f),
    (0x4e00, 0x9fa5),
    (0xff00, 0xffef),
    (0x1f300, 0x1f64f),
];

/// Random text from `PIECES`, ASCII, and either any scalar value or only
/// `STABLE_BLOCKS`.
fn random_unicode(rng: &mut impl Rng, any_scalar: bool) -> String {
    const PIECES: &[&str] = &[
        "#", "@", "http://", "HTTPS://", "www.", "WwW.", "_", ".", "/", ",", "!", "'", "-", " ", "  ", "\t", "\n", "\u{00a0}",
        "\u{3000}", "\u{0301}", "\u{0303}", "é", "ñ", "Ñ", "ü", "ß", "ﬁ", "²", "٣", "Ⅻ", "😀", "🇪🇸", "中", "ا", "é",
    ];
    let n = rng.gen_range(0..24);
    let mut s = String::new();
    for _ in 0..n {
        match rng.gen_range(0..4) {
            0 => s.push_str(PIECES[rng.gen_range(0..PIECES.len())]),
            1 => s.push(rng.gen_range(b'a'..=b'z') as char),
            2 => s.push(rng.gen_range(b'0'..=b'9') as char),
            _ => {
                let u = if any_scalar {
                    rng.gen_range(0..0x11_0000)
                } else {
                    let (lo, hi) = STABLE_BLOCKS[rng.gen_range(0..STABLE_BLOCKS.len())];
                    rng.gen_range(lo..=hi)
                };
                if let Some(c) = char::from_u32(u) {
                    s.push(c);
                }
            }
        }
    }
    s
}

fn preprocessing_oracle() -> Outcome {
    let golden = std::fs::read_to_string(fixtures_dir().join("golden_preprocess.txt")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = golden.lines().collect();
    check(lines.len() == 500, || format!("golden corpus has {} lines", lines.len()))?;
    for (n, p) in PipelineId::ALL.iter().enumerate() {
        for (i, line) in lines.iter().enumerate() {
            let got = preprocess::apply(*p, line);
            let want = reference_preprocess(n as u8 + 1, line);
            check(got == want, || format!("{p} line {}: {got:?} vs reference {want:?}", i + 1))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..RANDOM_UNICODE_STRINGS {
        let s = random_unicode(&mut rng, true);
        for p in PipelineId::ALL {
            let once = preprocess::apply(p, &s);
            let twice = preprocess::apply(p, &once);
            check(once == twice, || format!("{p} not idempotent on {s:?}: {once:?} then {twice:?}"))?;
        }
    }
    // the reference scanner uses std's character tables, which can be a
    // Unicode version ahead of the regex crate's, so compare on stable blocks
    for _ in 0..RANDOM_UNICODE_STRINGS {
        let s = random_unicode(&mut rng, false);
        for (n, p) in PipelineId::ALL.iter().enumerate() {
            let got = preprocess::apply(*p, &s);
            let want = reference_preprocess(n as u8 + 1, &s);
            check(got == want, || format!("{p} on {s:?}: {got:?} vs reference {want:?}"))?;
        }
    }
    Ok(format!(
        "4 pipelines x 500 golden lines byte-identical; {RANDOM_UNICODE_STRINGS} random strings idempotent, \
         {RANDOM_UNICODE_STRINGS} more matching the reference"
    ))
}

fn small_encoder(vocab: usize, seed: u64) -> EncoderConfig {
    EncoderConfig {
        vocab_size: vocab,
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        d_ffn: 64,
        max_len: 32,
        dropout_prob: 0.1,
        seed,
    }
}

fn learn_config(mode: TrainMode, epochs: usize, lr: f64) -> TrainingConfig {
    TrainingConfig {
        epochs,
        batch_size: 8,
        learning_rate: lr,
        max_len: 32,
        seed: 11,
        mode,
        ..TrainingConfig::default()
    }
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let dir = fixtures_dir();
    let corpus = corpus::load_tsv(dir.join("synthetic_corpus.tsv"), Schema::Generic).map_err(|e| e.to_string())?;
    let separable = corpus::load_tsv(dir.join("separable.tsv"), Schema::Generic).map_err(|e| e.to_string())?;
    let texts = corpus.iter().chain(separable.iter()).map(|p| p.text.as_str());
    let tm = tokenizer::train_vocab_from_texts(texts, 2000, 1, true).map_err(|e| e.to_string())?;

    let (train_set, val_set) = corpus::split(&corpus, 0.2, 11, true).map_err(|e| e.to_string())?;
    let mut mlm = EncoderModel::init(small_encoder(tm.vocab_size(), 11), HeadKind::Mlm).map_err(|e| e.to_string())?;
    let history = train::pretrain_mlm(&mut mlm, std::slice::from_ref(&corpus), &tm, &learn_config(TrainMode::MlmPretrain, 10, 1e-3))
        .map_err(|e| e.to_string())?;
    let (first, tenth) = (history[0].loss, history[9].loss);
    check(tenth < first, || format!("MLM loss rose: epoch 1 {first:.4}, epoch 10 {tenth:.4}"))?;

    // separable fixture: training accuracy, measured on the training set itself
    let mut sep = EncoderModel::init(small_encoder(tm.vocab_size(), 12), HeadKind::Classifier { n_classes: 2 })
        .map_err(|e| e.to_string())?;
    let hist = train::finetune(
        &mut sep,
        &separable,
        Some(&separable),
        Task::Task1,
        &tm,
        &learn_config(TrainMode::FinetuneFull, LEARN_MAX_EPOCHS, 1e-3),
    )
    .map_err(|e| e.to_string())?;
    let reached = hist.iter().position(|r| r.val_accuracy == Some(1.0));
    let final_acc = hist.last().and_then(|r| r.val_accuracy).unwrap_or(0.0);
    check(final_acc == 1.0, || format!("training accuracy {final_acc:.4} after {LEARN_MAX_EPOCHS} epochs"))?;

    // six-way categorization on the held-out split, from the MLM checkpoint
    let mut clf = mlm.with_head(HeadKind::Classifier { n_classes: 6 }, 13).map_err(|e| e.to_string())?;
    train::finetune(&mut clf, &train_set, None, Task::Task2, &tm, &learn_config(TrainMode::FinetuneFull, 20, 1e-3))
        .map_err(|e| e.to_string())?;
    let pred = train::predict_dataset(&clf, &val_set, &tm, 32, "val").map_err(|e| e.to_string())?;
    let report = evalfuse::evaluate(Predictions::Probs(&pred), &val_set, Task::Task2).map_err(|e| e.to_string())?;
    let train_labels: Vec<usize> = train_set.iter().map(|p| p.label_index(Task::Task2).unwrap()).collect();
    let mut counts = [0usize; 6];
    train_labels.iter().for_each(|&l| counts[l] += 1);
    let majority = (0..6).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
    let val_truth: Vec<usize> = val_set.iter().map(|p| p.label_index(Task::Task2).unwrap()).collect();
    let baseline = brute_metrics(&val_truth, &vec![majority; val_truth.len()], 6).macro_f1;
    check(report.macro_f1 >= baseline + LEARN_MARGIN, || {
        format!("validation macro F1 {:.4} vs majority baseline {baseline:.4}", report.macro_f1)
    })?;
    within(start, LEARN_LIMIT)?;
    Ok(format!(
        "MLM loss {first:.3} -> {tenth:.3}; separable 100% at epoch {}; val macro F1 {:.3} vs baseline {baseline:.3}; {:.1?}",
        reached.map_or(0, |e| e + 1),
        report.macro_f1,
        start.elapsed()
    ))
}

fn run_of(name: &str, probs: &[Vec<f64>]) -> RunPrediction {
    let task = Task::from_n_classes(probs[0].len()).unwrap();
    let records = probs
        .iter()
        .enumerate()
        .map(|(i, p)| PredictionRecord {
            id: format!("i{i}"),
            probs: p.clone(),
        })
        .collect();
    RunPrediction::new(name, task, records).unwrap()
}

fn random_probs(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn fusion_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases = 0;
    for trial in 0..200 {
        let k = if trial % 2 == 0 { 2 } else { 6 };
        let n = rng.gen_range(1..30);
        let n_runs = rng.gen_range(2..6);
        let runs: Vec<RunPrediction> = (0..n_runs)
            .map(|r| {
                let probs: Vec<Vec<f64>> = (0..n).map(|_| random_probs(&mut rng, k)).collect();
                run_of(&format!("r{r}"), &probs)
            })
            .collect();
        let fused = late_fuse(&runs).map_err(|e| e.to_string())?;
        let mut shuffled = runs.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let again = late_fuse(&shuffled).map_err(|e| e.to_string())?;
        check(fused == again, || format!("trial {trial}: fusion depends on run order"))?;

        let a = &runs[0];
        let doubled = late_fuse(&[a.clone(), a.clone().with_run_name("copy")]).map_err(|e| e.to_string())?;
        check(doubled.hard_labels() == a.hard_labels(), || format!("trial {trial}: doubling changed the argmax"))?;
        let b = &runs[1];
        let pair = late_fuse(&[a.clone(), b.clone()]).map_err(|e| e.to_string())?;
        let pair2 = late_fuse(&[a.clone(), b.clone(), a.clone().with_run_name("a2"), b.clone().with_run_name("b2")])
            .map_err(|e| e.to_string())?;
        check(pair.hard_labels() == pair2.hard_labels(), || format!("trial {trial}: doubling both runs changed the argmax"))?;
        cases += 1;
    }

    let fused = late_fuse(&[run_of("a", &[vec![0.6, 0.4]]), run_of("b", &[vec![0.3, 0.7]])]).map_err(|e| e.to_string())?;
    check(fused.hard_labels()[0].1 == 1, || "(0.6,0.4)+(0.3,0.7) did not pick class 1".into())?;
    let p = &fused.records()[0].probs;
    check((p[0] - 0.45).abs() < 1e-15 && (p[1] - 0.55).abs() < 1e-15, || format!("normalized sum {p:?}, expected [0.45, 0.55]"))?;
    let one_hot = |c: usize| {
        let mut v = vec![0.0; 6];
        v[c] = 1.0;
        vec![v]
    };
    let vote = late_fuse(&[run_of("x", &one_hot(2)), run_of("y", &one_hot(2)), run_of("z", &one_hot(4))])
        .map_err(|e| e.to_string())?;
    check(vote.hard_labels()[0].1 == 2, || "2-vs-1 vote lost".into())?;
    check(argmax(&[0.5, 0.5]) == 0, || "tie did not go to the lowest index".into())?;
    Ok(format!("{cases} random fusions permutation-invariant and doubling-stable; hand fixtures exact"))
}

fn structure_checks() -> Outcome {
    let want = [
        (Preset::XlmrPretrain, 25, 16, 5e-5, 0, 0.0, TrainMode::MlmPretrain),
        (Preset::XlmrFinetune, 3, 8, 1e-5, 500, 0.01, TrainMode::FinetuneFull),
        (Preset::MbertFinetune, 6, 8, 1e-5, 0, 0.0, TrainMode::FinetuneFull),
    ];
    for (p, epochs, batch, lr, warmup, wd, mode) in want {
        let c = p.config();
        let got = (c.epochs, c.batch_size, c.learning_rate, c.warmup_steps, c.weight_decay, c.mode, c.adam_epsilon, c.max_len);
        check(got == (epochs, batch, lr, warmup, wd, mode, 1e-8, 384), || format!("{p}: {got:?}"))?;
    }

    let table = [
        ("ideological-inequality", "sexist"),
        ("stereotyping-dominance", "sexist"),
        ("objectification", "sexist"),
        ("sexual-violence", "sexist"),
        ("misogyny-non-sexual-violence", "sexist"),
        ("non-sexist", "non-sexist"),
    ];
    check(Task2Label::ALL.len() == table.len(), || "task2 has the wrong number of classes".into())?;
    for (fine, coarse) in table {
        let l = Task2Label::ALL.iter().find(|l| l.as_str() == fine).ok_or(format!("no class {fine}"))?;
        check(derive_task1(*l).as_str() == coarse, || format!("{fine} maps to {}", derive_task1(*l).as_str()))?;
    }
    for i in 0..6 {
        let mut p = vec![0.0; 6];
        p[i] = 1.0;
        let q = derive_task1_probs(&p).map_err(|e| e.to_string())?;
        let coarse = derive_task1(Task2Label::ALL[i]);
        check(q[Task1Label::ALL.iter().position(|&c| c == coarse).unwrap()] == 1.0, || format!("one-hot {i} -> {q:?}"))?;
    }

    let real = match (std::env::var_os("EXIST_TRAIN_TSV"), std::env::var_os("EXIST_TEST_TSV")) {
        (Some(train), Some(test)) => {
            let tr = corpus::load_tsv(&train, Schema::Exist).map_err(|e| e.to_string())?;
            let te = corpus::load_tsv(&test, Schema::Exist).map_err(|e| e.to_string())?;
            check(tr.len() == EXIST_TRAIN_ROWS && te.len() == EXIST_TEST_ROWS, || {
                format!("EXIST files have {} / {} rows", tr.len(), te.len())
            })?;
            format!("EXIST files {EXIST_TRAIN_ROWS} / {EXIST_TEST_ROWS} rows")
        }
        _ => "EXIST data check skipped (EXIST_TRAIN_TSV / EXIST_TEST_TSV unset)".into(),
    };
    Ok(format!("presets exact; 6->2 mapping exhaustive; {real}"))
}

fn exist(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_exist"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("exist {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim())
    })
}

const DETERMINISM_CONFIG: &str = "seed = 9\n\n[model]\nd_model = 16\nn_layers = 1\nn_heads = 2\nd_ffn = 32\n\n[training]\nmax_len = 24\n";

fn full_workflow(dir: &Path) -> Result<(), String> {
    for f in ["synthetic_corpus.tsv", "mock_dict.tsv"] {
        std::fs::copy(fixtures_dir().join(f), dir.join(f)).map_err(|e| e.to_string())?;
    }
    std::fs::write(dir.join("exp.toml"), DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let steps: &[&[&str]] = &[
        &["preprocess", "--pipeline", "p4", "--in", "synthetic_corpus.tsv", "--out", "out/p4.tsv"],
        &["augment", "--in", "out/p4.tsv", "--dict", "mock_dict.tsv", "--cache", "out/cache.tsv", "--out", "out/aug.tsv"],
        &["train-vocab", "--in", "out/aug.tsv", "--out", "out/vocab.txt", "--max-vocab", "400"],
        &["pretrain", "--vocab", "out/vocab.txt", "--corpus", "out/aug.tsv", "--out", "out/pre.ckpt", "--epochs", "2"],
        &[
            "finetune", "--vocab", "out/vocab.txt", "--train", "out/aug.tsv", "--val-fraction", "0.2", "--init", "out/pre.ckpt",
            "--task", "task2", "--out", "out/ft.ckpt", "--epochs", "2", "--learning-rate", "1e-3",
        ],
        &["predict", "--vocab", "out/vocab.txt", "--model", "out/ft.ckpt", "--in", "out/p4.tsv", "--out", "out/a.jsonl"],
        &[
            "predict", "--vocab", "out/vocab.txt", "--model", "out/ft.ckpt", "--in", "out/p4.tsv", "--out", "out/b.jsonl",
            "--derive-task1", "--run-name", "b",
        ],
        &["fuse", "out/a.jsonl", "out/a.jsonl", "--out", "out/fused.jsonl", "--submission", "out/fused.tsv"],
        &["evaluate", "--predictions", "out/fused.jsonl", "--truth", "out/p4.tsv", "--out", "out/report.json"],
    ];
    for args in steps {
        let mut full = vec!["--config", "exp.toml"];
        full.extend_from_slice(args);
        exist(dir, &full)?;
    }
    Ok(())
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir.join("out")).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(|e| e.to_string())?));
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    full_workflow(a.path())?;
    full_workflow(b.path())?;
    let (sa, sb) = (snapshot(a.path())?, snapshot(b.path())?);
    check(sa.len() == sb.len(), || "runs produced different file sets".into())?;
    for ((na, ca), (nb, cb)) in sa.iter().zip(&sb) {
        check(na == nb && ca == cb, || format!("{na} differs between runs"))?;
    }
    // a rerun in place, over its own outputs, changes nothing either
    full_workflow(a.path())?;
    let again = snapshot(a.path())?;
    for ((na, ca), (_, cb)) in sa.iter().zip(&again) {
        check(ca == cb, || format!("{na} changed on rerun in place"))?;
    }
    Ok(format!("9 commands, {} artifacts byte-identical across 3 runs", sa.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 metric oracle equivalence", metric_oracle),
        ("2 gradient correctness", gradient_correctness),
        ("3 MLM corruption statistics", mlm_statistics),
        ("4 preprocessing oracle", preprocessing_oracle),
        ("5 end-to-end learnability", learnability),
        ("6 fusion algebra", fusion_algebra),
        ("7 structure checks", structure_checks),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
