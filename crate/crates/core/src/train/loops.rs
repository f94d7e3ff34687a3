use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{adamw_step, lr_schedule, mlm_corrupt, AdamState, CorpusMix, EpochRecord, TrainError, TrainMode, TrainingConfig};
use crate::corpus::{LabeledDataset, Task};
use crate::evalfuse::{argmax, score_labels, PredictionRecord, RunPrediction};
use crate::model::{EncoderModel, HeadKind, Targets};
use crate::tokenizer::{is_special, Encoding, TokenizerModel};

fn check_shapes(model: &EncoderModel, tm: &TokenizerModel, cfg: &TrainingConfig) -> Result<(), TrainError> {
    cfg.validate()?;
    if tm.vocab_size() != model.config().vocab_size {
        return Err(TrainError::Config(format!(
            "tokenizer has {} entries but the model vocabulary is {}",
            tm.vocab_size(),
            model.config().vocab_size
        )));
    }
    if cfg.max_len > model.config().max_len {
        return Err(TrainError::Config(format!(
            "max_len {} exceeds the model's position table ({}); lower max_len or build the model with a larger one",
            cfg.max_len,
            model.config().max_len
        )));
    }
    Ok(())
}

fn n_batches(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Continue masked-language-model training of `model` on `corpora`.
///
/// With [`CorpusMix::Sequential`] every corpus gets `cfg.epochs` epochs in
/// turn; with [`CorpusMix::Union`] the corpora are pooled. One learning-rate
/// schedule spans the whole run. Posts whose encoding holds no maskable
/// token are left out, as are batches in which no position was selected.
pub fn pretrain_mlm(
    model: &mut EncoderModel,
    corpora: &[LabeledDataset],
    tm: &TokenizerModel,
    cfg: &TrainingConfig,
) -> Result<Vec<EpochRecord>, TrainError> {
    check_shapes(model, tm, cfg)?;
    if model.head_kind() != HeadKind::Mlm {
        return Err(TrainError::Config(format!(
            "pre-training needs an MLM head, model has {}",
            model.head_kind()
        )));
    }
    if cfg.mode == TrainMode::FinetuneHeadOnly {
        return Err(TrainError::Config("head-only mode does not apply to pre-training".into()));
    }
    if corpora.is_empty() {
        return Err(TrainError::EmptyCorpus("<none>".into()));
    }

    let mut units: Vec<(String, Vec<Encoding>)> = Vec::new();
    for ds in corpora {
        let encs: Vec<Encoding> = ds
            .iter()
            .map(|p| tm.encode(&p.text, cfg.max_len).trimmed())
            .filter(|e| e.ids.iter().any(|&id| !is_special(id)))
            .collect();
        if encs.is_empty() {
            return Err(TrainError::EmptyCorpus(ds.name().to_string()));
        }
        match (cfg.mix, units.first_mut()) {
            (CorpusMix::Union, Some((name, pool))) => {
                name.push('+');
                name.push_str(ds.name());
                pool.extend(encs);
            }
            _ => units.push((ds.name().to_string(), encs)),
        }
    }

    let total: usize = units.iter().map(|(_, e)| cfg.epochs * n_batches(e.len(), cfg.batch_size)).sum();
    let mut history = Vec::new();
    if total == 0 {
        return Ok(history);
    }
    lr_schedule(1, total, cfg.warmup_steps, cfg.learning_rate)?;

    let rule = cfg.mask_rule();
    let hp = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.params());
    let mut step = 0;
    for (name, encs) in &units {
        let mut order: Vec<usize> = (0..encs.len()).collect();
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let (mut loss_sum, mut n_targets, mut updates, mut last_lr) = (0.0, 0usize, 0, 0.0);
            for chunk in order.chunks(cfg.batch_size) {
                step += 1;
                let lr = lr_schedule(step, total, cfg.warmup_steps, cfg.learning_rate)?;
                let mut inputs = Vec::with_capacity(chunk.len());
                let mut targets = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let b = mlm_corrupt(&encs[i], tm, &rule, &mut rng)?;
                    inputs.push(b.input);
                    targets.push(b.targets);
                }
                let n: usize = targets.iter().flatten().filter(|t| t.is_some()).count();
                if n == 0 {
                    continue;
                }
                let (loss, grads) =
                    model.loss_and_grads(&inputs, Targets::Mlm(&targets), Some(&mut rng as &mut dyn RngCore))?;
                adamw_step(model.params_mut(), &grads, &mut state, &hp, lr, false, cfg.max_grad_norm)?;
                loss_sum += loss * n as f64;
                n_targets += n;
                updates += 1;
                last_lr = lr;
            }
            history.push(EpochRecord {
                phase: "pretrain".into(),
                corpus: name.clone(),
                epoch,
                loss: if n_targets == 0 { f64::NAN } else { loss_sum / n_targets as f64 },
                steps: updates,
                learning_rate: last_lr,
                val_accuracy: None,
                val_macro_f1: None,
            });
        }
    }
    Ok(history)
}

fn labels_for(ds: &LabeledDataset, task: Task) -> Result<Vec<usize>, TrainError> {
    ds.iter()
        .map(|p| {
            p.label_index(task).ok_or_else(|| TrainError::MissingLabel {
                id: p.id.clone(),
                task,
            })
        })
        .collect()
}

/// Supervised training of a classification head (and, in full mode, the
/// encoder under it). Validation accuracy and macro F1 are logged after
/// every epoch when `val` is given.
pub fn finetune(
    model: &mut EncoderModel,
    train: &LabeledDataset,
    val: Option<&LabeledDataset>,
    task: Task,
    tm: &TokenizerModel,
    cfg: &TrainingConfig,
) -> Result<Vec<EpochRecord>, TrainError> {
    check_shapes(model, tm, cfg)?;
    let head_only = match cfg.mode {
        TrainMode::FinetuneFull => false,
        TrainMode::FinetuneHeadOnly => true,
        TrainMode::MlmPretrain => {
            return Err(TrainError::Config(
                "fine-tuning needs mode finetune_full or finetune_head_only".into(),
            ))
        }
    };
    if model.n_classes() != Some(task.n_classes()) {
        return Err(TrainError::ClassCountMismatch {
            task,
            expected: task.n_classes(),
            found: model.head_kind().to_string(),
        });
    }
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus(train.name().to_string()));
    }
    let labels = labels_for(train, task)?;
    let val_labels = val.map(|v| labels_for(v, task)).transpose()?;
    let encs: Vec<Encoding> = train.iter().map(|p| tm.encode(&p.text, cfg.max_len).trimmed()).collect();

    let total = cfg.epochs * n_batches(encs.len(), cfg.batch_size);
    let mut history = Vec::new();
    if total == 0 {
        return Ok(history);
    }
    lr_schedule(1, total, cfg.warmup_steps, cfg.learning_rate)?;

    let hp = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..encs.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut last_lr) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = lr_schedule(step, total, cfg.warmup_steps, cfg.learning_rate)?;
            let batch: Vec<Encoding> = chunk.iter().map(|&i| encs[i].clone()).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = model.loss_and_grads(&batch, Targets::Classes(&y), Some(&mut rng as &mut dyn RngCore))?;
            adamw_step(model.params_mut(), &grads, &mut state, &hp, lr, head_only, cfg.max_grad_norm)?;
            loss_sum += loss * chunk.len() as f64;
            last_lr = lr;
        }
        let (val_accuracy, val_macro_f1) = match (val, &val_labels) {
            (Some(v), Some(truth)) if !v.is_empty() => {
                let pred = predict_dataset(model, v, tm, cfg.max_len, "val")?;
                let hard: Vec<usize> = pred.records().iter().map(|r| argmax(&r.probs)).collect();
                let report = score_labels(truth, &hard, task)?;
                (Some(report.accuracy), Some(report.macro_f1))
            }
            _ => (None, None),
        };
        history.push(EpochRecord {
            phase: "finetune".into(),
            corpus: train.name().to_string(),
            epoch,
            loss: loss_sum / encs.len() as f64,
            steps: order.len().div_ceil(cfg.batch_size),
            learning_rate: last_lr,
            val_accuracy,
            val_macro_f1,
        });
    }
    Ok(history)
}

/// Class probabilities for every post of `ds`, in dataset order. Inference
/// is spread over the available cores; results do not depend on the
/// thread count.
pub fn predict_dataset(
    model: &EncoderModel,
    ds: &LabeledDataset,
    tm: &TokenizerModel,
    max_len: usize,
    run: &str,
) -> Result<RunPrediction, TrainError> {
    let n_classes = model
        .n_classes()
        .ok_or_else(|| TrainError::Config("prediction needs a classification head".into()))?;
    let task = Task::from_n_classes(n_classes).ok_or_else(|| TrainError::ClassCountMismatch {
        task: Task::Task2,
        expected: Task::Task2.n_classes(),
        found: n_classes.to_string(),
    })?;
    let max_len = max_len.min(model.config().max_len);
    let posts = ds.posts();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(posts.len().max(1));
    let chunk = posts.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<PredictionRecord>, TrainError>> = std::thread::scope(|s| {
        let handles: Vec<_> = posts
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|p| {
                            let probs = model.predict_probs(&tm.encode(&p.text, max_len))?;
                            Ok(PredictionRecord {
                                id: p.id.clone(),
                                probs,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction thread panicked")).collect()
    });
    let mut records = Vec::with_capacity(posts.len());
    for part in parts {
        records.extend(part?);
    }
    Ok(RunPrediction::new(run, task, records)?)
}
