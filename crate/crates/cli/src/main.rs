//! `exist`: command-line driver for the sexism classification workflow.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use exist_core::augment::{self, CachingProvider, HttpProvider, MockProvider, TranslationProvider};
use exist_core::corpus::{self, LabeledDataset, Schema, Task};
use exist_core::evalfuse::{self, EvalReport, Predictions, RunPrediction};
use exist_core::model::{self, EncoderModel, HeadKind};
use exist_core::preprocess::{self, PipelineId};
use exist_core::tokenizer::{self, TokenizerModel};
use exist_core::train::{self, CorpusMix, TrainMode, TrainingConfig};

use config::{ExperimentConfig, Resolved};
use manifest::Run;

#[derive(Parser)]
#[command(name = "exist", version, about = "Sexism detection in English and Spanish social media posts")]
struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for initialization, shuffling, masking and splitting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where manifests and logs go (default: the output file's directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize post texts with one of the pipelines p1..p4.
    Preprocess(PreprocessArgs),
    /// Learn a WordPiece vocabulary from one or more datasets.
    TrainVocab(TrainVocabArgs),
    /// Continue masked-language-model training on unlabeled text.
    Pretrain(PretrainArgs),
    /// Train a classifier for task1 or task2.
    Finetune(FinetuneArgs),
    /// Add a translated copy of every post.
    Augment(AugmentArgs),
    /// Write class probabilities for a dataset.
    Predict(PredictArgs),
    /// Late-fuse two or more prediction files.
    Fuse(FuseArgs),
    /// Score predictions against labeled data.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    pipeline: Option<PipelineId>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// Input layout; detected from the header when omitted.
    #[arg(long)]
    schema: Option<Schema>,
}

#[derive(Args)]
struct TrainVocabArgs {
    /// Datasets whose texts feed the vocabulary.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long = "out")]
    output: Option<PathBuf>,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
}

#[derive(Args)]
struct TrainingFlags {
    /// xlmr-pretrain, xlmr-finetune or mbert-finetune.
    #[arg(long)]
    preset: Option<String>,
    /// Print the resolved training config and exit.
    #[arg(long)]
    help_config: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    training: TrainingFlags,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Corpora, trained on in the order given.
    #[arg(long = "corpus", num_args = 1..)]
    corpora: Vec<PathBuf>,
    /// Start from this checkpoint instead of a fresh encoder.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long = "out", required_unless_present = "help_config")]
    output: Option<PathBuf>,
    #[arg(long)]
    mix: Option<CorpusMix>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    training: TrainingFlags,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation set; otherwise carved from --train with --val-fraction.
    #[arg(long, conflicts_with = "val_fraction")]
    val: Option<PathBuf>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Keep label proportions when carving the validation split.
    #[arg(long, requires = "val_fraction")]
    stratified: bool,
    /// Pre-trained encoder to start from.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// finetune_full or finetune_head_only.
    #[arg(long)]
    mode: Option<TrainMode>,
    #[arg(long = "out", required_unless_present = "help_config")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long = "out")]
    output: PathBuf,
    /// Offline word-map dictionary (en<TAB>es).
    #[arg(long, conflicts_with = "endpoint")]
    dict: Option<PathBuf>,
    /// Remote translation endpoint; key from EXIST_TRANSLATE_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    /// Translation cache file, created if missing.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long = "out")]
    output: PathBuf,
    /// Collapse a six-way model's output to sexist/non-sexist.
    #[arg(long)]
    derive_task1: bool,
    /// Also write a submission TSV here.
    #[arg(long)]
    submission: Option<PathBuf>,
    /// Run name recorded in the prediction file.
    #[arg(long)]
    run_name: Option<String>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(required = true, num_args = 2..)]
    predictions: Vec<PathBuf>,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long)]
    submission: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Prediction file (.jsonl) or submission (.tsv).
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report here.
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

struct Ctx {
    cfg: ExperimentConfig,
    config_path: Option<PathBuf>,
    seed: u64,
    out_dir: Option<PathBuf>,
    args: Vec<String>,
}

impl Ctx {
    fn run(&self, command: &str, primary_output: Option<&Path>) -> Run {
        let dir = self
            .out_dir
            .clone()
            .or_else(|| primary_output.and_then(|p| p.parent()).map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
        let mut run = Run::new(command, self.args.clone(), dir);
        if let Some(p) = &self.config_path {
            run.input(p);
        }
        run
    }

    fn resolved(&self, command: &str) -> Resolved {
        Resolved {
            command: command.to_string(),
            seed: self.seed,
            task: None,
            pipeline: None,
            preset: None,
            tokenizer: self.cfg.tokenizer.clone(),
            model: None,
            training: None,
        }
    }

    fn task(&self, flag: Option<Task>) -> Task {
        flag.or(self.cfg.task).unwrap_or(Task::Task2)
    }
}

fn require(flag: Option<PathBuf>, from_config: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.cloned())
        .ok_or_else(|| anyhow!("missing --{what} (or paths.{what} in the config file)"))
}

fn check_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            bail!("input file {} does not exist", p.display());
        }
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

/// Layout of a dataset file, from its header line.
fn detect_schema(path: &Path) -> Result<Schema> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    Ok(if header.starts_with("test_case\t") { Schema::Exist } else { Schema::Generic })
}

fn load_dataset(path: &Path, schema: Option<Schema>) -> Result<(LabeledDataset, Schema)> {
    let schema = match schema {
        Some(s) => s,
        None => detect_schema(path)?,
    };
    let ds = corpus::load_tsv(path, schema).with_context(|| format!("cannot load dataset {}", path.display()))?;
    Ok((ds, schema))
}

fn load_vocab(path: &Path, ctx: &Ctx) -> Result<TokenizerModel> {
    TokenizerModel::load(path, ctx.cfg.tokenizer.uncased).with_context(|| format!("cannot load vocabulary {}", path.display()))
}

fn load_model(path: &Path) -> Result<EncoderModel> {
    model::load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn training_config(ctx: &Ctx, flags: &TrainingFlags) -> Result<(Option<String>, TrainingConfig)> {
    let (preset, mut t) = ctx.cfg.training(flags.preset.as_deref())?;
    if let Some(e) = flags.epochs {
        t.epochs = e;
    }
    if let Some(b) = flags.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = flags.learning_rate {
        t.learning_rate = lr;
    }
    if let Some(l) = flags.max_len {
        t.max_len = l;
    }
    t.seed = ctx.seed;
    t.validate()?;
    Ok((preset.map(|p| p.name().to_string()), t))
}

fn print_config(preset: Option<&str>, t: &TrainingConfig) -> Result<()> {
    if let Some(p) = preset {
        println!("# preset: {p}");
    }
    print!("{}", toml::to_string(t)?);
    Ok(())
}

fn cmd_preprocess(ctx: &Ctx, a: PreprocessArgs) -> Result<()> {
    check_inputs(&[&a.input])?;
    let pipeline = a
        .pipeline
        .or(ctx.cfg.pipeline)
        .ok_or_else(|| anyhow!("missing --pipeline (or pipeline in the config file)"))?;
    let (ds, schema) = load_dataset(&a.input, a.schema)?;
    let (out, dropped) = preprocess::apply_dataset(pipeline, &ds);
    ensure_parent(&a.output)?;
    corpus::write_tsv(&out, schema, &a.output)?;
    eprintln!("{pipeline}: kept {} posts, dropped {dropped} left empty", out.len());
    let mut run = ctx.run("preprocess", Some(&a.output));
    run.input(&a.input);
    run.output(&a.output);
    let mut r = ctx.resolved("preprocess");
    r.pipeline = Some(pipeline);
    run.finish(&r)
}

fn cmd_train_vocab(ctx: &Ctx, a: TrainVocabArgs) -> Result<()> {
    let output = require(a.output, ctx.cfg.paths.vocab.as_ref(), "vocab")?;
    check_inputs(&a.inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let mut params = ctx.cfg.tokenizer.clone();
    params.max_vocab = a.max_vocab.unwrap_or(params.max_vocab);
    params.min_freq = a.min_freq.unwrap_or(params.min_freq);
    let mut datasets = Vec::new();
    for p in &a.inputs {
        datasets.push(load_dataset(p, None)?.0);
    }
    let texts = datasets.iter().flat_map(|d| d.iter().map(|p| p.text.as_str()));
    let tm = tokenizer::train_vocab_from_texts(texts, params.max_vocab, params.min_freq, params.uncased)?;
    ensure_parent(&output)?;
    tm.save(&output)?;
    eprintln!("vocabulary of {} entries written to {}", tm.vocab_size(), output.display());
    let mut run = ctx.run("train-vocab", Some(&output));
    a.inputs.iter().for_each(|p| run.input(p));
    run.output(&output);
    let mut r = ctx.resolved("train-vocab");
    r.tokenizer = params;
    run.finish(&r)
}

fn cmd_pretrain(ctx: &Ctx, a: PretrainArgs) -> Result<()> {
    let (preset, mut t) = training_config(ctx, &a.training)?;
    if let Some(m) = a.mix {
        t.mix = m;
    }
    t.mode = TrainMode::MlmPretrain;
    if a.training.help_config {
        return print_config(preset.as_deref(), &t);
    }
    let output = a.output.expect("required by clap");
    let vocab = require(a.vocab, ctx.cfg.paths.vocab.as_ref(), "vocab")?;
    let corpora = if a.corpora.is_empty() { ctx.cfg.paths.external.clone() } else { a.corpora };
    if corpora.is_empty() {
        bail!("missing --corpus (or paths.external in the config file)");
    }
    let mut inputs: Vec<&Path> = vec![&vocab];
    inputs.extend(corpora.iter().map(PathBuf::as_path));
    inputs.extend(a.init.as_deref());
    check_inputs(&inputs)?;

    let tm = load_vocab(&vocab, ctx)?;
    let mut datasets = Vec::new();
    for p in &corpora {
        datasets.push(load_dataset(p, None)?.0);
    }
    let mut m = match &a.init {
        Some(p) => {
            let m = load_model(p)?;
            if m.head_kind() == HeadKind::Mlm {
                m
            } else {
                m.with_head(HeadKind::Mlm, ctx.seed)?
            }
        }
        None => {
            let mut enc = ctx.cfg.encoder()?;
            enc.vocab_size = tm.vocab_size();
            enc.max_len = enc.max_len.max(t.max_len);
            enc.seed = ctx.seed;
            EncoderModel::init(enc, HeadKind::Mlm)?
        }
    };
    let history = train::pretrain_mlm(&mut m, &datasets, &tm, &t)?;
    for r in &history {
        eprintln!("pretrain {} epoch {}: loss {:.4}", r.corpus, r.epoch, r.loss);
    }
    ensure_parent(&output)?;
    model::save_checkpoint(&m, &output)?;
    let mut run = ctx.run("pretrain", Some(&output));
    let log = run.side_file("history.jsonl");
    std::fs::create_dir_all(&run.out_dir)?;
    train::write_history(&history, &log)?;
    inputs.iter().for_each(|p| run.input(*p));
    run.output(&output);
    run.output(&log);
    let mut r = ctx.resolved("pretrain");
    r.preset = preset;
    r.model = Some(m.config().clone());
    r.training = Some(t);
    run.finish(&r)
}

fn cmd_finetune(ctx: &Ctx, a: FinetuneArgs) -> Result<()> {
    let (preset, mut t) = training_config(ctx, &a.training)?;
    t.mode = a.mode.unwrap_or(match t.mode {
        TrainMode::MlmPretrain => TrainMode::FinetuneFull,
        m => m,
    });
    if a.training.help_config {
        return print_config(preset.as_deref(), &t);
    }
    let output = a.output.expect("required by clap");
    let task = ctx.task(a.task);
    let vocab = require(a.vocab, ctx.cfg.paths.vocab.as_ref(), "vocab")?;
    let train_path = require(a.train, ctx.cfg.paths.train.as_ref(), "train")?;
    let init = a.init.or_else(|| ctx.cfg.paths.checkpoint.clone());
    let mut inputs: Vec<&Path> = vec![&vocab, &train_path];
    inputs.extend(a.val.as_deref());
    inputs.extend(init.as_deref());
    check_inputs(&inputs)?;

    let tm = load_vocab(&vocab, ctx)?;
    let (full, _) = load_dataset(&train_path, None)?;
    let (train_ds, val_ds) = match (&a.val, a.val_fraction) {
        (Some(p), _) => (full, Some(load_dataset(p, None)?.0)),
        (None, Some(f)) => {
            let (tr, va) = corpus::split(&full, f, ctx.seed, a.stratified)?;
            (tr, Some(va))
        }
        (None, None) => (full, None),
    };
    let head = HeadKind::Classifier {
        n_classes: task.n_classes(),
    };
    let mut m = match &init {
        Some(p) => {
            let m = load_model(p)?;
            if m.head_kind() == head {
                m
            } else {
                m.with_head(head, ctx.seed)?
            }
        }
        None => {
            let mut enc = ctx.cfg.encoder()?;
            enc.vocab_size = tm.vocab_size();
            enc.max_len = enc.max_len.max(t.max_len);
            enc.seed = ctx.seed;
            EncoderModel::init(enc, head)?
        }
    };
    let history = train::finetune(&mut m, &train_ds, val_ds.as_ref(), task, &tm, &t)?;
    for r in &history {
        match (r.val_accuracy, r.val_macro_f1) {
            (Some(acc), Some(f1)) => eprintln!(
                "finetune epoch {}: loss {:.4}, val accuracy {acc:.4}, val macro-F1 {f1:.4}",
                r.epoch, r.loss
            ),
            _ => eprintln!("finetune epoch {}: loss {:.4}", r.epoch, r.loss),
        }
    }
    ensure_parent(&output)?;
    model::save_checkpoint(&m, &output)?;
    let mut run = ctx.run("finetune", Some(&output));
    let log = run.side_file("history.jsonl");
    std::fs::create_dir_all(&run.out_dir)?;
    train::write_history(&history, &log)?;
    inputs.iter().for_each(|p| run.input(*p));
    run.output(&output);
    run.output(&log);
    let mut r = ctx.resolved("finetune");
    r.task = Some(task);
    r.preset = preset;
    r.model = Some(m.config().clone());
    r.training = Some(t);
    run.finish(&r)
}

fn cmd_augment(ctx: &Ctx, a: AugmentArgs) -> Result<()> {
    let input = require(a.input, ctx.cfg.paths.train.as_ref(), "in")?;
    let dict = a.dict.or_else(|| ctx.cfg.paths.dict.clone());
    let mut inputs: Vec<&Path> = vec![&input];
    inputs.extend(dict.as_deref());
    check_inputs(&inputs)?;
    let base: Box<dyn TranslationProvider> = match (&dict, &a.endpoint) {
        (Some(d), _) => Box::new(MockProvider::load(d)?),
        (None, Some(url)) => Box::new(HttpProvider::from_env(url.clone())),
        (None, None) => bail!("choose a translator: --dict FILE (offline) or --endpoint URL"),
    };
    let (ds, _) = load_dataset(&input, None)?;
    let out = match &a.cache {
        Some(c) => {
            let cached = CachingProvider::open(base, c.clone())?;
            let out = augment::with_translations(&ds, &cached, a.parallelism)?;
            cached.compact()?;
            out
        }
        None => augment::with_translations(&ds, base.as_ref(), a.parallelism)?,
    };
    for s in &out.skipped {
        eprintln!("skipped {}: {}", s.id, s.error);
    }
    ensure_parent(&a.output)?;
    corpus::write_tsv(&out.dataset, Schema::Generic, &a.output)?;
    eprintln!(
        "{} posts written ({} translated, {} skipped)",
        out.dataset.len(),
        out.dataset.len() - ds.len(),
        out.skipped.len()
    );
    let mut run = ctx.run("augment", Some(&a.output));
    inputs.iter().for_each(|p| run.input(*p));
    run.output(&a.output);
    if let Some(c) = &a.cache {
        run.output(c);
    }
    run.finish(&ctx.resolved("augment"))?;
    if out.skipped.is_empty() {
        Ok(())
    } else {
        bail!("{} posts could not be translated", out.skipped.len())
    }
}

fn cmd_predict(ctx: &Ctx, a: PredictArgs) -> Result<()> {
    let vocab = require(a.vocab, ctx.cfg.paths.vocab.as_ref(), "vocab")?;
    let model_path = require(a.model, ctx.cfg.paths.checkpoint.as_ref(), "model")?;
    let input = require(a.input, ctx.cfg.paths.test.as_ref(), "in")?;
    check_inputs(&[&vocab, &model_path, &input])?;
    let tm = load_vocab(&vocab, ctx)?;
    let m = load_model(&model_path)?;
    let (ds, _) = load_dataset(&input, None)?;
    let run_name = a.run_name.unwrap_or_else(|| {
        model_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    });
    let max_len = a.max_len.unwrap_or(m.config().max_len);
    let mut pred = train::predict_dataset(&m, &ds, &tm, max_len, &run_name)?;
    if a.derive_task1 {
        pred = pred.derive_task1()?;
    }
    ensure_parent(&a.output)?;
    evalfuse::write_predictions(&pred, &a.output)?;
    let mut run = ctx.run("predict", Some(&a.output));
    run.output(&a.output);
    if let Some(s) = &a.submission {
        ensure_parent(s)?;
        evalfuse::write_submission(&pred, s)?;
        run.output(s);
    }
    eprintln!("{} {} predictions written to {}", pred.len(), pred.task(), a.output.display());
    for p in [&vocab, &model_path, &input] {
        run.input(p);
    }
    let mut r = ctx.resolved("predict");
    r.task = Some(pred.task());
    run.finish(&r)
}

fn cmd_fuse(ctx: &Ctx, a: FuseArgs) -> Result<()> {
    check_inputs(&a.predictions.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let runs = a
        .predictions
        .iter()
        .map(|p| evalfuse::read_predictions(p).with_context(|| format!("cannot read predictions {}", p.display())))
        .collect::<Result<Vec<RunPrediction>>>()?;
    let fused = evalfuse::late_fuse(&runs)?;
    ensure_parent(&a.output)?;
    evalfuse::write_predictions(&fused, &a.output)?;
    let mut run = ctx.run("fuse", Some(&a.output));
    run.output(&a.output);
    if let Some(s) = &a.submission {
        ensure_parent(s)?;
        evalfuse::write_submission(&fused, s)?;
        run.output(s);
    }
    a.predictions.iter().for_each(|p| run.input(p));
    let mut r = ctx.resolved("fuse");
    r.task = Some(fused.task());
    run.finish(&r)
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let truth = require(a.truth, ctx.cfg.paths.test.as_ref(), "truth")?;
    check_inputs(&[&a.predictions, &truth])?;
    let (truth_ds, _) = load_dataset(&truth, None)?;
    let is_submission = a.predictions.extension().is_some_and(|e| e == "tsv");
    let report: EvalReport = if is_submission {
        let task = ctx.task(a.task);
        let hard = evalfuse::read_submission(&a.predictions, task)?;
        evalfuse::evaluate(Predictions::Hard(&hard), &truth_ds, task)?
    } else {
        let pred = evalfuse::read_predictions(&a.predictions)?;
        let task = a.task.or(ctx.cfg.task).unwrap_or(pred.task());
        evalfuse::evaluate(Predictions::Probs(&pred), &truth_ds, task)?
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if a.json {
        print!("{json}");
    } else {
        print!("{}", report.to_table());
    }
    if a.output.is_some() || ctx.out_dir.is_some() {
        let mut run = ctx.run("evaluate", a.output.as_deref());
        if let Some(o) = &a.output {
            ensure_parent(o)?;
            std::fs::write(o, &json).with_context(|| format!("cannot write {}", o.display()))?;
            run.output(o);
        }
        run.input(&a.predictions);
        run.input(&truth);
        let mut r = ctx.resolved("evaluate");
        r.task = Some(report.task);
        run.finish(&r)?;
    }
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        cfg,
        config_path: cli.config,
        out_dir: cli.out_dir,
        args: std::env::args().skip(1).collect(),
    };
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&ctx, a),
        Command::TrainVocab(a) => cmd_train_vocab(&ctx, a),
        Command::Pretrain(a) => cmd_pretrain(&ctx, a),
        Command::Finetune(a) => cmd_finetune(&ctx, a),
        Command::Augment(a) => cmd_augment(&ctx, a),
        Command::Predict(a) => cmd_predict(&ctx, a),
        Command::Fuse(a) => cmd_fuse(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
