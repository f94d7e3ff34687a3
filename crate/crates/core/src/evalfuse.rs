//! Run predictions, late fusion and benchmark metrics.
//!
//! Probability vectors are always in canonical class order (see
//! [`Task::class_names`]). Hard labels come from the argmax, ties going to
//! the lowest class index.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{derive_task1_probs, escape_field, unescape_field, LabeledDataset, Task, TEST_CASE};

const PROB_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid prediction for {id:?}: {reason}")]
    InvalidVector { id: String, reason: String },
    #[error("duplicate prediction id {0:?}")]
    DuplicateId(String),
    #[error("fusion needs at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("runs disagree on the task: {0} vs {1}")]
    TaskMismatch(Task, Task),
    #[error("runs cover different ids; symmetric difference: {0:?}")]
    IdMismatch(Vec<String>),
    #[error("no ground truth for id {0:?}")]
    MissingTruth(String),
    #[error("{0} predictions but {1} truth labels")]
    LengthMismatch(usize, usize),
    #[error("class index {index} out of range for {task}")]
    ClassOutOfRange { index: usize, task: Task },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub probs: Vec<f64>,
}

/// Per-instance class probabilities from one model run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPrediction {
    run: String,
    task: Task,
    records: Vec<PredictionRecord>,
}

impl RunPrediction {
    pub fn new(run: impl Into<String>, task: Task, records: Vec<PredictionRecord>) -> Result<Self, EvalError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            check_vector(&r.id, &r.probs, task)?;
            if !seen.insert(r.id.as_str()) {
                return Err(EvalError::DuplicateId(r.id.clone()));
            }
        }
        Ok(RunPrediction {
            run: run.into(),
            task,
            records,
        })
    }

    pub fn run(&self) -> &str {
        &self.run
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_run_name(mut self, run: impl Into<String>) -> Self {
        self.run = run.into();
        self
    }

    /// Hard labels by argmax.
    pub fn hard_labels(&self) -> Vec<(String, usize)> {
        self.records.iter().map(|r| (r.id.clone(), argmax(&r.probs))).collect()
    }

    /// Collapse a six-way run into binary probabilities.
    pub fn derive_task1(&self) -> Result<RunPrediction, EvalError> {
        if self.task == Task::Task1 {
            return Ok(self.clone());
        }
        let records = self
            .records
            .iter()
            .map(|r| {
                derive_task1_probs(&r.probs)
                    .map(|p| PredictionRecord {
                        id: r.id.clone(),
                        probs: p.to_vec(),
                    })
                    .map_err(|e| EvalError::InvalidVector {
                        id: r.id.clone(),
                        reason: e.to_string(),
                    })
            })
            .collect::<Result<_, _>>()?;
        RunPrediction::new(self.run.clone(), Task::Task1, records)
    }
}

fn check_vector(id: &str, p: &[f64], task: Task) -> Result<(), EvalError> {
    let bad = |reason: String| EvalError::InvalidVector {
        id: id.to_string(),
        reason,
    };
    if p.len() != task.n_classes() {
        return Err(bad(format!("{} entries for {task} ({} classes)", p.len(), task.n_classes())));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(bad(format!("entry {x} is not a probability")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(bad(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Late fusion: per instance, the elementwise sum of the runs' vectors,
/// renormalized to one.
///
/// Each component is summed in ascending order of its addends so the result
/// does not depend on the order of `runs`. Records follow the order of the
/// run with the smallest name.
pub fn late_fuse(runs: &[RunPrediction]) -> Result<RunPrediction, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::TooFewRuns(runs.len()));
    }
    let task = runs[0].task;
    if let Some(r) = runs.iter().find(|r| r.task != task) {
        return Err(EvalError::TaskMismatch(task, r.task));
    }
    let ids: Vec<BTreeSet<&str>> = runs
        .iter()
        .map(|r| r.records.iter().map(|x| x.id.as_str()).collect())
        .collect();
    let union: BTreeSet<&str> = ids.iter().flatten().copied().collect();
    let diff: Vec<String> = union
        .iter()
        .filter(|id| !ids.iter().all(|s| s.contains(*id)))
        .map(|s| s.to_string())
        .collect();
    if !diff.is_empty() {
        return Err(EvalError::IdMismatch(diff));
    }

    let mut order: Vec<&RunPrediction> = runs.iter().collect();
    order.sort_by(|a, b| a.run.cmp(&b.run));
    let lookups: Vec<HashMap<&str, &[f64]>> = runs
        .iter()
        .map(|r| r.records.iter().map(|x| (x.id.as_str(), x.probs.as_slice())).collect())
        .collect();

    let k = task.n_classes();
    let mut addends = Vec::with_capacity(runs.len());
    let records = order[0]
        .records
        .iter()
        .map(|rec| {
            let summed: Vec<f64> = (0..k)
                .map(|c| {
                    addends.clear();
                    addends.extend(lookups.iter().map(|m| m[rec.id.as_str()][c]));
                    addends.sort_by(f64::total_cmp);
                    addends.iter().sum()
                })
                .collect();
            let total: f64 = summed.iter().sum();
            PredictionRecord {
                id: rec.id.clone(),
                probs: summed.into_iter().map(|x| x / total).collect(),
            }
        })
        .collect();
    let name = format!(
        "fused({})",
        order.iter().map(|r| r.run.as_str()).collect::<Vec<_>>().join("+")
    );
    RunPrediction::new(name, task, records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub n_instances: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, per-class precision/recall/F1 and macro F1 over every class of
/// `task`, including classes absent from both sides. An undefined precision,
/// recall or F1 (zero denominator) counts as 0.
pub fn score_labels(truth: &[usize], pred: &[usize], task: Task) -> Result<EvalReport, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    let k = task.n_classes();
    if let Some(&index) = truth.iter().chain(pred).find(|&&c| c >= k) {
        return Err(EvalError::ClassOutOfRange { index, task });
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t][p] += 1;
    }
    let n = truth.len();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = task
        .class_names()
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            let tp = confusion[c][c];
            let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class: name.to_string(),
                precision,
                recall,
                f1,
                support: actual,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Ok(EvalReport {
        task,
        n_instances: n,
        accuracy: ratio(correct, n),
        macro_f1,
        per_class,
        confusion,
    })
}

/// What to score: probability vectors or already-decided labels.
#[derive(Debug, Clone, Copy)]
pub enum Predictions<'a> {
    Probs(&'a RunPrediction),
    Hard(&'a [(String, usize)]),
}

/// Score predictions against the labels in `truth`. Every predicted id must
/// be present and labeled for `task`; a task2 run scored as task1 is
/// collapsed first.
pub fn evaluate(pred: Predictions<'_>, truth: &LabeledDataset, task: Task) -> Result<EvalReport, EvalError> {
    let owned;
    let hard: &[(String, usize)] = match pred {
        Predictions::Probs(run) => {
            let run = match (run.task, task) {
                (Task::Task2, Task::Task1) => run.derive_task1()?,
                (a, b) if a != b => return Err(EvalError::TaskMismatch(b, a)),
                _ => run.clone(),
            };
            owned = run.hard_labels();
            &owned
        }
        Predictions::Hard(h) => h,
    };
    let index = truth.index();
    let mut t = Vec::with_capacity(hard.len());
    let mut p = Vec::with_capacity(hard.len());
    for (id, label) in hard {
        let post = index.get(id.as_str()).ok_or_else(|| EvalError::MissingTruth(id.clone()))?;
        let gold = post.label_index(task).ok_or_else(|| EvalError::MissingTruth(id.clone()))?;
        t.push(gold);
        p.push(*label);
    }
    score_labels(&t, &p, task)
}

impl EvalReport {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let width = self.per_class.iter().map(|m| m.class.len()).max().unwrap_or(5).max(9);
        let mut s = String::new();
        writeln!(s, "task: {}   instances: {}", self.task, self.n_instances).unwrap();
        writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "precision", "recall", "f1", "support").unwrap();
        for m in &self.per_class {
            writeln!(
                s,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                m.class, m.precision, m.recall, m.f1, m.support
            )
            .unwrap();
        }
        writeln!(s, "{:<width$}  {:>9.4}", "accuracy", self.accuracy).unwrap();
        writeln!(s, "{:<width$}  {:>9.4}", "macro-f1", self.macro_f1).unwrap();
        s
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    task: Task,
    probs: Vec<f64>,
}

/// JSON-lines serialization. Two leading `#` comment lines carry the run
/// name and the class order of the `probs` arrays.
pub fn predictions_to_jsonl(pred: &RunPrediction) -> String {
    let mut s = String::new();
    writeln!(s, "# run: {}", pred.run).unwrap();
    writeln!(s, "# classes: {}", pred.task.class_names().join(",")).unwrap();
    for r in &pred.records {
        let rec = JsonRecord {
            id: r.id.clone(),
            task: pred.task,
            probs: r.probs.clone(),
        };
        s.push_str(&serde_json::to_string(&rec).expect("serializable"));
        s.push('\n');
    }
    s
}

pub fn predictions_from_jsonl(content: &str, source: &str) -> Result<RunPrediction, EvalError> {
    let mut run = None;
    let mut task = None;
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let err = |reason: String| EvalError::Parse {
            path: source.to_string(),
            line: i + 1,
            reason,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(name) = comment.trim().strip_prefix("run:") {
                run = Some(name.trim().to_string());
            }
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        match task {
            None => task = Some(rec.task),
            Some(t) if t != rec.task => return Err(err(format!("task {} after {t}", rec.task))),
            _ => {}
        }
        records.push(PredictionRecord {
            id: rec.id,
            probs: rec.probs,
        });
    }
    let task = task.ok_or_else(|| EvalError::Parse {
        path: source.to_string(),
        line: 0,
        reason: "no prediction records".into(),
    })?;
    let run = run.unwrap_or_else(|| {
        Path::new(source)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    RunPrediction::new(run, task, records)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_predictions(pred: &RunPrediction, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    std::fs::write(path, predictions_to_jsonl(pred)).map_err(io_err(path))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<RunPrediction, EvalError> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(io_err(path))?;
    predictions_from_jsonl(&content, &path.display().to_string())
}

/// Submission table: `test_case, id, label` with canonical label strings.
pub fn submission_to_tsv(pred: &RunPrediction) -> String {
    let names = pred.task.class_names();
    let mut s = String::from("test_case\tid\tlabel\n");
    for (id, label) in pred.hard_labels() {
        writeln!(s, "{TEST_CASE}\t{}\t{}", escape_field(&id), names[label]).unwrap();
    }
    s
}

pub fn write_submission(pred: &RunPrediction, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    std::fs::write(path, submission_to_tsv(pred)).map_err(io_err(path))
}

/// Parse a submission back into hard labels.
pub fn submission_from_tsv(content: &str, task: Task, source: &str) -> Result<Vec<(String, usize)>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let err = |reason: String| EvalError::Parse {
            path: source.to_string(),
            line: i + 1,
            reason,
        };
        if i == 0 && line.starts_with("test_case\t") {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 3 {
            return Err(err(format!("expected 3 columns, found {}", cells.len())));
        }
        let label = task
            .class_index(cells[2])
            .ok_or_else(|| err(format!("unknown {task} label {:?}", cells[2])))?;
        out.push((unescape_field(cells[1]), label));
    }
    Ok(out)
}

pub fn read_submission(path: impl AsRef<Path>, task: Task) -> Result<Vec<(String, usize)>, EvalError> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(io_err(path))?;
    submission_from_tsv(&content, task, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Language, Post, Provenance, Source, Task1Label};

    fn run(name: &str, task: Task, vecs: &[&[f64]]) -> RunPrediction {
        let records = vecs
            .iter()
            .enumerate()
            .map(|(i, p)| PredictionRecord {
                id: i.to_string(),
                probs: p.to_vec(),
            })
            .collect();
        RunPrediction::new(name, task, records).unwrap()
    }

    fn binary_truth(labels: &[Task1Label]) -> LabeledDataset {
        let posts = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Post::new(i.to_string(), Source::Twitter, Language::En, "t", Some(l), None, Provenance::Original).unwrap())
            .collect();
        LabeledDataset::new("truth", posts).unwrap()
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn fuse_hand_sum() {
        let a = run("a", Task::Task1, &[&[0.6, 0.4]]);
        let b = run("b", Task::Task1, &[&[0.3, 0.7]]);
        let f = late_fuse(&[a, b]).unwrap();
        let p = &f.records()[0].probs;
        assert!((p[0] - 0.45).abs() < 1e-15 && (p[1] - 0.55).abs() < 1e-15);
        assert_eq!(f.hard_labels()[0].1, 1);
        assert_eq!(f.run(), "fused(a+b)");
    }

    #[test]
    fn fuse_majority_vote_of_one_hots() {
        let one_hot = |c: usize| {
            let mut v = [0.0; 6];
            v[c] = 1.0;
            v
        };
        let (x, y) = (one_hot(2), one_hot(4));
        let runs = [
            run("r1", Task::Task2, &[&x]),
            run("r2", Task::Task2, &[&y]),
            run("r3", Task::Task2, &[&x]),
        ];
        assert_eq!(late_fuse(&runs).unwrap().hard_labels()[0].1, 2);
    }

    #[test]
    fn fuse_errors() {
        let a = run("a", Task::Task1, &[&[0.6, 0.4]]);
        assert!(matches!(late_fuse(std::slice::from_ref(&a)), Err(EvalError::TooFewRuns(1))));
        let b = run("b", Task::Task1, &[&[0.6, 0.4], &[0.5, 0.5]]);
        match late_fuse(&[a.clone(), b]) {
            Err(EvalError::IdMismatch(d)) => assert_eq!(d, ["1"]),
            other => panic!("{other:?}"),
        }
        let c = run("c", Task::Task2, &[&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]]);
        assert!(matches!(late_fuse(&[a, c]), Err(EvalError::TaskMismatch(..))));
    }

    #[test]
    fn invalid_vectors_rejected() {
        let bad = |p: Vec<f64>| RunPrediction::new("r", Task::Task1, vec![PredictionRecord { id: "x".into(), probs: p }]);
        assert!(bad(vec![0.5, 0.6]).is_err());
        assert!(bad(vec![1.2, -0.2]).is_err());
        assert!(bad(vec![1.0]).is_err());
        assert!(bad(vec![0.5, 0.5]).is_ok());
        let dup = RunPrediction::new(
            "r",
            Task::Task1,
            vec![
                PredictionRecord { id: "x".into(), probs: vec![1.0, 0.0] },
                PredictionRecord { id: "x".into(), probs: vec![1.0, 0.0] },
            ],
        );
        assert!(matches!(dup, Err(EvalError::DuplicateId(_))));
    }

    #[test]
    fn hand_computed_reports() {
        // truth [A,A,B,B], pred [A,B,B,B]
        let r = score_labels(&[0, 0, 1, 1], &[0, 1, 1, 1], Task::Task1).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class[1].f1 - 0.8).abs() < 1e-15);
        assert!((r.macro_f1 - 0.733_333_333_333_333_3).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![1, 1], vec![0, 2]]);

        let r = score_labels(&[0, 0, 1, 1], &[0, 0, 0, 0], Task::Task1).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].precision, 0.0);

        let r = score_labels(&[0, 1, 1, 0], &[0, 1, 1, 0], Task::Task1).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn macro_f1_counts_absent_classes() {
        // perfect on the two classes present, four absent classes score 0
        let r = score_labels(&[0, 5], &[0, 5], Task::Task2).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!((r.macro_f1 - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_against_dataset() {
        use Task1Label::*;
        let truth = binary_truth(&[Sexist, Sexist, NonSexist, NonSexist]);
        let pred = run("r", Task::Task1, &[&[0.9, 0.1], &[0.2, 0.8], &[0.4, 0.6], &[0.5, 0.5]]);
        // ties resolve to index 0 (sexist)
        let r = evaluate(Predictions::Probs(&pred), &truth, Task::Task1).unwrap();
        assert_eq!(r.accuracy, 0.5);
        let hard = vec![("0".to_string(), 0), ("9".to_string(), 1)];
        assert!(matches!(
            evaluate(Predictions::Hard(&hard), &truth, Task::Task1),
            Err(EvalError::MissingTruth(id)) if id == "9"
        ));
    }

    #[test]
    fn task2_run_scored_as_task1() {
        use Task1Label::*;
        let truth = binary_truth(&[Sexist, NonSexist]);
        let pred = run(
            "r",
            Task::Task2,
            &[&[0.1, 0.2, 0.1, 0.1, 0.1, 0.4], &[0.1, 0.1, 0.1, 0.1, 0.0, 0.6]],
        );
        let r = evaluate(Predictions::Probs(&pred), &truth, Task::Task1).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let pred = run("mbert", Task::Task2, &[&[0.1, 0.2, 0.3, 0.1, 0.1, 0.2]]);
        let text = predictions_to_jsonl(&pred);
        assert!(text.starts_with("# run: mbert\n# classes: ideological-inequality,objectification,"));
        assert_eq!(predictions_from_jsonl(&text, "x.jsonl").unwrap(), pred);
    }

    #[test]
    fn submission_rows() {
        let pred = run("r", Task::Task1, &[&[0.9, 0.1], &[0.2, 0.8]]);
        let tsv = submission_to_tsv(&pred);
        assert_eq!(tsv, "test_case\tid\tlabel\nEXIST2021\t0\tsexist\nEXIST2021\t1\tnon-sexist\n");
        assert_eq!(submission_from_tsv(&tsv, Task::Task1, "s").unwrap(), pred.hard_labels());

        let pred = run("r", Task::Task2, &[&[0.9, 0.1, 0.0, 0.0, 0.0, 0.0]]);
        assert!(submission_to_tsv(&pred).contains("\tideological-inequality\n"));
        assert!(submission_from_tsv("EXIST2021\t1\tsexism\n", Task::Task1, "s").is_err());
    }

    #[test]
    fn report_table_mentions_every_class() {
        let r = score_labels(&[0, 1, 2], &[0, 1, 1], Task::Task2).unwrap();
        let t = r.to_table();
        for name in Task::Task2.class_names() {
            assert!(t.contains(name));
        }
        assert!(t.contains("macro-f1"));
    }
}
