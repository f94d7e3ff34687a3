//! Posts, label taxonomy and datasets.
//!
//! Datasets are read from and written to tab-separated files. Two layouts are
//! understood:
//!
//! * `exist`: `test_case, id, source, language, text[, task1, task2]`, the
//!   layout of the shared-task distribution files.
//! * `generic`: a header naming `id`, `language` and `text` plus any of
//!   `source`, `task1`, `task2`, `provenance`. Missing `source` and
//!   `provenance` default to `external`, which is how HatEval- or MeTwo-style
//!   corpora are brought in as unlabeled pre-training text.
//!
//! Text cells escape `\\`, tab, newline and carriage return as `\\\\`, `\t`,
//! `\n` and `\r`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Value written to the `test_case` column of exist-schema files.
pub const TEST_CASE: &str = "EXIST2021";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("header does not match the {schema} schema: {detail}")]
    Header { schema: Schema, detail: String },
    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: unknown {field} value {value:?}")]
    UnknownValue {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("row {row}: {source}")]
    InvalidRow { row: usize, source: Box<CorpusError> },
    #[error("post {id:?}: text is empty")]
    EmptyText { id: String },
    #[error("post {id:?}: task1={task1} contradicts task2={task2}")]
    InconsistentLabels {
        id: String,
        task1: Task1Label,
        task2: Task2Label,
    },
    #[error("duplicate post id {0:?}")]
    DuplicateId(String),
    #[error("duplicate post ids across datasets: {0:?}")]
    Collisions(Vec<String>),
    #[error("invalid probability vector: {0}")]
    Probabilities(String),
    #[error("cannot split: {0}")]
    Split(String),
    #[error("merge needs at least one dataset")]
    EmptyMerge,
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(other.to_string()),
                }
            }
        }
    };
}

string_enum!(
    /// Where a post was published.
    Source { Twitter => "twitter", Gab => "gab", External => "external" }
);

string_enum!(Language { En => "en", Es => "es" });

string_enum!(
    /// Origin of a post inside a dataset.
    Provenance { Original => "original", Translated => "translated", External => "external" }
);

string_enum!(
    /// Binary sexism identification label. Index order: sexist, non-sexist.
    Task1Label { Sexist => "sexist", NonSexist => "non-sexist" }
);

string_enum!(
    /// Six-way sexism categorization label, in canonical class order.
    Task2Label {
        IdeologicalInequality => "ideological-inequality",
        Objectification => "objectification",
        StereotypingDominance => "stereotyping-dominance",
        MisogynyNonSexualViolence => "misogyny-non-sexual-violence",
        SexualViolence => "sexual-violence",
        NonSexist => "non-sexist",
    }
);

impl Language {
    pub fn other(self) -> Language {
        match self {
            Language::En => Language::Es,
            Language::Es => Language::En,
        }
    }
}

impl Task1Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl Task2Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Which classification problem a label, head or prediction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Task1,
    Task2,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Task1 => Task1Label::ALL.len(),
            Task::Task2 => Task2Label::ALL.len(),
        }
    }

    /// Canonical class names, index-aligned with probability vectors.
    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            Task::Task1 => Task1Label::ALL.iter().map(|l| l.as_str()).collect(),
            Task::Task2 => Task2Label::ALL.iter().map(|l| l.as_str()).collect(),
        }
    }

    pub fn class_index(self, name: &str) -> Option<usize> {
        self.class_names().iter().position(|n| *n == name)
    }

    pub fn from_n_classes(n: usize) -> Option<Task> {
        match n {
            2 => Some(Task::Task1),
            6 => Some(Task::Task2),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Task1 => "task1",
            Task::Task2 => "task2",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task1" | "1" => Ok(Task::Task1),
            "task2" | "2" => Ok(Task::Task2),
            other => Err(format!("unknown task {other:?} (expected task1 or task2)")),
        }
    }
}

/// Binary label implied by a categorization label.
pub fn derive_task1(label: Task2Label) -> Task1Label {
    match label {
        Task2Label::NonSexist => Task1Label::NonSexist,
        _ => Task1Label::Sexist,
    }
}

/// Collapse a six-way probability vector into `[P(sexist), P(non-sexist)]`.
pub fn derive_task1_probs(p: &[f64]) -> Result<[f64; 2], CorpusError> {
    if p.len() != Task2Label::ALL.len() {
        return Err(CorpusError::Probabilities(format!(
            "expected {} entries, got {}",
            Task2Label::ALL.len(),
            p.len()
        )));
    }
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(CorpusError::Probabilities(format!("entry {x} is not a probability")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(CorpusError::Probabilities(format!("entries sum to {total}")));
    }
    let non_sexist = p[Task2Label::NonSexist.index()];
    let sexist = p
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != Task2Label::NonSexist.index())
        .map(|(_, x)| x)
        .sum();
    Ok([sexist, non_sexist])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub source: Source,
    pub language: Language,
    pub text: String,
    pub task1: Option<Task1Label>,
    pub task2: Option<Task2Label>,
    pub provenance: Provenance,
}

impl Post {
    /// Build a post, checking the text and label invariants.
    pub fn new(
        id: impl Into<String>,
        source: Source,
        language: Language,
        text: impl Into<String>,
        task1: Option<Task1Label>,
        task2: Option<Task2Label>,
        provenance: Provenance,
    ) -> Result<Self, CorpusError> {
        let post = Post {
            id: id.into(),
            source,
            language,
            text: text.into(),
            task1,
            task2,
            provenance,
        };
        post.validate()?;
        Ok(post)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.text.trim().is_empty() {
            return Err(CorpusError::EmptyText {
                id: self.id.clone(),
            });
        }
        if let (Some(t1), Some(t2)) = (self.task1, self.task2) {
            if derive_task1(t2) != t1 {
                return Err(CorpusError::InconsistentLabels {
                    id: self.id.clone(),
                    task1: t1,
                    task2: t2,
                });
            }
        }
        Ok(())
    }

    /// Binary label, falling back to the one implied by `task2`.
    pub fn task1_label(&self) -> Option<Task1Label> {
        self.task1.or_else(|| self.task2.map(derive_task1))
    }

    /// Class index for `task`, if the post carries a label for it.
    pub fn label_index(&self, task: Task) -> Option<usize> {
        match task {
            Task::Task1 => self.task1_label().map(Task1Label::index),
            Task::Task2 => self.task2.map(Task2Label::index),
        }
    }
}

/// Ordered, id-unique collection of posts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    name: String,
    posts: Vec<Post>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, posts: Vec<Post>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(posts.len());
        for p in &posts {
            p.validate()?;
            if !seen.insert(p.id.as_str()) {
                return Err(CorpusError::DuplicateId(p.id.clone()));
            }
        }
        Ok(LabeledDataset {
            name: name.into(),
            posts,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        LabeledDataset {
            name: name.into(),
            posts: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Post> {
        self.posts.iter()
    }

    pub fn into_posts(self) -> Vec<Post> {
        self.posts
    }

    pub fn get(&self, id: &str) -> Option<&Post> {
        self.posts.iter().find(|p| p.id == id)
    }

    /// Id → post lookup table.
    pub fn index(&self) -> HashMap<&str, &Post> {
        self.posts.iter().map(|p| (p.id.as_str(), p)).collect()
    }

    pub fn language_counts(&self) -> BTreeMap<Language, usize> {
        let mut counts = BTreeMap::new();
        for p in &self.posts {
            *counts.entry(p.language).or_default() += 1;
        }
        counts
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl<'a> IntoIterator for &'a LabeledDataset {
    type Item = &'a Post;
    type IntoIter = std::slice::Iter<'a, Post>;

    fn into_iter(self) -> Self::IntoIter {
        self.posts.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Exist,
    Generic,
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::Exist => "exist",
            Schema::Generic => "generic",
        })
    }
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exist" => Ok(Schema::Exist),
            "generic" => Ok(Schema::Generic),
            other => Err(format!("unknown schema {other:?} (expected exist or generic)")),
        }
    }
}

const EXIST_COLUMNS: [&str; 7] = ["test_case", "id", "source", "language", "text", "task1", "task2"];
const GENERIC_COLUMNS: [&str; 7] = ["id", "source", "language", "text", "task1", "task2", "provenance"];

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn parse_value<T: FromStr>(row: usize, field: &'static str, raw: &str) -> Result<T, CorpusError> {
    raw.parse().map_err(|_| CorpusError::UnknownValue {
        row,
        field,
        value: raw.to_string(),
    })
}

fn parse_optional<T: FromStr>(
    row: usize,
    field: &'static str,
    raw: Option<&str>,
) -> Result<Option<T>, CorpusError> {
    match raw {
        None | Some("") => Ok(None),
        Some(v) => parse_value(row, field, v).map(Some),
    }
}

/// Column positions resolved from a header row.
struct Layout {
    width: usize,
    id: usize,
    source: Option<usize>,
    language: usize,
    text: usize,
    task1: Option<usize>,
    task2: Option<usize>,
    provenance: Option<usize>,
}

fn resolve_layout(schema: Schema, header: &[&str]) -> Result<Layout, CorpusError> {
    let bad = |detail: String| CorpusError::Header { schema, detail };
    match schema {
        Schema::Exist => {
            let ok = header == &EXIST_COLUMNS[..5] || header == EXIST_COLUMNS;
            if !ok {
                return Err(bad(format!(
                    "expected {:?} (task columns optional), found {:?}",
                    EXIST_COLUMNS, header
                )));
            }
            let labeled = header.len() == EXIST_COLUMNS.len();
            Ok(Layout {
                width: header.len(),
                id: 1,
                source: Some(2),
                language: 3,
                text: 4,
                task1: labeled.then_some(5),
                task2: labeled.then_some(6),
                provenance: None,
            })
        }
        Schema::Generic => {
            let mut seen = HashSet::new();
            for col in header {
                if !GENERIC_COLUMNS.contains(col) {
                    return Err(bad(format!("unknown column {col:?}")));
                }
                if !seen.insert(*col) {
                    return Err(bad(format!("column {col:?} appears twice")));
                }
            }
            let find = |name: &str| header.iter().position(|c| *c == name);
            let required = |name: &str| find(name).ok_or_else(|| bad(format!("missing column {name:?}")));
            Ok(Layout {
                width: header.len(),
                id: required("id")?,
                source: find("source"),
                language: required("language")?,
                text: required("text")?,
                task1: find("task1"),
                task2: find("task2"),
                provenance: find("provenance"),
            })
        }
    }
}

/// Parse TSV content. `name` becomes the dataset name.
pub fn parse_tsv(content: &str, schema: Schema, name: &str) -> Result<LabeledDataset, CorpusError> {
    let mut lines = content.lines();
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.trim_start_matches('\u{feff}').split('\t').collect(),
        None => {
            return Err(CorpusError::Header {
                schema,
                detail: "file is empty".into(),
            })
        }
    };
    let layout = resolve_layout(schema, &header)?;
    let default_prov = match schema {
        Schema::Exist => Provenance::Original,
        Schema::Generic => Provenance::External,
    };

    let mut posts = Vec::new();
    for (i, line) in lines.enumerate() {
        // header is row 1
        let row = i + 2;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != layout.width {
            return Err(CorpusError::ColumnCount {
                row,
                expected: layout.width,
                found: cells.len(),
            });
        }
        let source = match layout.source {
            Some(c) => parse_value(row, "source", cells[c])?,
            None => Source::External,
        };
        let provenance = match layout.provenance {
            Some(c) => parse_value(row, "provenance", cells[c])?,
            None => default_prov,
        };
        let post = Post::new(
            unescape_field(cells[layout.id]),
            source,
            parse_value(row, "language", cells[layout.language])?,
            unescape_field(cells[layout.text]),
            parse_optional(row, "task1", layout.task1.map(|c| cells[c]))?,
            parse_optional(row, "task2", layout.task2.map(|c| cells[c]))?,
            provenance,
        )
        .map_err(|e| CorpusError::InvalidRow {
            row,
            source: Box::new(e),
        })?;
        posts.push(post);
    }
    LabeledDataset::new(name, posts)
}

/// Load a dataset from a TSV file; the dataset is named after the file stem.
pub fn load_tsv(path: impl AsRef<Path>, schema: Schema) -> Result<LabeledDataset, CorpusError> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_tsv(&content, schema, &name)
}

fn opt_str<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Canonical TSV serialization. The exist schema cannot carry provenance.
pub fn to_tsv(ds: &LabeledDataset, schema: Schema) -> String {
    let mut out = String::new();
    match schema {
        Schema::Exist => {
            out.push_str(&EXIST_COLUMNS.join("\t"));
            out.push('\n');
            for p in ds {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    TEST_CASE,
                    escape_field(&p.id),
                    p.source,
                    p.language,
                    escape_field(&p.text),
                    opt_str(p.task1),
                    opt_str(p.task2)
                ));
            }
        }
        Schema::Generic => {
            out.push_str(&GENERIC_COLUMNS.join("\t"));
            out.push('\n');
            for p in ds {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    escape_field(&p.id),
                    p.source,
                    p.language,
                    escape_field(&p.text),
                    opt_str(p.task1),
                    opt_str(p.task2),
                    p.provenance
                ));
            }
        }
    }
    out
}

pub fn write_tsv(ds: &LabeledDataset, schema: Schema, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    std::fs::write(path, to_tsv(ds, schema)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Stratification key: task2 label, else task1 label, else unlabeled.
fn strata_key(p: &Post) -> (u8, usize) {
    match (p.task2, p.task1) {
        (Some(t2), _) => (0, t2.index()),
        (None, Some(t1)) => (1, t1.index()),
        (None, None) => (2, 0),
    }
}

/// Random train/validation partition with `round(val_fraction * n)` validation posts.
///
/// Both halves keep the input order. With `stratified`, the validation quota
/// is distributed over label strata by largest remainder, so every stratum is
/// within one post of its proportional share.
pub fn split(
    ds: &LabeledDataset,
    val_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(LabeledDataset, LabeledDataset), CorpusError> {
    if ds.is_empty() {
        return Err(CorpusError::Split("dataset is empty".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(CorpusError::Split(format!(
            "val_fraction {val_fraction} is outside (0, 1)"
        )));
    }
    let n = ds.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(CorpusError::Split(format!(
            "val_fraction {val_fraction} of {n} posts leaves an empty partition"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_val = vec![false; n];
    if stratified {
        let mut strata: BTreeMap<(u8, usize), Vec<usize>> = BTreeMap::new();
        for (i, p) in ds.iter().enumerate() {
            strata.entry(strata_key(p)).or_default().push(i);
        }
        // largest-remainder apportionment of n_val over strata
        let exact: Vec<f64> = strata
            .values()
            .map(|m| m.len() as f64 * n_val as f64 / n as f64)
            .collect();
        let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - quota[a] as f64;
            let rb = exact[b] - quota[b] as f64;
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let mut remaining = n_val - quota.iter().sum::<usize>();
        for &s in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            if quota[s] < strata.values().nth(s).unwrap().len() {
                quota[s] += 1;
                remaining -= 1;
            }
        }
        for (members, q) in strata.values().zip(quota) {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            for &i in &members[..q] {
                in_val[i] = true;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..n_val] {
            in_val[i] = true;
        }
    }

    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (p, v) in ds.iter().zip(in_val) {
        if v {
            val.push(p.clone());
        } else {
            train.push(p.clone());
        }
    }
    Ok((
        LabeledDataset {
            name: format!("{}.train", ds.name),
            posts: train,
        },
        LabeledDataset {
            name: format!("{}.val", ds.name),
            posts: val,
        },
    ))
}

/// Concatenate datasets in order.
///
/// Ids occurring more than once are an error, unless `rename_collisions` is
/// set, in which case every occurrence of a colliding id is prefixed with its
/// dataset name (`"A:7"`).
pub fn merge(datasets: &[LabeledDataset], rename_collisions: bool) -> Result<LabeledDataset, CorpusError> {
    if datasets.is_empty() {
        return Err(CorpusError::EmptyMerge);
    }
    if datasets.len() == 1 {
        return Ok(datasets[0].clone());
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in datasets.iter().flat_map(|d| d.iter()) {
        *counts.entry(p.id.as_str()).or_default() += 1;
    }
    let mut colliding: Vec<String> = counts
        .iter()
        .filter(|(_, c)| **c > 1)
        .map(|(id, _)| id.to_string())
        .collect();
    colliding.sort();
    if !colliding.is_empty() && !rename_collisions {
        return Err(CorpusError::Collisions(colliding));
    }
    let colliding: HashSet<String> = colliding.into_iter().collect();

    let mut posts = Vec::with_capacity(datasets.iter().map(|d| d.len()).sum());
    for d in datasets {
        for p in d {
            let mut p = p.clone();
            if colliding.contains(&p.id) {
                p.id = format!("{}:{}", d.name, p.id);
            }
            posts.push(p);
        }
    }
    let name = datasets
        .iter()
        .map(|d| d.name.as_str())
        .collect::<Vec<_>>()
        .join("+");
    LabeledDataset::new(name, posts).map_err(|e| match e {
        CorpusError::DuplicateId(id) => CorpusError::Collisions(vec![id]),
        e => e,
    })
}
