//! Translation-based augmentation: every post gets a copy in the other
//! language, produced by a pluggable [`TranslationProvider`].

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{escape_field, merge, unescape_field, CorpusError, Language, LabeledDataset, Post, Provenance};

/// Environment variable holding the remote provider's API key.
pub const KEY_ENV_VAR: &str = "EXIST_TRANSLATE_KEY";
/// Suffix appended to the id of a translated post.
pub const TRANSLATED_SUFFIX: &str = ":tr";

const CACHE_HEADER: &str = "# exist translation cache v1: direction, sha256(text), translation";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("{path}:{line}: {reason}")]
    Dictionary { path: String, line: usize, reason: String },
    #[error("{path}:{line}: malformed cache entry")]
    Cache { path: String, line: usize },
    #[error("translation request failed: {0}")]
    Provider(String),
    #[error("provider returned an empty translation")]
    EmptyTranslation,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AugmentError + '_ {
    move |source| AugmentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Something that can translate a post between English and Spanish.
pub trait TranslationProvider: Send + Sync {
    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, AugmentError>;
}

impl<T: TranslationProvider + ?Sized> TranslationProvider for &T {
    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, AugmentError> {
        (**self).translate(text, source, target)
    }
}

impl<T: TranslationProvider + ?Sized> TranslationProvider for Box<T> {
    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, AugmentError> {
        (**self).translate(text, source, target)
    }
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{Alphabetic}\p{N}_']+").unwrap())
}

/// Offline word-for-word translator backed by an `en<TAB>es` dictionary.
///
/// Lookups are case-insensitive; a capitalized source word yields a
/// capitalized translation. Unknown words and everything between words
/// pass through unchanged.
#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    en_es: HashMap<String, String>,
    es_en: HashMap<String, String>,
}

impl MockProvider {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut m = MockProvider::default();
        for (en, es) in pairs {
            let (en, es) = (en.to_lowercase(), es.to_lowercase());
            m.es_en.entry(es.clone()).or_insert_with(|| en.clone());
            m.en_es.entry(en).or_insert(es);
        }
        m
    }

    pub fn parse(content: &str, source: &str) -> Result<Self, AugmentError> {
        let mut pairs = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| AugmentError::Dictionary {
                path: source.to_string(),
                line: i + 1,
                reason: reason.to_string(),
            };
            let (en, es) = line.split_once('\t').ok_or_else(|| bad("expected en<TAB>es"))?;
            let (en, es) = (en.trim(), es.trim());
            if en.is_empty() || es.is_empty() || es.contains('\t') {
                return Err(bad("expected two non-empty columns"));
            }
            pairs.push((en, es));
        }
        Ok(MockProvider::from_pairs(pairs))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(io_err(path))?;
        MockProvider::parse(&content, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.en_es.len()
    }

    pub fn is_empty(&self) -> bool {
        self.en_es.is_empty()
    }
}

fn match_case(src: &str, word: &str) -> String {
    let mut chars = src.chars();
    match chars.next() {
        Some(c) if c.is_uppercase() => {
            let mut out: String = word.chars().next().into_iter().flat_map(char::to_uppercase).collect();
            out.extend(word.chars().skip(1));
            out
        }
        _ => word.to_string(),
    }
}

impl TranslationProvider for MockProvider {
    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, AugmentError> {
        let map = match (source, target) {
            (Language::En, Language::Es) => &self.en_es,
            (Language::Es, Language::En) => &self.es_en,
            _ => return Ok(text.to_string()),
        };
        let out = word_re().replace_all(text, |c: &regex::Captures<'_>| {
            let w = &c[0];
            match map.get(&w.to_lowercase()) {
                Some(t) => match_case(w, t),
                None => w.to_string(),
            }
        });
        Ok(out.into_owned())
    }
}

fn direction(source: Language, target: Language) -> String {
    format!("{source}-{target}")
}

fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Wraps another provider with a persistent table of earlier results.
///
/// The cache file is a TSV appended to as new translations arrive, one
/// `direction, sha256-of-source-text, escaped translation` row each, so an
/// interrupted run resumes where it stopped.
pub struct CachingProvider<P> {
    inner: P,
    path: PathBuf,
    table: Mutex<HashMap<(String, String), String>>,
    file: Mutex<File>,
    calls: AtomicUsize,
}

impl<P: TranslationProvider> CachingProvider<P> {
    pub fn open(inner: P, path: impl Into<PathBuf>) -> Result<Self, AugmentError> {
        let path = path.into();
        let mut table = HashMap::new();
        let fresh = !path.exists();
        if !fresh {
            let content = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            for (i, line) in content.lines().enumerate() {
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut cells = line.split('\t');
                let (Some(dir), Some(hash), Some(text), None) = (cells.next(), cells.next(), cells.next(), cells.next()) else {
                    return Err(AugmentError::Cache {
                        path: path.display().to_string(),
                        line: i + 1,
                    });
                };
                table.insert((dir.to_string(), hash.to_string()), unescape_field(text));
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        if fresh {
            writeln!(file, "{CACHE_HEADER}").map_err(io_err(&path))?;
        }
        Ok(CachingProvider {
            inner,
            path,
            table: Mutex::new(table),
            file: Mutex::new(file),
            calls: AtomicUsize::new(0),
        })
    }

    /// Requests forwarded to the wrapped provider so far.
    pub fn inner_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cached_entries(&self) -> usize {
        self.table.lock().unwrap().len()
    }

    /// Rewrite the cache file with its entries sorted by key. Misses are
    /// appended in completion order, which varies between parallel runs.
    pub fn compact(&self) -> Result<(), AugmentError> {
        let mut file = self.file.lock().unwrap();
        let table = self.table.lock().unwrap();
        let mut rows: Vec<_> = table.iter().collect();
        rows.sort();
        let mut content = format!("{CACHE_HEADER}\n");
        for ((dir, hash), text) in rows {
            content.push_str(&format!("{dir}\t{hash}\t{}\n", escape_field(text)));
        }
        let tmp = self.path.with_extension("tmp");
        std::fs::write(&tmp, content).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
        *file = OpenOptions::new().append(true).open(&self.path).map_err(io_err(&self.path))?;
        Ok(())
    }
}

impl<P: TranslationProvider> TranslationProvider for CachingProvider<P> {
    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, AugmentError> {
        let key = (direction(source, target), text_hash(text));
        if let Some(hit) = self.table.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let out = self.inner.translate(text, source, target)?;
        let mut file = self.file.lock().unwrap();
        writeln!(file, "{}\t{}\t{}", key.0, key.1, escape_field(&out)).map_err(io_err(&self.path))?;
        self.table.lock().unwrap().insert(key, out.clone());
        Ok(out)
    }
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    text: &'a str,
    source: Language,
    target: Language,
}

#[derive(Deserialize)]
struct HttpResponse {
    text: String,
}

/// Remote translator speaking a minimal JSON protocol:
/// `POST {"text", "source", "target"}` answered by `{"text"}`. The key, if
/// any, is sent as a bearer token.
pub struct HttpProvider {
    endpoint: String,
    key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpProvider {
            endpoint: endpoint.into(),
            key,
            agent,
        }
    }

    /// Reads the key from [`KEY_ENV_VAR`].
    pub fn from_env(endpoint: impl Into<String>) -> Self {
        let key = std::env::var(KEY_ENV_VAR).ok().filter(|k| !k.is_empty());
        HttpProvider::new(endpoint, key, Duration::from_secs(30))
    }
}

impl TranslationProvider for HttpProvider {
    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, AugmentError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let provider_err = |e: ureq::Error| AugmentError::Provider(e.to_string());
        let mut resp = req
            .send_json(HttpRequest { text, source, target })
            .map_err(provider_err)?;
        let body: HttpResponse = resp.body_mut().read_json().map_err(provider_err)?;
        Ok(body.text)
    }
}

/// A post that could not be translated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedPost {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct Translated {
    pub dataset: LabeledDataset,
    pub skipped: Vec<SkippedPost>,
}

fn translate_post(post: &Post, provider: &dyn TranslationProvider) -> Result<Post, AugmentError> {
    let target = post.language.other();
    let attempt = || {
        let t = provider.translate(&post.text, post.language, target)?;
        if t.trim().is_empty() {
            return Err(AugmentError::EmptyTranslation);
        }
        Ok(t)
    };
    let text = attempt().or_else(|_| attempt())?;
    Ok(Post::new(
        format!("{}{TRANSLATED_SUFFIX}", post.id),
        post.source,
        target,
        text,
        post.task1,
        post.task2,
        Provenance::Translated,
    )?)
}

/// Translate every post into the other language.
///
/// Translated posts keep their labels and source, get the opposite language,
/// provenance `translated` and the id suffix `:tr`. A failing request is
/// retried once; posts that still fail are listed in `skipped`. Up to
/// `parallelism` requests run at a time; the output keeps input order.
pub fn translate_dataset(
    ds: &LabeledDataset,
    provider: &dyn TranslationProvider,
    parallelism: usize,
) -> Result<Translated, AugmentError> {
    let posts = ds.posts();
    let slots: Vec<OnceLock<Result<Post, AugmentError>>> = (0..posts.len()).map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    let workers = parallelism.clamp(1, posts.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(post) = posts.get(i) else { break };
                let _ = slots[i].set(translate_post(post, provider));
            });
        }
    });
    let mut out = Vec::with_capacity(posts.len());
    let mut skipped = Vec::new();
    for (post, slot) in posts.iter().zip(slots) {
        match slot.into_inner().expect("every slot filled") {
            Ok(p) => out.push(p),
            Err(e) => skipped.push(SkippedPost {
                id: post.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(Translated {
        dataset: LabeledDataset::new(format!("{}.tr", ds.name()), out)?,
        skipped,
    })
}

/// `ds` followed by its translations. Ids must not collide, so augmenting an
/// already augmented set fails instead of silently duplicating it.
pub fn with_translations(
    ds: &LabeledDataset,
    provider: &dyn TranslationProvider,
    parallelism: usize,
) -> Result<Translated, AugmentError> {
    let tr = translate_dataset(ds, provider, parallelism)?;
    let merged = merge(&[ds.clone(), tr.dataset], false)?.with_name(format!("{}+tr", ds.name()));
    Ok(Translated {
        dataset: merged,
        skipped: tr.skipped,
    })
}
