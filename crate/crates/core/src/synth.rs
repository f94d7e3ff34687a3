//! Seeded generators for the bundled offline fixtures.
//!
//! * [`labeled_corpus`]: bilingual posts in which every category has its own
//!   keywords, mixed with shared filler words and social-media noise.
//! * [`separable_set`]: a small binary set where one keyword decides the
//!   label.
//! * [`mock_dictionary`]: the `en<TAB>es` word list covering every word the
//!   generators emit.
//! * [`golden_preprocess_lines`]: noisy one-line texts for checking the
//!   normalization pipelines.
//!
//! Output depends only on the seed. `cargo run -p exist-core --example
//! gen_fixtures -- <dir>` writes the files under `fixtures/`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{derive_task1, to_tsv, Language, LabeledDataset, Post, Provenance, Schema, Source, Task, Task1Label, Task2Label};
use crate::evalfuse::{predictions_to_jsonl, PredictionRecord, RunPrediction};

pub const DEFAULT_SEED: u64 = 2021;

fn keywords(label: Task2Label) -> &'static [(&'static str, &'static str)] {
    match label {
        Task2Label::IdeologicalInequality => &[
            ("feminism", "feminismo"),
            ("equality", "igualdad"),
            ("quotas", "cuotas"),
            ("wage", "salario"),
            ("rights", "derechos"),
        ],
        Task2Label::StereotypingDominance => &[
            ("emotional", "emocionales"),
            ("weak", "debiles"),
            ("hysterical", "histericas"),
            ("drive", "conducir"),
            ("kitchen", "cocina"),
        ],
        Task2Label::Objectification => &[
            ("body", "cuerpo"),
            ("legs", "piernas"),
            ("hot", "buenorra"),
            ("dress", "vestido"),
            ("curves", "curvas"),
        ],
        Task2Label::SexualViolence => &[
            ("grope", "manosear"),
            ("harass", "acosar"),
            ("assault", "agredir"),
            ("stalk", "perseguir"),
            ("force", "forzar"),
        ],
        Task2Label::MisogynyNonSexualViolence => &[
            ("hate", "odio"),
            ("stupid", "estupidas"),
            ("slap", "bofetada"),
            ("disgusting", "asquerosas"),
            ("shut", "callar"),
        ],
        Task2Label::NonSexist => &[
            ("weather", "tiempo"),
            ("football", "futbol"),
            ("coffee", "cafe"),
            ("music", "musica"),
            ("movie", "pelicula"),
        ],
    }
}

const FILLER: &[(&str, &str)] = &[
    ("the", "la"),
    ("she", "ella"),
    ("women", "mujeres"),
    ("girls", "chicas"),
    ("they", "ellas"),
    ("always", "siempre"),
    ("today", "hoy"),
    ("really", "realmente"),
    ("about", "sobre"),
    ("said", "dijo"),
    ("my", "mi"),
    ("friend", "amiga"),
    ("this", "esto"),
    ("is", "es"),
    ("all", "todo"),
    ("so", "tan"),
    ("again", "otra"),
    ("people", "gente"),
    ("think", "piensan"),
    ("new", "nueva"),
];

const NOISE: &[&str] = &["#EXIST", "#news", "@user", "@maria_g", "https://t.co/x1", "www.example.com", "!!", "?", "..."];

fn pick<'a, R: Rng>(rng: &mut R, pairs: &'a [(&'a str, &'a str)], lang: Language) -> &'a str {
    let (en, es) = pairs[rng.gen_range(0..pairs.len())];
    match lang {
        Language::En => en,
        Language::Es => es,
    }
}

fn sentence<R: Rng>(rng: &mut R, lang: Language, class: Task2Label) -> String {
    let mut words: Vec<String> = Vec::new();
    for _ in 0..rng.gen_range(1..=2) {
        words.push(pick(rng, keywords(class), lang).to_string());
    }
    for _ in 0..rng.gen_range(4..=8) {
        words.push(pick(rng, FILLER, lang).to_string());
    }
    words.shuffle(rng);
    if rng.gen_bool(0.5) {
        let noise = NOISE[rng.gen_range(0..NOISE.len())];
        let at = rng.gen_range(0..=words.len());
        words.insert(at, noise.to_string());
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        if rng.gen_bool(0.5) {
            s = first.to_uppercase() + &s[1..];
        }
    }
    s
}

fn make_post(i: usize, id: String, lang: Language, text: String, task2: Option<Task2Label>, task1: Option<Task1Label>) -> Post {
    let source = if i % 3 == 2 { Source::Gab } else { Source::Twitter };
    Post::new(id, source, lang, text, task1, task2, Provenance::Original).expect("generated post is valid")
}

/// 200 labeled posts, half English and half Spanish; half non-sexist, the
/// other half spread evenly over the five sexist categories.
pub fn labeled_corpus(seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<Task2Label> = vec![Task2Label::NonSexist; 100];
    classes.extend((0..100).map(|i| Task2Label::ALL[i % 5]));
    classes.shuffle(&mut rng);
    let posts = classes
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let lang = if i % 2 == 0 { Language::En } else { Language::Es };
            let text = sentence(&mut rng, lang, c);
            make_post(i, format!("syn-{i:03}"), lang, text, Some(c), Some(derive_task1(c)))
        })
        .collect();
    LabeledDataset::new("synthetic", posts).expect("unique ids")
}

/// 50 binary posts: sexist ones contain a sexist keyword, the others only
/// neutral vocabulary.
pub fn separable_set(seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e9a);
    let posts = (0..50)
        .map(|i| {
            let lang = if i % 3 == 0 { Language::Es } else { Language::En };
            let sexist = i % 2 == 0;
            let class = if sexist { Task2Label::ALL[rng.gen_range(0..5)] } else { Task2Label::NonSexist };
            let text = sentence(&mut rng, lang, class);
            let label = if sexist { Task1Label::Sexist } else { Task1Label::NonSexist };
            make_post(i, format!("sep-{i:02}"), lang, text, None, Some(label))
        })
        .collect();
    LabeledDataset::new("separable", posts).expect("unique ids")
}

/// `en<TAB>es` lines for every keyword and filler word.
pub fn mock_dictionary() -> String {
    let mut s = String::from("# en\tes\n");
    for (en, es) in Task2Label::ALL.iter().flat_map(|&l| keywords(l)).chain(FILLER) {
        s.push_str(en);
        s.push('\t');
        s.push_str(es);
        s.push('\n');
    }
    s
}

const GOLDEN_FRAGMENTS: &[&str] = &[
    "hola", "niña", "Árbol", "café", "über", "straße", "women", "SEXISM", "stop", "now", "ñandú", "çà", "x", "y",
    "#tag", "#MeToo", "#niñas", "#8M", "#_", "#", "##double", "@user", "@maría", "@", "@@x", "a@b", "x#y",
    "http://t.co/abc", "https://ex.com/a?b=1", "HTTP://UP.PER", "www.site.es/p", "WWW.X.Y", "wwwnot", "https:/half",
    "www#x.y", "www@u.z", "ht#q tp", "http:#z//", "#a#b", "@a@b", "#x@y", "1,000", "42", "3.14", "¡Qué!", "¿sí?",
    "...", "!!", "\u{2014}", "“quoted”", "(paren)", "[br]", "{c}", "a-b", "it's", "e.g.", "😀", "🇪🇸", "中文", "العربية", "\t",
    "  ", "\u{00a0}", "\u{2003}", "\u{3000}", "e\u{0301}", "n\u{0303}", "ﬁ", "Ⅻ", "²", "٣", "_under_",
];

/// 500 lines of fragment soup: accents, emoji, scripts, hashtags, mentions,
/// links, digits, punctuation and odd whitespace, including adjacent tokens
/// that only form a match after a neighbour is removed.
pub fn golden_preprocess_lines(seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x901d);
    (0..500)
        .map(|_| {
            let n = rng.gen_range(1..=9);
            let mut line = String::new();
            for _ in 0..n {
                line.push_str(GOLDEN_FRAGMENTS[rng.gen_range(0..GOLDEN_FRAGMENTS.len())]);
                match rng.gen_range(0..4) {
                    0 => {}
                    1 | 2 => line.push(' '),
                    _ => line.push_str("  "),
                }
            }
            line
        })
        .collect()
}

/// Four binary posts with truth `[sexist, sexist, non-sexist, non-sexist]`
/// and a run predicting `[sexist, non-sexist, non-sexist, non-sexist]`.
pub fn eval_fixture() -> (LabeledDataset, RunPrediction) {
    let truth = [Task1Label::Sexist, Task1Label::Sexist, Task1Label::NonSexist, Task1Label::NonSexist];
    let posts = truth
        .iter()
        .enumerate()
        .map(|(i, &l)| make_post(i, format!("ev-{i}"), Language::En, format!("post {i}"), None, Some(l)))
        .collect();
    let probs = [[0.9, 0.1], [0.4, 0.6], [0.2, 0.8], [0.3, 0.7]];
    let records = probs
        .iter()
        .enumerate()
        .map(|(i, p)| PredictionRecord {
            id: format!("ev-{i}"),
            probs: p.to_vec(),
        })
        .collect();
    let ds = LabeledDataset::new("eval_truth", posts).expect("unique ids");
    let run = RunPrediction::new("fixture", Task::Task1, records).expect("valid probabilities");
    (ds, run)
}

/// File name and content of every generated fixture.
pub fn fixture_files(seed: u64) -> Vec<(&'static str, String)> {
    let mut golden = golden_preprocess_lines(seed).join("\n");
    golden.push('\n');
    let (truth, pred) = eval_fixture();
    vec![
        ("synthetic_corpus.tsv", to_tsv(&labeled_corpus(seed), Schema::Generic)),
        ("separable.tsv", to_tsv(&separable_set(seed), Schema::Generic)),
        ("mock_dict.tsv", mock_dictionary()),
        ("golden_preprocess.txt", golden),
        ("eval_truth.tsv", to_tsv(&truth, Schema::Generic)),
        ("eval_pred.jsonl", predictions_to_jsonl(&pred)),
    ]
}
