//! Articles, span annotations and cross-validation folds.

mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::seed;
use crate::technique::{Technique, NUM_TECHNIQUES};

pub use synth::{generate_synthetic, LabelRule, SyntheticConfig, SyntheticCorpus};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse article id from file name {0:?}")]
    BadFilename(String),
    #[error("duplicate article id {0}")]
    DuplicateId(u64),
    #[error("article {0} is empty")]
    EmptyArticle(u64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown technique {name:?}")]
    UnknownTechnique { line: usize, name: String },
    #[error("line {line}: span [{start}, {end}) out of range for article {article_id} of length {len}")]
    OffsetRange { line: usize, article_id: u64, start: usize, end: usize, len: usize },
    #[error("line {line}: unknown article {article_id}")]
    UnknownArticle { line: usize, article_id: u64 },
    #[error("cannot build {k} folds from {articles} article(s)")]
    TooFewArticles { k: usize, articles: usize },
    #[error("invalid synthetic corpus config: {0}")]
    Synthetic(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: u64,
    pub text: String,
}

impl Article {
    pub fn new(id: u64, text: impl Into<String>) -> Self {
        Article { id, text: text.into() }
    }

    /// Length in characters (Unicode scalar values).
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Text of the half-open character range `[start, end)`.
    pub fn slice_chars(&self, start: usize, end: usize) -> String {
        self.text.chars().skip(start).take(end.saturating_sub(start)).collect()
    }
}

/// A span with its gold labels. `labels` keeps one entry per annotation
/// row (sorted), so a span annotated twice with the same technique has
/// that technique twice.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub article_id: u64,
    pub start: usize,
    pub end: usize,
    pub labels: Vec<Technique>,
}

impl SpanAnnotation {
    pub fn new(article_id: u64, start: usize, end: usize, mut labels: Vec<Technique>) -> Self {
        labels.sort();
        SpanAnnotation { article_id, start, end, labels }
    }

    /// Number of labels the span must receive.
    pub fn known_count(&self) -> usize {
        self.labels.len()
    }

    pub fn distinct_labels(&self) -> BTreeSet<Technique> {
        self.labels.iter().copied().collect()
    }

    pub fn key(&self) -> (u64, usize, usize) {
        (self.article_id, self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Official,
    Synthetic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    articles: Vec<Article>,
    annotations: Vec<SpanAnnotation>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset, sorting articles by id and annotations by
    /// (article, start, end).
    pub fn new(mut articles: Vec<Article>, mut annotations: Vec<SpanAnnotation>, provenance: Provenance) -> Self {
        articles.sort_by_key(|a| a.id);
        annotations.sort_by(|a, b| a.key().cmp(&b.key()).then_with(|| a.labels.cmp(&b.labels)));
        Dataset { articles, annotations, provenance }
    }

    pub fn load(articles_dir: &Path, labels: &Path) -> Result<Self, CorpusError> {
        let articles = load_articles(articles_dir)?;
        let annotations = load_annotations(labels, &articles)?;
        Ok(Dataset::new(articles, annotations, Provenance::Official))
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn annotations(&self) -> &[SpanAnnotation] {
        &self.annotations
    }

    pub fn article(&self, id: u64) -> Option<&Article> {
        self.articles.binary_search_by_key(&id, |a| a.id).ok().map(|i| &self.articles[i])
    }

    /// Annotations of one article, in (start, end) order.
    pub fn annotations_for(&self, article_id: u64) -> &[SpanAnnotation] {
        let lo = self.annotations.partition_point(|a| a.article_id < article_id);
        let hi = self.annotations.partition_point(|a| a.article_id <= article_id);
        &self.annotations[lo..hi]
    }

    /// Total number of (span, label) rows.
    pub fn label_rows(&self) -> usize {
        self.annotations.iter().map(|a| a.labels.len()).sum()
    }

    pub fn subset(&self, ids: &BTreeSet<u64>) -> Dataset {
        Dataset {
            articles: self.articles.iter().filter(|a| ids.contains(&a.id)).cloned().collect(),
            annotations: self.annotations.iter().filter(|a| ids.contains(&a.article_id)).cloned().collect(),
            provenance: self.provenance,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

fn parse_article_filename(name: &str) -> Option<u64> {
    let stem = name.strip_prefix("article")?;
    let dot = stem.rfind('.')?;
    if !stem[dot + 1..].eq_ignore_ascii_case("txt") {
        return None;
    }
    let digits = &stem[..dot];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Reads every `article<id>.txt` in `dir`. Text is kept verbatim.
pub fn load_articles(dir: &Path) -> Result<Vec<Article>, CorpusError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let id = parse_article_filename(&name).ok_or_else(|| CorpusError::BadFilename(name.clone()))?;
        files.push((id, path));
    }
    files.sort();
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CorpusError::DuplicateId(w[0].0));
    }
    let loaded = par::map(&files, Execution::default(), |_, (id, path)| {
        fs::read_to_string(path).map_err(io_err(path)).and_then(|text| {
            if text.is_empty() {
                Err(CorpusError::EmptyArticle(*id))
            } else {
                Ok(Article { id: *id, text })
            }
        })
    });
    loaded.into_iter().collect()
}

/// Parses label TSV rows (`article_id \t technique \t start \t end`).
/// Rows with identical offsets merge into one span. When `articles` is
/// given, article ids and offsets are range-checked against it.
pub fn parse_annotations(text: &str, articles: Option<&[Article]>) -> Result<Vec<SpanAnnotation>, CorpusError> {
    let lengths: Option<BTreeMap<u64, usize>> = articles.map(|a| a.iter().map(|a| (a.id, a.char_len())).collect());
    let mut merged: BTreeMap<(u64, usize, usize), Vec<Technique>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let int = |s: &str, what: &str| -> Result<usize, CorpusError> {
            s.trim().parse().map_err(|_| CorpusError::Parse {
                line: line_no,
                message: format!("{what} {s:?} is not a non-negative integer"),
            })
        };
        let article_id = int(fields[0], "article id")? as u64;
        let technique = Technique::from_name(fields[1].trim())
            .ok_or_else(|| CorpusError::UnknownTechnique { line: line_no, name: fields[1].to_string() })?;
        let start = int(fields[2], "start")?;
        let end = int(fields[3], "end")?;
        let len = match &lengths {
            Some(l) => Some(*l.get(&article_id).ok_or(CorpusError::UnknownArticle { line: line_no, article_id })?),
            None => None,
        };
        if start >= end || len.is_some_and(|len| end > len) {
            return Err(CorpusError::OffsetRange {
                line: line_no,
                article_id,
                start,
                end,
                len: len.unwrap_or(usize::MAX),
            });
        }
        merged.entry((article_id, start, end)).or_default().push(technique);
    }
    Ok(merged.into_iter().map(|((a, s, e), labels)| SpanAnnotation::new(a, s, e, labels)).collect())
}

pub fn load_annotations(path: &Path, articles: &[Article]) -> Result<Vec<SpanAnnotation>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_annotations(&text, Some(articles))
}

/// Label TSV rows without range checks, for prediction files.
pub fn read_label_file(path: &Path) -> Result<Vec<SpanAnnotation>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_annotations(&text, None)
}

/// Per-technique counts over (span, label) rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable(pub [usize; NUM_TECHNIQUES]);

impl FrequencyTable {
    pub fn get(&self, t: Technique) -> usize {
        self.0[t.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

pub fn compute_frequency_table(dataset: &Dataset) -> FrequencyTable {
    let mut counts = [0; NUM_TECHNIQUES];
    for label in dataset.annotations().iter().flat_map(|a| &a.labels) {
        counts[label.index()] += 1;
    }
    FrequencyTable(counts)
}

/// Least frequent technique of a non-empty label set; ties go to the
/// lexicographically smaller official name.
pub fn rarer_label(labels: &[Technique], freq: &FrequencyTable) -> Technique {
    *labels
        .iter()
        .min_by(|a, b| freq.get(**a).cmp(&freq.get(**b)).then_with(|| a.name().cmp(b.name())))
        .expect("label set is non-empty")
}

#[derive(Clone, Debug)]
pub struct Split {
    pub fold: usize,
    pub train: Dataset,
    pub eval: Dataset,
}

/// Article-level k-fold partition after a seeded shuffle. Group sizes
/// differ by at most one; fold i evaluates group i.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Split>, CorpusError> {
    let n = dataset.articles().len();
    if k < 2 || k > n {
        return Err(CorpusError::TooFewArticles { k, articles: n });
    }
    let mut ids: Vec<u64> = dataset.articles().iter().map(|a| a.id).collect();
    ids.shuffle(&mut seed::rng(seed));
    let (base, extra) = (n / k, n % k);
    let mut groups = Vec::with_capacity(k);
    let mut offset = 0;
    for g in 0..k {
        let size = base + usize::from(g < extra);
        groups.push(ids[offset..offset + size].iter().copied().collect::<BTreeSet<u64>>());
        offset += size;
    }
    Ok((0..k)
        .map(|fold| {
            let train_ids: BTreeSet<u64> =
                groups.iter().enumerate().filter(|(g, _)| *g != fold).flat_map(|(_, s)| s.iter().copied()).collect();
            Split { fold, train: dataset.subset(&train_ids), eval: dataset.subset(&groups[fold]) }
        })
        .collect())
}
