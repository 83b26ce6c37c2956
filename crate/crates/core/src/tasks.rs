//! Corpus representation, ingestion, splitting, and synthetic generation.
//!
//! A [`Corpus`] holds tokenized documents with per-task binary labels and an
//! event id used for micro-averaged metrics. The synthetic generator plants
//! inter-task relatedness by sharing a controllable number of signal-vocabulary
//! terms between task pairs, which downstream stages try to recover from
//! attribution overlap.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Train/test membership of a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split value '{other}'"))),
        }
    }
}

/// One task (label) of the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub name: String,
}

/// A tokenized document with its positive-task label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    /// Grouping key for micro-averaged metrics.
    pub event_id: String,
    /// Ordered, lowercased terms.
    pub tokens: Vec<String>,
    /// Task ids for which this document is positive.
    pub labels: BTreeSet<String>,
}

impl Document {
    /// Unique terms of the document in first-occurrence order.
    pub fn unique_terms(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in &self.tokens {
            if seen.insert(t.as_str()) {
                out.push(t.as_str());
            }
        }
        out
    }

    pub fn is_positive_for(&self, task: &str) -> bool {
        self.labels.contains(task)
    }
}

/// An immutable collection of tasks, documents, vocabulary, and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub tasks: Vec<TaskSpec>,
    pub documents: Vec<Document>,
    /// All terms in first-occurrence (or generation) order.
    pub vocabulary: Vec<String>,
    /// Document id → split. Defaults to all-train until a split is applied.
    pub split: BTreeMap<String, Split>,
    #[serde(skip)]
    term_index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from parts, validating the structural invariants:
    /// at least two tasks with unique ids, unique document ids, non-empty
    /// token lists, and labels restricted to declared tasks. The vocabulary
    /// is derived from the documents in first-occurrence order.
    pub fn new(tasks: Vec<TaskSpec>, documents: Vec<Document>) -> Result<Self> {
        if tasks.len() < 2 {
            return Err(Error::validation(format!(
                "corpus requires at least 2 tasks, got {}",
                tasks.len()
            )));
        }
        let mut task_ids = HashSet::new();
        for t in &tasks {
            if !task_ids.insert(t.id.clone()) {
                return Err(Error::validation(format!("duplicate task id '{}'", t.id)));
            }
        }
        let mut doc_ids = HashSet::new();
        let mut vocabulary = Vec::new();
        let mut term_index = HashMap::new();
        for d in &documents {
            if !doc_ids.insert(d.id.clone()) {
                return Err(Error::validation(format!("duplicate document id '{}'", d.id)));
            }
            if d.tokens.is_empty() {
                return Err(Error::validation(format!("document '{}' has no tokens", d.id)));
            }
            for label in &d.labels {
                if !task_ids.contains(label) {
                    return Err(Error::validation(format!(
                        "document '{}' labeled with undeclared task '{label}'",
                        d.id
                    )));
                }
            }
            for tok in &d.tokens {
                if !term_index.contains_key(tok) {
                    term_index.insert(tok.clone(), vocabulary.len());
                    vocabulary.push(tok.clone());
                }
            }
        }
        let split = documents
            .iter()
            .map(|d| (d.id.clone(), Split::Train))
            .collect();
        Ok(Corpus {
            tasks,
            documents,
            vocabulary,
            split,
            term_index,
        })
    }

    /// Same as [`Corpus::new`] but keeps an explicitly provided vocabulary
    /// (a superset of the document terms, in a fixed order).
    pub fn with_vocabulary(
        tasks: Vec<TaskSpec>,
        documents: Vec<Document>,
        vocabulary: Vec<String>,
    ) -> Result<Self> {
        let mut corpus = Corpus::new(tasks, documents)?;
        let term_index: HashMap<String, usize> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if term_index.len() != vocabulary.len() {
            return Err(Error::validation("vocabulary contains duplicate terms".into()));
        }
        for d in &corpus.documents {
            for tok in &d.tokens {
                if !term_index.contains_key(tok) {
                    return Err(Error::validation(format!(
                        "token '{tok}' of document '{}' missing from provided vocabulary",
                        d.id
                    )));
                }
            }
        }
        corpus.vocabulary = vocabulary;
        corpus.term_index = term_index;
        Ok(corpus)
    }

    /// Restores the term index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.term_index = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn term_id(&self, term: &str) -> Option<usize> {
        self.term_index.get(term).copied()
    }

    pub fn task_ids(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.id.as_str()).collect()
    }

    pub fn has_task(&self, id: &str) -> bool {
        self.tasks.iter().any(|t| t.id == id)
    }

    pub fn doc_split(&self, doc_id: &str) -> Split {
        self.split.get(doc_id).copied().unwrap_or(Split::Train)
    }

    /// Documents in the given split, ordered by id.
    pub fn docs_in_split(&self, split: Split) -> Vec<&Document> {
        let mut docs: Vec<&Document> = self
            .documents
            .iter()
            .filter(|d| self.doc_split(&d.id) == split)
            .collect();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        docs
    }

    /// Applies a split assignment and validates that it is a partition with
    /// at least one positive train and test document per task.
    pub fn apply_split(&mut self, split: BTreeMap<String, Split>) -> Result<()> {
        for id in split.keys() {
            if !self.documents.iter().any(|d| &d.id == id) {
                return Err(Error::validation(format!("split references unknown doc '{id}'")));
            }
        }
        for d in &self.documents {
            if !split.contains_key(&d.id) {
                return Err(Error::validation(format!("split missing document '{}'", d.id)));
            }
        }
        let old = std::mem::replace(&mut self.split, split);
        if let Err(e) = self.validate_split() {
            self.split = old;
            return Err(e);
        }
        Ok(())
    }

    /// Checks the per-task positives invariant of the current split.
    pub fn validate_split(&self) -> Result<()> {
        for task in &self.tasks {
            for side in [Split::Train, Split::Test] {
                let n = self
                    .documents
                    .iter()
                    .filter(|d| d.is_positive_for(&task.id) && self.doc_split(&d.id) == side)
                    .count();
                if n == 0 {
                    return Err(Error::validation(format!(
                        "task '{}' has no positive document in the {side} split",
                        task.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Lowercases a raw token and strips leading/trailing punctuation.
/// Returns `None` when nothing alphanumeric remains.
pub fn normalize_token(raw: &str) -> Option<String> {
    let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

/// Whitespace tokenization with lowercasing and punctuation stripping.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(normalize_token).collect()
}

/// Documents of the given split that are positive for **every** task in
/// `tasks`, ordered by document id. An empty intersection is an empty list,
/// not an error.
pub fn positive_documents<'c>(
    corpus: &'c Corpus,
    tasks: &BTreeSet<String>,
    split: Split,
) -> Result<Vec<&'c Document>> {
    if tasks.is_empty() {
        return Err(Error::validation("positive_documents requires a non-empty task set".into()));
    }
    for t in tasks {
        if !corpus.has_task(t) {
            return Err(Error::validation(format!("unknown task id '{t}'")));
        }
    }
    let mut docs: Vec<&Document> = corpus
        .documents
        .iter()
        .filter(|d| corpus.doc_split(&d.id) == split && tasks.iter().all(|t| d.is_positive_for(t)))
        .collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(docs)
}

// ---------------------------------------------------------------------------
// JSONL corpus file and CSV split file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    tasks: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DocLine {
    id: String,
    event: String,
    tokens: Vec<String>,
    labels: Vec<String>,
}

/// Loads a corpus from JSONL: a header line `{"tasks": [...]}` followed by
/// one document object per line. Tokens are normalized (lowercased, outer
/// punctuation stripped); the vocabulary is built in first-occurrence order.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header: HeaderLine = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("bad header: {e}"),
            })?
        }
        None => return Err(Error::validation("empty corpus file (at least 2 tasks required)".into())),
    };

    let tasks: Vec<TaskSpec> = header
        .tasks
        .iter()
        .map(|id| TaskSpec {
            id: id.clone(),
            name: id.clone(),
        })
        .collect();

    let mut documents = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: DocLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let tokens: Vec<String> = raw.tokens.iter().filter_map(|t| normalize_token(t)).collect();
        if tokens.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("document '{}' has no usable tokens", raw.id),
            });
        }
        documents.push(Document {
            id: raw.id,
            event_id: raw.event,
            tokens,
            labels: raw.labels.into_iter().collect(),
        });
    }

    Corpus::new(tasks, documents)
}

/// Writes the corpus in the JSONL format read by [`load_corpus`].
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = HeaderLine {
        tasks: corpus.tasks.iter().map(|t| t.id.clone()).collect(),
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    for d in &corpus.documents {
        let raw = DocLine {
            id: d.id.clone(),
            event: d.event_id.clone(),
            tokens: d.tokens.clone(),
            labels: d.labels.iter().cloned().collect(),
        };
        let line = serde_json::to_string(&raw).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `doc_id,split` CSV and applies it to the corpus.
pub fn load_split(corpus: &mut Corpus, path: &Path) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut assignment = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 && line.trim() == "doc_id,split" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (doc_id, split) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: "expected 'doc_id,split'".into(),
        })?;
        assignment.insert(doc_id.trim().to_string(), split.trim().parse()?);
    }
    corpus.apply_split(assignment)
}

/// Writes the corpus split as a `doc_id,split` CSV (header included),
/// rows ordered by document id.
pub fn save_split(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "doc_id,split").map_err(|e| Error::io(path, e))?;
    for (id, split) in &corpus.split {
        writeln!(w, "{id},{split}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

/// Configuration of the synthetic corpus generator.
///
/// For every task pair `(s, t)`, `floor(overlap_matrix[s][t] * vocab_task_size)`
/// signal terms are shared between the two tasks' signal vocabularies, and
/// shared blocks of distinct pairs are disjoint. That makes the pairwise
/// intersection sizes exact, at the price of a feasibility constraint: the
/// per-task sum of shared block sizes must not exceed `vocab_task_size`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_tasks: usize,
    /// Single-positive documents generated per task.
    pub docs_per_task: usize,
    /// Documents positive for no task, drawn from core vocabulary only.
    pub negative_docs: usize,
    pub vocab_core_size: usize,
    pub vocab_task_size: usize,
    /// Symmetric, unit-diagonal matrix in [0,1]: fraction of task-specific
    /// signal vocabulary shared between each task pair.
    pub overlap_matrix: Vec<Vec<f64>>,
    pub doc_length: usize,
    /// Fraction of a positive document's tokens drawn from its signal
    /// vocabulary; the rest come from the core vocabulary.
    pub signal_fraction: f64,
    /// Scales the number of dual-positive documents per pair:
    /// `floor(docs_per_task * dual_fraction * overlap)` documents positive for
    /// both tasks of the pair.
    pub dual_fraction: f64,
    /// Per-(document, task) probability of flipping label membership.
    pub label_noise: f64,
    /// Size of the rotating event-id pool.
    pub n_events: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks < 2 {
            return Err(Error::validation("synthetic config needs n_tasks >= 2".into()));
        }
        if self.docs_per_task == 0 || self.doc_length == 0 {
            return Err(Error::validation("docs_per_task and doc_length must be positive".into()));
        }
        if self.vocab_core_size == 0 || self.vocab_task_size == 0 {
            return Err(Error::validation("vocabulary sizes must be positive".into()));
        }
        if self.n_events == 0 {
            return Err(Error::validation("n_events must be positive".into()));
        }
        for p in [self.signal_fraction, self.dual_fraction, self.label_noise] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("probability {p} outside [0,1]")));
            }
        }
        let m = &self.overlap_matrix;
        if m.len() != self.n_tasks || m.iter().any(|row| row.len() != self.n_tasks) {
            return Err(Error::validation(format!(
                "overlap_matrix must be {n}x{n}",
                n = self.n_tasks
            )));
        }
        for i in 0..self.n_tasks {
            if (m[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::validation("overlap_matrix diagonal must be 1.0".into()));
            }
            for j in 0..self.n_tasks {
                if !(0.0..=1.0).contains(&m[i][j]) {
                    return Err(Error::validation("overlap_matrix entries must lie in [0,1]".into()));
                }
                if (m[i][j] - m[j][i]).abs() > 1e-12 {
                    return Err(Error::validation("overlap_matrix must be symmetric".into()));
                }
            }
        }
        // Disjoint shared blocks must fit inside each task's signal vocabulary.
        for s in 0..self.n_tasks {
            let shared: usize = (0..self.n_tasks)
                .filter(|&t| t != s)
                .map(|t| self.block_size(s, t))
                .sum();
            if shared > self.vocab_task_size {
                return Err(Error::validation(format!(
                    "vocabulary sizes inconsistent with overlaps: task {s} needs {shared} shared \
                     signal terms but vocab_task_size is {}",
                    self.vocab_task_size
                )));
            }
        }
        Ok(())
    }

    fn block_size(&self, s: usize, t: usize) -> usize {
        (self.overlap_matrix[s][t] * self.vocab_task_size as f64).floor() as usize
    }

    /// Builds a symmetric overlap matrix from a circular-distance band
    /// profile: `band[0]` is the overlap of adjacent tasks, `band[1]` of
    /// tasks two apart, and so on; unlisted distances get 0.
    pub fn banded_overlap(n_tasks: usize, band: &[f64]) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n_tasks]; n_tasks];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                if i == j {
                    *cell = 1.0;
                } else {
                    let d = (i as i64 - j as i64).unsigned_abs() as usize;
                    let d = d.min(n_tasks - d);
                    if d >= 1 && d <= band.len() {
                        *cell = band[d - 1];
                    }
                }
            }
        }
        m
    }
}

/// Per-task signal vocabularies generated alongside a synthetic corpus.
#[derive(Debug, Clone)]
pub struct SignalVocabularies {
    /// One term set per task, aligned with task order.
    pub per_task: Vec<BTreeSet<String>>,
}

/// Generates a synthetic corpus; deterministic in `config.seed`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Corpus> {
    generate_synthetic_with_vocabs(config).map(|(c, _)| c)
}

/// Like [`generate_synthetic`] but also returns the planted per-task signal
/// vocabularies, which tests use as a ground-truth oracle.
pub fn generate_synthetic_with_vocabs(
    config: &SyntheticConfig,
) -> Result<(Corpus, SignalVocabularies)> {
    config.validate()?;
    let n = config.n_tasks;
    let k = config.vocab_task_size;

    let core: Vec<String> = (0..config.vocab_core_size)
        .map(|i| format!("core{i:05}"))
        .collect();

    // Shared blocks first (pair order), then per-task private terms.
    let mut sig_counter = 0usize;
    let mut fresh_sig = |count: usize| -> Vec<String> {
        let terms = (sig_counter..sig_counter + count)
            .map(|i| format!("sig{i:05}"))
            .collect();
        sig_counter += count;
        terms
    };

    let mut signal: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n];
    for s in 0..n {
        for t in (s + 1)..n {
            let b = config.block_size(s, t);
            if b > 0 {
                let block = fresh_sig(b);
                for term in &block {
                    signal[s].insert(term.clone());
                    signal[t].insert(term.clone());
                }
            }
        }
    }
    for sig in signal.iter_mut() {
        let missing = k - sig.len();
        for term in fresh_sig(missing) {
            sig.insert(term);
        }
    }

    let mut vocabulary = core.clone();
    vocabulary.extend((0..sig_counter).map(|i| format!("sig{i:05}")));

    let tasks: Vec<TaskSpec> = (0..n)
        .map(|i| TaskSpec {
            id: format!("t{i:02}"),
            name: format!("synthetic-{i:02}"),
        })
        .collect();

    // Indexable signal pools in deterministic order.
    let pools: Vec<Vec<&String>> = signal.iter().map(|s| s.iter().collect()).collect();

    let mut rng = seed::rng(config.seed, "synthetic-corpus");
    let mut documents = Vec::new();
    let mut doc_counter = 0usize;
    let next_doc_id = |counter: &mut usize| {
        let id = format!("d{:05}", *counter);
        *counter += 1;
        id
    };

    let gen_tokens = |rng: &mut rand_chacha::ChaCha8Rng, signal_pool: &[&String]| {
        (0..config.doc_length)
            .map(|_| {
                if !signal_pool.is_empty() && rng.gen::<f64>() < config.signal_fraction {
                    signal_pool[rng.gen_range(0..signal_pool.len())].clone()
                } else {
                    core[rng.gen_range(0..core.len())].clone()
                }
            })
            .collect::<Vec<String>>()
    };

    for (t, task) in tasks.iter().enumerate() {
        for _ in 0..config.docs_per_task {
            let tokens = gen_tokens(&mut rng, &pools[t]);
            documents.push(Document {
                id: next_doc_id(&mut doc_counter),
                event_id: String::new(),
                tokens,
                labels: BTreeSet::from([task.id.clone()]),
            });
        }
    }
    for s in 0..n {
        for t in (s + 1)..n {
            let n_dual = (config.docs_per_task as f64
                * config.dual_fraction
                * config.overlap_matrix[s][t])
                .floor() as usize;
            if n_dual == 0 {
                continue;
            }
            let joint: Vec<&String> = pools[s]
                .iter()
                .chain(pools[t].iter())
                .copied()
                .collect();
            for _ in 0..n_dual {
                let tokens = gen_tokens(&mut rng, &joint);
                documents.push(Document {
                    id: next_doc_id(&mut doc_counter),
                    event_id: String::new(),
                    tokens,
                    labels: BTreeSet::from([tasks[s].id.clone(), tasks[t].id.clone()]),
                });
            }
        }
    }
    for _ in 0..config.negative_docs {
        let tokens = gen_tokens(&mut rng, &[]);
        documents.push(Document {
            id: next_doc_id(&mut doc_counter),
            event_id: String::new(),
            tokens,
            labels: BTreeSet::new(),
        });
    }

    // Label noise: independent per (document, task) flip.
    if config.label_noise > 0.0 {
        for doc in documents.iter_mut() {
            for task in &tasks {
                if rng.gen::<f64>() < config.label_noise {
                    if doc.labels.contains(&task.id) {
                        doc.labels.remove(&task.id);
                    } else {
                        doc.labels.insert(task.id.clone());
                    }
                }
            }
        }
    }

    // Rotating event pool over generation order.
    for (i, doc) in documents.iter_mut().enumerate() {
        doc.event_id = format!("ev{:02}", i % config.n_events);
    }

    let corpus = Corpus::with_vocabulary(tasks, documents, vocabulary)?;
    Ok((corpus, SignalVocabularies { per_task: signal }))
}

// ---------------------------------------------------------------------------
// Stratified splitting
// ---------------------------------------------------------------------------

/// Returns a copy of the corpus with a deterministic stratified train/test
/// split: `round(test_fraction * N)` test documents, repaired so that every
/// task keeps at least one positive document on each side. Infeasible
/// stratification is an error naming the starved task.
pub fn split_corpus(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<Corpus> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::validation(format!(
            "test_fraction must lie in (0,1), got {test_fraction}"
        )));
    }
    for task in &corpus.tasks {
        let positives = corpus
            .documents
            .iter()
            .filter(|d| d.is_positive_for(&task.id))
            .count();
        if positives < 2 {
            return Err(Error::validation(format!(
                "task '{}' has only {positives} positive document(s); stratified split needs \
                 at least one per side",
                task.id
            )));
        }
    }

    let mut ids: Vec<&str> = corpus.documents.iter().map(|d| d.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = seed::rng(seed, "stratified-split");
    ids.shuffle(&mut rng);

    let n_test = ((corpus.documents.len() as f64) * test_fraction).round() as usize;
    let n_test = n_test.clamp(1, corpus.documents.len() - 1);
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let side = if i < n_test { Split::Test } else { Split::Train };
        assignment.insert((*id).to_string(), side);
    }

    repair_split(corpus, &mut assignment)?;

    let mut out = corpus.clone();
    out.apply_split(assignment)?;
    Ok(out)
}

/// Swap-based repair: fixes tasks missing a positive on one side by swapping
/// a safe pair of documents, preserving split sizes. Each swap resolves one
/// violation without creating new ones, so the loop terminates.
fn repair_split(corpus: &Corpus, assignment: &mut BTreeMap<String, Split>) -> Result<()> {
    let count_pos = |assignment: &BTreeMap<String, Split>, task: &str, side: Split| {
        corpus
            .documents
            .iter()
            .filter(|d| d.is_positive_for(task) && assignment[&d.id] == side)
            .count()
    };

    for _ in 0..corpus.tasks.len() * 2 + 4 {
        let mut violation = None;
        for task in &corpus.tasks {
            for side in [Split::Test, Split::Train] {
                if count_pos(assignment, &task.id, side) == 0 {
                    violation = Some((task.id.clone(), side));
                    break;
                }
            }
            if violation.is_some() {
                break;
            }
        }
        let Some((task, starved_side)) = violation else {
            return Ok(());
        };
        let donor_side = match starved_side {
            Split::Test => Split::Train,
            Split::Train => Split::Test,
        };

        // A positive of the starved task that can leave the donor side
        // without starving any of its other tasks there.
        let mut sorted_docs: Vec<&Document> = corpus.documents.iter().collect();
        sorted_docs.sort_by(|a, b| a.id.cmp(&b.id));
        let candidate = sorted_docs.iter().find(|d| {
            d.is_positive_for(&task)
                && assignment[&d.id] == donor_side
                && d.labels
                    .iter()
                    .all(|u| count_pos(assignment, u, donor_side) >= 2)
        });
        let Some(candidate) = candidate else {
            return Err(Error::validation(format!(
                "stratified split infeasible: task '{task}' cannot obtain a positive document \
                 in the {starved_side} split"
            )));
        };
        // A counterweight moving the other way; prefer unlabeled documents.
        let counter = sorted_docs
            .iter()
            .filter(|d| {
                d.id != candidate.id
                    && assignment[&d.id] == starved_side
                    && d.labels
                        .iter()
                        .all(|u| count_pos(assignment, u, starved_side) >= 2)
            })
            .min_by_key(|d| (d.labels.len(), d.id.clone()));
        let Some(counter) = counter else {
            return Err(Error::validation(format!(
                "stratified split infeasible: no document can be moved out of the \
                 {starved_side} split to make room for a positive of task '{task}'"
            )));
        };
        assignment.insert(candidate.id.clone(), starved_side);
        assignment.insert(counter.id.clone(), donor_side);
    }
    Err(Error::validation(
        "stratified split did not converge; task positives are too entangled".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn doc(id: &str, tokens: &[&str], labels: &[&str]) -> Document {
        Document {
            id: id.into(),
            event_id: "ev00".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn two_task_corpus() -> Corpus {
        let tasks = vec![
            TaskSpec { id: "a".into(), name: "a".into() },
            TaskSpec { id: "b".into(), name: "b".into() },
        ];
        let docs = vec![
            doc("d1", &["x", "y"], &["a"]),
            doc("d2", &["y"], &["b"]),
            doc("d3", &["z", "x"], &["a", "b"]),
            doc("d4", &["w"], &["b"]),
        ];
        Corpus::new(tasks, docs).unwrap()
    }

    fn tmp(name: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        (dir, path)
    }

    #[test]
    fn vocabulary_first_occurrence_order() {
        let c = two_task_corpus();
        assert_eq!(c.vocabulary, vec!["x", "y", "z", "w"]);
        assert_eq!(c.term_id("z"), Some(2));
    }

    #[test]
    fn corpus_rejects_undeclared_label() {
        let tasks = vec![
            TaskSpec { id: "t1".into(), name: "t1".into() },
            TaskSpec { id: "t2".into(), name: "t2".into() },
        ];
        let docs = vec![doc("d1", &["x"], &["t9"])];
        let err = Corpus::new(tasks, docs).unwrap_err();
        assert!(err.to_string().contains("t9"));
    }

    #[test]
    fn corpus_rejects_duplicate_doc_id() {
        let tasks = vec![
            TaskSpec { id: "t1".into(), name: "t1".into() },
            TaskSpec { id: "t2".into(), name: "t2".into() },
        ];
        let docs = vec![doc("d1", &["x"], &[]), doc("d1", &["y"], &[])];
        assert!(Corpus::new(tasks, docs).is_err());
    }

    #[test]
    fn load_corpus_roundtrip() {
        let (_dir, path) = tmp("corpus.jsonl");
        let c = two_task_corpus();
        save_corpus(&c, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded.tasks.len(), 2);
        assert_eq!(loaded.documents.len(), 4);
        assert_eq!(loaded.documents, c.documents);
    }

    #[test]
    fn load_corpus_rejects_empty_file() {
        let (_dir, path) = tmp("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_corpus(&path).is_err());
    }

    #[test]
    fn load_corpus_names_bad_line() {
        let (_dir, path) = tmp("bad.jsonl");
        std::fs::write(
            &path,
            "{\"tasks\":[\"a\",\"b\"]}\n{\"id\":\"d1\",\"event\":\"e\",\"tokens\":[\"x\"],\"labels\":[]}\nnot json\n",
        )
        .unwrap();
        match load_corpus(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn positive_documents_filters_and_intersects() {
        let c = two_task_corpus();
        let only = |ids: &[&str]| -> BTreeSet<String> { ids.iter().map(|s| s.to_string()).collect() };
        let a = positive_documents(&c, &only(&["a"]), Split::Train).unwrap();
        assert_eq!(a.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), vec!["d1", "d3"]);
        let ab = positive_documents(&c, &only(&["a", "b"]), Split::Train).unwrap();
        assert_eq!(ab.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), vec!["d3"]);
        assert!(positive_documents(&c, &only(&["zz"]), Split::Train).is_err());
        assert!(positive_documents(&c, &BTreeSet::new(), Split::Train).is_err());
    }

    #[test]
    fn positive_documents_empty_intersection_is_ok() {
        let tasks = vec![
            TaskSpec { id: "a".into(), name: "a".into() },
            TaskSpec { id: "b".into(), name: "b".into() },
        ];
        let docs = vec![doc("d1", &["x"], &["a"]), doc("d2", &["y"], &["b"])];
        let c = Corpus::new(tasks, docs).unwrap();
        let set: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        assert!(positive_documents(&c, &set, Split::Train).unwrap().is_empty());
    }

    fn small_synth_config(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_tasks: 4,
            docs_per_task: 12,
            negative_docs: 10,
            vocab_core_size: 40,
            vocab_task_size: 10,
            overlap_matrix: SyntheticConfig::banded_overlap(4, &[0.4, 0.2]),
            doc_length: 8,
            signal_fraction: 0.5,
            dual_fraction: 0.3,
            label_noise: 0.02,
            n_events: 3,
            seed,
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = small_synth_config(99);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn synthetic_overlap_counts_are_exact() {
        let cfg = small_synth_config(5);
        let (_, vocabs) = generate_synthetic_with_vocabs(&cfg).unwrap();
        for s in 0..cfg.n_tasks {
            assert_eq!(vocabs.per_task[s].len(), cfg.vocab_task_size);
            for t in 0..cfg.n_tasks {
                if s == t {
                    continue;
                }
                let expected =
                    (cfg.overlap_matrix[s][t] * cfg.vocab_task_size as f64).floor() as usize;
                let got = vocabs.per_task[s].intersection(&vocabs.per_task[t]).count();
                assert_eq!(got, expected, "pair ({s},{t})");
            }
        }
    }

    #[test]
    fn synthetic_full_overlap_means_equal_vocabularies() {
        let mut cfg = small_synth_config(1);
        cfg.n_tasks = 2;
        cfg.overlap_matrix = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let (_, vocabs) = generate_synthetic_with_vocabs(&cfg).unwrap();
        assert_eq!(vocabs.per_task[0], vocabs.per_task[1]);
    }

    #[test]
    fn synthetic_zero_overlap_means_disjoint() {
        let mut cfg = small_synth_config(1);
        cfg.n_tasks = 2;
        cfg.overlap_matrix = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (_, vocabs) = generate_synthetic_with_vocabs(&cfg).unwrap();
        assert_eq!(vocabs.per_task[0].intersection(&vocabs.per_task[1]).count(), 0);
    }

    #[test]
    fn synthetic_rejects_infeasible_overlaps() {
        let mut cfg = small_synth_config(1);
        // Three tasks pairwise sharing 60% each: 1.2 * K needed per task.
        cfg.n_tasks = 3;
        cfg.overlap_matrix = vec![
            vec![1.0, 0.6, 0.6],
            vec![0.6, 1.0, 0.6],
            vec![0.6, 0.6, 1.0],
        ];
        let err = generate_synthetic(&cfg).unwrap_err();
        assert!(err.to_string().contains("inconsistent with overlaps"));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let mut cfg = small_synth_config(3);
        cfg.docs_per_task = 25;
        cfg.label_noise = 0.0;
        let corpus = generate_synthetic(&cfg).unwrap();
        let n = corpus.documents.len();
        let split = split_corpus(&corpus, 0.2, 7).unwrap();
        let test_n = split
            .documents
            .iter()
            .filter(|d| split.doc_split(&d.id) == Split::Test)
            .count();
        let expected = (n as f64 * 0.2).round() as usize;
        assert!(
            (test_n as i64 - expected as i64).abs() <= 1,
            "test size {test_n} vs expected {expected}"
        );
        split.validate_split().unwrap();

        let again = split_corpus(&corpus, 0.2, 7).unwrap();
        assert_eq!(split.split, again.split);
    }

    #[test]
    fn split_rejects_single_positive_task() {
        let tasks = vec![
            TaskSpec { id: "a".into(), name: "a".into() },
            TaskSpec { id: "b".into(), name: "b".into() },
        ];
        let docs = vec![
            doc("d1", &["x"], &["a"]),
            doc("d2", &["y"], &["a"]),
            doc("d3", &["z"], &["b"]),
            doc("d4", &["w"], &[]),
        ];
        let c = Corpus::new(tasks, docs).unwrap();
        let err = split_corpus(&c, 0.5, 1).unwrap_err();
        assert!(err.to_string().contains("'b'"), "{err}");
    }

    #[test]
    fn split_file_roundtrip() {
        let cfg = small_synth_config(11);
        let corpus = generate_synthetic(&cfg).unwrap();
        let split = split_corpus(&corpus, 0.3, 2).unwrap();
        let (_dir, path) = tmp("split.csv");
        save_split(&split, &path).unwrap();
        let mut reloaded = corpus.clone();
        load_split(&mut reloaded, &path).unwrap();
        assert_eq!(reloaded.split, split.split);
    }

    #[test]
    fn tokenize_normalizes() {
        assert_eq!(tokenize("Hello, World!  foo-bar"), vec!["hello", "world", "foo-bar"]);
        assert_eq!(normalize_token("..."), None);
        assert_eq!(normalize_token("It's"), Some("it's".into()));
    }
}
