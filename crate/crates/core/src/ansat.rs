//! Average Number of Shared Active Terms over a threshold grid.
//!
//! For two models A and B, a document set D, and an activity threshold, the
//! score is the mean over D of how many of each document's unique terms are
//! attributed at or above the threshold by both models. Evaluated over the
//! positive document sets D_A, D_B, and D_AB for every ordered task pair and
//! every threshold, it becomes the pairwise feature table fed to the
//! transfer-suitability regressor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionRecord;
use crate::tasks::{positive_documents, Corpus, Document, Split};
use crate::{Error, Result};

/// The threshold grid: strictly increasing values in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TATGrid {
    pub thresholds: Vec<f64>,
}

impl Default for TATGrid {
    /// 0.05 to 0.70 in steps of 0.05 (14 thresholds).
    fn default() -> Self {
        TATGrid {
            thresholds: (1..=14).map(|i| i as f64 * 0.05).collect(),
        }
    }
}

impl TATGrid {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::validation("threshold grid is empty".into()));
        }
        for w in self.thresholds.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::validation(format!(
                    "thresholds must be strictly increasing, got {} after {}",
                    w[1], w[0]
                )));
            }
        }
        for &t in &self.thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::validation(format!(
                    "threshold {t} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// The three document sets of a task pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Docset {
    /// Test-split positives of the first task.
    DA,
    /// Test-split positives of the second task.
    DB,
    /// Test-split documents positive for both tasks.
    DAB,
}

impl Docset {
    pub const ALL: [Docset; 3] = [Docset::DA, Docset::DB, Docset::DAB];
}

impl fmt::Display for Docset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Docset::DA => write!(f, "DA"),
            Docset::DB => write!(f, "DB"),
            Docset::DAB => write!(f, "DAB"),
        }
    }
}

impl std::str::FromStr for Docset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DA" => Ok(Docset::DA),
            "DB" => Ok(Docset::DB),
            "DAB" => Ok(Docset::DAB),
            other => Err(Error::validation(format!("unknown docset tag '{other}'"))),
        }
    }
}

/// One score with its degenerate-input marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnsatScore {
    pub value: f64,
    /// True when the document set was empty; the value is then 0 by policy.
    pub empty_docset: bool,
}

/// The full grid of scores for one ordered task pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ANSATFeatures {
    pub task_a: String,
    pub task_b: String,
    /// Scores per docset, aligned with the grid's threshold order.
    pub values: BTreeMap<Docset, Vec<f64>>,
    /// Docsets that were empty for this pair.
    pub empty_docsets: BTreeSet<Docset>,
}

impl ANSATFeatures {
    /// Scores flattened in (DA grid..., DB grid..., DAB grid...) order.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for tag in Docset::ALL {
            out.extend_from_slice(&self.values[&tag]);
        }
        out
    }
}

/// Terms whose normalized score is at or above the threshold. Thresholds are
/// positive by grid construction, so negatively attributed terms never pass.
pub fn active_terms(record: &AttributionRecord, tat: f64) -> BTreeSet<&str> {
    record
        .term_scores
        .iter()
        .filter(|(_, &c)| c >= tat)
        .map(|(t, _)| t.as_str())
        .collect()
}

fn index_records(records: &[AttributionRecord]) -> BTreeMap<&str, &AttributionRecord> {
    records.iter().map(|r| (r.doc_id.as_str(), r)).collect()
}

fn ansat_indexed(
    by_id_a: &BTreeMap<&str, &AttributionRecord>,
    by_id_b: &BTreeMap<&str, &AttributionRecord>,
    docs: &[&Document],
    tat: f64,
) -> Result<AnsatScore> {
    if docs.is_empty() {
        return Ok(AnsatScore {
            value: 0.0,
            empty_docset: true,
        });
    }
    let mut total: usize = 0;
    for doc in docs {
        let rec_a = by_id_a.get(doc.id.as_str()).ok_or_else(|| {
            Error::Incomplete(format!(
                "no attribution record for doc '{}' under the first model",
                doc.id
            ))
        })?;
        let rec_b = by_id_b.get(doc.id.as_str()).ok_or_else(|| {
            Error::Incomplete(format!(
                "no attribution record for doc '{}' under the second model",
                doc.id
            ))
        })?;
        total += doc
            .unique_terms()
            .iter()
            .filter(|w| {
                rec_a.term_scores.get(**w).is_some_and(|&c| c >= tat)
                    && rec_b.term_scores.get(**w).is_some_and(|&c| c >= tat)
            })
            .count();
    }
    Ok(AnsatScore {
        value: total as f64 / docs.len() as f64,
        empty_docset: false,
    })
}

/// Mean shared-active-term count over `docs` between two models' attributions.
///
/// An empty document set scores 0 with the `empty_docset` flag raised; a
/// document without a record in either input is an error.
pub fn ansat(
    records_a: &[AttributionRecord],
    records_b: &[AttributionRecord],
    docs: &[&Document],
    tat: f64,
) -> Result<AnsatScore> {
    ansat_indexed(&index_records(records_a), &index_records(records_b), docs, tat)
}

/// Computes the full feature table for every ordered task pair, in
/// lexicographic pair order.
///
/// `cache` must hold, for every task's model, records for every test-split
/// document that is positive for at least one task; anything missing is
/// reported in one error.
pub fn feature_table(
    corpus: &Corpus,
    cache: &[AttributionRecord],
    grid: &TATGrid,
) -> Result<Vec<ANSATFeatures>> {
    grid.validate()?;
    let mut by_task: BTreeMap<&str, BTreeMap<&str, &AttributionRecord>> = BTreeMap::new();
    for r in cache {
        by_task
            .entry(r.task.as_str())
            .or_default()
            .insert(r.doc_id.as_str(), r);
    }
    let empty_index = BTreeMap::new();

    let mut task_ids: Vec<&str> = corpus.task_ids();
    task_ids.sort_unstable();

    // Resolve every pair's docsets up front and verify cache coverage in one
    // pass so the error can list everything that is missing.
    let mut missing: BTreeSet<String> = BTreeSet::new();
    let mut docsets: BTreeMap<(String, String, Docset), Vec<&Document>> = BTreeMap::new();
    for &a in &task_ids {
        for &b in &task_ids {
            if a == b {
                continue;
            }
            let set_a = positive_documents(corpus, &BTreeSet::from([a.to_string()]), Split::Test)?;
            let set_b = positive_documents(corpus, &BTreeSet::from([b.to_string()]), Split::Test)?;
            let set_ab = positive_documents(
                corpus,
                &BTreeSet::from([a.to_string(), b.to_string()]),
                Split::Test,
            )?;
            for (tag, docs) in [(Docset::DA, set_a), (Docset::DB, set_b), (Docset::DAB, set_ab)] {
                for d in &docs {
                    for model_task in [a, b] {
                        let covered = by_task
                            .get(model_task)
                            .is_some_and(|rs| rs.contains_key(d.id.as_str()));
                        if !covered {
                            missing.insert(format!("({model_task}, {})", d.id));
                        }
                    }
                }
                docsets.insert((a.to_string(), b.to_string(), tag), docs);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Incomplete(format!(
            "attribution cache is missing (model, doc) pairs: {}",
            missing.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }

    let mut out = Vec::new();
    for &a in &task_ids {
        for &b in &task_ids {
            if a == b {
                continue;
            }
            let index_a = by_task.get(a).unwrap_or(&empty_index);
            let index_b = by_task.get(b).unwrap_or(&empty_index);
            let mut values = BTreeMap::new();
            let mut empty_docsets = BTreeSet::new();
            for tag in Docset::ALL {
                let docs = &docsets[&(a.to_string(), b.to_string(), tag)];
                let mut row = Vec::with_capacity(grid.len());
                let mut empty = false;
                for &tat in &grid.thresholds {
                    let score = ansat_indexed(index_a, index_b, docs, tat)?;
                    empty = score.empty_docset;
                    row.push(score.value);
                }
                if empty {
                    empty_docsets.insert(tag);
                }
                values.insert(tag, row);
            }
            out.push(ANSATFeatures {
                task_a: a.to_string(),
                task_b: b.to_string(),
                values,
                empty_docsets,
            });
        }
    }
    Ok(out)
}

pub const FEATURE_TABLE_HEADER: &str = "task_a,task_b,docset,tat,ansat";

/// Writes the feature table as CSV with 6-decimal floats, rows in
/// lexicographic order.
pub fn write_feature_table(
    features: &[ANSATFeatures],
    grid: &TATGrid,
    path: &Path,
) -> Result<()> {
    let mut rows: Vec<(String, String, String, f64, f64)> = Vec::new();
    for f in features {
        for tag in Docset::ALL {
            for (i, &tat) in grid.thresholds.iter().enumerate() {
                rows.push((
                    f.task_a.clone(),
                    f.task_b.clone(),
                    tag.to_string(),
                    tat,
                    f.values[&tag][i],
                ));
            }
        }
    }
    rows.sort_by(|x, y| {
        (&x.0, &x.1, &x.2)
            .cmp(&(&y.0, &y.1, &y.2))
            .then(x.3.partial_cmp(&y.3).unwrap())
    });
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{FEATURE_TABLE_HEADER}").map_err(|e| Error::io(path, e))?;
    for (a, b, tag, tat, v) in rows {
        writeln!(w, "{a},{b},{tag},{tat:.6},{v:.6}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a feature table CSV back into per-pair structures. Thresholds are
/// reconstructed from the file and must match `grid` to 6 decimals.
pub fn read_feature_table(path: &Path, grid: &TATGrid) -> Result<Vec<ANSATFeatures>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    type PairCells = BTreeMap<Docset, Vec<(f64, f64)>>;
    let mut cells: BTreeMap<(String, String), PairCells> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 {
            if line.trim() != FEATURE_TABLE_HEADER {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: "unexpected feature table header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let tag: Docset = fields[2].parse()?;
        let tat: f64 = fields[3].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("bad tat '{}'", fields[3]),
        })?;
        let value: f64 = fields[4].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("bad ansat value '{}'", fields[4]),
        })?;
        cells
            .entry((fields[0].to_string(), fields[1].to_string()))
            .or_default()
            .entry(tag)
            .or_default()
            .push((tat, value));
    }

    let mut out = Vec::new();
    for ((a, b), per_tag) in cells {
        let mut values = BTreeMap::new();
        for tag in Docset::ALL {
            let mut row = per_tag.get(&tag).cloned().unwrap_or_default();
            row.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            if row.len() != grid.len() {
                return Err(Error::Incomplete(format!(
                    "pair ({a}, {b}) docset {tag} has {} thresholds, expected {}",
                    row.len(),
                    grid.len()
                )));
            }
            for (&expected, &(got, _)) in grid.thresholds.iter().zip(&row) {
                if (expected - got).abs() > 5e-7 {
                    return Err(Error::validation(format!(
                        "threshold mismatch in feature table: {got} vs {expected}"
                    )));
                }
            }
            values.insert(tag, row.into_iter().map(|(_, v)| v).collect());
        }
        out.push(ANSATFeatures {
            task_a: a,
            task_b: b,
            values,
            empty_docsets: BTreeSet::new(),
        });
    }
    Ok(out)
}
