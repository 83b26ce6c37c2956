//! Path-integral attribution: integrated gradients over token embeddings,
//! per-unit layer conductance, and layer-averaged per-term scores.
//!
//! All quantities are Riemann approximations of the same path integral along
//! the straight line from a baseline embedding to the document embedding,
//! using the right-endpoint rule with `steps` points. Because the model is
//! tiny and fully analytic, every gradient along the path is exact; the only
//! approximation error is the Riemann discretization, surfaced per document
//! as `completeness_gap`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{doc_token_ids, forward_pooled, ClassifierParams};
use crate::tasks::{Corpus, Document};
use crate::{Error, Result};

/// Interpolation baseline for the attribution path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    #[serde(rename = "zero-embedding")]
    Zero,
    #[serde(rename = "mean-embedding")]
    Mean,
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Baseline::Zero => write!(f, "zero-embedding"),
            Baseline::Mean => write!(f, "mean-embedding"),
        }
    }
}

/// Riemann approximation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IGConfig {
    pub steps: usize,
    pub baseline: Baseline,
}

impl Default for IGConfig {
    fn default() -> Self {
        IGConfig {
            steps: 128,
            baseline: Baseline::Zero,
        }
    }
}

impl IGConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 8 {
            return Err(Error::validation(format!(
                "attribution needs at least 8 interpolation steps, got {}",
                self.steps
            )));
        }
        Ok(())
    }
}

/// The model's internal activation layers available for conductance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// Mean-pooled embedding coordinates (one unit per embedding dimension).
    EmbedPool,
    /// Hidden ReLU outputs (one unit per hidden dimension).
    Hidden,
}

/// All layers, in the order they are averaged.
pub const LAYERS: [Layer; 2] = [Layer::EmbedPool, Layer::Hidden];

/// Per-term attribution scores for one (model, document) pair.
///
/// `scores` are normalized into [-1, 1] by per-document max-abs scaling;
/// `raw` keeps the unnormalized layer-averaged conductance. Negative scores
/// are retained here and only filtered downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    #[serde(rename = "doc")]
    pub doc_id: String,
    pub task: String,
    #[serde(rename = "model")]
    pub model_ref: String,
    #[serde(rename = "scores")]
    pub term_scores: BTreeMap<String, f64>,
    #[serde(rename = "raw")]
    pub raw_term_scores: BTreeMap<String, f64>,
    pub completeness_gap: f64,
    pub steps: usize,
    pub baseline: Baseline,
}

/// What the path integral attributes toward. The public operations fix this
/// to the positive-class probability; the logit target exists for tests of
/// the linear-regime identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OutputTarget {
    Probability,
    #[allow(dead_code)]
    Logit,
}

fn baseline_pooled(params: &ClassifierParams, baseline: Baseline) -> Vec<f64> {
    let e_dim = params.embedding_dim;
    match baseline {
        Baseline::Zero => vec![0.0; e_dim],
        Baseline::Mean => {
            let mut mean = vec![0.0; e_dim];
            for row in params.embedding.chunks(e_dim) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            let n = (params.embedding.len() / e_dim) as f64;
            for m in mean.iter_mut() {
                *m /= n;
            }
            mean
        }
    }
}

fn output_value(params: &ClassifierParams, pooled: &[f64], target: OutputTarget) -> f64 {
    let acts = forward_pooled(params, pooled);
    match target {
        OutputTarget::Probability => acts.probability,
        OutputTarget::Logit => acts.logit,
    }
}

/// Unique terms of a document with vocabulary ids and occurrence counts,
/// in sorted term order. All attribution arithmetic iterates this map, so
/// scores are invariant under token permutation by construction.
type TermCounts = BTreeMap<String, (usize, usize)>;

fn term_counts(corpus: &Corpus, doc: &Document) -> Result<TermCounts> {
    let ids = doc_token_ids(corpus, doc)?;
    let mut counts: TermCounts = BTreeMap::new();
    for (tok, &id) in doc.tokens.iter().zip(&ids) {
        counts
            .entry(tok.clone())
            .and_modify(|e| e.1 += 1)
            .or_insert((id, 1));
    }
    Ok(counts)
}

/// Mean-pooled document embedding computed from term counts (canonical order).
fn pooled_from_counts(params: &ClassifierParams, counts: &TermCounts, n_tokens: usize) -> Vec<f64> {
    let e_dim = params.embedding_dim;
    let mut pooled = vec![0.0; e_dim];
    for &(id, count) in counts.values() {
        let row = &params.embedding[id * e_dim..(id + 1) * e_dim];
        for (p, &v) in pooled.iter_mut().zip(row) {
            *p += count as f64 * v;
        }
    }
    for p in pooled.iter_mut() {
        *p /= n_tokens as f64;
    }
    pooled
}

/// Path-averaged gradient sums shared by all attribution flavours.
struct PathSums {
    /// (1/m) Σ_k ∂F/∂pooled_e at interpolation point k.
    pool_grad: Vec<f64>,
    /// (1/m) Σ_k ∂F/∂hidden_j at point k, gated by the ReLU there.
    hidden_flow: Vec<f64>,
    output_delta: f64,
}

fn path_sums(
    params: &ClassifierParams,
    counts: &TermCounts,
    n_tokens: usize,
    cfg: IGConfig,
    target: OutputTarget,
) -> Result<PathSums> {
    cfg.validate()?;
    let (e_dim, h_dim) = (params.embedding_dim, params.hidden_dim);
    let pooled_x = pooled_from_counts(params, counts, n_tokens);
    let pooled_base = baseline_pooled(params, cfg.baseline);
    let m = cfg.steps;

    let mut pool_grad = vec![0.0; e_dim];
    let mut hidden_flow = vec![0.0; h_dim];
    let mut point = vec![0.0; e_dim];
    for k in 1..=m {
        let alpha = k as f64 / m as f64;
        for e in 0..e_dim {
            point[e] = pooled_base[e] + alpha * (pooled_x[e] - pooled_base[e]);
        }
        let acts = forward_pooled(params, &point);
        let d_out = match target {
            OutputTarget::Probability => acts.probability * (1.0 - acts.probability),
            OutputTarget::Logit => 1.0,
        };
        for j in 0..h_dim {
            if acts.pre_hidden[j] > 0.0 {
                let flow = d_out * params.out_weights[j];
                hidden_flow[j] += flow;
                for e in 0..e_dim {
                    pool_grad[e] += flow * params.hidden_weights[e * h_dim + j];
                }
            }
        }
    }
    let inv_m = 1.0 / m as f64;
    for g in pool_grad.iter_mut() {
        *g *= inv_m;
    }
    for g in hidden_flow.iter_mut() {
        *g *= inv_m;
    }
    if !pool_grad.iter().chain(hidden_flow.iter()).all(|v| v.is_finite()) {
        return Err(Error::Attribution {
            doc_id: None,
            message: "non-finite gradient along the interpolation path".into(),
        });
    }
    let output_delta =
        output_value(params, &pooled_x, target) - output_value(params, &pooled_base, target);
    Ok(PathSums {
        pool_grad,
        hidden_flow,
        output_delta,
    })
}

/// Per-term share of the pooled-input delta: `(count/n) * (emb[term] - baseline)`.
fn term_delta(
    params: &ClassifierParams,
    base: &[f64],
    term_id: usize,
    count: usize,
    n_tokens: usize,
) -> Vec<f64> {
    let e_dim = params.embedding_dim;
    let scale = count as f64 / n_tokens as f64;
    let row = &params.embedding[term_id * e_dim..(term_id + 1) * e_dim];
    row.iter()
        .zip(base)
        .map(|(&v, &b)| scale * (v - b))
        .collect()
}

pub(crate) fn integrated_gradients_toward(
    params: &ClassifierParams,
    corpus: &Corpus,
    doc: &Document,
    cfg: IGConfig,
    target: OutputTarget,
) -> Result<BTreeMap<String, f64>> {
    let counts = term_counts(corpus, doc)?;
    let n = doc.tokens.len();
    let sums = path_sums(params, &counts, n, cfg, target)?;
    let base = baseline_pooled(params, cfg.baseline);
    let mut out = BTreeMap::new();
    for (term, &(id, count)) in &counts {
        let delta = term_delta(params, &base, id, count, n);
        let ig: f64 = delta.iter().zip(&sums.pool_grad).map(|(&d, &g)| d * g).sum();
        out.insert(term.clone(), ig);
    }
    Ok(out)
}

/// Integrated gradients of the positive-class probability, aggregated per
/// unique term (repeated positions summed).
pub fn integrated_gradients(
    params: &ClassifierParams,
    corpus: &Corpus,
    doc: &Document,
    cfg: IGConfig,
) -> Result<BTreeMap<String, f64>> {
    integrated_gradients_toward(params, corpus, doc, cfg, OutputTarget::Probability)
}

/// Per-unit conductance contributions of every term of `doc` through `layer`.
///
/// Each map value has one entry per unit of the layer; summing a term's
/// vector gives `conduct(term, layer)`.
pub fn layer_conductance(
    params: &ClassifierParams,
    corpus: &Corpus,
    doc: &Document,
    layer: Layer,
    cfg: IGConfig,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let counts = term_counts(corpus, doc)?;
    let n = doc.tokens.len();
    let sums = path_sums(params, &counts, n, cfg, OutputTarget::Probability)?;
    let base = baseline_pooled(params, cfg.baseline);
    let (e_dim, h_dim) = (params.embedding_dim, params.hidden_dim);

    let mut out = BTreeMap::new();
    for (term, &(id, count)) in &counts {
        let delta = term_delta(params, &base, id, count, n);
        let per_unit = match layer {
            Layer::EmbedPool => delta
                .iter()
                .zip(&sums.pool_grad)
                .map(|(&d, &g)| d * g)
                .collect::<Vec<f64>>(),
            Layer::Hidden => (0..h_dim)
                .map(|j| {
                    let reach: f64 = (0..e_dim)
                        .map(|e| params.hidden_weights[e * h_dim + j] * delta[e])
                        .sum();
                    reach * sums.hidden_flow[j]
                })
                .collect(),
        };
        out.insert(term.clone(), per_unit);
    }
    Ok(out)
}

/// Layer-averaged conductance per term: mean over [`LAYERS`] of each term's
/// summed per-unit conductance. This is the raw score fed to normalization.
pub fn term_conductance(
    params: &ClassifierParams,
    corpus: &Corpus,
    doc: &Document,
    cfg: IGConfig,
) -> Result<BTreeMap<String, f64>> {
    let counts = term_counts(corpus, doc)?;
    let n = doc.tokens.len();
    let sums = path_sums(params, &counts, n, cfg, OutputTarget::Probability)?;
    let base = baseline_pooled(params, cfg.baseline);
    let (e_dim, h_dim) = (params.embedding_dim, params.hidden_dim);

    let mut out = BTreeMap::new();
    for (term, &(id, count)) in &counts {
        let delta = term_delta(params, &base, id, count, n);
        let pool_total: f64 = delta.iter().zip(&sums.pool_grad).map(|(&d, &g)| d * g).sum();
        let hidden_total: f64 = (0..h_dim)
            .map(|j| {
                let reach: f64 = (0..e_dim)
                    .map(|e| params.hidden_weights[e * h_dim + j] * delta[e])
                    .sum();
                reach * sums.hidden_flow[j]
            })
            .sum();
        out.insert(term.clone(), (pool_total + hidden_total) / LAYERS.len() as f64);
    }
    Ok(out)
}

/// Max-abs normalization into [-1, 1]; an all-zero map stays all-zero.
pub fn normalize_scores(raw: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let max_abs = raw.values().fold(0.0f64, |m, &v| m.max(v.abs()));
    raw.iter()
        .map(|(k, &v)| (k.clone(), if max_abs == 0.0 { 0.0 } else { v / max_abs }))
        .collect()
}

/// Attributes every document under one model, producing normalized records.
pub fn attribute_corpus(
    params: &ClassifierParams,
    corpus: &Corpus,
    docs: &[&Document],
    task: &str,
    model_ref: &str,
    cfg: IGConfig,
) -> Result<Vec<AttributionRecord>> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::validation("no documents to attribute".into()));
    }
    let mut records = Vec::with_capacity(docs.len());
    for doc in docs {
        let raw = attribute_doc(params, corpus, doc, cfg).map_err(|e| match e {
            Error::Attribution { doc_id: None, message } => Error::Attribution {
                doc_id: Some(doc.id.clone()),
                message,
            },
            other => other,
        })?;
        records.push(AttributionRecord {
            doc_id: doc.id.clone(),
            task: task.to_string(),
            model_ref: model_ref.to_string(),
            term_scores: normalize_scores(&raw.0),
            raw_term_scores: raw.0,
            completeness_gap: raw.1,
            steps: cfg.steps,
            baseline: cfg.baseline,
        });
    }
    Ok(records)
}

fn attribute_doc(
    params: &ClassifierParams,
    corpus: &Corpus,
    doc: &Document,
    cfg: IGConfig,
) -> Result<(BTreeMap<String, f64>, f64)> {
    let raw = term_conductance(params, corpus, doc, cfg)?;
    let counts = term_counts(corpus, doc)?;
    let sums = path_sums(params, &counts, doc.tokens.len(), cfg, OutputTarget::Probability)?;
    let total: f64 = raw.values().sum();
    Ok((raw, (total - sums.output_delta).abs()))
}

// ---------------------------------------------------------------------------
// Attribution cache
// ---------------------------------------------------------------------------

/// Writes records as JSONL, one record per line, in input order.
pub fn write_cache(records: &[AttributionRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a cache written by [`write_cache`].
pub fn read_cache(path: &Path) -> Result<Vec<AttributionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AttributionRecord = serde_json::from_str(&line).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: "malformed attribution record".into(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::forward;
    use crate::tasks::{Corpus, Document, TaskSpec};
    use std::collections::BTreeSet;

    fn doc(id: &str, tokens: &[&str]) -> Document {
        Document {
            id: id.to_string(),
            event_id: "ev00".to_string(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            labels: BTreeSet::new(),
        }
    }

    fn corpus() -> Corpus {
        Corpus::new(
            vec![
                TaskSpec {
                    id: "a".into(),
                    name: "A".into(),
                },
                TaskSpec {
                    id: "b".into(),
                    name: "B".into(),
                },
            ],
            vec![
                Document {
                    labels: ["a".to_string()].into_iter().collect(),
                    ..doc("d0", &["red", "blue", "green", "red"])
                },
                Document {
                    labels: ["b".to_string()].into_iter().collect(),
                    ..doc("d1", &["blue", "yellow"])
                },
            ],
        )
        .unwrap()
    }

    /// With identity-like hidden weights and a large positive hidden bias the
    /// ReLU never clips along the path, so the logit is affine in the input
    /// and every Riemann term is identical: IG must equal gradient times
    /// input delta exactly, already at the minimum step count.
    #[test]
    fn logit_attribution_is_exact_for_affine_network() {
        let corpus = corpus();
        let e_dim = 4;
        let mut params = ClassifierParams::zeros(corpus.vocabulary.len(), crate::classifier::ModelDims {
            embedding_dim: e_dim,
            hidden_dim: e_dim,
        });
        let mut rng = crate::seed::rng(3, "affine-test");
        use rand::Rng;
        for v in params.embedding.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        for j in 0..e_dim {
            params.hidden_weights[j * e_dim + j] = 1.0;
            params.hidden_bias[j] = 10.0;
            params.out_weights[j] = rng.gen_range(-0.5..0.5);
        }
        params.out_bias = 0.1;

        let doc = &corpus.documents[0];
        let cfg = IGConfig {
            steps: 8,
            baseline: Baseline::Zero,
        };
        let ig = integrated_gradients_toward(&params, &corpus, doc, cfg, OutputTarget::Logit)
            .unwrap();

        // Closed form: logit = b2 + Σ_j w2_j (pooled_j + 10), so the gradient
        // w.r.t. pooled is w2 and term w contributes (count/n)·emb[w]·w2.
        let n = doc.tokens.len() as f64;
        for (term, &score) in &ig {
            let id = corpus.term_id(term).unwrap();
            let count = doc.tokens.iter().filter(|t| *t == term).count() as f64;
            let expected: f64 = (0..e_dim)
                .map(|e| count / n * params.embedding[id * e_dim + e] * params.out_weights[e])
                .sum();
            assert!(
                (score - expected).abs() <= 1e-12,
                "term {term}: {score} vs {expected}"
            );
        }
    }

    #[test]
    fn step_count_below_minimum_is_rejected() {
        let corpus = corpus();
        let params = ClassifierParams::zeros(corpus.vocabulary.len(), Default::default());
        let cfg = IGConfig {
            steps: 4,
            baseline: Baseline::Zero,
        };
        let err = integrated_gradients(&params, &corpus, &corpus.documents[0], cfg).unwrap_err();
        assert!(err.to_string().contains("steps"));
    }

    #[test]
    fn probability_and_logit_targets_share_sign_structure() {
        let corpus = corpus();
        let params = ClassifierParams::random_init(corpus.vocabulary.len(), Default::default(), 5);
        let doc = &corpus.documents[0];
        let cfg = IGConfig::default();
        let p = integrated_gradients(&params, &corpus, doc, cfg).unwrap();
        let z = integrated_gradients_toward(&params, &corpus, doc, cfg, OutputTarget::Logit)
            .unwrap();
        let (_, acts) = forward(&params, &corpus, doc).unwrap();
        assert!(acts.probability > 0.0 && acts.probability < 1.0);
        for (term, &pv) in &p {
            let zv = z[term];
            if zv.abs() > 1e-12 && pv.abs() > 1e-12 {
                assert_eq!(pv.signum(), zv.signum(), "term {term}");
            }
        }
    }
}
