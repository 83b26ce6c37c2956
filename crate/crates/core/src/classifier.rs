//! A small analytically-differentiable binary text classifier.
//!
//! Pipeline: mean of token embeddings → affine + ReLU hidden layer → affine
//! scalar → logistic sigmoid. The model is deliberately tiny: two internal
//! activation layers (the pooled embedding and the hidden ReLU output) give
//! the attribution engine a non-degenerate layer set, and every gradient is
//! exact, so conductance numbers can be trusted to machine precision.
//!
//! Training is plain mini-batch SGD on binary cross-entropy with a fixed,
//! seed-derived shuffle schedule; a fixed seed reproduces the final weights
//! bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::metrics::{accuracy, positive_f1, ConfusionCounts};
use crate::seed;
use crate::tasks::{Corpus, Document, Split};
use crate::{Error, Result};

const INIT_SCALE: f64 = 0.1;
const CLASSIFICATION_THRESHOLD: f64 = 0.5;

/// Deterministic runtime accounting: cost per training example visit plus a
/// fixed per-run overhead, in nominal seconds. Ledger runtimes must replay
/// bit-identically, so wall-clock time is kept separate (`TrainRun::wall_seconds`).
const RUNTIME_PER_EXAMPLE: f64 = 5e-5;
const RUNTIME_OVERHEAD: f64 = 0.01;

/// Training hyperparameters for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Hyperparams {
    /// A learning rate of exactly 0 is allowed: it turns training into an
    /// identity map over the initial weights, which the transfer-init
    /// checks rely on.
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::validation(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Cartesian product of value sets, in (lr, epochs, batch) nesting order.
    pub fn cartesian(
        learning_rates: &[f64],
        epochs: &[usize],
        batch_sizes: &[usize],
        seed: u64,
    ) -> Vec<Hyperparams> {
        let mut grid = Vec::new();
        for &lr in learning_rates {
            for &e in epochs {
                for &b in batch_sizes {
                    grid.push(Hyperparams {
                        learning_rate: lr,
                        epochs: e,
                        batch_size: b,
                        seed,
                    });
                }
            }
        }
        grid
    }

    /// The default 32-point grid: LR ∈ {1e-5, 2e-5, 3e-5, 5e-5},
    /// epochs ∈ {1, 2, 3, 4}, batch ∈ {16, 32}.
    pub fn default_grid(seed: u64) -> Vec<Hyperparams> {
        Self::cartesian(&[1e-5, 2e-5, 3e-5, 5e-5], &[1, 2, 3, 4], &[16, 32], seed)
    }
}

/// Model architecture dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embedding_dim: 16,
            hidden_dim: 32,
        }
    }
}

/// All weights of one classifier, stored row-major.
///
/// `embedding` is `vocab_size x embedding_dim`, `hidden_weights` is
/// `embedding_dim x hidden_dim` (so the hidden pre-activation is
/// `a_j = b1_j + Σ_e pooled_e * W[e][j]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub format_version: u32,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub embedding: Vec<f64>,
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub out_weights: Vec<f64>,
    pub out_bias: f64,
}

impl ClassifierParams {
    pub fn zeros(vocab_size: usize, dims: ModelDims) -> Self {
        ClassifierParams {
            format_version: 1,
            vocab_size,
            embedding_dim: dims.embedding_dim,
            hidden_dim: dims.hidden_dim,
            embedding: vec![0.0; vocab_size * dims.embedding_dim],
            hidden_weights: vec![0.0; dims.embedding_dim * dims.hidden_dim],
            hidden_bias: vec![0.0; dims.hidden_dim],
            out_weights: vec![0.0; dims.hidden_dim],
            out_bias: 0.0,
        }
    }

    /// Seeded random init: every coordinate drawn as `0.1 * N(0, 1)`.
    pub fn random_init(vocab_size: usize, dims: ModelDims, init_seed: u64) -> Self {
        let mut params = Self::zeros(vocab_size, dims);
        let mut rng = seed::rng(init_seed, "classifier-init");
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        for i in 0..params.n_coords() {
            params.set_coord(i, INIT_SCALE * normal.sample(&mut rng));
        }
        params
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embedding_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
        }
    }

    /// Total number of scalar parameters.
    pub fn n_coords(&self) -> usize {
        self.embedding.len() + self.hidden_weights.len() + self.hidden_bias.len()
            + self.out_weights.len()
            + 1
    }

    pub fn get_coord(&self, i: usize) -> f64 {
        let mut i = i;
        for part in [
            &self.embedding,
            &self.hidden_weights,
            &self.hidden_bias,
            &self.out_weights,
        ] {
            if i < part.len() {
                return part[i];
            }
            i -= part.len();
        }
        debug_assert_eq!(i, 0);
        self.out_bias
    }

    pub fn set_coord(&mut self, i: usize, value: f64) {
        let mut i = i;
        let lens = [
            self.embedding.len(),
            self.hidden_weights.len(),
            self.hidden_bias.len(),
            self.out_weights.len(),
        ];
        if i < lens[0] {
            self.embedding[i] = value;
            return;
        }
        i -= lens[0];
        if i < lens[1] {
            self.hidden_weights[i] = value;
            return;
        }
        i -= lens[1];
        if i < lens[2] {
            self.hidden_bias[i] = value;
            return;
        }
        i -= lens[2];
        if i < lens[3] {
            self.out_weights[i] = value;
            return;
        }
        i -= lens[3];
        debug_assert_eq!(i, 0);
        self.out_bias = value;
    }

    pub fn all_finite(&self) -> bool {
        (0..self.n_coords()).all(|i| self.get_coord(i).is_finite())
    }

    fn check_compat(&self, vocab_size: usize) -> Result<()> {
        if self.vocab_size != vocab_size {
            return Err(Error::validation(format!(
                "checkpoint vocab size {} does not match corpus vocabulary {vocab_size}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Writes the checkpoint as JSON with a shape header (versioned format).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let params: ClassifierParams =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })?;
        if params.format_version != 1 {
            return Err(Error::validation(format!(
                "unsupported checkpoint format version {}",
                params.format_version
            )));
        }
        let d = &params;
        if d.embedding.len() != d.vocab_size * d.embedding_dim
            || d.hidden_weights.len() != d.embedding_dim * d.hidden_dim
            || d.hidden_bias.len() != d.hidden_dim
            || d.out_weights.len() != d.hidden_dim
        {
            return Err(Error::validation("checkpoint tensor shapes inconsistent with header".into()));
        }
        Ok(params)
    }
}

/// Cached per-layer activations from a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Mean of token embeddings (the first internal layer).
    pub pooled: Vec<f64>,
    /// Hidden pre-activations `a = W1ᵀ·pooled + b1`.
    pub pre_hidden: Vec<f64>,
    /// Hidden ReLU outputs (the second internal layer).
    pub hidden: Vec<f64>,
    pub logit: f64,
    pub probability: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy from the logit:
/// `softplus(z) - y * z`.
pub(crate) fn bce_from_logit(z: f64, y: f64) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - y * z
}

/// Resolves a document's tokens to vocabulary ids; out-of-vocabulary tokens
/// are an explicit error.
pub fn doc_token_ids(corpus: &Corpus, doc: &Document) -> Result<Vec<usize>> {
    doc.tokens
        .iter()
        .map(|t| {
            corpus.term_id(t).ok_or_else(|| {
                Error::validation(format!(
                    "token '{t}' of document '{}' not in vocabulary",
                    doc.id
                ))
            })
        })
        .collect()
}

pub(crate) fn pool_embeddings(params: &ClassifierParams, token_ids: &[usize]) -> Vec<f64> {
    let e_dim = params.embedding_dim;
    let mut pooled = vec![0.0; e_dim];
    for &tok in token_ids {
        let row = &params.embedding[tok * e_dim..(tok + 1) * e_dim];
        for (p, &v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    let n = token_ids.len() as f64;
    for p in pooled.iter_mut() {
        *p /= n;
    }
    pooled
}

/// Forward pass from an already-pooled embedding vector.
pub(crate) fn forward_pooled(params: &ClassifierParams, pooled: &[f64]) -> Activations {
    let (e_dim, h_dim) = (params.embedding_dim, params.hidden_dim);
    let mut pre_hidden = params.hidden_bias.clone();
    for e in 0..e_dim {
        let x = pooled[e];
        if x == 0.0 {
            continue;
        }
        let row = &params.hidden_weights[e * h_dim..(e + 1) * h_dim];
        for (a, &w) in pre_hidden.iter_mut().zip(row) {
            *a += x * w;
        }
    }
    let hidden: Vec<f64> = pre_hidden.iter().map(|&a| a.max(0.0)).collect();
    let logit = params.out_bias
        + hidden
            .iter()
            .zip(&params.out_weights)
            .map(|(&h, &w)| h * w)
            .sum::<f64>();
    let probability = sigmoid(logit);
    Activations {
        pooled: pooled.to_vec(),
        pre_hidden,
        hidden,
        logit,
        probability,
    }
}

pub(crate) fn forward_tokens(params: &ClassifierParams, token_ids: &[usize]) -> Activations {
    forward_pooled(params, &pool_embeddings(params, token_ids))
}

/// Forward pass over a document: returns the positive-class probability and
/// the cached layer activations.
pub fn forward(params: &ClassifierParams, corpus: &Corpus, doc: &Document) -> Result<(f64, Activations)> {
    params.check_compat(corpus.vocabulary.len())?;
    let ids = doc_token_ids(corpus, doc)?;
    let acts = forward_tokens(params, &ids);
    Ok((acts.probability, acts))
}

/// Gradients with the same shapes as [`ClassifierParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding: Vec<f64>,
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub out_weights: Vec<f64>,
    pub out_bias: f64,
}

impl Gradients {
    fn zeros(params: &ClassifierParams) -> Self {
        Gradients {
            embedding: vec![0.0; params.embedding.len()],
            hidden_weights: vec![0.0; params.hidden_weights.len()],
            hidden_bias: vec![0.0; params.hidden_bias.len()],
            out_weights: vec![0.0; params.out_weights.len()],
            out_bias: 0.0,
        }
    }

    pub fn n_coords(&self) -> usize {
        self.embedding.len() + self.hidden_weights.len() + self.hidden_bias.len()
            + self.out_weights.len()
            + 1
    }

    pub fn get_coord(&self, i: usize) -> f64 {
        let mut i = i;
        for part in [
            &self.embedding,
            &self.hidden_weights,
            &self.hidden_bias,
            &self.out_weights,
        ] {
            if i < part.len() {
                return part[i];
            }
            i -= part.len();
        }
        self.out_bias
    }

    fn accumulate_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.embedding.iter_mut().zip(&other.embedding) {
            *a += scale * b;
        }
        for (a, b) in self.hidden_weights.iter_mut().zip(&other.hidden_weights) {
            *a += scale * b;
        }
        for (a, b) in self.hidden_bias.iter_mut().zip(&other.hidden_bias) {
            *a += scale * b;
        }
        for (a, b) in self.out_weights.iter_mut().zip(&other.out_weights) {
            *a += scale * b;
        }
        self.out_bias += scale * other.out_bias;
    }

    fn all_finite(&self) -> bool {
        self.embedding.iter().all(|v| v.is_finite())
            && self.hidden_weights.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite())
            && self.out_weights.iter().all(|v| v.is_finite())
            && self.out_bias.is_finite()
    }
}

fn backward_tokens(params: &ClassifierParams, token_ids: &[usize], label: f64) -> (f64, Gradients) {
    let (e_dim, h_dim) = (params.embedding_dim, params.hidden_dim);
    let acts = forward_tokens(params, token_ids);
    let loss = bce_from_logit(acts.logit, label);

    let mut grads = Gradients::zeros(params);
    let dz = acts.probability - label;
    grads.out_bias = dz;
    for j in 0..h_dim {
        grads.out_weights[j] = dz * acts.hidden[j];
    }
    // Through the ReLU: zero where the unit is clipped.
    let da: Vec<f64> = (0..h_dim)
        .map(|j| {
            if acts.pre_hidden[j] > 0.0 {
                dz * params.out_weights[j]
            } else {
                0.0
            }
        })
        .collect();
    grads.hidden_bias.copy_from_slice(&da);
    let mut d_pooled = vec![0.0; e_dim];
    for e in 0..e_dim {
        let w_row = &params.hidden_weights[e * h_dim..(e + 1) * h_dim];
        let g_row = &mut grads.hidden_weights[e * h_dim..(e + 1) * h_dim];
        let mut dp = 0.0;
        for j in 0..h_dim {
            g_row[j] = da[j] * acts.pooled[e];
            dp += da[j] * w_row[j];
        }
        d_pooled[e] = dp;
    }
    let inv_n = 1.0 / token_ids.len() as f64;
    for &tok in token_ids {
        let row = &mut grads.embedding[tok * e_dim..(tok + 1) * e_dim];
        for (g, &dp) in row.iter_mut().zip(&d_pooled) {
            *g += dp * inv_n;
        }
    }
    (loss, grads)
}

/// Exact analytic gradient of the binary cross-entropy loss at `(doc, label)`.
pub fn backward(
    params: &ClassifierParams,
    corpus: &Corpus,
    doc: &Document,
    label: u8,
) -> Result<Gradients> {
    params.check_compat(corpus.vocabulary.len())?;
    let ids = doc_token_ids(corpus, doc)?;
    Ok(backward_tokens(params, &ids, label as f64).1)
}

/// Binary cross-entropy loss of `params` at `(doc, label)`, numerically stable.
pub fn bce_loss(params: &ClassifierParams, corpus: &Corpus, doc: &Document, label: u8) -> Result<f64> {
    params.check_compat(corpus.vocabulary.len())?;
    let ids = doc_token_ids(corpus, doc)?;
    let acts = forward_tokens(params, &ids);
    Ok(bce_from_logit(acts.logit, label as f64))
}

/// Source-model initialization for a transfer run.
#[derive(Debug, Clone)]
pub struct TransferInit<'a> {
    pub source_task: &'a str,
    pub params: &'a ClassifierParams,
    pub source_hyperparams: Hyperparams,
}

/// Record of one training run: hyperparameters, accounting, and test scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub target_task: String,
    pub source_task: Option<String>,
    pub hyperparams: Hyperparams,
    pub source_hyperparams: Option<Hyperparams>,
    /// Deterministic work-proportional runtime used by all downstream
    /// analyses (nominal seconds).
    pub runtime_seconds: f64,
    /// Measured wall-clock seconds; diagnostic only, never persisted.
    #[serde(skip)]
    pub wall_seconds: f64,
    pub positive_f1: f64,
    pub accuracy: f64,
    /// Checkpoint locator, filled in by the persistence layer.
    pub params_ref: Option<String>,
}

/// A finished training run with its weights and per-epoch training loss.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ClassifierParams,
    pub run: TrainRun,
    /// Mean training loss over the full train split after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD training of a binary classifier for `task`.
///
/// With `transfer` present the weights start from the source checkpoint
/// (nothing is re-initialized); otherwise from a seeded random init.
/// Deterministic in `hp.seed`: the shuffle schedule is derived from it.
pub fn train(
    corpus: &Corpus,
    task: &str,
    hp: Hyperparams,
    dims: ModelDims,
    transfer: Option<TransferInit<'_>>,
) -> Result<TrainedModel> {
    hp.validate()?;
    if !corpus.has_task(task) {
        return Err(Error::validation(format!("unknown task id '{task}'")));
    }
    let started = Instant::now();
    let vocab_size = corpus.vocabulary.len();

    let mut params = match &transfer {
        Some(t) => {
            t.params.check_compat(vocab_size)?;
            t.params.clone()
        }
        None => ClassifierParams::random_init(vocab_size, dims, hp.seed),
    };

    let train_docs = corpus.docs_in_split(Split::Train);
    if train_docs.is_empty() {
        return Err(Error::validation("train split is empty".into()));
    }
    let token_ids: Vec<Vec<usize>> = train_docs
        .iter()
        .map(|d| doc_token_ids(corpus, d))
        .collect::<Result<_>>()?;
    let labels: Vec<f64> = train_docs
        .iter()
        .map(|d| if d.is_positive_for(task) { 1.0 } else { 0.0 })
        .collect();

    let n = train_docs.len();
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = seed::rng(hp.seed, &format!("train-shuffle-{task}-epoch{epoch}"));
        order.shuffle(&mut rng);

        for (batch_idx, chunk) in order.chunks(hp.batch_size).enumerate() {
            let mut batch_grads: Option<Gradients> = None;
            let mut batch_loss = 0.0;
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (loss, grads) = backward_tokens(&params, &token_ids[i], labels[i]);
                batch_loss += loss * scale;
                match batch_grads.as_mut() {
                    Some(acc) => acc.accumulate_scaled(&grads, scale),
                    None => {
                        let mut acc = Gradients::zeros(&params);
                        acc.accumulate_scaled(&grads, scale);
                        batch_grads = Some(acc);
                    }
                }
            }
            let grads = batch_grads.expect("non-empty batch");
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    message: format!("non-finite loss or gradient while training task '{task}'"),
                });
            }
            apply_sgd_step(&mut params, &grads, hp.learning_rate);
            if !params.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    message: format!("weights diverged while training task '{task}'"),
                });
            }
        }

        let full_loss = token_ids
            .iter()
            .zip(&labels)
            .map(|(ids, &y)| bce_from_logit(forward_tokens(&params, ids).logit, y))
            .sum::<f64>()
            / n as f64;
        epoch_losses.push(full_loss);
    }

    let (_, f1, acc) = evaluate(&params, corpus, task)?;
    let visits = (hp.epochs * n) as f64;
    let run = TrainRun {
        target_task: task.to_string(),
        source_task: transfer.as_ref().map(|t| t.source_task.to_string()),
        hyperparams: hp,
        source_hyperparams: transfer.as_ref().map(|t| t.source_hyperparams),
        runtime_seconds: visits * RUNTIME_PER_EXAMPLE + RUNTIME_OVERHEAD,
        wall_seconds: started.elapsed().as_secs_f64(),
        positive_f1: f1,
        accuracy: acc,
        params_ref: None,
    };
    Ok(TrainedModel {
        params,
        run,
        epoch_losses,
    })
}

fn apply_sgd_step(params: &mut ClassifierParams, grads: &Gradients, lr: f64) {
    if lr == 0.0 {
        return;
    }
    for (w, g) in params.embedding.iter_mut().zip(&grads.embedding) {
        *w -= lr * g;
    }
    for (w, g) in params.hidden_weights.iter_mut().zip(&grads.hidden_weights) {
        *w -= lr * g;
    }
    for (w, g) in params.hidden_bias.iter_mut().zip(&grads.hidden_bias) {
        *w -= lr * g;
    }
    for (w, g) in params.out_weights.iter_mut().zip(&grads.out_weights) {
        *w -= lr * g;
    }
    params.out_bias -= lr * grads.out_bias;
}

/// Evaluates a trained model on the test split: positive-class F1 and
/// accuracy, micro-averaged across events.
pub fn evaluate(
    params: &ClassifierParams,
    corpus: &Corpus,
    task: &str,
) -> Result<(ConfusionCounts, f64, f64)> {
    let test_docs = corpus.docs_in_split(Split::Test);
    if test_docs.is_empty() {
        return Err(Error::validation("test split is empty".into()));
    }
    let mut counts = ConfusionCounts::new();
    for doc in test_docs {
        let ids = doc_token_ids(corpus, doc)?;
        let p = forward_tokens(params, &ids).probability;
        counts.record(
            &doc.event_id,
            p >= CLASSIFICATION_THRESHOLD,
            doc.is_positive_for(task),
        );
    }
    let f1 = positive_f1(&counts);
    let acc = accuracy(&counts)?;
    Ok((counts, f1, acc))
}

/// Trains every grid point in order; errors are tagged with the grid index.
pub fn grid_search(
    corpus: &Corpus,
    task: &str,
    grid: &[Hyperparams],
    dims: ModelDims,
    transfer: Option<TransferInit<'_>>,
) -> Result<Vec<TrainedModel>> {
    if grid.is_empty() {
        return Err(Error::validation("empty hyperparameter grid".into()));
    }
    let mut runs = Vec::with_capacity(grid.len());
    for (idx, hp) in grid.iter().enumerate() {
        let model = train(corpus, task, *hp, dims, transfer.clone()).map_err(|e| {
            Error::validation(format!("grid point {idx} failed: {e}"))
        })?;
        runs.push(model);
    }
    Ok(runs)
}

// ---------------------------------------------------------------------------
// Run ledger
// ---------------------------------------------------------------------------

/// One row of the run ledger CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub run_id: String,
    pub target: String,
    pub source: Option<String>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub runtime_seconds: f64,
    pub positive_f1: f64,
    pub accuracy: f64,
    pub checkpoint_path: Option<String>,
}

impl LedgerRow {
    pub fn from_run(run_id: String, run: &TrainRun) -> Self {
        LedgerRow {
            run_id,
            target: run.target_task.clone(),
            source: run.source_task.clone(),
            lr: run.hyperparams.learning_rate,
            epochs: run.hyperparams.epochs,
            batch: run.hyperparams.batch_size,
            seed: run.hyperparams.seed,
            runtime_seconds: run.runtime_seconds,
            positive_f1: run.positive_f1,
            accuracy: run.accuracy,
            checkpoint_path: run.params_ref.clone(),
        }
    }
}

pub const LEDGER_HEADER: &str =
    "run_id,target,source,lr,epochs,batch,seed,runtime_seconds,positive_f1,accuracy,checkpoint_path";

impl LedgerRow {
    /// The row as one CSV line, matching [`LEDGER_HEADER`].
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.target,
            self.source.as_deref().unwrap_or(""),
            self.lr,
            self.epochs,
            self.batch,
            self.seed,
            self.runtime_seconds,
            self.positive_f1,
            self.accuracy,
            self.checkpoint_path.as_deref().unwrap_or("")
        )
    }
}

/// Writes a complete ledger, one row per run, in the given order.
pub fn write_ledger(rows: &[LedgerRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{LEDGER_HEADER}").map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(w, "{}", r.to_csv_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a ledger written by [`write_ledger`].
pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 {
            if line.trim() != LEDGER_HEADER {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: "unexpected ledger header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected 11 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("bad {what} '{s}'"),
            })
        };
        let parse_u = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("bad {what} '{s}'"),
            })
        };
        rows.push(LedgerRow {
            run_id: fields[0].to_string(),
            target: fields[1].to_string(),
            source: if fields[2].is_empty() {
                None
            } else {
                Some(fields[2].to_string())
            },
            lr: parse_f(fields[3], "lr")?,
            epochs: parse_u(fields[4], "epochs")?,
            batch: parse_u(fields[5], "batch")?,
            seed: fields[6].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("bad seed '{}'", fields[6]),
            })?,
            runtime_seconds: parse_f(fields[7], "runtime_seconds")?,
            positive_f1: parse_f(fields[8], "positive_f1")?,
            accuracy: parse_f(fields[9], "accuracy")?,
            checkpoint_path: if fields[10].is_empty() {
                None
            } else {
                Some(fields[10].to_string())
            },
        });
    }
    Ok(rows)
}
