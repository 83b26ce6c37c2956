//! Gradient-boosted regression trees with exact greedy splits, predicting a
//! combined run's positive F1 from the two single-task F1 scores and,
//! optionally, the pair's shared-active-term feature grid.
//!
//! Squared-error boosting with unit hessians: per round the gradients are
//! the residuals, each tree greedily maximizes the standard second-order
//! gain with L2 leaf regularization, and predictions accumulate with
//! shrinkage. Everything is exact and deterministic; samples are canonically
//! reordered before fitting, so the model is invariant to input permutation.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One observed combined run: the features describing the task pair and the
/// F1 the combined model actually achieved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub source: String,
    pub target: String,
    pub f1_source: f64,
    pub f1_target: f64,
    /// Flattened grid scores in fixed (docset, threshold) order.
    pub ansat_features: Vec<f64>,
    pub label_f1: f64,
    /// Cost of the run; carried through for budget analyses, never a feature.
    pub runtime_seconds: f64,
}

/// Which columns enter the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    /// Single-task F1 scores only (2 features).
    F1Only,
    /// F1 scores plus the full grid (2 + grid features).
    F1Ansat,
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureMode::F1Only => write!(f, "F1"),
            FeatureMode::F1Ansat => write!(f, "F1+ANSAT"),
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F1" => Ok(FeatureMode::F1Only),
            "F1+ANSAT" => Ok(FeatureMode::F1Ansat),
            other => Err(Error::validation(format!("unknown feature mode '{other}'"))),
        }
    }
}

/// Boosting hyperparameters. `base_score` of `None` means the mean label.
/// `seed` is recorded for provenance; the exact greedy algorithm has no
/// sampling, so it does not influence the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBTConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub base_score: Option<f64>,
    pub seed: u64,
}

impl Default for GBTConfig {
    fn default() -> Self {
        GBTConfig {
            rounds: 100,
            max_depth: 3,
            eta: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            base_score: None,
            seed: 0,
        }
    }
}

impl GBTConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::validation(format!("eta must be in (0, 1], got {}", self.eta)));
        }
        if self.max_depth == 0 {
            return Err(Error::validation("max_depth must be >= 1".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("min_child_weight", self.min_child_weight),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if let Some(b) = self.base_score {
            if !b.is_finite() {
                return Err(Error::validation("base_score must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn output(&self, features: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if features[*feature] < *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    fn check(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::validation("tree has no nodes".into()));
        }
        for node in &self.nodes {
            if let Node::Split {
                feature,
                left,
                right,
                ..
            } = node
            {
                if *feature >= n_features {
                    return Err(Error::validation(format!(
                        "tree references feature {feature}, input has {n_features}"
                    )));
                }
                if *left >= self.nodes.len() || *right >= self.nodes.len() {
                    return Err(Error::validation("tree child index out of range".into()));
                }
            }
        }
        Ok(())
    }
}

/// A fitted boosted ensemble. Prediction is
/// `base_score + eta * Σ tree(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostedEnsemble {
    pub base_score: f64,
    pub eta: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl GradientBoostedEnsemble {
    /// Raw (unclamped) prediction.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.n_features {
            return Err(Error::validation(format!(
                "expected {} features, got {}",
                self.n_features,
                features.len()
            )));
        }
        let mut y = self.base_score;
        for tree in &self.trees {
            y += self.eta * tree.output(features);
        }
        Ok(y)
    }

    /// Prediction clamped into [0, 1] for reporting as an F1 value.
    pub fn predict_clamped(&self, features: &[f64]) -> Result<f64> {
        Ok(self.predict(features)?.clamp(0.0, 1.0))
    }

    /// Training RMSE after the base score and after each successive tree.
    pub fn staged_rmse(&self, samples: &[PairSample], mode: FeatureMode) -> Result<Vec<f64>> {
        let (features, labels) = design_matrix(samples, mode)?;
        let mut preds = vec![self.base_score; samples.len()];
        let rmse = |preds: &[f64]| -> f64 {
            let sq: f64 = preds
                .iter()
                .zip(&labels)
                .map(|(p, y)| (p - y) * (p - y))
                .sum();
            (sq / labels.len() as f64).sqrt()
        };
        let mut out = vec![rmse(&preds)];
        for tree in &self.trees {
            for (p, f) in preds.iter_mut().zip(&features) {
                *p += self.eta * tree.output(f);
            }
            out.push(rmse(&preds));
        }
        Ok(out)
    }

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
        let model: GradientBoostedEnsemble =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })?;
        for tree in &model.trees {
            tree.check(model.n_features)?;
        }
        Ok(model)
    }
}

/// Feature vector of one sample under a mode.
pub fn assemble_features(sample: &PairSample, mode: FeatureMode) -> Vec<f64> {
    let mut v = vec![sample.f1_source, sample.f1_target];
    if mode == FeatureMode::F1Ansat {
        v.extend_from_slice(&sample.ansat_features);
    }
    v
}

fn design_matrix(samples: &[PairSample], mode: FeatureMode) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut features = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut width = None;
    for (i, s) in samples.iter().enumerate() {
        let f = assemble_features(s, mode);
        if f.iter().any(|v| v.is_nan()) || s.label_f1.is_nan() {
            return Err(Error::validation(format!(
                "NaN in features or label of sample {i} ({} -> {})",
                s.source, s.target
            )));
        }
        match width {
            None => width = Some(f.len()),
            Some(w) if w != f.len() => {
                return Err(Error::validation(format!(
                    "inconsistent feature length: sample {i} has {}, expected {w}",
                    f.len()
                )));
            }
            _ => {}
        }
        features.push(f);
        labels.push(s.label_f1);
    }
    Ok((features, labels))
}

struct SplitChoice {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn best_split(
    features: &[Vec<f64>],
    grads: &[f64],
    members: &[usize],
    cfg: &GBTConfig,
) -> Option<SplitChoice> {
    let n_features = features[members[0]].len();
    let g_total: f64 = members.iter().map(|&i| grads[i]).sum();
    let h_total = members.len() as f64;
    let parent_term = g_total * g_total / (h_total + cfg.lambda);

    let mut best: Option<SplitChoice> = None;
    let mut order: Vec<usize> = members.to_vec();
    for feature in 0..n_features {
        order.sort_by(|&a, &b| {
            features[a][feature]
                .partial_cmp(&features[b][feature])
                .expect("validated non-NaN feature")
        });
        let mut g_left = 0.0;
        let mut h_left = 0.0;
        for pos in 0..order.len() - 1 {
            g_left += grads[order[pos]];
            h_left += 1.0;
            let here = features[order[pos]][feature];
            let next = features[order[pos + 1]][feature];
            if here == next {
                continue;
            }
            let g_right = g_total - g_left;
            let h_right = h_total - h_left;
            if h_left < cfg.min_child_weight || h_right < cfg.min_child_weight {
                continue;
            }
            let gain = 0.5
                * (g_left * g_left / (h_left + cfg.lambda)
                    + g_right * g_right / (h_right + cfg.lambda)
                    - parent_term)
                - cfg.gamma;
            // Strict improvement keeps the first (lowest feature, lowest
            // threshold) candidate on ties.
            if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                best = Some(SplitChoice {
                    gain,
                    feature,
                    threshold: (here + next) / 2.0,
                });
            }
        }
    }
    best
}

fn grow_tree(
    features: &[Vec<f64>],
    grads: &[f64],
    members: Vec<usize>,
    depth: usize,
    cfg: &GBTConfig,
    nodes: &mut Vec<Node>,
) -> usize {
    let g: f64 = members.iter().map(|&i| grads[i]).sum();
    let h = members.len() as f64;
    let make_leaf = |nodes: &mut Vec<Node>| {
        nodes.push(Node::Leaf {
            weight: -g / (h + cfg.lambda),
        });
        nodes.len() - 1
    };
    if depth >= cfg.max_depth || members.len() < 2 {
        return make_leaf(nodes);
    }
    let Some(choice) = best_split(features, grads, &members, cfg) else {
        return make_leaf(nodes);
    };
    let (left_members, right_members): (Vec<usize>, Vec<usize>) = members
        .iter()
        .partition(|&&i| features[i][choice.feature] < choice.threshold);
    let idx = nodes.len();
    nodes.push(Node::Split {
        feature: choice.feature,
        threshold: choice.threshold,
        left: 0,
        right: 0,
    });
    let left = grow_tree(features, grads, left_members, depth + 1, cfg, nodes);
    let right = grow_tree(features, grads, right_members, depth + 1, cfg, nodes);
    if let Node::Split {
        left: l, right: r, ..
    } = &mut nodes[idx]
    {
        *l = left;
        *r = right;
    }
    idx
}

/// Fits the boosted ensemble. Samples are first put into a canonical order
/// (sorted by feature vector, then label), making the result independent of
/// input permutation.
pub fn fit(
    samples: &[PairSample],
    mode: FeatureMode,
    cfg: &GBTConfig,
) -> Result<GradientBoostedEnsemble> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::validation(format!(
            "boosting needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let (mut features, mut labels) = design_matrix(samples, mode)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        features[a]
            .partial_cmp(&features[b])
            .expect("validated non-NaN features")
            .then(labels[a].partial_cmp(&labels[b]).expect("validated non-NaN labels"))
    });
    features = order.iter().map(|&i| features[i].clone()).collect();
    labels = order.iter().map(|&i| labels[i]).collect();

    let n = labels.len();
    let base_score = cfg
        .base_score
        .unwrap_or_else(|| labels.iter().sum::<f64>() / n as f64);

    let mut preds = vec![base_score; n];
    let mut trees = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let grads: Vec<f64> = preds.iter().zip(&labels).map(|(p, y)| p - y).collect();
        let mut nodes = Vec::new();
        grow_tree(&features, &grads, (0..n).collect(), 0, cfg, &mut nodes);
        let tree = Tree { nodes };
        for (p, f) in preds.iter_mut().zip(&features) {
            *p += cfg.eta * tree.output(f);
        }
        trees.push(tree);
    }
    Ok(GradientBoostedEnsemble {
        base_score,
        eta: cfg.eta,
        n_features: features[0].len(),
        trees,
    })
}

/// Keeps, for every (source, target) pair, only the sample with the highest
/// label; input order decides ties.
pub fn collapse_best_per_pair(samples: &[PairSample]) -> Vec<PairSample> {
    let mut best: Vec<PairSample> = Vec::new();
    for s in samples {
        match best
            .iter_mut()
            .find(|b| b.source == s.source && b.target == s.target)
        {
            Some(b) => {
                if s.label_f1 > b.label_f1 {
                    *b = s.clone();
                }
            }
            None => best.push(s.clone()),
        }
    }
    best
}

/// One held-out prediction from cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub source: String,
    pub target: String,
    pub fold: usize,
    pub feature_mode: FeatureMode,
    pub predicted_f1: f64,
    pub actual_f1: f64,
    pub runtime_seconds: f64,
}

/// Leave-one-target-out cross-validation: for each distinct target task, a
/// model is fitted on every sample with a different target and predicts the
/// held-out ones. Folds are ordered by target id; within a fold, samples
/// keep their input order.
pub fn cross_validate(
    samples: &[PairSample],
    mode: FeatureMode,
    cfg: &GBTConfig,
) -> Result<Vec<PredictionRow>> {
    let targets: BTreeSet<&str> = samples.iter().map(|s| s.target.as_str()).collect();
    if targets.len() < 2 {
        return Err(Error::validation(format!(
            "leave-one-target-out needs at least 2 distinct targets, got {}",
            targets.len()
        )));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (fold, held_out) in targets.iter().enumerate() {
        let train: Vec<PairSample> = samples
            .iter()
            .filter(|s| s.target != *held_out)
            .cloned()
            .collect();
        if train.is_empty() {
            return Err(Error::validation(format!(
                "fold for target '{held_out}' has an empty training set"
            )));
        }
        let model = fit(&train, mode, cfg)?;
        for s in samples.iter().filter(|s| s.target == *held_out) {
            let predicted = model.predict_clamped(&assemble_features(s, mode))?;
            rows.push(PredictionRow {
                source: s.source.clone(),
                target: s.target.clone(),
                fold,
                feature_mode: mode,
                predicted_f1: predicted,
                actual_f1: s.label_f1,
                runtime_seconds: s.runtime_seconds,
            });
        }
    }
    Ok(rows)
}

pub const PREDICTIONS_HEADER: &str =
    "source,target,fold,feature_mode,predicted_f1,actual_f1,runtime_seconds";

pub fn write_predictions(rows: &[PredictionRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{PREDICTIONS_HEADER}").map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.source, r.target, r.fold, r.feature_mode, r.predicted_f1, r.actual_f1, r.runtime_seconds
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 {
            if line.trim() != PREDICTIONS_HEADER {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: "unexpected predictions header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("bad {what} '{s}'"),
            })
        };
        rows.push(PredictionRow {
            source: fields[0].to_string(),
            target: fields[1].to_string(),
            fold: fields[2].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("bad fold '{}'", fields[2]),
            })?,
            feature_mode: fields[3].parse()?,
            predicted_f1: num(fields[4], "predicted_f1")?,
            actual_f1: num(fields[5], "actual_f1")?,
            runtime_seconds: num(fields[6], "runtime_seconds")?,
        });
    }
    Ok(rows)
}
