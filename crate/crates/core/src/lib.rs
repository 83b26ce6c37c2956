//! Predicting which source→target task pairs benefit from inductive transfer,
//! before training the combined model.
//!
//! The library trains small analytically-differentiable text classifiers per
//! task, extracts per-term conductance attributions along an integrated-gradients
//! path, derives shared-active-term (ANSAT) similarity features for every task
//! pair, and fits gradient-boosted regression trees that predict the combined
//! model's positive-class F1 from those features. Evaluation utilities produce
//! RMSE@k curves and budgeted-search (performance vs. cumulative runtime)
//! tables from cross-validated predictions.
//!
//! Modules map one-to-one onto pipeline stages:
//!
//! * [`tasks`]: corpus representation, JSONL ingestion, stratified splitting,
//!   and a synthetic corpus generator with controllable inter-task vocabulary
//!   overlap.
//! * [`classifier`]: mean-pooled embedding + ReLU hidden layer binary
//!   classifier with exact analytic gradients, SGD training, and grid search.
//! * [`attribution`]: integrated gradients and per-layer conductance,
//!   normalized into per-document `[-1, 1]` term scores.
//! * [`ansat`]: average number of shared active terms over a threshold grid.
//! * [`regressor`]: exact-greedy gradient-boosted regression trees.
//! * [`metrics`]: positive-class F1, accuracy, RMSE@k.
//! * [`evaluation`]: RMSE@k curves, budget search, and report emission.

pub mod ansat;
pub mod attribution;
pub mod classifier;
pub mod evaluation;
pub mod metrics;
pub mod regressor;
pub mod seed;
pub mod tasks;

mod error;

pub use error::{Error, Result};
