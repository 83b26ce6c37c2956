//! Headline analyses over the cross-validated predictions: ranking error at
//! depth k per feature mode, and the budgeted search curve trading the best
//! F1 found per target against cumulative training runtime.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::LedgerRow;
use crate::metrics::rmse_at_k;
use crate::regressor::{FeatureMode, PredictionRow};
use crate::{Error, Result};

/// One row of the ranking-error table.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseCurveRow {
    pub feature_mode: FeatureMode,
    pub k: usize,
    pub rmse: f64,
}

/// RMSE over the top-k predictions (global ranking) for every feature mode
/// and every requested depth.
pub fn rmse_curve(
    pools: &[(FeatureMode, Vec<PredictionRow>)],
    ks: &[usize],
) -> Result<Vec<RmseCurveRow>> {
    if ks.is_empty() {
        return Err(Error::validation("no depths requested for the error curve".into()));
    }
    if pools.is_empty() {
        return Err(Error::validation("no prediction pools given".into()));
    }
    let mut out = Vec::new();
    for (mode, rows) in pools {
        if rows.is_empty() {
            return Err(Error::validation(format!("empty prediction pool for mode {mode}")));
        }
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.predicted_f1, r.actual_f1)).collect();
        for &k in ks {
            out.push(RmseCurveRow {
                feature_mode: *mode,
                k,
                rmse: rmse_at_k(&pairs, k)?,
            });
        }
    }
    Ok(out)
}

/// What one "try" at depth k consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    /// A try trains a pair's whole hyperparameter grid: candidates are
    /// (source, target) pairs scored by their best prediction, costing the
    /// sum of the pair's recorded runtimes and rewarding its best actual F1.
    PairCollapsed,
    /// A try is one individual run.
    PerRun,
}

/// One depth of the budget curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurvePoint {
    pub k: usize,
    pub mean_best_f1: f64,
    pub cumulative_runtime_seconds: f64,
}

/// The budget curve of one feature mode, with its exhaustive-search anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetCurve {
    pub feature_mode: FeatureMode,
    /// Mean over targets of the best actual F1 over all candidates.
    pub oracle_f1: f64,
    /// Total runtime of trying every candidate for every target.
    pub full_grid_runtime_seconds: f64,
    pub points: Vec<BudgetCurvePoint>,
}

struct Candidate {
    predicted: f64,
    actual: f64,
    cost: f64,
}

/// Simulates the guided search: per target, candidates are tried in
/// descending predicted order (ties by source id, then input order) and each
/// depth records the best F1 found so far and the runtime spent.
pub fn budget_search(
    rows: &[PredictionRow],
    ledger: &[LedgerRow],
    ks: &[usize],
    mode: BudgetMode,
) -> Result<BudgetCurve> {
    if ks.is_empty() {
        return Err(Error::validation("no depths requested for the budget curve".into()));
    }
    if ks.contains(&0) {
        return Err(Error::validation("budget depth k must be >= 1".into()));
    }
    if rows.is_empty() {
        return Err(Error::validation("no predictions to search over".into()));
    }
    let feature_mode = rows[0].feature_mode;
    if rows.iter().any(|r| r.feature_mode != feature_mode) {
        return Err(Error::validation("mixed feature modes in one budget search".into()));
    }

    let mut pair_runtime: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for l in ledger {
        if let Some(source) = &l.source {
            *pair_runtime
                .entry((source.as_str(), l.target.as_str()))
                .or_default() += l.runtime_seconds;
        }
    }

    let targets: BTreeSet<&str> = rows.iter().map(|r| r.target.as_str()).collect();
    let mut per_target: Vec<Vec<Candidate>> = Vec::new();
    for target in &targets {
        let target_rows: Vec<&PredictionRow> =
            rows.iter().filter(|r| r.target == *target).collect();
        let mut candidates: Vec<(String, Candidate)> = match mode {
            BudgetMode::PairCollapsed => {
                let mut by_source: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
                for r in &target_rows {
                    let entry = by_source
                        .entry(r.source.as_str())
                        .or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
                    entry.0 = entry.0.max(r.predicted_f1);
                    entry.1 = entry.1.max(r.actual_f1);
                }
                by_source
                    .into_iter()
                    .map(|(source, (predicted, actual))| {
                        let cost = *pair_runtime.get(&(source, target)).ok_or_else(|| {
                            Error::validation(format!(
                                "prediction for pair ({source}, {target}) has no ledger runs"
                            ))
                        })?;
                        Ok((
                            source.to_string(),
                            Candidate {
                                predicted,
                                actual,
                                cost,
                            },
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            BudgetMode::PerRun => target_rows
                .iter()
                .map(|r| {
                    if !pair_runtime.contains_key(&(r.source.as_str(), *target)) {
                        return Err(Error::validation(format!(
                            "prediction for pair ({}, {target}) has no ledger runs",
                            r.source
                        )));
                    }
                    Ok((
                        r.source.clone(),
                        Candidate {
                            predicted: r.predicted_f1,
                            actual: r.actual_f1,
                            cost: r.runtime_seconds,
                        },
                    ))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        candidates.sort_by(|a, b| {
            b.1.predicted
                .partial_cmp(&a.1.predicted)
                .expect("finite predictions")
                .then_with(|| a.0.cmp(&b.0))
        });
        per_target.push(candidates.into_iter().map(|(_, c)| c).collect());
    }

    // Prefix aggregates per target: best F1 so far and runtime spent.
    let prefix: Vec<(Vec<f64>, Vec<f64>)> = per_target
        .iter()
        .map(|cands| {
            let mut best = Vec::with_capacity(cands.len());
            let mut cost = Vec::with_capacity(cands.len());
            let mut b = f64::NEG_INFINITY;
            let mut c = 0.0;
            for cand in cands {
                b = b.max(cand.actual);
                c += cand.cost;
                best.push(b);
                cost.push(c);
            }
            (best, cost)
        })
        .collect();

    let n_targets = prefix.len() as f64;
    let oracle_f1 = prefix.iter().map(|(best, _)| *best.last().unwrap()).sum::<f64>() / n_targets;
    let full_grid_runtime_seconds: f64 = prefix.iter().map(|(_, cost)| *cost.last().unwrap()).sum();

    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut f1_sum = 0.0;
        let mut runtime = 0.0;
        for (best, cost) in &prefix {
            let depth = k.min(best.len()) - 1;
            f1_sum += best[depth];
            runtime += cost[depth];
        }
        points.push(BudgetCurvePoint {
            k,
            mean_best_f1: f1_sum / n_targets,
            cumulative_runtime_seconds: runtime,
        });
    }

    let mut sorted_points = points.clone();
    sorted_points.sort_by_key(|p| p.k);
    for w in sorted_points.windows(2) {
        assert!(
            w[1].mean_best_f1 >= w[0].mean_best_f1 - 1e-12,
            "budget curve regressed between k={} and k={}",
            w[0].k,
            w[1].k
        );
        assert!(
            w[1].cumulative_runtime_seconds >= w[0].cumulative_runtime_seconds,
            "budget runtime shrank between k={} and k={}",
            w[0].k,
            w[1].k
        );
    }

    Ok(BudgetCurve {
        feature_mode,
        oracle_f1,
        full_grid_runtime_seconds,
        points,
    })
}

/// F1-loss tolerances the summary is reported at.
pub const SUMMARY_TOLERANCES: [f64; 3] = [0.0, 0.05, 0.10];

/// One line of the runtime-reduction summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub feature_mode: String,
    pub f1_loss_tolerance: f64,
    pub runtime_reduction_pct: f64,
    pub k: usize,
}

/// For each tolerance: the smallest searched depth whose mean best F1 stays
/// within that fraction of the exhaustive ceiling, with the runtime saved.
pub fn summarize(curves: &[BudgetCurve], tolerances: &[f64]) -> Vec<SummaryEntry> {
    let mut out = Vec::new();
    for curve in curves {
        let mut points = curve.points.clone();
        points.sort_by_key(|p| p.k);
        for &tol in tolerances {
            let needed = (1.0 - tol) * curve.oracle_f1;
            let chosen = points
                .iter()
                .find(|p| p.mean_best_f1 >= needed)
                .unwrap_or_else(|| points.last().expect("non-empty curve"));
            let reduction = if curve.full_grid_runtime_seconds > 0.0 {
                (1.0 - chosen.cumulative_runtime_seconds / curve.full_grid_runtime_seconds) * 100.0
            } else {
                0.0
            };
            out.push(SummaryEntry {
                feature_mode: curve.feature_mode.to_string(),
                f1_loss_tolerance: tol,
                runtime_reduction_pct: reduction,
                k: chosen.k,
            });
        }
    }
    out
}

pub const RMSE_CURVE_HEADER: &str = "feature_mode,k,rmse";
pub const BUDGET_CURVE_HEADER: &str = "feature_mode,k,mean_best_f1,cumulative_runtime_seconds,oracle_f1";

pub fn write_rmse_curve(rows: &[RmseCurveRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{RMSE_CURVE_HEADER}").map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(w, "{},{},{}", r.feature_mode, r.k, r.rmse).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_budget_curves(curves: &[BudgetCurve], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{BUDGET_CURVE_HEADER}").map_err(|e| Error::io(path, e))?;
    for c in curves {
        for p in &c.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                c.feature_mode, p.k, p.mean_best_f1, p.cumulative_runtime_seconds, c.oracle_f1
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary(entries: &[SummaryEntry], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(entries).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes the full report bundle: both curve CSVs, the JSON summary, and a
/// plain-text manifest assembled by the caller (seeds, configs, hashes).
pub fn write_report(
    dir: &Path,
    rmse_rows: &[RmseCurveRow],
    curves: &[BudgetCurve],
    tolerances: &[f64],
    manifest_lines: &[String],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rmse_curve(rmse_rows, &dir.join("rmse_curve.csv"))?;
    write_budget_curves(curves, &dir.join("budget_curve.csv"))?;
    write_summary(&summarize(curves, tolerances), &dir.join("summary.json"))?;
    let manifest_path = dir.join("manifest.txt");
    let mut text = manifest_lines.join("\n");
    text.push('\n');
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}
