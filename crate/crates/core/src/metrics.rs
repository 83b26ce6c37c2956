//! Classification metrics (positive-class F1, accuracy, micro-averaged across
//! events) and predictor metrics (RMSE@k).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Confusion counts for one event.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl EventCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Per-event confusion counts; metrics micro-aggregate by summing across
/// events before computing ratios.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_event: BTreeMap<String, EventCounts>,
}

impl ConfusionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one (predicted, actual) binary outcome under an event id.
    pub fn record(&mut self, event_id: &str, predicted: bool, actual: bool) {
        let e = self.per_event.entry(event_id.to_string()).or_default();
        match (predicted, actual) {
            (true, true) => e.tp += 1,
            (true, false) => e.fp += 1,
            (false, true) => e.fn_ += 1,
            (false, false) => e.tn += 1,
        }
    }

    /// Micro-aggregation: counts summed across events.
    pub fn totals(&self) -> EventCounts {
        let mut t = EventCounts::default();
        for e in self.per_event.values() {
            t.tp += e.tp;
            t.fp += e.fp;
            t.fn_ += e.fn_;
            t.tn += e.tn;
        }
        t
    }
}

/// Positive-class F1 over micro-aggregated counts: `2tp / (2tp + fp + fn)`,
/// 0 when the denominator is 0.
pub fn positive_f1(counts: &ConfusionCounts) -> f64 {
    let t = counts.totals();
    let denom = 2 * t.tp + t.fp + t.fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * t.tp as f64 / denom as f64
    }
}

/// Micro-aggregated accuracy `(tp + tn) / total`; evaluating zero documents
/// is an error.
pub fn accuracy(counts: &ConfusionCounts) -> Result<f64> {
    let t = counts.totals();
    let total = t.total();
    if total == 0 {
        return Err(Error::validation("accuracy over zero documents".into()));
    }
    Ok((t.tp + t.tn) as f64 / total as f64)
}

/// RMSE over the top-`k` of `predictions` ranked by predicted value,
/// descending. Ties keep the input order (the caller's stable sample order).
pub fn rmse_at_k(predictions: &[(f64, f64)], k: usize) -> Result<f64> {
    if k == 0 || k > predictions.len() {
        return Err(Error::validation(format!(
            "k = {k} out of range 1..={}",
            predictions.len()
        )));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .0
            .partial_cmp(&predictions[a].0)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mse: f64 = order
        .iter()
        .take(k)
        .map(|&i| {
            let (p, a) = predictions[i];
            (p - a) * (p - a)
        })
        .sum::<f64>()
        / k as f64;
    Ok(mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        let mut c = ConfusionCounts::new();
        c.per_event.insert(
            "ev".into(),
            EventCounts { tp, fp, fn_, tn },
        );
        c
    }

    #[test]
    fn f1_degenerate_denominator_is_zero() {
        assert_eq!(positive_f1(&counts(0, 0, 0, 3)), 0.0);
    }

    #[test]
    fn f1_closed_form() {
        assert!((positive_f1(&counts(5, 5, 5, 0)) - 0.5).abs() < 1e-15);
        assert_eq!(positive_f1(&counts(7, 0, 0, 3)), 1.0);
    }

    #[test]
    fn accuracy_closed_form() {
        assert_eq!(accuracy(&counts(1, 0, 0, 3)).unwrap(), 1.0);
        assert_eq!(accuracy(&counts(1, 1, 0, 2)).unwrap(), 0.75);
        assert!(accuracy(&ConfusionCounts::new()).is_err());
    }

    #[test]
    fn rmse_at_k_hand_values() {
        let preds = vec![(0.9, 0.8), (0.5, 0.5), (0.1, 0.4)];
        let r1 = rmse_at_k(&preds, 1).unwrap();
        assert!((r1 - 0.1).abs() < 1e-12, "{r1}");
        let r2 = rmse_at_k(&preds, 2).unwrap();
        assert!((r2 - (0.01f64 / 2.0).sqrt()).abs() < 1e-12, "{r2}");
    }

    #[test]
    fn rmse_at_full_k_is_plain_rmse() {
        let preds = vec![(0.2, 0.1), (0.9, 0.7), (0.4, 0.4)];
        let full = rmse_at_k(&preds, preds.len()).unwrap();
        let plain = (preds.iter().map(|(p, a)| (p - a) * (p - a)).sum::<f64>()
            / preds.len() as f64)
            .sqrt();
        assert!((full - plain).abs() < 1e-15);
    }

    #[test]
    fn rmse_perfect_predictions() {
        let preds = vec![(0.3, 0.3), (0.8, 0.8)];
        assert_eq!(rmse_at_k(&preds, 2).unwrap(), 0.0);
    }

    #[test]
    fn rmse_rejects_out_of_range_k() {
        let preds = vec![(0.3, 0.3)];
        assert!(rmse_at_k(&preds, 0).is_err());
        assert!(rmse_at_k(&preds, 2).is_err());
    }

    #[test]
    fn rmse_tie_break_keeps_input_order() {
        // Equal predicted values: first input row wins the top slot.
        let preds = vec![(0.5, 0.0), (0.5, 0.5)];
        let r = rmse_at_k(&preds, 1).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn f1_invariant_to_event_partitioning() {
        // The same outcomes split across different event groupings.
        let outcomes = [
            (true, true),
            (true, false),
            (false, true),
            (false, false),
            (true, true),
            (false, true),
        ];
        let mut single = ConfusionCounts::new();
        for (p, a) in outcomes {
            single.record("all", p, a);
        }
        let mut partitioned = ConfusionCounts::new();
        for (i, (p, a)) in outcomes.iter().enumerate() {
            partitioned.record(&format!("ev{}", i % 3), *p, *a);
        }
        assert_eq!(positive_f1(&single), positive_f1(&partitioned));
        assert_eq!(accuracy(&single).unwrap(), accuracy(&partitioned).unwrap());
    }
}
