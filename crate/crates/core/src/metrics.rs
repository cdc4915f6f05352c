//! Set-based confusion counts, precision / recall / F-beta and accuracy.
//! Undefined ratios are `None`, never zero.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Predicted positives.
    pub fn retrieved(&self) -> usize {
        self.tp + self.fp
    }

    /// Adds one labelled binary decision.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (p, a) in pairs {
            c.record(p, a);
        }
        c
    }
}

/// Counts over `universe` for a predicted set against a truth set.
pub fn confusion(
    predicted: &BTreeSet<String>,
    truth: &BTreeSet<String>,
    universe: &BTreeSet<String>,
) -> Result<ConfusionCounts> {
    for (name, set) in [("predicted", predicted), ("truth", truth)] {
        if let Some(x) = set.iter().find(|x| !universe.contains(*x)) {
            return Err(Error::usage(format!(
                "{name} id {x:?} is not in the universe"
            )));
        }
    }
    Ok(ConfusionCounts::from_pairs(
        universe
            .iter()
            .map(|id| (predicted.contains(id), truth.contains(id))),
    ))
}

/// Precision, recall and F-beta of a counts table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrfScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_beta: Option<f64>,
}

/// Weighted harmonic mean of precision and recall; `None` when both are zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> Option<f64> {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    (denom > 0.0).then(|| (1.0 + b2) * precision * recall / denom)
}

pub fn precision_recall_f(counts: &ConfusionCounts, beta: f64) -> Result<PrfScore> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::usage(format!("beta must be positive, got {beta}")));
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f = match (precision, recall) {
        (Some(p), Some(r)) => f_beta(p, r, beta),
        _ => None,
    };
    Ok(PrfScore {
        precision,
        recall,
        f_beta: f,
    })
}

pub fn accuracy(counts: &ConfusionCounts) -> Result<f64> {
    match counts.total() {
        0 => Err(Error::usage("accuracy of an empty universe")),
        n => Ok((counts.tp + counts.tn) as f64 / n as f64),
    }
}

/// Rounds to 4 decimal places, ties to even.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round_ties_even() / 1e4
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "—".to_string(), |x| format!("{:.4}", round4(x)))
}

/// One row of an identification report: retrieved, relevant retrieved,
/// precision, recall, F1 and F0.5.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
}

impl ReportRow {
    pub fn new(label: impl Into<String>, counts: ConfusionCounts) -> Self {
        Self {
            label: label.into(),
            accuracy: accuracy(&counts).ok(),
            counts,
        }
    }
}

/// Aligned text table with columns RETR., REL., P, R, F1, F0.5, ACC.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        writeln!(
            f,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
            "stage", "RETR.", "REL.", "P", "R", "F1", "F0.5", "ACC."
        )?;
        for row in &self.rows {
            let one = precision_recall_f(&row.counts, 1.0).expect("beta is positive");
            let half = precision_recall_f(&row.counts, 0.5).expect("beta is positive");
            writeln!(
                f,
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
                row.label,
                row.counts.retrieved(),
                row.counts.tp,
                cell(one.precision),
                cell(one.recall),
                cell(one.f_beta),
                cell(half.f_beta),
                cell(row.accuracy),
            )?;
        }
        Ok(())
    }
}
