//! Confusion counts, per-class F1 and balanced accuracy, plus
//! tweets-per-user sweeps.
//!
//! Support is the positive class. An unparsable prediction counts as a miss
//! for the true class and is charged to no class's false positives.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{StanceLabel, Verdict};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{preds} predictions but {truth} labels")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("nothing to score")]
    Empty,
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("sweep grid must be strictly ascending")]
    UnsortedGrid,
    #[error("budget {0} exceeds the tweets available to every user")]
    BudgetTooLarge(usize),
    #[error("runner failed at budget {n}: {message}")]
    Runner { n: usize, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_unparsable: usize,
    /// Unparsable predictions for true-Support users.
    pub unparsable_support: usize,
}

impl ConfusionCounts {
    pub fn tally(preds: &[Verdict], truth: &[StanceLabel]) -> Result<Self, MetricsError> {
        if preds.len() != truth.len() {
            return Err(MetricsError::LengthMismatch {
                preds: preds.len(),
                truth: truth.len(),
            });
        }
        if preds.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut c = ConfusionCounts::default();
        for (p, t) in preds.iter().zip(truth) {
            match (p, t) {
                (Verdict::Support, StanceLabel::Support) => c.tp += 1,
                (Verdict::Support, StanceLabel::Against) => c.fp += 1,
                (Verdict::Against, StanceLabel::Against) => c.tn += 1,
                (Verdict::Against, StanceLabel::Support) => c.fn_ += 1,
                (Verdict::Unparsable, t) => {
                    c.n_unparsable += 1;
                    if *t == StanceLabel::Support {
                        c.unparsable_support += 1;
                    }
                }
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_ + self.n_unparsable
    }

    fn n_support(&self) -> usize {
        self.tp + self.fn_ + self.unparsable_support
    }

    fn n_against(&self) -> usize {
        self.tn + self.fp + (self.n_unparsable - self.unparsable_support)
    }

    pub fn recall_support(&self) -> f64 {
        ratio(self.tp, self.n_support())
    }

    pub fn recall_against(&self) -> f64 {
        ratio(self.tn, self.n_against())
    }

    pub fn f1_support(&self) -> f64 {
        f1(ratio(self.tp, self.tp + self.fp), self.recall_support())
    }

    pub fn f1_against(&self) -> f64 {
        f1(ratio(self.tn, self.tn + self.fn_), self.recall_against())
    }

    pub fn balanced_accuracy(&self) -> f64 {
        (self.recall_support() + self.recall_against()) / 2.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// The (target, method, budget) a report belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub target: String,
    pub method: String,
    pub tweets_per_user: usize,
}

impl Cell {
    pub fn new(target: impl Into<String>, method: impl Into<String>, tweets_per_user: usize) -> Self {
        Cell {
            target: target.into(),
            method: method.into(),
            tweets_per_user,
        }
    }

    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.target, self.method, self.tweets_per_user)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cell: Cell,
    pub f1_support: f64,
    pub f1_against: f64,
    pub balanced_accuracy: f64,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    pub fn from_counts(cell: Cell, counts: ConfusionCounts) -> Self {
        MetricsReport {
            cell,
            f1_support: counts.f1_support(),
            f1_against: counts.f1_against(),
            balanced_accuracy: counts.balanced_accuracy(),
            counts,
        }
    }
}

pub fn score(cell: Cell, preds: &[Verdict], truth: &[StanceLabel]) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport::from_counts(cell, ConfusionCounts::tally(preds, truth)?))
}

pub const CSV_HEADER: &str =
    "target,method,tweets_per_user,f1_support,f1_against,balanced_accuracy,tp,fp,tn,fn,n_unparsable";

pub fn write_csv<W: Write>(mut out: W, reports: &[MetricsReport]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        let c = &r.counts;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.cell.target,
            r.cell.method,
            r.cell.tweets_per_user,
            r.f1_support,
            r.f1_against,
            r.balanced_accuracy,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            c.n_unparsable
        )?;
    }
    out.flush()
}

/// JSON document keyed by `target/method/tweets_per_user`.
pub fn to_json(reports: &[MetricsReport]) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|r| (r.cell.key(), serde_json::to_value(r).expect("report serializes")))
        .collect();
    serde_json::Value::Object(map)
}

/// One evaluated user: prediction and truth.
pub type Outcome = (Verdict, StanceLabel);

/// Scores the same users at every budget in `n_grid`.
///
/// `max_available` is the largest tweet pool any user has; a budget above it
/// cannot be met by anyone. `runner(n)` returns per-user outcomes at budget
/// `n`; callers draw nested samples so a budget only adds tweets.
pub fn sweep_curve<F, E>(
    target: &str,
    method: &str,
    n_grid: &[usize],
    max_available: usize,
    mut runner: F,
) -> Result<Vec<(usize, MetricsReport)>, MetricsError>
where
    F: FnMut(usize) -> Result<Vec<Outcome>, E>,
    E: std::fmt::Display,
{
    if n_grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::UnsortedGrid);
    }
    if let Some(&n) = n_grid.iter().find(|&&n| n > max_available) {
        return Err(MetricsError::BudgetTooLarge(n));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let outcomes = runner(n).map_err(|e| MetricsError::Runner {
            n,
            message: e.to_string(),
        })?;
        let (preds, truth): (Vec<Verdict>, Vec<StanceLabel>) = outcomes.into_iter().unzip();
        rows.push((n, score(Cell::new(target, method, n), &preds, &truth)?));
    }
    Ok(rows)
}
