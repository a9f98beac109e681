//! User-level aggregation of per-tweet evidence.
//!
//! Two score families feed one threshold rule:
//!
//! * the vote score `(#Support - #Against) / N` over LLM votes, where `N`
//!   counts every supplied tweet including ignored ones, in `[-1, 1]`;
//! * the probability score, the mean per-tweet `P(Support)`, in `[0, 1]`.
//!
//! A user is predicted Support when the score is at or above the threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{StanceLabel, Verdict};
use crate::prompt::ParsedVote;

#[derive(Debug, Error, PartialEq)]
pub enum PoolingError {
    #[error("no tweets were supplied")]
    NoTweets,
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("threshold tuning needs both classes among training users")]
    SingleClass,
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub n_support: usize,
    pub n_against: usize,
    pub n_ignored: usize,
}

impl VoteTally {
    pub fn new(n_support: usize, n_against: usize, n_ignored: usize) -> Self {
        VoteTally {
            n_support,
            n_against,
            n_ignored,
        }
    }

    pub fn from_votes<'a>(votes: impl IntoIterator<Item = &'a ParsedVote>) -> Self {
        let mut tally = VoteTally::default();
        for vote in votes {
            tally.push(vote);
        }
        tally
    }

    pub fn push(&mut self, vote: &ParsedVote) {
        match vote {
            ParsedVote::Support => self.n_support += 1,
            ParsedVote::Against => self.n_against += 1,
            ParsedVote::Unparsable(_) => self.n_ignored += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.n_support + self.n_against + self.n_ignored
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceScore {
    pub value: f64,
    pub n_tweets: usize,
}

/// Majority over parsed votes; ignored tweets do not count. A tie goes to
/// Support. With no parsed votes at all the user is Unparsable.
pub fn majority_vote(tally: &VoteTally) -> Verdict {
    if tally.n_support == 0 && tally.n_against == 0 {
        Verdict::Unparsable
    } else if tally.n_support >= tally.n_against {
        Verdict::Support
    } else {
        Verdict::Against
    }
}

pub fn vote_score(tally: &VoteTally) -> Result<StanceScore, PoolingError> {
    let n = tally.total();
    if n == 0 {
        return Err(PoolingError::NoTweets);
    }
    Ok(StanceScore {
        value: (tally.n_support as f64 - tally.n_against as f64) / n as f64,
        n_tweets: n,
    })
}

pub fn prob_score(probs: &[f64]) -> Result<StanceScore, PoolingError> {
    if probs.is_empty() {
        return Err(PoolingError::NoTweets);
    }
    if let Some(&bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(PoolingError::BadProbability(bad));
    }
    Ok(StanceScore {
        value: probs.iter().sum::<f64>() / probs.len() as f64,
        n_tweets: probs.len(),
    })
}

pub fn apply_threshold(score: &StanceScore, threshold: f64) -> StanceLabel {
    if score.value >= threshold {
        StanceLabel::Support
    } else {
        StanceLabel::Against
    }
}

/// Per-target decision thresholds, persisted as `{target_id: threshold}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdConfig(pub BTreeMap<String, f64>);

impl ThresholdConfig {
    pub fn get(&self, target: &str) -> Option<f64> {
        self.0.get(target).copied()
    }

    pub fn insert(&mut self, target: impl Into<String>, threshold: f64) {
        self.0.insert(target.into(), threshold);
    }
}

/// Balanced accuracy of `score >= threshold` against the true labels.
pub fn threshold_balanced_accuracy(pairs: &[(f64, StanceLabel)], threshold: f64) -> f64 {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for &(score, truth) in pairs {
        let predicted_support = score >= threshold;
        match truth {
            StanceLabel::Support => {
                pos += 1;
                tp += predicted_support as usize;
            }
            StanceLabel::Against => {
                neg += 1;
                tn += !predicted_support as usize;
            }
        }
    }
    let recall = |hit: usize, all: usize| if all == 0 { 0.0 } else { hit as f64 / all as f64 };
    (recall(tp, pos) + recall(tn, neg)) / 2.0
}

/// Picks the threshold maximizing training balanced accuracy.
///
/// Candidates are the midpoints between consecutive distinct scores plus
/// `min - 1` and `max + 1`; these cover every distinct partition of the
/// sorted scores. Ties go to the smallest candidate. A single sorted sweep
/// keeps this `O(n log n)`.
pub fn tune_threshold(train: &[(StanceScore, StanceLabel)]) -> Result<f64, PoolingError> {
    let mut pairs: Vec<(f64, StanceLabel)> = Vec::with_capacity(train.len());
    for (score, label) in train {
        if !score.value.is_finite() {
            return Err(PoolingError::NonFinite(score.value));
        }
        pairs.push((score.value, *label));
    }
    let n_pos = pairs.iter().filter(|(_, l)| *l == StanceLabel::Support).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PoolingError::SingleClass);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Threshold below everything: all predicted Support.
    let lowest = pairs[0].0 - 1.0;
    let (mut below_pos, mut below_neg) = (0usize, 0usize);
    let ba = |below_pos: usize, below_neg: usize| {
        ((n_pos - below_pos) as f64 / n_pos as f64 + below_neg as f64 / n_neg as f64) / 2.0
    };
    let mut best = (ba(0, 0), lowest);
    let mut i = 0;
    while i < pairs.len() {
        let value = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == value {
            match pairs[i].1 {
                StanceLabel::Support => below_pos += 1,
                StanceLabel::Against => below_neg += 1,
            }
            i += 1;
        }
        let candidate = if i < pairs.len() {
            (value + pairs[i].0) / 2.0
        } else {
            value + 1.0
        };
        let score = ba(below_pos, below_neg);
        if score > best.0 {
            best = (score, candidate);
        }
    }
    Ok(best.1)
}
