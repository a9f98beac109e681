//! Post-hoc analyses relating target-agnostic text to stance: point-biserial
//! correlations for individual terms and for moral-foundation lexicon
//! scores.

mod lexicon;
pub mod stats;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{
    lexicon_scores, score_texts, Dimension, Foundation, Lexicon, LexiconScores, Polarity, BUNDLED_LEXICON,
};

use crate::corpus::UserRecord;
use crate::features::{tfidf_vector, tokenize, Vocabulary};
use crate::label::StanceLabel;

pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 3 observations, got {0}")]
    TooFew(usize),
    #[error("{x} values but {y} labels")]
    LengthMismatch { x: usize, y: usize },
    #[error("feature is constant; correlation is undefined")]
    ConstantFeature,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("user {user:?} has no stance label for target {target:?}")]
    MissingLabel { user: String, target: String },
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Pearson correlation of `x` with `y` coded {0, 1}, and its two-sided
/// p-value from `t = r sqrt((n - 2) / (1 - r^2))` on `n - 2` degrees of
/// freedom.
pub fn point_biserial(x: &[f64], y: &[bool]) -> Result<(f64, f64), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch { x: x.len(), y: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::TooFew(n));
    }
    let ones = y.iter().filter(|b| **b).count();
    if ones == 0 || ones == n {
        return Err(AnalysisError::SingleClass);
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = ones as f64 / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = if *yi { 1.0 } else { 0.0 } - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(AnalysisError::ConstantFeature);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        stats::student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok((r, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub feature: String,
    pub target: String,
    pub r: f64,
    pub n: usize,
    pub p_value: f64,
    pub significant: bool,
}

impl CorrelationRow {
    pub fn new(feature: String, target: &str, n: usize, (r, p_value): (f64, f64)) -> Self {
        CorrelationRow {
            feature,
            target: target.to_string(),
            r,
            n,
            p_value,
            significant: p_value < SIGNIFICANCE_LEVEL,
        }
    }
}

pub const CSV_HEADER: &str = "feature,target,r,n,p_value,significant";

pub fn write_csv<W: Write>(mut out: W, rows: &[CorrelationRow]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.feature, row.target, row.r, row.n, row.p_value, row.significant
        )?;
    }
    out.flush()
}

fn stance_codes(users: &[&UserRecord], target: &str) -> Result<Vec<bool>, AnalysisError> {
    users
        .iter()
        .map(|u| {
            u.stance(target)
                .map(|l| l == StanceLabel::Support)
                .ok_or_else(|| AnalysisError::MissingLabel {
                    user: u.user_id.clone(),
                    target: target.to_string(),
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordCorrelations {
    pub rows: Vec<CorrelationRow>,
    /// Terms skipped because their per-user feature was constant.
    pub skipped_constant: usize,
}

/// Per-user feature: mean TF-IDF weight of the term over the user's
/// agnostic tweets. Rows come back sorted by `|r|` descending, ties by term,
/// truncated to `top_k`.
pub fn keyword_correlations(
    users: &[&UserRecord],
    target: &str,
    vocab: &Vocabulary,
    top_k: usize,
) -> Result<KeywordCorrelations, AnalysisError> {
    let codes = stance_codes(users, target)?;
    let mut features = vec![vec![0.0; users.len()]; vocab.len()];
    for (u, user) in users.iter().enumerate() {
        let tweets: Vec<_> = user.tweets.iter().filter(|t| t.is_agnostic_for(target)).collect();
        if tweets.is_empty() {
            continue;
        }
        for tweet in &tweets {
            let v = tfidf_vector(&tokenize(&tweet.text), vocab);
            if let crate::features::FeatureVector::Sparse { indices, values, .. } = v {
                for (i, w) in indices.into_iter().zip(values) {
                    features[i][u] += w;
                }
            }
        }
        let count = tweets.len() as f64;
        for column in features.iter_mut() {
            column[u] /= count;
        }
    }
    let mut rows = Vec::new();
    let mut skipped_constant = 0;
    for (term, column) in vocab.terms.iter().zip(&features) {
        match point_biserial(column, &codes) {
            Ok(rp) => rows.push(CorrelationRow::new(term.clone(), target, users.len(), rp)),
            Err(AnalysisError::ConstantFeature) => skipped_constant += 1,
            Err(e) => return Err(e),
        }
    }
    rows.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()).then_with(|| a.feature.cmp(&b.feature)));
    rows.truncate(top_k);
    Ok(KeywordCorrelations {
        rows,
        skipped_constant,
    })
}

/// One row per moral dimension, in fixed dimension order.
pub fn lexicon_correlations(
    users: &[&UserRecord],
    target: &str,
    lexicon: &Lexicon,
) -> Result<Vec<CorrelationRow>, AnalysisError> {
    let codes = stance_codes(users, target)?;
    let scores: Vec<LexiconScores> = users.iter().map(|u| lexicon_scores(u, target, lexicon)).collect();
    Dimension::ALL
        .iter()
        .map(|dim| {
            let column: Vec<f64> = scores.iter().map(|s| s.scores[dim]).collect();
            Ok(CorrelationRow::new(dim.to_string(), target, users.len(), point_biserial(&column, &codes)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn small_examples() {
        let (r, _) = point_biserial(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]).unwrap();
        assert!((r - 0.894427190999916).abs() < 1e-12);
        let (r, p) = point_biserial(&[0.0, 0.0, 1.0, 1.0], &[false, false, true, true]).unwrap();
        assert_eq!((r, p), (1.0, 0.0));
        assert!(matches!(point_biserial(&[2.0; 4], &[false, true, true, false]), Err(AnalysisError::ConstantFeature)));
        assert!(matches!(point_biserial(&[1.0, 2.0, 3.0], &[true; 3]), Err(AnalysisError::SingleClass)));
        assert!(matches!(point_biserial(&[1.0, 2.0], &[true, false]), Err(AnalysisError::TooFew(2))));
    }

    #[test]
    fn significance_flag_follows_p() {
        let row = CorrelationRow::new("x".into(), "t", 10, (0.5, 0.0099));
        assert!(row.significant);
        let row = CorrelationRow::new("x".into(), "t", 10, (0.5, 0.01));
        assert!(!row.significant);
    }

    proptest! {
        #[test]
        fn matches_direct_pearson_and_flips_with_coding(
            rows in proptest::collection::vec((-10.0f64..10.0, any::<bool>()), 3..80)
        ) {
            let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let y: Vec<bool> = rows.iter().map(|r| r.1).collect();
            prop_assume!(y.iter().any(|b| *b) && y.iter().any(|b| !*b));
            let (r, p) = point_biserial(&x, &y).unwrap();
            let yf: Vec<f64> = y.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
            prop_assert!((r - pearson(&x, &yf)).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((0.0..=1.0).contains(&p));
            let flipped: Vec<bool> = y.iter().map(|b| !b).collect();
            let (r2, p2) = point_biserial(&x, &flipped).unwrap();
            prop_assert!((r + r2).abs() < 1e-12);
            prop_assert!((p - p2).abs() < 1e-12);
        }
    }
}
