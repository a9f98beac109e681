//! Tweet text to numeric vectors: tokenization, TF-IDF and precomputed
//! sentence embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("no term reaches min_df = {0}")]
    EmptyVocabulary(usize),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("embeddings line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("embeddings line {line}: dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embeddings line {line}: duplicate tweet_id {tweet_id:?}")]
    DuplicateId { line: usize, tweet_id: String },
    #[error("no embedding for tweet {0:?}")]
    MissingEmbedding(String),
    #[error("embeddings file has no rows")]
    NoEmbeddings,
}

/// Lowercases, drops URLs and @-mentions, strips `#`, splits on anything
/// non-alphanumeric and drops tokens shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    for word in lowered.split_whitespace() {
        if word.starts_with('@') || word.starts_with("http://") || word.starts_with("https://") {
            continue;
        }
        tokens.extend(
            word.split(|c: char| !c.is_alphanumeric())
                .filter(|t| t.chars().count() >= 2)
                .map(str::to_string),
        );
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub dfs: Vec<usize>,
    pub n_docs: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_parts(terms: Vec<String>, dfs: Vec<usize>, n_docs: usize) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            terms,
            dfs,
            n_docs,
            index,
        }
    }

    /// Rebuilds the term index after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_parts(self.terms, self.dfs, self.n_docs)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, column: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.dfs[column] as f64)).ln() + 1.0
    }
}

/// Terms with document frequency at least `min_df`, in lexicographic order.
pub fn fit_vocabulary<D: AsRef<[String]>>(docs: &[D], min_df: usize) -> Result<Vocabulary, FeatureError> {
    if docs.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let distinct: BTreeSet<&str> = doc.as_ref().iter().map(String::as_str).collect();
        for term in distinct {
            *df.entry(term).or_default() += 1;
        }
    }
    let (terms, dfs): (Vec<String>, Vec<usize>) = df
        .into_iter()
        .filter(|&(_, count)| count >= min_df)
        .map(|(t, c)| (t.to_string(), c))
        .unzip();
    if terms.is_empty() {
        return Err(FeatureError::EmptyVocabulary(min_df));
    }
    Ok(Vocabulary::from_parts(terms, dfs, docs.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureVector {
    /// Strictly increasing indices, nonzero values.
    Sparse {
        dim: usize,
        indices: Vec<usize>,
        values: Vec<f64>,
    },
    Dense(Vec<f64>),
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        match self {
            FeatureVector::Sparse { dim, .. } => *dim,
            FeatureVector::Dense(v) => v.len(),
        }
    }

    pub fn get(&self, column: usize) -> f64 {
        match self {
            FeatureVector::Sparse {
                indices, values, ..
            } => indices
                .binary_search(&column)
                .map(|pos| values[pos])
                .unwrap_or(0.0),
            FeatureVector::Dense(v) => v[column],
        }
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        match self {
            FeatureVector::Sparse {
                indices, values, ..
            } => indices.iter().zip(values).map(|(&i, v)| weights[i] * v).sum(),
            FeatureVector::Dense(v) => v.iter().zip(weights).map(|(a, b)| a * b).sum(),
        }
    }

    /// `acc += scale * self`
    pub fn add_scaled_to(&self, acc: &mut [f64], scale: f64) {
        match self {
            FeatureVector::Sparse {
                indices, values, ..
            } => {
                for (&i, v) in indices.iter().zip(values) {
                    acc[i] += scale * v;
                }
            }
            FeatureVector::Dense(v) => {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += scale * x;
                }
            }
        }
    }

    pub fn norm(&self) -> f64 {
        let squares: f64 = match self {
            FeatureVector::Sparse { values, .. } => values.iter().map(|v| v * v).sum(),
            FeatureVector::Dense(v) => v.iter().map(|x| x * x).sum(),
        };
        squares.sqrt()
    }
}

/// Raw term counts times smoothed idf, L2-normalized. Out-of-vocabulary
/// terms are ignored; a document with no known term maps to the zero vector.
pub fn tfidf_vector(doc: &[String], vocab: &Vocabulary) -> FeatureVector {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for term in doc {
        if let Some(column) = vocab.index_of(term) {
            *counts.entry(column).or_default() += 1;
        }
    }
    let (indices, mut values): (Vec<usize>, Vec<f64>) = counts
        .into_iter()
        .map(|(column, count)| (column, count as f64 * vocab.idf(column)))
        .unzip();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    FeatureVector::Sparse {
        dim: vocab.len(),
        indices,
        values,
    }
}

#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    tweet_id: String,
    vector: Vec<f64>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, tweet_id: &str) -> Result<&[f64], FeatureError> {
        self.vectors
            .get(tweet_id)
            .map(Vec::as_slice)
            .ok_or_else(|| FeatureError::MissingEmbedding(tweet_id.to_string()))
    }

    pub fn vector(&self, tweet_id: &str) -> Result<FeatureVector, FeatureError> {
        self.get(tweet_id).map(|v| FeatureVector::Dense(v.to_vec()))
    }
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable, FeatureError> {
    let mut table = EmbeddingTable::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow = serde_json::from_str(raw).map_err(|e| FeatureError::Schema {
            line,
            message: e.to_string(),
        })?;
        if table.vectors.is_empty() {
            if row.vector.is_empty() {
                return Err(FeatureError::Schema {
                    line,
                    message: "empty vector".into(),
                });
            }
            table.dim = row.vector.len();
        } else if row.vector.len() != table.dim {
            return Err(FeatureError::DimensionMismatch {
                line,
                expected: table.dim,
                found: row.vector.len(),
            });
        }
        if table.vectors.contains_key(&row.tweet_id) {
            return Err(FeatureError::DuplicateId {
                line,
                tweet_id: row.tweet_id,
            });
        }
        table.vectors.insert(row.tweet_id, row.vector);
    }
    if table.vectors.is_empty() {
        return Err(FeatureError::NoEmbeddings);
    }
    Ok(table)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, FeatureError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_embeddings(&text)
}
