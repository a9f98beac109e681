//! Per-user tweet corpora: JSON-Lines loading with atomic validation,
//! reproducible train/test splits, and nested tweet sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::StanceLabel;
use crate::seed;

pub type TargetId = String;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: duplicate user_id {user_id:?}")]
    DuplicateUser { line: usize, user_id: String },
    #[error("split needs at least 2 users, got {0}")]
    TooFewUsers(usize),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("user {user_id:?} has no {mode} tweets for target {target:?}")]
    NoTweets {
        user_id: String,
        target: String,
        mode: SampleMode,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    #[serde(rename = "id")]
    pub tweet_id: String,
    pub text: String,
    /// Targets this tweet explicitly references. Empty means agnostic for
    /// every target.
    #[serde(default)]
    pub targets: BTreeSet<TargetId>,
}

impl Tweet {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Tweet {
            tweet_id: id.into(),
            text: text.into(),
            targets: BTreeSet::new(),
        }
    }

    pub fn referencing(mut self, target: impl Into<String>) -> Self {
        self.targets.insert(target.into());
        self
    }

    /// Agnostic is decided per target: a tweet about another target still
    /// counts.
    pub fn is_agnostic_for(&self, target: &str) -> bool {
        !self.targets.contains(target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub stances: BTreeMap<TargetId, StanceLabel>,
    pub tweets: Vec<Tweet>,
}

impl UserRecord {
    pub fn stance(&self, target: &str) -> Option<StanceLabel> {
        self.stances.get(target).copied()
    }

    pub fn tweets_in_mode<'a>(
        &'a self,
        target: &'a str,
        mode: SampleMode,
    ) -> impl Iterator<Item = &'a Tweet> + 'a {
        self.tweets.iter().filter(move |t| mode.admits(t, target))
    }

    fn validate(&self) -> Result<(), String> {
        if self.user_id.is_empty() {
            return Err("user_id is empty".into());
        }
        let mut seen = HashSet::new();
        for tweet in &self.tweets {
            if tweet.tweet_id.is_empty() {
                return Err("tweet id is empty".into());
            }
            if !seen.insert(tweet.tweet_id.as_str()) {
                return Err(format!("duplicate tweet id {:?}", tweet.tweet_id));
            }
            if tweet.text.trim().is_empty() {
                return Err(format!("tweet {:?} has empty text", tweet.tweet_id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Agnostic,
    Specific,
}

impl SampleMode {
    pub fn admits(self, tweet: &Tweet, target: &str) -> bool {
        match self {
            SampleMode::Agnostic => tweet.is_agnostic_for(target),
            SampleMode::Specific => !tweet.is_agnostic_for(target),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SampleMode::Agnostic => "agnostic",
            SampleMode::Specific => "specific",
        }
    }
}

impl std::fmt::Display for SampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SampleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agnostic" => Ok(SampleMode::Agnostic),
            "specific" => Ok(SampleMode::Specific),
            _ => Err(format!("unknown sampling mode {s:?}")),
        }
    }
}

/// Parses JSON-Lines corpus text. Any malformed line rejects the whole input.
pub fn parse_corpus(text: &str) -> Result<Vec<UserRecord>, CorpusError> {
    let mut users = Vec::new();
    let mut ids = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let user: UserRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Schema {
            line,
            message: e.to_string(),
        })?;
        user.validate()
            .map_err(|message| CorpusError::Schema { line, message })?;
        if !ids.insert(user.user_id.clone()) {
            return Err(CorpusError::DuplicateUser {
                line,
                user_id: user.user_id,
            });
        }
        users.push(user);
    }
    Ok(users)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<UserRecord>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

pub fn write_corpus<W: Write>(mut out: W, users: &[UserRecord]) -> io::Result<()> {
    for user in users {
        serde_json::to_writer(&mut out, user)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub seed: u64,
}

/// Uniform random split, unstratified. `|train| = round(fraction * n)`,
/// clamped so both sides are nonempty.
pub fn split_users(
    users: &[UserRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    if users.len() < 2 {
        return Err(CorpusError::TooFewUsers(users.len()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::BadFraction(train_fraction));
    }
    let n = users.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut ids: Vec<&str> = users.iter().map(|u| u.user_id.as_str()).collect();
    ids.shuffle(&mut seed::rng(seed, &[b"split"]));
    Ok(CorpusSplit {
        train: ids[..n_train].iter().map(|s| s.to_string()).collect(),
        test: ids[n_train..].iter().map(|s| s.to_string()).collect(),
        seed,
    })
}

/// Draws `min(n, available)` tweets without replacement. The draw is a
/// prefix of one seeded permutation of the eligible tweets, so a smaller
/// budget always yields a subset of a larger one.
pub fn sample_tweets<'a>(
    user: &'a UserRecord,
    target: &str,
    mode: SampleMode,
    n: usize,
    seed: u64,
) -> Result<Vec<&'a Tweet>, CorpusError> {
    let mut pool: Vec<&'a Tweet> = user.tweets.iter().filter(|t| mode.admits(t, target)).collect();
    if pool.is_empty() {
        return Err(CorpusError::NoTweets {
            user_id: user.user_id.clone(),
            target: target.to_string(),
            mode,
        });
    }
    let mut rng = seed::rng(
        seed,
        &[
            b"sample",
            user.user_id.as_bytes(),
            target.as_bytes(),
            mode.as_str().as_bytes(),
        ],
    );
    pool.shuffle(&mut rng);
    pool.truncate(n);
    Ok(pool)
}
