//! Per-user prediction for every method, producing rows in the shared
//! predictions format.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{predict_user, FeatureKind, ModelError, ModelKind, TargetModel};
use crate::corpus::{sample_tweets, CorpusSplit, SampleMode, Tweet, UserRecord};
use crate::features::EmbeddingTable;
use crate::label::{StanceLabel, Verdict};
use crate::llm::{ChatRequest, LlmClient};
use crate::pooling::{apply_threshold, vote_score, VoteTally};
use crate::prompt::{parse_reply, render_prompt, ParsedVote, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "llm")]
    Llm,
    #[serde(rename = "llm-pooled")]
    LlmPooled,
    #[serde(rename = "tfidf-logreg")]
    TfidfLogreg,
    #[serde(rename = "embed-logreg")]
    EmbedLogreg,
    #[serde(rename = "embed-ranfor")]
    EmbedRanfor,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Llm,
        Method::LlmPooled,
        Method::TfidfLogreg,
        Method::EmbedLogreg,
        Method::EmbedRanfor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Llm => "llm",
            Method::LlmPooled => "llm-pooled",
            Method::TfidfLogreg => "tfidf-logreg",
            Method::EmbedLogreg => "embed-logreg",
            Method::EmbedRanfor => "embed-ranfor",
        }
    }

    pub fn is_llm(self) -> bool {
        matches!(self, Method::Llm | Method::LlmPooled)
    }

    /// Feature and model kinds of a trained method.
    pub fn trained_kind(self) -> Option<(FeatureKind, ModelKind)> {
        match self {
            Method::TfidfLogreg => Some((FeatureKind::Tfidf, ModelKind::Logreg)),
            Method::EmbedLogreg => Some((FeatureKind::Embed, ModelKind::Logreg)),
            Method::EmbedRanfor => Some((FeatureKind::Embed, ModelKind::Ranfor)),
            Method::Llm | Method::LlmPooled => None,
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(self, Method::EmbedLogreg | Method::EmbedRanfor)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// What a prediction was based on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Llm {
        tweet_ids: Vec<String>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        reply: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        error: Option<String>,
    },
    Pooled {
        tweet_ids: Vec<String>,
        n_support: usize,
        n_against: usize,
        n_ignored: usize,
        threshold: f64,
        failures: usize,
    },
    Model {
        tweet_ids: Vec<String>,
        threshold: f64,
    },
    Skipped {
        error: String,
    },
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub user_id: String,
    pub target: String,
    pub method: Method,
    pub tweets_per_user: usize,
    pub predicted: Verdict,
    /// Pooled vote score or mean probability; absent for single-prompt runs.
    pub score: Option<f64>,
    pub evidence: Evidence,
}

impl PredictionRow {
    /// Whether the prediction counts as a failure to be logged.
    pub fn failed(&self) -> bool {
        match &self.evidence {
            Evidence::Llm { error, .. } => error.is_some(),
            Evidence::Pooled { failures, .. } => *failures > 0,
            Evidence::Skipped { .. } => true,
            Evidence::Model { .. } => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub n_tweets: usize,
    pub mode: SampleMode,
    pub seed: u64,
    pub llm_model: String,
}

impl RunConfig {
    pub fn new(method: Method, n_tweets: usize) -> Self {
        RunConfig {
            method,
            n_tweets,
            mode: SampleMode::Agnostic,
            seed: 0,
            llm_model: "gpt-4o".to_string(),
        }
    }
}

/// Users that carry a stance label for `target`, optionally restricted to
/// one side of a split, in corpus order.
pub fn labelled_users<'a>(
    users: &'a [UserRecord],
    target: &str,
    keep: Option<&std::collections::BTreeSet<String>>,
) -> Vec<&'a UserRecord> {
    users
        .iter()
        .filter(|u| u.stance(target).is_some())
        .filter(|u| keep.is_none_or(|k| k.contains(&u.user_id)))
        .collect()
}

/// Which side of a split to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    All,
    Train,
    Test,
}

impl SplitSide {
    pub fn select(self, split: &CorpusSplit) -> Option<&std::collections::BTreeSet<String>> {
        match self {
            SplitSide::All => None,
            SplitSide::Train => Some(&split.train),
            SplitSide::Test => Some(&split.test),
        }
    }
}

impl FromStr for SplitSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(SplitSide::All),
            "train" => Ok(SplitSide::Train),
            "test" => Ok(SplitSide::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

fn row(user: &UserRecord, target: &str, config: &RunConfig) -> impl Fn(Verdict, Option<f64>, Evidence) -> PredictionRow {
    let user_id = user.user_id.clone();
    let target = target.to_string();
    let method = config.method;
    let n = config.n_tweets;
    move |predicted, score, evidence| PredictionRow {
        user_id: user_id.clone(),
        target: target.clone(),
        method,
        tweets_per_user: n,
        predicted,
        score,
        evidence,
    }
}

fn ids(tweets: &[&Tweet]) -> Vec<String> {
    tweets.iter().map(|t| t.tweet_id.clone()).collect()
}

fn ask(client: &LlmClient, model: &str, tweets: &[&str], target: &TargetSpec) -> Result<String, String> {
    let prompt = render_prompt(tweets, target).map_err(|e| e.to_string())?;
    client
        .complete(&ChatRequest::new(model, prompt))
        .map(|r| r.content)
        .map_err(|e| e.to_string())
}

fn verdict_of(vote: &ParsedVote) -> Verdict {
    match vote.label() {
        Some(label) => label.into(),
        None => Verdict::Unparsable,
    }
}

/// LLM prediction for one user. Failures become Unparsable with the error
/// kept in the evidence.
pub fn predict_llm_user(
    client: &LlmClient,
    user: &UserRecord,
    target: &TargetSpec,
    config: &RunConfig,
    threshold: f64,
) -> PredictionRow {
    let make = row(user, &target.target_id, config);
    let tweets = match sample_tweets(user, &target.target_id, config.mode, config.n_tweets, config.seed) {
        Ok(t) => t,
        Err(e) => return make(Verdict::Unparsable, None, Evidence::Skipped { error: e.to_string() }),
    };
    let tweet_ids = ids(&tweets);
    match config.method {
        Method::Llm => {
            let texts: Vec<&str> = tweets.iter().map(|t| t.text.as_str()).collect();
            match ask(client, &config.llm_model, &texts, target) {
                Ok(reply) => make(
                    verdict_of(&parse_reply(&reply)),
                    None,
                    Evidence::Llm {
                        tweet_ids,
                        reply: Some(reply),
                        error: None,
                    },
                ),
                Err(error) => make(
                    Verdict::Unparsable,
                    None,
                    Evidence::Llm {
                        tweet_ids,
                        reply: None,
                        error: Some(error),
                    },
                ),
            }
        }
        _ => {
            let mut tally = VoteTally::default();
            let mut failures = 0;
            for tweet in &tweets {
                match ask(client, &config.llm_model, &[tweet.text.as_str()], target) {
                    Ok(reply) => tally.push(&parse_reply(&reply)),
                    Err(_) => {
                        failures += 1;
                        tally.n_ignored += 1;
                    }
                }
            }
            let score = vote_score(&tally).expect("at least one tweet was sampled");
            // at threshold 0 this is exactly the majority vote
            let predicted = if tally.n_support + tally.n_against == 0 {
                Verdict::Unparsable
            } else {
                apply_threshold(&score, threshold).into()
            };
            make(
                predicted,
                Some(score.value),
                Evidence::Pooled {
                    tweet_ids,
                    n_support: tally.n_support,
                    n_against: tally.n_against,
                    n_ignored: tally.n_ignored,
                    threshold,
                    failures,
                },
            )
        }
    }
}

/// Runs an LLM method over `users` in parallel; rows keep input order.
pub fn predict_llm(
    client: &LlmClient,
    users: &[&UserRecord],
    target: &TargetSpec,
    config: &RunConfig,
    threshold: f64,
) -> Vec<PredictionRow> {
    users
        .par_iter()
        .map(|u| predict_llm_user(client, u, target, config, threshold))
        .collect()
}

/// Runs a trained baseline over `users`.
pub fn predict_model(
    model: &TargetModel,
    embeddings: Option<&EmbeddingTable>,
    users: &[&UserRecord],
    target: &str,
    config: &RunConfig,
) -> Result<Vec<PredictionRow>, ModelError> {
    let source = model.source(embeddings)?;
    users
        .par_iter()
        .map(|user| {
            let make = row(user, target, config);
            let tweets = match sample_tweets(user, target, config.mode, config.n_tweets, config.seed) {
                Ok(t) => t,
                Err(e) => return Ok(make(Verdict::Unparsable, None, Evidence::Skipped { error: e.to_string() })),
            };
            let p = predict_user(&model.classifier, &tweets, source, model.threshold)?;
            Ok(make(
                p.label.into(),
                Some(p.score.value),
                Evidence::Model {
                    tweet_ids: ids(&tweets),
                    threshold: model.threshold,
                },
            ))
        })
        .collect()
}

/// Pairs each row with its user's true label, failing on rows whose user or
/// label is not in the corpus.
pub fn join_truth<'a>(
    rows: &'a [PredictionRow],
    users: &[UserRecord],
) -> Result<Vec<(&'a PredictionRow, StanceLabel)>, String> {
    let index: std::collections::HashMap<&str, &UserRecord> = users.iter().map(|u| (u.user_id.as_str(), u)).collect();
    rows.iter()
        .map(|r| {
            let user = index
                .get(r.user_id.as_str())
                .ok_or_else(|| format!("prediction for user {:?} who is not in the corpus", r.user_id))?;
            let label = user
                .stance(&r.target)
                .ok_or_else(|| format!("user {:?} has no label for target {:?}", r.user_id, r.target))?;
            Ok((r, label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockBackend, MockPolicy, TruthIndex};
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("gpt".parse::<Method>().is_err());
    }

    fn setup(policy: MockPolicy) -> (Vec<UserRecord>, LlmClient) {
        let corpus = generate(&SynthConfig {
            n_users: 30,
            tweets_per_user: 20,
            keyword_rate: 0.9,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let truth = TruthIndex::from_users(&corpus.users);
        let mock = MockBackend::new(policy, truth, &[TargetSpec::for_id("donald_trump")]).unwrap();
        (corpus.users, LlmClient::new(mock))
    }

    #[test]
    fn pooled_oracle_recovers_planted_stance() {
        let (users, client) = setup(MockPolicy::keyword_oracle(0));
        let refs: Vec<&UserRecord> = users.iter().collect();
        let config = RunConfig::new(Method::LlmPooled, 15);
        let rows = predict_llm(&client, &refs, &TargetSpec::for_id("donald_trump"), &config, 0.0);
        assert_eq!(rows.len(), 30);
        let correct = rows
            .iter()
            .zip(&users)
            .filter(|(r, u)| r.predicted.label() == u.stance("donald_trump"))
            .count();
        assert!(correct >= 28, "{correct}");
        assert_eq!(client.network_calls(), 0);
        assert_eq!(rows.iter().map(|r| r.user_id.as_str()).collect::<Vec<_>>(), users.iter().map(|u| u.user_id.as_str()).collect::<Vec<_>>());
    }

    #[test]
    fn users_without_tweets_are_skipped_not_fatal() {
        let (mut users, client) = setup(MockPolicy::planted(0.9, 1));
        users[0].tweets.clear();
        let refs: Vec<&UserRecord> = users.iter().collect();
        let rows = predict_llm(&client, &refs, &TargetSpec::for_id("donald_trump"), &RunConfig::new(Method::Llm, 5), 0.0);
        assert_eq!(rows[0].predicted, Verdict::Unparsable);
        assert!(rows[0].failed());
        assert!(rows[1..].iter().all(|r| !r.failed()));
    }

    #[test]
    fn join_rejects_unknown_users() {
        let (users, client) = setup(MockPolicy::planted(0.9, 1));
        let refs: Vec<&UserRecord> = users.iter().take(2).collect();
        let mut rows = predict_llm(&client, &refs, &TargetSpec::for_id("donald_trump"), &RunConfig::new(Method::Llm, 5), 0.0);
        assert_eq!(join_truth(&rows, &users).unwrap().len(), 2);
        rows[1].user_id = "ghost".into();
        assert!(join_truth(&rows, &users).unwrap_err().contains("ghost"));
    }

    #[test]
    fn rows_serialize_in_the_documented_shape() {
        let (users, client) = setup(MockPolicy::keyword_oracle(0));
        let refs: Vec<&UserRecord> = users.iter().take(1).collect();
        let rows = predict_llm(&client, &refs, &TargetSpec::for_id("donald_trump"), &RunConfig::new(Method::LlmPooled, 4), 0.0);
        let v: serde_json::Value = serde_json::to_value(&rows[0]).unwrap();
        for key in ["user_id", "target", "method", "tweets_per_user", "predicted", "score", "evidence"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["evidence"]["kind"], "pooled");
        let back: PredictionRow = serde_json::from_value(v).unwrap();
        assert_eq!(back, rows[0]);
    }
}
