//! Tweet-level supervised baselines pooled to user level.
//!
//! Every tweet inherits its author's stance label. A classifier trained on
//! those noisy labels gives `P(Support)` per tweet; a user's stance score is
//! the mean over their supplied tweets, compared against a per-target
//! threshold tuned for training-set balanced accuracy.

mod cv;
mod forest;
mod logreg;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cv::{make_cv_plan, CvPlan, DEFAULT_FOLDS};
pub use forest::{train_forest, ForestModel, ForestParams, Node};
pub use logreg::{sigmoid, train_logreg, FitReport, LinearModel, Objective, GRADIENT_TOLERANCE, MAX_ITERATIONS};

use crate::corpus::{sample_tweets, CorpusError, SampleMode, Tweet, UserRecord};
use crate::features::{fit_vocabulary, tfidf_vector, tokenize, EmbeddingTable, FeatureError, FeatureVector, Vocabulary};
use crate::label::StanceLabel;
use crate::pooling::{apply_threshold, prob_score, tune_threshold, PoolingError, StanceScore};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data needs both classes")]
    SingleClass,
    #[error("target {0:?}: training users all share one stance")]
    SingleClassTarget(String),
    #[error("{xs} feature rows but {ys} labels")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("training set is empty")]
    Empty,
    #[error("feature dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("loss became non-finite")]
    NonFiniteLoss,
    #[error("invalid hyperparameter: {0}")]
    BadHyperparameter(String),
    #[error("{groups} groups cannot fill {folds} folds")]
    TooFewGroups { groups: usize, folds: usize },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("user {0:?} has no usable tweets")]
    NoUsableTweets(String),
    #[error("user {user:?} has no stance label for target {target:?}")]
    MissingLabel { user: String, target: String },
    #[error("model has no entry for target {0:?}")]
    UnknownTarget(String),
    #[error("model file schema version {0} is not supported")]
    SchemaVersion(u32),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pooling(#[from] PoolingError),
}

/// Returns the shared feature dimension.
pub(crate) fn check_training_set(xs: &[FeatureVector], ys: &[StanceLabel]) -> Result<usize, ModelError> {
    if xs.len() != ys.len() {
        return Err(ModelError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    let first = xs.first().ok_or(ModelError::Empty)?;
    let dim = first.dim();
    if let Some(bad) = xs.iter().find(|x| x.dim() != dim) {
        return Err(ModelError::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    let support = ys.iter().filter(|y| **y == StanceLabel::Support).count();
    if support == 0 || support == ys.len() {
        return Err(ModelError::SingleClass);
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classifier {
    Logreg(LinearModel),
    Forest(ForestModel),
}

impl Classifier {
    pub fn predict_proba(&self, x: &FeatureVector) -> Result<f64, ModelError> {
        match self {
            Classifier::Logreg(m) => m.predict_proba(x),
            Classifier::Forest(m) => m.predict_proba(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Ranfor,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logreg" => Ok(ModelKind::Logreg),
            "ranfor" => Ok(ModelKind::Ranfor),
            _ => Err(format!("unknown model kind {s:?}")),
        }
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparams {
    Logreg { l2_lambda: f64 },
    Forest { max_depth: Option<usize>, n_trees: usize },
}

impl Hyperparams {
    pub fn fit(&self, xs: &[FeatureVector], ys: &[StanceLabel], seed: u64) -> Result<Classifier, ModelError> {
        match *self {
            Hyperparams::Logreg { l2_lambda } => Ok(Classifier::Logreg(train_logreg(xs, ys, l2_lambda)?.0)),
            Hyperparams::Forest { max_depth, n_trees } => Ok(Classifier::Forest(train_forest(
                xs,
                ys,
                &ForestParams::new(n_trees, max_depth, seed),
            )?)),
        }
    }
}

pub const DEFAULT_LAMBDAS: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
pub const DEFAULT_DEPTHS: [Option<usize>; 5] = [Some(2), Some(4), Some(8), Some(16), None];
pub const DEFAULT_TREES: usize = 50;

pub fn default_grid(kind: ModelKind) -> Vec<Hyperparams> {
    match kind {
        ModelKind::Logreg => DEFAULT_LAMBDAS
            .iter()
            .map(|&l2_lambda| Hyperparams::Logreg { l2_lambda })
            .collect(),
        ModelKind::Ranfor => DEFAULT_DEPTHS
            .iter()
            .map(|&max_depth| Hyperparams::Forest {
                max_depth,
                n_trees: DEFAULT_TREES,
            })
            .collect(),
    }
}

/// Balanced accuracy of tweet-level predictions at `P(Support) >= 0.5`.
fn tweet_balanced_accuracy(probs: &[f64], ys: &[StanceLabel]) -> f64 {
    let pairs: Vec<(f64, StanceLabel)> = probs.iter().copied().zip(ys.iter().copied()).collect();
    crate::pooling::threshold_balanced_accuracy(&pairs, 0.5)
}

/// A tweet-level training set whose rows carry their author's id.
#[derive(Debug, Clone, Default)]
pub struct GroupedDataset {
    pub xs: Vec<FeatureVector>,
    pub ys: Vec<StanceLabel>,
    pub groups: Vec<String>,
}

impl GroupedDataset {
    fn subset(&self, keep: impl Fn(&str) -> bool) -> (Vec<FeatureVector>, Vec<StanceLabel>) {
        self.xs
            .iter()
            .zip(&self.ys)
            .zip(&self.groups)
            .filter(|(_, g)| keep(g))
            .map(|((x, y), _)| (x.clone(), *y))
            .unzip()
    }

    /// One (user, label) entry per group, in first-seen order.
    pub fn group_labels(&self) -> Vec<(String, StanceLabel)> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for (g, y) in self.groups.iter().zip(&self.ys) {
            if seen.insert(g.clone(), ()).is_none() {
                out.push((g.clone(), *y));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub params: Hyperparams,
    pub mean_balanced_accuracy: f64,
    pub fold_balanced_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: Hyperparams,
    pub scores: Vec<GridScore>,
}

/// Mean held-out tweet-level balanced accuracy across the folds of `plan`.
pub fn cross_validate(
    data: &GroupedDataset,
    plan: &CvPlan,
    params: &Hyperparams,
    seed: u64,
) -> Result<Vec<f64>, ModelError> {
    (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let in_fold = |g: &str| plan.fold_of(g) == Some(fold);
            let (train_x, train_y) = data.subset(|g| !in_fold(g));
            let (test_x, test_y) = data.subset(in_fold);
            let model = params.fit(&train_x, &train_y, seed)?;
            let probs = test_x
                .iter()
                .map(|x| model.predict_proba(x))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(tweet_balanced_accuracy(&probs, &test_y))
        })
        .collect()
}

/// Evaluates every grid point with grouped stratified CV. The grid is
/// assumed ordered from simplest to most complex (ascending lambda,
/// ascending depth with unbounded last); ties keep the earlier point.
pub fn select_hyperparams(
    data: &GroupedDataset,
    grid: &[Hyperparams],
    k: usize,
    seed: u64,
) -> Result<Selection, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    let plan = make_cv_plan(&data.group_labels(), k, seed)?;
    let mut scores = Vec::with_capacity(grid.len());
    for params in grid {
        let folds = cross_validate(data, &plan, params, seed)?;
        scores.push(GridScore {
            params: *params,
            mean_balanced_accuracy: folds.iter().sum::<f64>() / folds.len() as f64,
            fold_balanced_accuracy: folds,
        });
    }
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.mean_balanced_accuracy > best.mean_balanced_accuracy {
            best = s;
        }
    }
    Ok(Selection {
        best: best.params,
        scores,
    })
}

/// Where tweet features come from.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    Tfidf(&'a Vocabulary),
    Embeddings(&'a EmbeddingTable),
}

impl FeatureSource<'_> {
    pub fn featurize(&self, tweet: &Tweet) -> Result<FeatureVector, FeatureError> {
        match self {
            FeatureSource::Tfidf(vocab) => Ok(tfidf_vector(&tokenize(&tweet.text), vocab)),
            FeatureSource::Embeddings(table) => table.vector(&tweet.tweet_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserPrediction {
    pub label: StanceLabel,
    pub score: StanceScore,
    pub probs: Vec<f64>,
}

/// Mean `P(Support)` over the user's tweets, thresholded.
pub fn predict_user(
    model: &Classifier,
    tweets: &[&Tweet],
    source: FeatureSource<'_>,
    threshold: f64,
) -> Result<UserPrediction, ModelError> {
    let probs = tweets
        .iter()
        .map(|t| model.predict_proba(&source.featurize(t)?))
        .collect::<Result<Vec<_>, _>>()?;
    predict_from_probs(probs, threshold)
}

pub fn predict_from_probs(probs: Vec<f64>, threshold: f64) -> Result<UserPrediction, ModelError> {
    let score = prob_score(&probs)?;
    Ok(UserPrediction {
        label: apply_threshold(&score, threshold),
        score,
        probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Tfidf,
    Embed,
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tfidf" => Ok(FeatureKind::Tfidf),
            "embed" => Ok(FeatureKind::Embed),
            _ => Err(format!("unknown feature kind {s:?}")),
        }
    }
}

/// Everything needed to predict one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub classifier: Classifier,
    pub threshold: f64,
    pub selection: Selection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vocabulary>,
}

impl TargetModel {
    pub fn source<'a>(&'a self, embeddings: Option<&'a EmbeddingTable>) -> Result<FeatureSource<'a>, FeatureError> {
        match (&self.vocabulary, embeddings) {
            (Some(v), _) => Ok(FeatureSource::Tfidf(v)),
            (None, Some(e)) => Ok(FeatureSource::Embeddings(e)),
            (None, None) => Err(FeatureError::NoEmbeddings),
        }
    }
}

/// Serialized model bundle: one classifier and threshold per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub schema_version: u32,
    pub features: FeatureKind,
    pub model: ModelKind,
    pub targets: BTreeMap<String, TargetModel>,
}

impl TrainedModel {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut model: TrainedModel = serde_json::from_str(text)?;
        for target in model.targets.values_mut() {
            target.vocabulary = target.vocabulary.take().map(Vocabulary::reindexed);
        }
        Ok(model)
    }

    pub fn check_version(&self) -> Result<(), ModelError> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion(self.schema_version));
        }
        Ok(())
    }

    pub fn target(&self, target: &str) -> Result<&TargetModel, ModelError> {
        self.targets
            .get(target)
            .ok_or_else(|| ModelError::UnknownTarget(target.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub features: FeatureKind,
    pub model: ModelKind,
    pub grid: Vec<Hyperparams>,
    pub n_tweets: usize,
    pub folds: usize,
    pub min_df: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(features: FeatureKind, model: ModelKind) -> Self {
        TrainConfig {
            features,
            model,
            grid: default_grid(model),
            n_tweets: 50,
            folds: DEFAULT_FOLDS,
            min_df: 2,
            seed: 0,
        }
    }
}

/// Samples each training user's target-agnostic tweets, selects
/// hyperparameters by grouped CV, refits on every training tweet and tunes
/// the user-level threshold on the training users.
pub fn train_target(
    users: &[&UserRecord],
    target: &str,
    config: &TrainConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<TargetModel, ModelError> {
    let mut samples: Vec<(&UserRecord, StanceLabel, Vec<&Tweet>)> = Vec::with_capacity(users.len());
    for user in users {
        let label = user.stance(target).ok_or_else(|| ModelError::MissingLabel {
            user: user.user_id.clone(),
            target: target.to_string(),
        })?;
        let tweets = sample_tweets(user, target, SampleMode::Agnostic, config.n_tweets, config.seed)?;
        samples.push((user, label, tweets));
    }
    let support = samples.iter().filter(|s| s.1 == StanceLabel::Support).count();
    if support == 0 || support == samples.len() {
        return Err(ModelError::SingleClassTarget(target.to_string()));
    }

    let vocabulary = match config.features {
        FeatureKind::Tfidf => {
            let docs: Vec<Vec<String>> = samples
                .iter()
                .flat_map(|(_, _, tweets)| tweets.iter().map(|t| tokenize(&t.text)))
                .collect();
            Some(fit_vocabulary(&docs, config.min_df)?)
        }
        FeatureKind::Embed => None,
    };
    let source = match (&vocabulary, embeddings) {
        (Some(v), _) => FeatureSource::Tfidf(v),
        (None, Some(e)) => FeatureSource::Embeddings(e),
        (None, None) => return Err(FeatureError::NoEmbeddings.into()),
    };

    let mut data = GroupedDataset::default();
    for (user, label, tweets) in &samples {
        for tweet in tweets {
            data.xs.push(source.featurize(tweet)?);
            data.ys.push(*label);
            data.groups.push(user.user_id.clone());
        }
    }

    let selection = select_hyperparams(&data, &config.grid, config.folds, config.seed)?;
    let classifier = selection.best.fit(&data.xs, &data.ys, config.seed)?;

    let mut train_scores = Vec::with_capacity(samples.len());
    let mut offset = 0;
    for (_, label, tweets) in &samples {
        let probs = data.xs[offset..offset + tweets.len()]
            .iter()
            .map(|x| classifier.predict_proba(x))
            .collect::<Result<Vec<_>, _>>()?;
        offset += tweets.len();
        train_scores.push((prob_score(&probs)?, *label));
    }
    let threshold = tune_threshold(&train_scores)?;

    Ok(TargetModel {
        classifier,
        threshold,
        selection,
        vocabulary,
    })
}
