//! Synthetic corpora with planted, fully known signal.
//!
//! Each user draws a latent stance per target. Agnostic tweets are filler
//! tokens; with probability `keyword_rate` a tweet also carries exactly one
//! hashtag aligned with the user's stance on a uniformly chosen target.
//! Moral-lexicon words are injected at per-dimension rates that can differ
//! between the classes of one target.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::IndexedRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Dimension, Lexicon};
use crate::corpus::{Tweet, UserRecord};
use crate::features::tokenize;
use crate::label::{StanceLabel, Verdict};
use crate::seed;

pub const FILLER_VOCABULARY_SIZE: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("degenerate config: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub pro: Vec<String>,
    pub anti: Vec<String>,
}

impl KeywordSet {
    fn new(pro: &[&str], anti: &[&str]) -> Self {
        KeywordSet {
            pro: pro.iter().map(|s| s.to_string()).collect(),
            anti: anti.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn for_label(&self, label: StanceLabel) -> &[String] {
        match label {
            StanceLabel::Support => &self.pro,
            StanceLabel::Against => &self.anti,
        }
    }
}

pub fn default_keywords() -> BTreeMap<String, KeywordSet> {
    BTreeMap::from([
        (
            "donald_trump".to_string(),
            KeywordSet::new(&["maga", "kag", "trump2020"], &["resist", "bidenharris", "votehimout"]),
        ),
        (
            "wearing_masks".to_string(),
            KeywordSet::new(&["maskup", "wearamask", "masksavelives"], &["nomasks", "maskfree", "unmask"]),
        ),
        (
            "racial_equality".to_string(),
            KeywordSet::new(
                &["blm", "blacklivesmatter", "justiceforfloyd"],
                &["alllivesmatter", "bluelivesmatter", "backtheblue"],
            ),
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Target-agnostic tweets per user.
    pub tweets_per_user: usize,
    /// Tweets per user per target that mention the target and always carry
    /// a stance-aligned keyword.
    pub specific_per_target: usize,
    pub support_fraction: f64,
    pub keyword_sets: BTreeMap<String, KeywordSet>,
    pub keyword_rate: f64,
    /// Per tweet, per dimension probability of one lexicon word.
    pub lexicon_base_rate: f64,
    /// Target whose classes differ in lexicon rates.
    pub lexicon_target: Option<String>,
    /// Rate for Against users minus rate for Support users.
    pub lexicon_effect: BTreeMap<Dimension, f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            tweets_per_user: 60,
            specific_per_target: 5,
            support_fraction: 0.5,
            keyword_sets: default_keywords(),
            keyword_rate: 0.3,
            lexicon_base_rate: 0.0,
            lexicon_target: None,
            lexicon_effect: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Degenerate(m.to_string()));
        if self.n_users == 0 {
            return bad("n_users = 0");
        }
        if self.tweets_per_user == 0 {
            return bad("tweets_per_user = 0");
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return bad("support_fraction must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.keyword_rate) || !(0.0..=1.0).contains(&self.lexicon_base_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if self.keyword_sets.is_empty() {
            return bad("no targets");
        }
        let mut all = HashSet::new();
        for (target, set) in &self.keyword_sets {
            if set.pro.is_empty() || set.anti.is_empty() {
                return Err(SynthError::Degenerate(format!("{target}: empty keyword list")));
            }
            let pro: BTreeSet<_> = set.pro.iter().collect();
            if set.anti.iter().any(|k| pro.contains(k)) {
                return Err(SynthError::Degenerate(format!("{target}: pro and anti keywords overlap")));
            }
            for k in set.pro.iter().chain(&set.anti) {
                if tokenize(k) != [k.clone()] {
                    return Err(SynthError::Degenerate(format!("keyword {k:?} is not a single token")));
                }
                if !all.insert(k.clone()) {
                    return Err(SynthError::Degenerate(format!("keyword {k:?} used twice")));
                }
            }
        }
        for (dim, delta) in &self.lexicon_effect {
            let against = self.lexicon_base_rate + delta;
            if !(0.0..=1.0).contains(&against) {
                return Err(SynthError::Degenerate(format!("{dim}: Against rate {against} outside [0, 1]")));
            }
        }
        if let Some(t) = &self.lexicon_target {
            if !self.keyword_sets.contains_key(t) {
                return Err(SynthError::Degenerate(format!("lexicon target {t:?} is not a configured target")));
            }
        }
        Ok(())
    }

    fn lexicon_rate(&self, dim: Dimension, stances: &BTreeMap<String, StanceLabel>) -> f64 {
        let against = self
            .lexicon_target
            .as_ref()
            .is_some_and(|t| stances.get(t) == Some(&StanceLabel::Against));
        let delta = if against {
            self.lexicon_effect.get(&dim).copied().unwrap_or(0.0)
        } else {
            0.0
        };
        self.lexicon_base_rate + delta
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedKeyword {
    pub tweet_id: String,
    pub target: String,
    pub keyword: String,
    pub label: StanceLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub stances: BTreeMap<String, StanceLabel>,
    pub planted: Vec<PlantedKeyword>,
}

/// Sidecar manifest describing what was planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub config: SynthConfig,
    pub filler_vocabulary: Vec<String>,
    pub users: Vec<UserTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub users: Vec<UserRecord>,
    pub truth: TruthManifest,
}

fn reserved_words(config: &SynthConfig, lexicon: &Lexicon) -> HashSet<String> {
    let mut reserved: HashSet<String> = config
        .keyword_sets
        .values()
        .flat_map(|s| s.pro.iter().chain(&s.anti).cloned())
        .collect();
    for dim in Dimension::ALL {
        reserved.extend(lexicon.words_for(dim).into_iter().map(str::to_string));
    }
    for target in config.keyword_sets.keys() {
        reserved.extend(target.split('_').map(str::to_string));
    }
    reserved
}

/// Pronounceable nonsense words, none colliding with keywords, lexicon
/// entries or target names.
pub fn filler_vocabulary(config: &SynthConfig, lexicon: &Lexicon) -> Vec<String> {
    const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let reserved = reserved_words(config, lexicon);
    let mut rng = seed::rng(config.seed, &[b"filler"]);
    let mut words = BTreeSet::new();
    while words.len() < FILLER_VOCABULARY_SIZE {
        let syllables = rng.random_range(2..=3);
        let word: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(&mut rng).unwrap(), VOWELS.choose(&mut rng).unwrap()))
            .collect();
        if !reserved.contains(&word) {
            words.insert(word);
        }
    }
    words.into_iter().collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    generate_with_lexicon(config, &Lexicon::bundled())
}

pub fn generate_with_lexicon(config: &SynthConfig, lexicon: &Lexicon) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    let filler = filler_vocabulary(config, lexicon);
    let targets: Vec<&String> = config.keyword_sets.keys().collect();
    let lexicon_words: Vec<(Dimension, Vec<&str>)> =
        Dimension::ALL.iter().map(|d| (*d, lexicon.words_for(*d))).collect();
    let width = config.n_users.to_string().len().max(4);

    let mut users = Vec::with_capacity(config.n_users);
    let mut truths = Vec::with_capacity(config.n_users);
    for u in 0..config.n_users {
        let user_id = format!("user{u:0width$}");
        let mut rng = seed::rng(config.seed, &[b"user", user_id.as_bytes()]);
        let stances: BTreeMap<String, StanceLabel> = targets
            .iter()
            .map(|t| {
                let label = if rng.random_bool(config.support_fraction) {
                    StanceLabel::Support
                } else {
                    StanceLabel::Against
                };
                ((*t).clone(), label)
            })
            .collect();

        let mut tweets = Vec::new();
        let mut planted = Vec::new();
        let filler_words = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
            let n = rng.random_range(5..=9);
            (0..n).map(|_| filler.choose(rng).unwrap().clone()).collect()
        };

        for k in 0..config.tweets_per_user {
            let tweet_id = format!("{user_id}-{k:03}");
            let mut words = filler_words(&mut rng);
            if rng.random_bool(config.keyword_rate) {
                let target = *targets.choose(&mut rng).unwrap();
                let label = stances[target];
                let keyword = config.keyword_sets[target].for_label(label).choose(&mut rng).unwrap().clone();
                let at = rng.random_range(0..=words.len());
                words.insert(at, format!("#{keyword}"));
                planted.push(PlantedKeyword {
                    tweet_id: tweet_id.clone(),
                    target: target.clone(),
                    keyword,
                    label,
                });
            }
            for (dim, pool) in &lexicon_words {
                let rate = config.lexicon_rate(*dim, &stances);
                if rate > 0.0 && !pool.is_empty() && rng.random_bool(rate) {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, pool.choose(&mut rng).unwrap().to_string());
                }
            }
            tweets.push(Tweet::new(tweet_id, words.join(" ")));
        }

        for target in &targets {
            let label = stances[*target];
            let mention = target.replace('_', " ");
            for k in 0..config.specific_per_target {
                let tweet_id = format!("{user_id}-{target}-{k:02}");
                let mut words = filler_words(&mut rng);
                let keyword = config.keyword_sets[*target].for_label(label).choose(&mut rng).unwrap().clone();
                words.insert(rng.random_range(0..=words.len()), mention.clone());
                words.push(format!("#{keyword}"));
                tweets.push(Tweet::new(tweet_id.clone(), words.join(" ")).referencing((*target).clone()));
                planted.push(PlantedKeyword {
                    tweet_id,
                    target: (*target).clone(),
                    keyword,
                    label,
                });
            }
        }

        truths.push(UserTruth {
            user_id: user_id.clone(),
            stances: stances.clone(),
            planted,
        });
        users.push(UserRecord {
            user_id,
            stances,
            tweets,
        });
    }

    Ok(SynthCorpus {
        users,
        truth: TruthManifest {
            config: config.clone(),
            filler_vocabulary: filler,
            users: truths,
        },
    })
}

/// Counts pro and anti keywords of `target` across `texts`: Support if only
/// or mostly pro, Against if mostly anti, Unparsable on a tie (including
/// no keyword at all).
pub fn keyword_vote<'a>(texts: impl IntoIterator<Item = &'a str>, keywords: &KeywordSet) -> Verdict {
    let (mut pro, mut anti) = (0usize, 0usize);
    for text in texts {
        for token in tokenize(text) {
            if keywords.pro.contains(&token) {
                pro += 1;
            } else if keywords.anti.contains(&token) {
                anti += 1;
            }
        }
    }
    match pro.cmp(&anti) {
        std::cmp::Ordering::Greater => Verdict::Support,
        std::cmp::Ordering::Less => Verdict::Against,
        std::cmp::Ordering::Equal => Verdict::Unparsable,
    }
}

/// The stance implied by a planted keyword of `target`, if any.
pub fn oracle_vote(tweet: &Tweet, target: &str, config: &SynthConfig) -> Verdict {
    match config.keyword_sets.get(target) {
        Some(set) => keyword_vote([tweet.text.as_str()], set),
        None => Verdict::Unparsable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{Foundation, Polarity};
    use crate::corpus::write_corpus;
    use crate::pooling::{majority_vote, VoteTally};
    use crate::prompt::ParsedVote;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_users: 40,
            tweets_per_user: 30,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn class_counts_within_three_sigma() {
        let corpus = generate(&SynthConfig { n_users: 200, tweets_per_user: 1, seed: 1, ..SynthConfig::default() }).unwrap();
        // Binomial(200, 0.5): mean 100, sd sqrt(50)
        for target in ["donald_trump", "wearing_masks", "racial_equality"] {
            let support = corpus.users.iter().filter(|u| u.stance(target) == Some(StanceLabel::Support)).count() as f64;
            assert!((support - 100.0).abs() <= 3.0 * 50f64.sqrt(), "{target}: {support}");
        }
    }

    #[test]
    fn full_keyword_rate_puts_one_keyword_in_every_tweet() {
        let config = SynthConfig { keyword_rate: 1.0, ..small(2) };
        let corpus = generate(&config).unwrap();
        let all: Vec<&String> = config.keyword_sets.values().flat_map(|s| s.pro.iter().chain(&s.anti)).collect();
        for user in &corpus.users {
            for tweet in user.tweets.iter().filter(|t| t.targets.is_empty()) {
                let hits = tokenize(&tweet.text).iter().filter(|t| all.contains(t)).count();
                assert_eq!(hits, 1, "{}", tweet.text);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let render = |seed| {
            let mut buf = Vec::new();
            write_corpus(&mut buf, &generate(&small(seed)).unwrap().users).unwrap();
            buf
        };
        assert_eq!(render(3), render(3));
        assert_ne!(render(3), render(4));
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        assert!(generate(&SynthConfig { n_users: 0, ..small(0) }).is_err());
        assert!(generate(&SynthConfig { tweets_per_user: 0, ..small(0) }).is_err());
        let mut overlap = small(0);
        overlap.keyword_sets.get_mut("donald_trump").unwrap().anti.push("maga".into());
        assert!(overlap.validate().is_err());
    }

    #[test]
    fn oracle_agrees_with_planted_record() {
        let config = small(5);
        let corpus = generate(&config).unwrap();
        for (user, truth) in corpus.users.iter().zip(&corpus.truth.users) {
            let planted: BTreeMap<&str, &PlantedKeyword> = truth.planted.iter().map(|p| (p.tweet_id.as_str(), p)).collect();
            for tweet in &user.tweets {
                for target in config.keyword_sets.keys() {
                    let vote = oracle_vote(tweet, target, &config);
                    match planted.get(tweet.tweet_id.as_str()) {
                        Some(p) if &p.target == target => assert_eq!(vote, p.label.into()),
                        _ => assert_eq!(vote, Verdict::Unparsable),
                    }
                }
            }
        }
    }

    #[test]
    fn filler_only_tweet_is_unparsable() {
        let config = small(0);
        assert_eq!(oracle_vote(&Tweet::new("t", "bako rizu"), "donald_trump", &config), Verdict::Unparsable);
        assert_eq!(oracle_vote(&Tweet::new("t", "bako #maga"), "donald_trump", &config), Verdict::Support);
    }

    #[test]
    fn majority_over_oracle_votes_recovers_latent_stance() {
        let config = small(6);
        let corpus = generate(&config).unwrap();
        for user in &corpus.users {
            for target in config.keyword_sets.keys() {
                let votes: Vec<ParsedVote> = user
                    .tweets
                    .iter()
                    .filter(|t| t.is_agnostic_for(target))
                    .map(|t| match oracle_vote(t, target, &config) {
                        Verdict::Support => ParsedVote::Support,
                        Verdict::Against => ParsedVote::Against,
                        Verdict::Unparsable => ParsedVote::Unparsable(String::new()),
                    })
                    .collect();
                let tally = VoteTally::from_votes(&votes);
                if tally.n_support + tally.n_against > 0 {
                    assert_eq!(majority_vote(&tally), user.stance(target).unwrap().into());
                }
            }
        }
    }

    #[test]
    fn empirical_keyword_rate_matches_config_per_class() {
        let config = SynthConfig { n_users: 300, tweets_per_user: 40, keyword_rate: 0.3, seed: 8, ..SynthConfig::default() };
        let corpus = generate(&config).unwrap();
        let n_targets = config.keyword_sets.len() as f64;
        for label in [StanceLabel::Support, StanceLabel::Against] {
            let mut tweets = 0usize;
            let mut with_kw = 0usize;
            for target in config.keyword_sets.keys() {
                for (user, truth) in corpus.users.iter().zip(&corpus.truth.users) {
                    if user.stance(target) != Some(label) {
                        continue;
                    }
                    tweets += config.tweets_per_user;
                    with_kw += truth.planted.iter().filter(|p| &p.target == target && !p.tweet_id.contains(target.as_str())).count();
                }
            }
            let p = config.keyword_rate / n_targets;
            let observed = with_kw as f64 / tweets as f64;
            let se = (p * (1.0 - p) / tweets as f64).sqrt();
            assert!((observed - p).abs() < 3.0 * se, "{label}: {observed} vs {p}");
        }
    }

    #[test]
    fn lexicon_rates_differ_by_class() {
        let care_vice = Dimension::new(Foundation::Care, Polarity::Vice);
        let config = SynthConfig {
            n_users: 100,
            lexicon_base_rate: 0.05,
            lexicon_target: Some("racial_equality".into()),
            lexicon_effect: BTreeMap::from([(care_vice, 0.15)]),
            seed: 9,
            ..SynthConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let lexicon = Lexicon::bundled();
        let words = lexicon.words_for(care_vice);
        let rate = |label| {
            let (mut hits, mut n) = (0usize, 0usize);
            for u in corpus.users.iter().filter(|u| u.stance("racial_equality") == Some(label)) {
                for t in u.tweets.iter().filter(|t| t.targets.is_empty()) {
                    n += 1;
                    hits += tokenize(&t.text).iter().any(|w| words.contains(&w.as_str())) as usize;
                }
            }
            hits as f64 / n as f64
        };
        assert!(rate(StanceLabel::Against) > rate(StanceLabel::Support) + 0.1);
    }
}
