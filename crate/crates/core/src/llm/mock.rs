use std::collections::{BTreeMap, HashMap};

use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::{AttemptError, ChatBackend, ChatRequest, LlmError};
use crate::corpus::UserRecord;
use crate::label::{StanceLabel, Verdict};
use crate::prompt::{dissect_prompt, TargetSpec};
use crate::seed;
use crate::synth::{default_keywords, keyword_vote, KeywordSet};

pub const UNPARSABLE_REPLY: &str = "I cannot determine this user's stance.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    KeywordOracle,
    PlantedAccuracy,
}

/// Offline stand-in for the chat model.
///
/// In `planted_accuracy` mode the vote for a prompt whose true stance is
/// `y` is Support with probability `sigmoid(±logit(per_vote_accuracy) +
/// logit(support_bias))`, `+` when `y` is Support. With `support_bias` 0.5
/// the vote is correct with probability `per_vote_accuracy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockPolicy {
    pub mode: MockMode,
    #[serde(default = "default_accuracy")]
    pub per_vote_accuracy: f64,
    #[serde(default)]
    pub unparsable_rate: f64,
    #[serde(default = "default_bias")]
    pub support_bias: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_accuracy() -> f64 {
    1.0
}

fn default_bias() -> f64 {
    0.5
}

impl MockPolicy {
    pub fn keyword_oracle(seed: u64) -> Self {
        MockPolicy {
            mode: MockMode::KeywordOracle,
            per_vote_accuracy: 1.0,
            unparsable_rate: 0.0,
            support_bias: 0.5,
            seed,
        }
    }

    pub fn planted(per_vote_accuracy: f64, seed: u64) -> Self {
        MockPolicy {
            mode: MockMode::PlantedAccuracy,
            per_vote_accuracy,
            unparsable_rate: 0.0,
            support_bias: 0.5,
            seed,
        }
    }

    /// Planted policy whose vote is Support with probability `p_support` for
    /// true-Support prompts and `p_against` for true-Against prompts.
    pub fn from_support_rates(p_support: f64, p_against: f64, seed: u64) -> Result<Self, LlmError> {
        let (ls, la) = (logit(p_support), logit(p_against));
        let policy = MockPolicy {
            mode: MockMode::PlantedAccuracy,
            per_vote_accuracy: sigmoid((ls - la) / 2.0),
            unparsable_rate: 0.0,
            support_bias: sigmoid((ls + la) / 2.0),
            seed,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        for (name, v) in [
            ("per_vote_accuracy", self.per_vote_accuracy),
            ("unparsable_rate", self.unparsable_rate),
            ("support_bias", self.support_bias),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(LlmError::Config(format!("mock policy {name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// P(vote = Support) given the true stance, or `None` when unknown.
    pub fn support_probability(&self, truth: Option<StanceLabel>) -> f64 {
        let bias = logit(self.support_bias);
        let z = match truth {
            Some(StanceLabel::Support) => logit(self.per_vote_accuracy) + bias,
            Some(StanceLabel::Against) => -logit(self.per_vote_accuracy) + bias,
            None => bias,
        };
        if z.is_nan() {
            0.5
        } else {
            sigmoid(z)
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// True stance of each (target, tweet text) pair. Texts shared by users of
/// opposite stance are ambiguous and map to nothing.
#[derive(Debug, Clone, Default)]
pub struct TruthIndex {
    labels: HashMap<(String, String), Option<StanceLabel>>,
}

impl TruthIndex {
    pub fn from_users(users: &[UserRecord]) -> Self {
        let mut index = TruthIndex::default();
        for user in users {
            for (target, label) in &user.stances {
                for tweet in &user.tweets {
                    index.insert(target, &tweet.text, *label);
                }
            }
        }
        index
    }

    pub fn insert(&mut self, target: &str, text: &str, label: StanceLabel) {
        self.labels
            .entry((target.to_string(), text.to_string()))
            .and_modify(|l| {
                if *l != Some(label) {
                    *l = None;
                }
            })
            .or_insert(Some(label));
    }

    pub fn get(&self, target: &str, text: &str) -> Option<StanceLabel> {
        self.labels
            .get(&(target.to_string(), text.to_string()))
            .copied()
            .flatten()
    }

    /// Majority truth over `texts`; `None` on a tie or when nothing is known.
    pub fn majority<'a>(&self, target: &str, texts: impl IntoIterator<Item = &'a str>) -> Option<StanceLabel> {
        let (mut s, mut a) = (0usize, 0usize);
        for text in texts {
            match self.get(target, text) {
                Some(StanceLabel::Support) => s += 1,
                Some(StanceLabel::Against) => a += 1,
                None => {}
            }
        }
        match s.cmp(&a) {
            std::cmp::Ordering::Greater => Some(StanceLabel::Support),
            std::cmp::Ordering::Less => Some(StanceLabel::Against),
            std::cmp::Ordering::Equal => None,
        }
    }
}

pub struct MockBackend {
    policy: MockPolicy,
    truth: TruthIndex,
    keywords: BTreeMap<String, KeywordSet>,
    phrases: HashMap<String, String>,
}

impl MockBackend {
    /// `targets` maps display phrases in prompts back to target ids.
    pub fn new(policy: MockPolicy, truth: TruthIndex, targets: &[TargetSpec]) -> Result<Self, LlmError> {
        policy.validate()?;
        Ok(MockBackend {
            policy,
            truth,
            keywords: default_keywords(),
            phrases: targets
                .iter()
                .map(|t| (t.display_phrase.clone(), t.target_id.clone()))
                .collect(),
        })
    }

    pub fn with_keywords(mut self, keywords: BTreeMap<String, KeywordSet>) -> Self {
        self.keywords = keywords;
        self
    }

    pub fn policy(&self) -> &MockPolicy {
        &self.policy
    }

    /// The reply text for `prompt`; a pure function of the policy, the
    /// truth index and the prompt.
    pub fn reply(&self, prompt: &str) -> String {
        let mut rng = seed::rng(self.policy.seed, &[b"mock", prompt.as_bytes()]);
        let garbled: f64 = rng.random();
        if garbled < self.policy.unparsable_rate {
            return UNPARSABLE_REPLY.to_string();
        }
        let Some(parts) = dissect_prompt(prompt) else {
            return UNPARSABLE_REPLY.to_string();
        };
        let target = self.phrases.get(parts.display_phrase);
        let verdict = match self.policy.mode {
            MockMode::KeywordOracle => match target.and_then(|t| self.keywords.get(t)) {
                Some(set) => keyword_vote(parts.tweets.iter().copied(), set),
                None => Verdict::Unparsable,
            },
            MockMode::PlantedAccuracy => {
                let truth = target.and_then(|t| self.truth.majority(t, parts.tweets.iter().copied()));
                let u: f64 = rng.random();
                if u < self.policy.support_probability(truth) {
                    Verdict::Support
                } else {
                    Verdict::Against
                }
            }
        };
        match verdict {
            Verdict::Support => "Support".to_string(),
            Verdict::Against => "Against".to_string(),
            Verdict::Unparsable => UNPARSABLE_REPLY.to_string(),
        }
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, AttemptError> {
        Ok(self.reply(&request.prompt))
    }

    fn is_remote(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{parse_reply, render_prompt, ParsedVote};

    fn trump() -> TargetSpec {
        TargetSpec::canonical("donald_trump").unwrap()
    }

    fn backend(policy: MockPolicy, truth: TruthIndex) -> MockBackend {
        MockBackend::new(policy, truth, &[trump()]).unwrap()
    }

    #[test]
    fn keyword_oracle_votes() {
        let mock = backend(MockPolicy::keyword_oracle(0), TruthIndex::default());
        let p = render_prompt(&["good day #maga", "lunch"], &trump()).unwrap();
        assert_eq!(mock.reply(&p), "Support");
        let p = render_prompt(&["#resist now", "#votehimout"], &trump()).unwrap();
        assert_eq!(mock.reply(&p), "Against");
        let p = render_prompt(&["just lunch"], &trump()).unwrap();
        assert!(matches!(parse_reply(&mock.reply(&p)), ParsedVote::Unparsable(_)));
        assert_eq!(mock.reply("free-form text"), UNPARSABLE_REPLY);
    }

    #[test]
    fn replies_are_deterministic() {
        let mut truth = TruthIndex::default();
        truth.insert("donald_trump", "alpha", StanceLabel::Support);
        let mock = backend(MockPolicy::planted(0.6, 3), truth.clone());
        let again = backend(MockPolicy::planted(0.6, 3), truth);
        for i in 0..50 {
            let p = render_prompt(&["alpha", &format!("x{i}")], &trump()).unwrap();
            assert_eq!(mock.reply(&p), again.reply(&p));
        }
    }

    #[test]
    fn planted_accuracy_within_three_standard_errors() {
        let n = 4000;
        let mut truth = TruthIndex::default();
        let mut prompts = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { StanceLabel::Support } else { StanceLabel::Against };
            let text = format!("tweet number {i}");
            truth.insert("donald_trump", &text, label);
            prompts.push((render_prompt(&[text], &trump()).unwrap(), label));
        }
        for (accuracy, seed) in [(0.9, 1), (0.7, 2), (0.55, 3)] {
            let mock = backend(MockPolicy::planted(accuracy, seed), truth.clone());
            let correct = prompts
                .iter()
                .filter(|(p, label)| parse_reply(&mock.reply(p)).label() == Some(*label))
                .count() as f64;
            let se = (accuracy * (1.0 - accuracy) / n as f64).sqrt();
            assert!((correct / n as f64 - accuracy).abs() < 3.0 * se, "accuracy {accuracy}");
        }
    }

    #[test]
    fn support_rate_parametrisation() {
        let policy = MockPolicy::from_support_rates(0.9, 0.6, 0).unwrap();
        assert!((policy.support_probability(Some(StanceLabel::Support)) - 0.9).abs() < 1e-12);
        assert!((policy.support_probability(Some(StanceLabel::Against)) - 0.6).abs() < 1e-12);
        let unbiased = MockPolicy::planted(0.8, 0);
        assert!((unbiased.support_probability(Some(StanceLabel::Against)) - 0.2).abs() < 1e-12);
        assert_eq!(MockPolicy::planted(1.0, 0).support_probability(Some(StanceLabel::Support)), 1.0);
    }

    #[test]
    fn unparsable_rate_one_always_garbles() {
        let mut policy = MockPolicy::keyword_oracle(0);
        policy.unparsable_rate = 1.0;
        let mock = backend(policy, TruthIndex::default());
        let p = render_prompt(&["#maga"], &trump()).unwrap();
        assert_eq!(mock.reply(&p), UNPARSABLE_REPLY);
    }

    #[test]
    fn truth_index_from_users_marks_conflicts() {
        let users: Vec<UserRecord> = serde_json::from_str(
            r#"[{"user_id":"a","stances":{"donald_trump":"support"},"tweets":[{"id":"1","text":"same"},{"id":"2","text":"only a"}]},
                {"user_id":"b","stances":{"donald_trump":"against"},"tweets":[{"id":"3","text":"same"}]}]"#,
        )
        .unwrap();
        let index = TruthIndex::from_users(&users);
        assert_eq!(index.get("donald_trump", "same"), None);
        assert_eq!(index.get("donald_trump", "only a"), Some(StanceLabel::Support));
    }

    #[test]
    fn policy_json_and_validation() {
        let p: MockPolicy = serde_json::from_str(r#"{"mode":"planted_accuracy","per_vote_accuracy":0.7,"seed":4}"#).unwrap();
        assert_eq!(p, MockPolicy::planted(0.7, 4));
        let bad = MockPolicy { unparsable_rate: 1.5, ..p };
        assert!(bad.validate().is_err());
    }
}
