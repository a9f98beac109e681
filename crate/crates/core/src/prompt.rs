//! The zero-shot stance prompt and the reply parser.
//!
//! The template ships as a text asset (`assets/prompt_template_v1.txt`) and
//! is reproduced byte for byte. Tweets are joined with single newlines
//! between the `TWEETS` and `END OF TWEETS` sentinel lines.

use thiserror::Error;

use crate::label::StanceLabel;

pub const TEMPLATE_VERSION: &str = "v1";
pub const TEMPLATE: &str = include_str!("../assets/prompt_template_v1.txt");

const TWEETS_OPEN: &str = "TWEETS\n";
const TWEETS_CLOSE: &str = "END OF TWEETS";
const QUESTION_LEAD: &str = "do you think this user supports or is against ";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("cannot render a prompt with no tweets")]
    NoTweets,
    #[error("tweet {index} contains the line \"END OF TWEETS\"")]
    SentinelCollision { index: usize },
    #[error("target display phrase is empty")]
    EmptyPhrase,
}

/// A target and the phrase substituted for `{target}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpec {
    pub target_id: String,
    pub display_phrase: String,
}

/// Built-in targets and their phrasings.
pub const CANONICAL_TARGETS: [(&str, &str); 3] = [
    ("donald_trump", "Donald Trump"),
    ("wearing_masks", "Wearing Masks"),
    (
        "racial_equality",
        "Racial Equality (such as the Black Lives Matter movement)",
    ),
];

impl TargetSpec {
    pub fn new(
        target_id: impl Into<String>,
        display_phrase: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let display_phrase = display_phrase.into();
        if display_phrase.trim().is_empty() {
            return Err(PromptError::EmptyPhrase);
        }
        Ok(TargetSpec {
            target_id: target_id.into(),
            display_phrase,
        })
    }

    pub fn canonical(target_id: &str) -> Option<Self> {
        CANONICAL_TARGETS
            .iter()
            .find(|(id, _)| *id == target_id)
            .map(|(id, phrase)| TargetSpec {
                target_id: id.to_string(),
                display_phrase: phrase.to_string(),
            })
    }

    /// Canonical phrasing when known, otherwise the id title-cased
    /// (`climate_policy` → `Climate Policy`).
    pub fn for_id(target_id: &str) -> Self {
        Self::canonical(target_id).unwrap_or_else(|| TargetSpec {
            target_id: target_id.to_string(),
            display_phrase: target_id
                .split('_')
                .filter(|w| !w.is_empty())
                .map(|w| {
                    let mut chars = w.chars();
                    match chars.next() {
                        Some(first) => first.to_uppercase().chain(chars).collect::<String>(),
                        None => String::new(),
                    }
                })
                .collect::<Vec<_>>()
                .join(" "),
        })
    }
}

pub fn render_prompt<S: AsRef<str>>(tweets: &[S], target: &TargetSpec) -> Result<String, PromptError> {
    if tweets.is_empty() {
        return Err(PromptError::NoTweets);
    }
    for (index, tweet) in tweets.iter().enumerate() {
        if tweet
            .as_ref()
            .lines()
            .any(|line| line.trim_end_matches('\r') == TWEETS_CLOSE)
        {
            return Err(PromptError::SentinelCollision { index });
        }
    }
    let block = tweets
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join("\n");
    // {target} first: tweet text may itself contain the literal "{target}".
    Ok(TEMPLATE
        .replace("{target}", &target.display_phrase)
        .replacen("{tweets}", &block, 1))
}

/// The pieces of a rendered prompt, recovered by [`dissect_prompt`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParts<'a> {
    pub tweets: Vec<&'a str>,
    pub display_phrase: &'a str,
}

/// Inverse of [`render_prompt`] for prompts it produced. Returns `None` for
/// anything else.
pub fn dissect_prompt(prompt: &str) -> Option<PromptParts<'_>> {
    let open = prompt.find(TWEETS_OPEN)? + TWEETS_OPEN.len();
    let close_marker = format!("\n{TWEETS_CLOSE}\n");
    let close = open + prompt[open..].find(&close_marker)?;
    let block = &prompt[open..close];
    let rest = &prompt[close + close_marker.len()..];
    let lead = rest.find(QUESTION_LEAD)? + QUESTION_LEAD.len();
    let end = rest[lead..].find("?\n")? + lead;
    Some(PromptParts {
        tweets: block.split('\n').collect(),
        display_phrase: &rest[lead..end],
    })
}

/// Outcome of parsing one model reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedVote {
    Support,
    Against,
    /// Anything else, kept verbatim for audit.
    Unparsable(String),
}

impl ParsedVote {
    pub fn label(&self) -> Option<StanceLabel> {
        match self {
            ParsedVote::Support => Some(StanceLabel::Support),
            ParsedVote::Against => Some(StanceLabel::Against),
            ParsedVote::Unparsable(_) => None,
        }
    }
}

/// Trims surrounding whitespace and trailing `.,!;:`, then matches
/// "support" / "against" case-insensitively. Leading words are not stripped.
pub fn parse_reply(raw: &str) -> ParsedVote {
    let cleaned = raw
        .trim()
        .trim_end_matches(['.', ',', '!', ';', ':'])
        .trim_end();
    if cleaned.eq_ignore_ascii_case("support") {
        ParsedVote::Support
    } else if cleaned.eq_ignore_ascii_case("against") {
        ParsedVote::Against
    } else {
        ParsedVote::Unparsable(raw.to_string())
    }
}
