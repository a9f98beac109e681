use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::corpus::UserRecord;
use crate::features::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Foundation {
    Care,
    Fairness,
    Loyalty,
    Authority,
    Sanctity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Virtue,
    Vice,
}

/// One of the ten moral dimensions, written `foundation.polarity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dimension {
    pub foundation: Foundation,
    pub polarity: Polarity,
}

impl Dimension {
    pub const ALL: [Dimension; 10] = {
        use Foundation::*;
        use Polarity::*;
        [
            Dimension::new(Care, Virtue),
            Dimension::new(Care, Vice),
            Dimension::new(Fairness, Virtue),
            Dimension::new(Fairness, Vice),
            Dimension::new(Loyalty, Virtue),
            Dimension::new(Loyalty, Vice),
            Dimension::new(Authority, Virtue),
            Dimension::new(Authority, Vice),
            Dimension::new(Sanctity, Virtue),
            Dimension::new(Sanctity, Vice),
        ]
    };

    pub const fn new(foundation: Foundation, polarity: Polarity) -> Self {
        Dimension {
            foundation,
            polarity,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let foundation = match self.foundation {
            Foundation::Care => "care",
            Foundation::Fairness => "fairness",
            Foundation::Loyalty => "loyalty",
            Foundation::Authority => "authority",
            Foundation::Sanctity => "sanctity",
        };
        let polarity = match self.polarity {
            Polarity::Virtue => "virtue",
            Polarity::Vice => "vice",
        };
        write!(f, "{foundation}.{polarity}")
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.to_string() == s)
            .ok_or_else(|| format!("unknown moral dimension {s:?}"))
    }
}

impl Serialize for Dimension {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Dimension {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Word → dimension → weight in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, BTreeMap<Dimension, f64>>,
}

impl Lexicon {
    pub fn insert(&mut self, word: &str, dimension: Dimension, weight: f64) -> Result<(), String> {
        if !weight.is_finite() || !(0.0..=1.0).contains(&weight) {
            return Err(format!("weight {weight} for {word:?} is outside [0, 1]"));
        }
        self.entries
            .entry(word.to_lowercase())
            .or_default()
            .insert(dimension, weight);
        Ok(())
    }

    pub fn weights(&self, word: &str) -> Option<&BTreeMap<Dimension, f64>> {
        self.entries.get(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Words carrying a positive weight on `dimension`, sorted.
    pub fn words_for(&self, dimension: Dimension) -> Vec<&str> {
        let mut words: Vec<&str> = self
            .entries
            .iter()
            .filter(|(_, dims)| dims.get(&dimension).is_some_and(|w| *w > 0.0))
            .map(|(w, _)| w.as_str())
            .collect();
        words.sort_unstable();
        words
    }

    /// Parses `word,dimension,weight` rows; a leading header row is skipped.
    pub fn from_csv(text: &str) -> Result<Self, AnalysisError> {
        let mut lexicon = Lexicon::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.trim();
            if raw.is_empty() || (line == 1 && raw.starts_with("word,")) {
                continue;
            }
            let bad = |message: String| AnalysisError::Lexicon { line, message };
            let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
            let [word, dimension, weight] = fields[..] else {
                return Err(bad(format!("expected 3 fields, found {}", fields.len())));
            };
            let dimension: Dimension = dimension.parse().map_err(bad)?;
            let weight: f64 = weight
                .parse()
                .map_err(|_| bad(format!("weight {weight:?} is not a number")))?;
            lexicon.insert(word, dimension, weight).map_err(bad)?;
        }
        Ok(lexicon)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(&text)
    }

    /// The small synthetic lexicon bundled for tests and demos.
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_LEXICON).expect("bundled lexicon parses")
    }
}

pub const BUNDLED_LEXICON: &str = include_str!("../../assets/lexicon_synthetic.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconScores {
    pub scores: BTreeMap<Dimension, f64>,
    pub matched_tokens: usize,
    /// No token matched; every score is zero.
    pub flagged: bool,
}

/// Mean dimension weight over the lexicon-matched tokens of `texts`.
pub fn score_texts<'a>(texts: impl IntoIterator<Item = &'a str>, lexicon: &Lexicon) -> LexiconScores {
    let mut sums: BTreeMap<Dimension, f64> = Dimension::ALL.iter().map(|d| (*d, 0.0)).collect();
    let mut matched = 0usize;
    for text in texts {
        for token in tokenize(text) {
            if let Some(weights) = lexicon.weights(&token) {
                matched += 1;
                for (dim, w) in weights {
                    *sums.get_mut(dim).expect("all dimensions present") += w;
                }
            }
        }
    }
    if matched > 0 {
        sums.values_mut().for_each(|v| *v /= matched as f64);
    }
    LexiconScores {
        scores: sums,
        matched_tokens: matched,
        flagged: matched == 0,
    }
}

/// Scores the concatenation of the user's tweets that are agnostic for
/// `target`.
pub fn lexicon_scores(user: &UserRecord, target: &str, lexicon: &Lexicon) -> LexiconScores {
    let concatenated = user
        .tweets
        .iter()
        .filter(|t| t.is_agnostic_for(target))
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    score_texts([concatenated.as_str()], lexicon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn care_vice() -> Dimension {
        Dimension::new(Foundation::Care, Polarity::Vice)
    }

    #[test]
    fn dimension_names_round_trip() {
        for d in Dimension::ALL {
            assert_eq!(d.to_string().parse::<Dimension>().unwrap(), d);
        }
        assert_eq!(care_vice().to_string(), "care.vice");
        assert!("care.evil".parse::<Dimension>().is_err());
    }

    #[test]
    fn csv_parsing_and_guards() {
        let lex = Lexicon::from_csv("word,dimension,weight\nharm,care.vice,0.8\nharm,fairness.vice,0.1\n").unwrap();
        assert_eq!(lex.weights("harm").unwrap().len(), 2);
        assert!(matches!(Lexicon::from_csv("harm,care.evil,0.5"), Err(AnalysisError::Lexicon { line: 1, .. })));
        assert!(matches!(Lexicon::from_csv("harm,care.vice,1.5"), Err(AnalysisError::Lexicon { .. })));
        assert!(matches!(Lexicon::from_csv("harm,care.vice"), Err(AnalysisError::Lexicon { .. })));
        let bundled = Lexicon::bundled();
        for d in Dimension::ALL {
            assert!(!bundled.words_for(d).is_empty(), "{d}");
        }
    }

    #[test]
    fn single_and_mean_matches() {
        let mut lex = Lexicon::default();
        lex.insert("harm", care_vice(), 0.8).unwrap();
        lex.insert("hurt", care_vice(), 0.4).unwrap();
        let one = score_texts(["nothing but harm here"], &lex);
        assert_eq!(one.scores[&care_vice()], 0.8);
        assert!(one.scores.iter().filter(|(d, _)| **d != care_vice()).all(|(_, v)| *v == 0.0));
        let two = score_texts(["harm and hurt"], &lex);
        assert!((two.scores[&care_vice()] - 0.6).abs() < 1e-15);
        let none = score_texts(["plain words"], &lex);
        assert!(none.flagged);
        assert_eq!(none.matched_tokens, 0);
        assert!(none.scores.values().all(|v| *v == 0.0));
        assert_eq!(none.scores.len(), 10);
    }
}
