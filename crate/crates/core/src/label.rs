use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A user's stance toward a target. The dataset carries no neutral class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceLabel {
    Support,
    Against,
}

impl StanceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Support => "support",
            StanceLabel::Against => "against",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            StanceLabel::Support => StanceLabel::Against,
            StanceLabel::Against => StanceLabel::Support,
        }
    }

    /// Support coded 1, Against coded 0.
    pub fn indicator(self) -> f64 {
        match self {
            StanceLabel::Support => 1.0,
            StanceLabel::Against => 0.0,
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StanceLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "support" => Ok(StanceLabel::Support),
            "against" => Ok(StanceLabel::Against),
            other => Err(format!("unknown stance label {other:?}")),
        }
    }
}

/// A user-level decision. `Unparsable` covers replies that name neither
/// class and users whose every vote was ignored; it is scored as wrong for
/// the true class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Support,
    Against,
    Unparsable,
}

impl Verdict {
    pub fn label(self) -> Option<StanceLabel> {
        match self {
            Verdict::Support => Some(StanceLabel::Support),
            Verdict::Against => Some(StanceLabel::Against),
            Verdict::Unparsable => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Support => "support",
            Verdict::Against => "against",
            Verdict::Unparsable => "unparsable",
        }
    }
}

impl From<StanceLabel> for Verdict {
    fn from(label: StanceLabel) -> Self {
        match label {
            StanceLabel::Support => Verdict::Support,
            StanceLabel::Against => Verdict::Against,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
