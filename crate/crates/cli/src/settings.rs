use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

/// Defaults read from `--config`. Every key mirrors a long flag with dashes
/// replaced by underscores; flags given on the command line win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub corpus: Option<PathBuf>,
    pub targets: Option<Vec<String>>,
    pub method: Option<String>,
    pub n_tweets: Option<usize>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub split: Option<String>,
    pub split_seed: Option<u64>,
    pub train_fraction: Option<f64>,
    pub llm_base_url: Option<String>,
    pub llm_model: Option<String>,
    pub mock_policy: Option<String>,
    pub cache: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub embeddings: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
    /// Phrase substituted for `{target}`, by target id.
    #[serde(default)]
    pub target_phrases: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}
