use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::label::StanceLabel;
use crate::seed;

pub const DEFAULT_FOLDS: usize = 5;

/// Stratified group fold assignment with users as groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl CvPlan {
    pub fn fold_of(&self, user_id: &str) -> Option<usize> {
        self.folds.get(user_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Users are grouped by class (Support first), shuffled within class by
/// `seed`, then dealt one at a time to the fold holding the fewest users of
/// that class; ties go to the fold with the fewest users overall, then the
/// lowest index.
pub fn make_cv_plan(
    users: &[(String, StanceLabel)],
    k: usize,
    seed: u64,
) -> Result<CvPlan, ModelError> {
    if k < 2 {
        return Err(ModelError::BadHyperparameter(format!("k = {k}")));
    }
    if users.len() < k {
        return Err(ModelError::TooFewGroups {
            groups: users.len(),
            folds: k,
        });
    }
    let mut class_counts = vec![[0usize; 2]; k];
    let mut totals = vec![0usize; k];
    let mut folds = BTreeMap::new();
    for (class_idx, label) in [StanceLabel::Support, StanceLabel::Against].into_iter().enumerate() {
        let mut members: Vec<&str> = users
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(id, _)| id.as_str())
            .collect();
        members.shuffle(&mut seed::rng(seed, &[b"cv", label.as_str().as_bytes()]));
        for id in members {
            let fold = (0..k)
                .min_by_key(|&f| (class_counts[f][class_idx], totals[f], f))
                .expect("k >= 2");
            class_counts[fold][class_idx] += 1;
            totals[fold] += 1;
            folds.insert(id.to_string(), fold);
        }
    }
    Ok(CvPlan { k, folds })
}
