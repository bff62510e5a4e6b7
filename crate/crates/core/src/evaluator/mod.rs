//! Ranking metrics and per-group evaluation.

mod analysis;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use analysis::{
    cooccurrence_embeddings, cosine, drop_core_events, interest_continuity, random_drop_sweep, ContinuityReport,
    ContinuitySource, Deciles, GroupContinuity, SweepRow,
};

use crate::data::{InteractionDataset, UserGroup};
use crate::recommender::RecommenderModel;
use crate::{Error, Result};

pub const DEFAULT_KS: [usize; 2] = [5, 10];

/// 1-based rank of `target` among the candidates (every item not in
/// `exclude`). Items tied with the target count as ranked above it.
pub fn rank_in_scores(scores: &[f64], target: usize, exclude: &[usize]) -> Result<usize> {
    if target >= scores.len() {
        return Err(Error::UnknownItem {
            item: target,
            catalog: scores.len(),
        });
    }
    if exclude.contains(&target) {
        return Err(Error::TargetExcluded(target));
    }
    let excluded: HashSet<usize> = exclude.iter().copied().collect();
    let t = scores[target];
    let above = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i != target && s >= t && !excluded.contains(&i))
        .count();
    Ok(1 + above)
}

pub fn rank_of_target(model: &RecommenderModel, prefix: &[usize], target: usize, exclude: &[usize]) -> Result<usize> {
    let scores = model.score_next(prefix)?;
    rank_in_scores(&scores, target, exclude)
}

pub fn ht_at_k(rank: usize, k: usize) -> f64 {
    debug_assert!(rank >= 1);
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    debug_assert!(rank >= 1);
    if rank <= k {
        1.0 / ((1 + rank) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Finetune,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// drop already consumed items from the candidate set
    pub exclude_history: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            exclude_history: true,
        }
    }
}

/// The prefix and held-out target of one user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub prefix: Vec<usize>,
    pub target: usize,
}

/// Evaluation case of `user`, if it has a non-empty prefix and a target in
/// `split`. Test prefixes include the finetune item.
pub fn eval_case(ds: &InteractionDataset, user: usize, split: EvalSplit) -> Option<EvalCase> {
    let s = ds.split(user);
    let mut prefix = s.train.clone();
    let target = match split {
        EvalSplit::Finetune => s.finetune?,
        EvalSplit::Test => {
            prefix.extend(s.finetune);
            s.test?
        }
    };
    (!prefix.is_empty()).then_some(EvalCase { user, prefix, target })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
    pub n_users: usize,
}

impl GroupMetrics {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRank {
    pub user: usize,
    pub group: UserGroup,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub split: EvalSplit,
    /// keyed by `core`, `casual` and `all`
    pub groups: BTreeMap<String, GroupMetrics>,
    pub ranks: Vec<UserRank>,
}

impl EvalResult {
    /// Metric mean for a group, e.g. `metric("casual", "HT@5")`.
    pub fn metric(&self, group: &str, metric: &str) -> Option<f64> {
        self.groups.get(group)?.get(metric)
    }

    /// `{group: {"HT@5": .., "NDCG@5": .., .., "n_users": ..}}`
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.groups).expect("metrics serialize")
    }
}

fn aggregate(ranks: &[usize], ks: &[usize]) -> GroupMetrics {
    let n = ranks.len() as f64;
    let mut metrics = BTreeMap::new();
    for &k in ks {
        let ht: f64 = ranks.iter().map(|&r| ht_at_k(r, k)).sum();
        let ndcg: f64 = ranks.iter().map(|&r| ndcg_at_k(r, k)).sum();
        metrics.insert(format!("HT@{k}"), ht / n);
        metrics.insert(format!("NDCG@{k}"), ndcg / n);
    }
    GroupMetrics {
        metrics,
        n_users: ranks.len(),
    }
}

/// Ranks of the given cases. The candidate set excludes the prefix items
/// (unless disabled), but the target always stays a candidate.
pub fn rank_cases(model: &RecommenderModel, cases: &[EvalCase], exclude_history: bool) -> Result<Vec<usize>> {
    cases
        .iter()
        .map(|case| {
            let exclude: Vec<usize> = if exclude_history {
                case.prefix.iter().copied().filter(|&i| i != case.target).collect()
            } else {
                Vec::new()
            };
            rank_of_target(model, &case.prefix, case.target, &exclude)
        })
        .collect()
}

/// Evaluates `users` (all users when `None`) on `split`; users without a
/// target there are skipped.
pub fn evaluate_users(
    model: &RecommenderModel,
    ds: &InteractionDataset,
    users: Option<&[usize]>,
    split: EvalSplit,
    options: &EvalOptions,
) -> Result<EvalResult> {
    let all: Vec<usize>;
    let users = match users {
        Some(u) => u,
        None => {
            all = (0..ds.num_users()).collect();
            &all
        }
    };
    let cases: Vec<EvalCase> = users.iter().filter_map(|&u| eval_case(ds, u, split)).collect();
    let ranks = rank_cases(model, &cases, options.exclude_history)?;
    let ranks: Vec<UserRank> = cases
        .iter()
        .zip(ranks)
        .map(|(c, rank)| UserRank {
            user: c.user,
            group: ds.group(c.user),
            rank,
        })
        .collect();

    let mut groups = BTreeMap::new();
    for (name, filter) in [
        ("core", Some(UserGroup::Core)),
        ("casual", Some(UserGroup::Casual)),
        ("all", None),
    ] {
        let group_ranks: Vec<usize> = ranks
            .iter()
            .filter(|r| filter.map_or(true, |g| r.group == g))
            .map(|r| r.rank)
            .collect();
        if group_ranks.is_empty() {
            log::warn!("no {name} users to evaluate on the {split:?} split");
            continue;
        }
        groups.insert(name.to_string(), aggregate(&group_ranks, &options.ks));
    }
    Ok(EvalResult { split, groups, ranks })
}

pub fn evaluate(
    model: &RecommenderModel,
    ds: &InteractionDataset,
    split: EvalSplit,
    options: &EvalOptions,
) -> Result<EvalResult> {
    evaluate_users(model, ds, None, split, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let scores = [0.1, 0.9, 0.3, 0.5];
        assert_eq!(rank_in_scores(&scores, 1, &[]).unwrap(), 1);
        assert_eq!(rank_in_scores(&scores, 0, &[]).unwrap(), 4);
        assert_eq!(rank_in_scores(&scores, 0, &[1, 3]).unwrap(), 2);
        assert_eq!(rank_in_scores(&[0.0; 10], 3, &[]).unwrap(), 10);
        assert!(matches!(rank_in_scores(&scores, 1, &[1]), Err(Error::TargetExcluded(1))));
    }

    #[test]
    fn metric_examples() {
        assert_eq!(ht_at_k(1, 5), 1.0);
        assert_eq!(ht_at_k(6, 5), 0.0);
        assert_eq!(ht_at_k(5, 5), 1.0);
        assert_eq!(ndcg_at_k(1, 10), 1.0);
        assert!((ndcg_at_k(3, 5) - 0.5).abs() < 1e-15);
        assert_eq!(ndcg_at_k(11, 10), 0.0);
    }

    #[test]
    fn aggregate_two_users() {
        let g = aggregate(&[1, 3], &[5]);
        assert_eq!(g.get("HT@5"), Some(1.0));
        assert!((g.get("NDCG@5").unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(g.n_users, 2);
    }
}
