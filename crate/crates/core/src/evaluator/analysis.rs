//! Diagnostics: interest continuity of consecutive items and the random
//! drop sweep over core-user interactions.

use std::collections::BTreeMap;

use autodiff::Tensor;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{evaluate_users, EvalOptions, EvalSplit};
use crate::data::{InteractionDataset, UserGroup};
use crate::recommender::{self, FitConfig, ModelConfig, TrainSequence};
use crate::rng;
use crate::{Error, Result};

/// Which item embeddings the continuity analysis uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuitySource {
    Recommender,
    Cooccurrence,
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// The sequences an analysis should look at: training sequences once the
/// dataset is split, full histories otherwise.
fn observed_sequences(ds: &InteractionDataset) -> Vec<Vec<usize>> {
    if ds.is_split() {
        ds.train_sequences()
    } else {
        (0..ds.num_users()).map(|u| ds.sequence(u)).collect()
    }
}

/// L2-normalized rows of the binary item-by-user incidence matrix. The
/// cosine of two rows is `|N(i) & N(j)| / sqrt(|N(i)| |N(j)|)`. Items nobody
/// consumed keep a zero row.
pub fn cooccurrence_embeddings(ds: &InteractionDataset) -> Tensor {
    let (n_items, n_users) = (ds.num_items(), ds.num_users());
    let mut data = vec![0.0; n_items * n_users];
    for (u, seq) in observed_sequences(ds).iter().enumerate() {
        for &i in seq {
            data[i * n_users + u] = 1.0;
        }
    }
    for row in data.chunks_mut(n_users.max(1)) {
        let norm = row.iter().sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Tensor::from_vec(vec![n_items, n_users], data).expect("shape matches data")
}

/// Eleven quantiles from the minimum to the maximum in steps of 10%.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deciles(pub Vec<f64>);

impl Deciles {
    fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        Deciles(
            (0..=10)
                .map(|q| {
                    // linear interpolation between closest ranks
                    let pos = q as f64 / 10.0 * (n - 1) as f64;
                    let lo = pos.floor() as usize;
                    let hi = pos.ceil() as usize;
                    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
                })
                .collect(),
        )
    }

    pub fn median(&self) -> f64 {
        self.0[5]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupContinuity {
    pub n_users: usize,
    pub mean: f64,
    pub deciles: Deciles,
    pub user_means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub groups: BTreeMap<String, GroupContinuity>,
    /// consecutive pairs skipped because an embedding had zero norm
    pub skipped_pairs: usize,
}

impl ContinuityReport {
    pub fn mean(&self, group: &str) -> Option<f64> {
        self.groups.get(group).map(|g| g.mean)
    }
}

/// Mean cosine over consecutive pairs, and the number of skipped pairs.
fn sequence_continuity(seq: &[usize], emb: &Tensor) -> (Option<f64>, usize) {
    let (mut total, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for w in seq.windows(2) {
        match cosine(emb.row(w[0]), emb.row(w[1])) {
            Some(c) => {
                total += c;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    ((n > 0).then(|| total / n as f64), skipped)
}

/// Per-group continuity of core and casual users plus any extra labelled
/// sequence groups (for instance augmented pseudo-users).
pub fn interest_continuity(
    ds: &InteractionDataset,
    embeddings: &Tensor,
    extra: &[(&str, &[Vec<usize>])],
) -> Result<ContinuityReport> {
    if embeddings.shape().len() != 2 || embeddings.shape()[0] != ds.num_items() {
        return Err(Error::InvalidArgument(format!(
            "embeddings of shape {:?} do not cover {} items",
            embeddings.shape(),
            ds.num_items()
        )));
    }
    let sequences = observed_sequences(ds);
    let mut labelled: Vec<(String, Vec<&[usize]>)> = [UserGroup::Core, UserGroup::Casual]
        .iter()
        .map(|&g| {
            let seqs = ds.users_in(g).into_iter().map(|u| sequences[u].as_slice()).collect();
            (g.as_str().to_string(), seqs)
        })
        .collect();
    for (label, seqs) in extra {
        labelled.push((label.to_string(), seqs.iter().map(Vec::as_slice).collect()));
    }

    let mut groups = BTreeMap::new();
    let mut skipped_pairs = 0;
    for (label, seqs) in labelled {
        let mut user_means = Vec::new();
        for seq in seqs {
            let (mean, skipped) = sequence_continuity(seq, embeddings);
            skipped_pairs += skipped;
            user_means.extend(mean);
        }
        if user_means.is_empty() {
            log::warn!("continuity: group {label} has no sequence with a scorable pair");
            continue;
        }
        let mean = user_means.iter().sum::<f64>() / user_means.len() as f64;
        groups.insert(
            label,
            GroupContinuity {
                n_users: user_means.len(),
                mean,
                deciles: Deciles::of(&user_means),
                user_means,
            },
        );
    }
    Ok(ContinuityReport { groups, skipped_pairs })
}

/// Training sequences with every core-user item dropped independently with
/// probability `rate`. Casual sequences are untouched.
pub fn drop_core_events(ds: &InteractionDataset, rate: f64, rng: &mut rng::Rng) -> Vec<Vec<usize>> {
    (0..ds.num_users())
        .map(|u| {
            let seq = ds.train_sequence(u);
            if ds.group(u) == UserGroup::Core && rate > 0.0 {
                seq.iter().copied().filter(|_| !rng.gen_bool(rate)).collect()
            } else {
                seq.to_vec()
            }
        })
        .collect()
}

/// Casual metrics for one drop rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
}

/// Retrains a recommender from scratch for every drop rate and reports
/// casual-user metrics on `split`.
#[allow(clippy::too_many_arguments)]
pub fn random_drop_sweep(
    ds: &InteractionDataset,
    rates: &[f64],
    model: &ModelConfig,
    fit: &FitConfig,
    split: EvalSplit,
    options: &EvalOptions,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if let Some(bad) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config {
            key: "sweep.rates".into(),
            message: format!("{bad} is not in [0, 1]"),
        });
    }
    let casual = ds.users_in(UserGroup::Casual);
    rates
        .iter()
        .map(|&rate| {
            let mut drop_rng = rng::stream(seed, rng::DROP_SWEEP);
            let sequences = drop_core_events(ds, rate, &mut drop_rng);
            let train: Vec<TrainSequence<'_>> = sequences.iter().map(|s| TrainSequence::own(s)).collect();
            let mut rec = recommender::init_model(model, ds.num_items(), seed)?;
            recommender::fit(&mut rec, &train, fit, seed)?;
            let result = evaluate_users(&rec, ds, Some(&casual), split, options)?;
            let metrics = result
                .groups
                .get("casual")
                .map(|g| g.metrics.clone())
                .unwrap_or_default();
            log::info!("drop rate {rate}: {metrics:?}");
            Ok(SweepRow { rate, metrics })
        })
        .collect()
}
