//! Memory-matching user simulator. A simulated user remembers the last
//! `memory_size` items it liked and rates a candidate by its cosine
//! similarity to the mean of that memory.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::io::Write;

use autodiff::Tensor;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::InteractionDataset;
use crate::evaluator::cosine;
use crate::recommender::RecommenderModel;
use crate::rng::{self, Rng};
use crate::{Error, Result};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub memory_size: usize,
    /// ratings at or above this enter the memory
    pub positive_threshold: f64,
    /// add uniform jitter in [-0.25, 0.25] to every rating
    pub noise: bool,
    pub steps: usize,
    pub list_size: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            memory_size: 10,
            positive_threshold: 3.0,
            noise: false,
            steps: 1,
            list_size: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimUser {
    pub memory: VecDeque<usize>,
    /// items the user has consumed or been shown; never recommended again
    pub consumed: HashSet<usize>,
    /// the prefix the recommender sees: training history plus liked items
    pub history: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SimEnv {
    embeddings: Tensor,
    config: SimConfig,
    users: BTreeMap<usize, SimUser>,
    rng: Rng,
}

/// Memory of every user with a non-empty training sequence, filled with the
/// most recent `memory_size` training items.
pub fn init_env(ds: &InteractionDataset, embeddings: Tensor, config: &SimConfig, seed: u64) -> Result<SimEnv> {
    if embeddings.shape().len() != 2 || embeddings.shape()[0] != ds.num_items() {
        return Err(Error::InvalidArgument(format!(
            "simulator embeddings {:?} do not cover {} items",
            embeddings.shape(),
            ds.num_items()
        )));
    }
    if config.memory_size == 0 {
        return Err(Error::Config {
            key: "simulator.memory_size".into(),
            message: "must be at least 1".into(),
        });
    }
    let users = (0..ds.num_users())
        .filter_map(|u| {
            let train = ds.train_sequence(u);
            if train.is_empty() {
                return None;
            }
            let start = train.len().saturating_sub(config.memory_size);
            Some((
                u,
                SimUser {
                    memory: train[start..].iter().copied().collect(),
                    consumed: train.iter().copied().collect(),
                    history: train.to_vec(),
                },
            ))
        })
        .collect();
    Ok(SimEnv {
        embeddings,
        config: config.clone(),
        users,
        rng: rng::stream(seed, rng::SIMULATOR),
    })
}

impl SimEnv {
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn user(&self, user: usize) -> Result<&SimUser> {
        self.users.get(&user).ok_or(Error::UnknownSimUser(user))
    }

    pub fn users(&self) -> impl Iterator<Item = usize> + '_ {
        self.users.keys().copied()
    }

    fn memory_mean(&self, memory: &VecDeque<usize>) -> Vec<f64> {
        let dim = self.embeddings.shape()[1];
        let mut mean = vec![0.0; dim];
        for &i in memory {
            for (m, v) in mean.iter_mut().zip(self.embeddings.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= memory.len() as f64);
        mean
    }

    /// Rates every candidate against the memory as it stood before the
    /// call, then appends the positively rated ones in list order.
    pub fn simulate_response(&mut self, user: usize, candidates: &[usize]) -> Result<Vec<f64>> {
        let num_items = self.embeddings.shape()[0];
        if let Some(&item) = candidates.iter().find(|&&c| c >= num_items) {
            return Err(Error::UnknownItem { item, catalog: num_items });
        }
        let state = self.users.get(&user).ok_or(Error::UnknownSimUser(user))?;
        if state.memory.is_empty() {
            return Err(Error::EmptyMemory(user));
        }
        let mean = self.memory_mean(&state.memory);
        let mut ratings = Vec::with_capacity(candidates.len());
        for &c in candidates {
            let s = cosine(self.embeddings.row(c), &mean).unwrap_or(0.0);
            let mut rating = MIN_RATING + (MAX_RATING - MIN_RATING) * s.clamp(0.0, 1.0);
            if self.config.noise {
                rating = (rating + self.rng.gen_range(-0.25..=0.25)).clamp(MIN_RATING, MAX_RATING);
            }
            ratings.push(rating);
        }
        let state = self.users.get_mut(&user).expect("user checked above");
        for (&c, &r) in candidates.iter().zip(&ratings) {
            state.consumed.insert(c);
            if r >= self.config.positive_threshold {
                state.memory.push_back(c);
                state.history.push(c);
                while state.memory.len() > self.config.memory_size {
                    state.memory.pop_front();
                }
            }
        }
        Ok(ratings)
    }
}

/// Anything that scores the catalog given a prefix.
pub trait Scorer {
    fn score(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

impl Scorer for RecommenderModel {
    fn score(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.score_next(prefix)
    }
}

impl<F: Fn(&[usize]) -> Result<Vec<f64>>> Scorer for F {
    fn score(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self(prefix)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub user: usize,
    pub step: usize,
    pub recommended: Vec<usize>,
    pub ratings: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub user: usize,
    pub steps: Vec<EpisodeStep>,
    pub cumulative_reward: f64,
    /// the catalog ran out of unconsumed items before the last step
    pub exhausted: bool,
}

impl Episode {
    pub fn mean_step_reward(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.cumulative_reward / self.steps.len() as f64
        }
    }

    /// One JSON line per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Top-`n` unconsumed items, highest score first, ties by smaller index.
fn top_unconsumed(scores: &[f64], consumed: &HashSet<usize>, n: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|i| !consumed.contains(i)).collect();
    candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    candidates.truncate(n);
    candidates
}

/// Recommends, collects ratings and updates the user's memory for `steps`
/// rounds. The step reward is the mean rating of the list.
pub fn online_episode<S: Scorer + ?Sized>(
    env: &mut SimEnv,
    scorer: &S,
    user: usize,
    steps: usize,
    list_size: usize,
) -> Result<Episode> {
    if steps == 0 || list_size == 0 {
        return Err(Error::InvalidArgument("episodes need at least one step and one slot".into()));
    }
    let mut episode = Episode {
        user,
        steps: Vec::with_capacity(steps),
        cumulative_reward: 0.0,
        exhausted: false,
    };
    for step in 0..steps {
        let state = env.user(user)?;
        let scores = scorer.score(&state.history)?;
        let recommended = top_unconsumed(&scores, &state.consumed, list_size);
        if recommended.is_empty() {
            episode.exhausted = true;
            break;
        }
        let ratings = env.simulate_response(user, &recommended)?;
        let reward = ratings.iter().sum::<f64>() / ratings.len() as f64;
        episode.cumulative_reward += reward;
        episode.steps.push(EpisodeStep {
            user,
            step,
            recommended,
            ratings,
            reward,
        });
        if episode.steps.len() < steps && env.user(user)?.consumed.len() >= scores.len() {
            episode.exhausted = true;
            break;
        }
    }
    Ok(episode)
}

/// Mean per-step episode reward over `users`, each played from a copy of
/// the environment so the episodes do not interact.
pub fn mean_episode_reward<S: Scorer + ?Sized>(env: &SimEnv, scorer: &S, users: &[usize]) -> Result<f64> {
    let (steps, list) = (env.config.steps, env.config.list_size);
    let mut total = 0.0;
    for &u in users {
        let mut local = env.clone();
        total += online_episode(&mut local, scorer, u, steps, list)?.mean_step_reward();
    }
    Ok(if users.is_empty() {
        0.0
    } else {
        total / users.len() as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Event, SplitConfig};

    fn env_with(embeddings: Vec<Vec<f64>>, train: &[&str], memory_size: usize) -> SimEnv {
        let mut events: Vec<Event> = train
            .iter()
            .enumerate()
            .map(|(k, i)| Event::new("u", *i, 100 + k as u64))
            .collect();
        // two held-out events after the cutoff
        events.push(Event::new("u", train[0], 10_000));
        events.push(Event::new("u", train[0], 10_001));
        for (k, id) in ["a", "b", "c"].iter().enumerate() {
            events.push(Event::new("w", *id, 200 + k as u64));
        }
        let config = SplitConfig {
            split: crate::data::SplitRule::Cutoff { cutoff: 5_000 },
            ..SplitConfig::default()
        };
        let ds = crate::data::prepare(InteractionDataset::from_events(&events), &config).unwrap();
        let mut rows = vec![vec![0.0; embeddings[0].len()]; ds.num_items()];
        for (k, id) in ["a", "b", "c"].iter().enumerate() {
            if let Some(i) = ds.item_index(id) {
                rows[i] = embeddings[k].clone();
            }
        }
        let sim = SimConfig {
            memory_size,
            ..SimConfig::default()
        };
        init_env(&ds, Tensor::from_rows(&rows).unwrap(), &sim, 0).unwrap()
    }

    #[test]
    fn identical_candidate_rates_five_and_orthogonal_rates_one() {
        let mut env = env_with(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]], &["a"], 10);
        assert_eq!(env.simulate_response(0, &[0]).unwrap(), vec![5.0]);
        assert_eq!(env.simulate_response(0, &[1]).unwrap(), vec![1.0]);
    }

    #[test]
    fn half_cosine_rates_three_and_enters_memory() {
        // memory {a, b} with mean along (1, 1)/2; c at 75 degrees from it has cos 0.5
        let angle = std::f64::consts::FRAC_PI_4 + std::f64::consts::FRAC_PI_3;
        let mut env = env_with(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![angle.cos(), angle.sin()]], &["a", "b"], 10);
        let c = 2;
        let r = env.simulate_response(0, &[c]).unwrap()[0];
        assert!((r - 3.0).abs() < 1e-12, "{r}");
        assert_eq!(env.user(0).unwrap().memory.back(), Some(&c));
    }

    #[test]
    fn memory_is_bounded() {
        let env = env_with(vec![vec![1.0], vec![1.0], vec![1.0]], &["a", "b", "c"], 1);
        assert_eq!(env.user(0).unwrap().memory.len(), 1);
        let mut env = env_with(vec![vec![1.0], vec![1.0], vec![1.0]], &["a", "b", "c"], 3);
        env.simulate_response(0, &[0, 1, 2]).unwrap();
        assert_eq!(env.user(0).unwrap().memory.len(), 3);
    }
}
