//! Co-training loop: sample edits of core-user sequences, probe the
//! recommender with one step on the edited batch, reward the policy with the
//! change in meta-set quality, and periodically replay original data into
//! the recommender.

mod optim;

use std::io::Write;

use autodiff::{Adam, AdamConfig};
use rand::seq::index;
use serde::{Deserialize, Serialize};

pub use optim::{OptimizerKind, PolicyOptimizer};

use crate::augmentor::{AugmentorPolicy, EditTrajectory, SubstitutionTable};
use crate::data::{InteractionDataset, UserGroup};
use crate::evaluator::{eval_case, ht_at_k, ndcg_at_k, rank_cases, EvalCase, EvalSplit};
use crate::recommender::{self, EpochLog, FitConfig, RecommenderModel, TrainBatch, TrainSequence};
use crate::rng::{self, Rng};
use crate::simulator::{mean_episode_reward, SimEnv};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    #[default]
    Metrics,
    Simulator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub source: RewardSource,
    pub k: usize,
    pub use_ht: bool,
    pub use_ndcg: bool,
    pub scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            source: RewardSource::Metrics,
            k: 10,
            use_ht: true,
            use_ndcg: true,
            scale: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub enabled: bool,
    pub window: usize,
    pub tolerance: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: 200,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// core sequences edited per iteration, and original sequences per replay
    pub batch_size: usize,
    pub policy_lr: f64,
    pub policy_optimizer: OptimizerKind,
    pub recommender_lr: f64,
    pub replay_every: usize,
    pub reward: RewardConfig,
    pub max_iterations: usize,
    /// decay of an exponential moving-average reward baseline; off when null
    pub baseline_decay: Option<f64>,
    /// keep the probe step in the recommender instead of discarding it
    pub persist_probe: bool,
    pub convergence: ConvergenceConfig,
    pub negatives_per_step: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            policy_lr: 1e-3,
            policy_optimizer: OptimizerKind::Adam,
            recommender_lr: 1e-3,
            replay_every: 5,
            reward: RewardConfig::default(),
            max_iterations: 2000,
            baseline_decay: None,
            persist_probe: false,
            convergence: ConvergenceConfig::default(),
            negatives_per_step: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: format!("trainer.{key}"),
                message: message.into(),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.replay_every == 0 {
            return bad("replay_every", "must be at least 1");
        }
        if !(self.policy_lr > 0.0 && self.policy_lr.is_finite()) {
            return bad("policy_lr", "must be positive");
        }
        if !(self.recommender_lr >= 0.0 && self.recommender_lr.is_finite()) {
            return bad("recommender_lr", "must be non-negative");
        }
        if self.reward.k == 0 {
            return bad("reward.k", "must be at least 1");
        }
        if !self.reward.scale.is_finite() {
            return bad("reward.scale", "must be finite");
        }
        if let Some(d) = self.baseline_decay {
            if !(0.0..1.0).contains(&d) {
                return bad("baseline_decay", "must be in [0, 1)");
            }
        }
        if self.convergence.window == 0 {
            return bad("convergence.window", "must be at least 1");
        }
        Ok(())
    }
}

/// One line of the reward trace. Metric fields are null in simulator mode
/// and the simulator fields are omitted in metric mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub t: usize,
    pub ht_before: Option<f64>,
    pub ht_after: Option<f64>,
    pub ndcg_before: Option<f64>,
    pub ndcg_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_after: Option<f64>,
    pub r: f64,
    pub replay: bool,
}

pub fn write_trace_jsonl<W: Write>(mut w: W, trace: &[RewardRecord]) -> Result<()> {
    for rec in trace {
        serde_json::to_writer(&mut w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Meta-set quality of a recommender.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Measurement {
    Metrics { ht: f64, ndcg: f64 },
    Simulator { mean_rating: f64 },
}

impl Measurement {
    /// Mean HT@k and NDCG@k of the given ranks.
    pub fn from_ranks(ranks: &[usize], k: usize) -> Self {
        let n = ranks.len().max(1) as f64;
        Measurement::Metrics {
            ht: ranks.iter().map(|&r| ht_at_k(r, k)).sum::<f64>() / n,
            ndcg: ranks.iter().map(|&r| ndcg_at_k(r, k)).sum::<f64>() / n,
        }
    }
}

/// What the reward is measured on.
#[derive(Clone, Debug)]
pub enum RewardOracle {
    Metrics { cases: Vec<EvalCase>, k: usize },
    Simulator { env: Box<SimEnv>, users: Vec<usize> },
}

impl RewardOracle {
    /// Finetune-split targets of the meta users.
    pub fn metrics(ds: &InteractionDataset, meta_users: &[usize], k: usize) -> Result<Self> {
        let cases: Vec<EvalCase> = meta_users
            .iter()
            .filter_map(|&u| eval_case(ds, u, EvalSplit::Finetune))
            .collect();
        if cases.is_empty() {
            return Err(Error::EmptyMetaSet {
                ratio: 0.0,
                casual: meta_users.len(),
            });
        }
        Ok(RewardOracle::Metrics { cases, k })
    }

    pub fn simulator(env: SimEnv, meta_users: &[usize]) -> Result<Self> {
        let users: Vec<usize> = meta_users.iter().copied().filter(|&u| env.user(u).is_ok()).collect();
        if users.is_empty() {
            return Err(Error::EmptyMetaSet {
                ratio: 0.0,
                casual: meta_users.len(),
            });
        }
        Ok(RewardOracle::Simulator {
            env: Box::new(env),
            users,
        })
    }

    pub fn measure(&self, model: &RecommenderModel) -> Result<Measurement> {
        match self {
            RewardOracle::Metrics { cases, k } => {
                let ranks = rank_cases(model, cases, true)?;
                Ok(Measurement::from_ranks(&ranks, *k))
            }
            RewardOracle::Simulator { env, users } => Ok(Measurement::Simulator {
                mean_rating: mean_episode_reward(env, model, users)?,
            }),
        }
    }
}

/// Scaled sum of the configured deltas between two measurements.
pub fn compute_reward(before: &Measurement, after: &Measurement, config: &RewardConfig) -> Result<f64> {
    match (before, after) {
        (Measurement::Metrics { ht: h0, ndcg: n0 }, Measurement::Metrics { ht: h1, ndcg: n1 }) => {
            let mut delta = 0.0;
            if config.use_ht {
                delta += h1 - h0;
            }
            if config.use_ndcg {
                delta += n1 - n0;
            }
            Ok(config.scale * delta)
        }
        (Measurement::Simulator { mean_rating: a }, Measurement::Simulator { mean_rating: b }) => {
            Ok(config.scale * (b - a))
        }
        _ => Err(Error::InvalidArgument("measurements of different kinds".into())),
    }
}

/// Trains a fresh or partially trained recommender on every training
/// sequence. Returns the optimizer so later stages can continue from it.
pub fn pretrain(
    model: &mut RecommenderModel,
    ds: &InteractionDataset,
    fit: &FitConfig,
    seed: u64,
) -> Result<(Adam, Vec<EpochLog>)> {
    let sequences = ds.train_sequences();
    let train: Vec<TrainSequence<'_>> = sequences.iter().map(|s| TrainSequence::own(s)).collect();
    if fit.epochs == 0 {
        return Ok((Adam::new(AdamConfig::with_lr(fit.lr), model.params()), Vec::new()));
    }
    recommender::fit(model, &train, fit, seed)
}

/// A copy of the recommender advanced by one optimizer step on `batch`.
pub fn probe_finetune(
    model: &RecommenderModel,
    adam: &Adam,
    batch: &TrainBatch,
) -> Result<(RecommenderModel, Adam)> {
    let mut probe = model.clone();
    let mut probe_adam = adam.clone();
    probe.train_step(&mut probe_adam, batch)?;
    Ok((probe, probe_adam))
}

/// One ascent step on `advantage * sum log pi(a)`. A zero advantage leaves
/// the policy and the optimizer untouched.
pub fn policy_update(
    policy: &mut AugmentorPolicy,
    optimizer: &mut PolicyOptimizer,
    trajectories: &[EditTrajectory],
    advantage: f64,
) -> Result<()> {
    if !advantage.is_finite() {
        return Err(Error::InvalidArgument(format!("reward {advantage} is not finite")));
    }
    if advantage == 0.0 || trajectories.is_empty() {
        return Ok(());
    }
    let (_, grads) = policy.surrogate_grads(trajectories, advantage)?;
    optimizer.ascend(policy.params_mut(), &grads)
}

/// Training sequences of edited trajectories, with negatives kept away from
/// both the source and the edited items.
fn synthetic_sequences(trajectories: &[EditTrajectory]) -> Vec<(Vec<usize>, Vec<usize>)> {
    trajectories
        .iter()
        .filter_map(|t| {
            let seq = t.result.sequence()?.to_vec();
            let mut exclude = t.source.clone();
            exclude.extend_from_slice(&seq);
            Some((seq, exclude))
        })
        .collect()
}

/// One persisted step on synthetic plus original sequences.
pub fn replay_update(
    model: &mut RecommenderModel,
    adam: &mut Adam,
    synthetic: &[TrainSequence<'_>],
    original: &[TrainSequence<'_>],
    negatives_per_step: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let all: Vec<TrainSequence<'_>> = synthetic.iter().chain(original).copied().collect();
    let batch = TrainBatch::build(&all, model.max_len(), model.num_items(), negatives_per_step, rng);
    model.train_step(adam, &batch)
}

/// Everything the loop mutates.
#[derive(Clone, Debug)]
pub struct CoTrainState {
    pub model: RecommenderModel,
    pub model_adam: Adam,
    pub policy: AugmentorPolicy,
    pub policy_optimizer: PolicyOptimizer,
}

impl CoTrainState {
    /// Continues the recommender's optimizer with the trainer's learning
    /// rate and starts a fresh policy optimizer.
    pub fn new(model: RecommenderModel, mut model_adam: Adam, policy: AugmentorPolicy, config: &TrainerConfig) -> Self {
        model_adam.config.lr = config.recommender_lr;
        let policy_optimizer = PolicyOptimizer::new(config.policy_optimizer, config.policy_lr, policy.params());
        Self {
            model,
            model_adam,
            policy,
            policy_optimizer,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoTrainOutcome {
    pub state: CoTrainState,
    pub trace: Vec<RewardRecord>,
    /// iterations where every trajectory was discarded
    pub skipped: Vec<usize>,
    pub replays: usize,
    /// iteration after which the reward moving average fell below tolerance
    pub converged_at: Option<usize>,
    /// the trajectories of the last iteration
    pub last_trajectories: Vec<EditTrajectory>,
}

/// Samples `n` distinct entries of `pool`.
fn sample_users(pool: &[usize], n: usize, rng: &mut Rng) -> Vec<usize> {
    let n = n.min(pool.len());
    index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
}

/// Runs the co-training loop for `config.max_iterations` iterations or
/// until the reward moving average converges.
pub fn run_l2aug(
    config: &TrainerConfig,
    ds: &InteractionDataset,
    oracle: &RewardOracle,
    mut state: CoTrainState,
    table: Option<&SubstitutionTable>,
    seed: u64,
) -> Result<CoTrainOutcome> {
    config.validate()?;
    let core = ds.training_users(UserGroup::Core, 2);
    let originals: Vec<usize> = (0..ds.num_users()).filter(|&u| ds.train_sequence(u).len() >= 2).collect();
    if config.max_iterations > 0 && core.is_empty() {
        return Err(Error::EmptyInput("core-user training sequences".into()));
    }
    let mut batch_rng = rng::stream(seed, rng::BATCHES);
    let mut traj_rng = rng::stream(seed, rng::TRAJECTORIES);
    let mut replay_rng = rng::stream(seed, rng::REPLAY);

    let mut outcome = CoTrainOutcome {
        state: state.clone(),
        trace: Vec::new(),
        skipped: Vec::new(),
        replays: 0,
        converged_at: None,
        last_trajectories: Vec::new(),
    };
    let mut before: Option<Measurement> = None;
    let mut baseline: Option<f64> = None;
    let mut rewards: Vec<f64> = Vec::new();
    let max_len = state.policy.max_len();

    for t in 0..config.max_iterations {
        let users = sample_users(&core, config.batch_size, &mut batch_rng);
        let mut trajectories = Vec::with_capacity(users.len());
        for &u in &users {
            let seq = ds.train_sequence(u);
            let seq = &seq[seq.len().saturating_sub(max_len)..];
            trajectories.push(state.policy.sample_trajectory(u, seq, table, &mut traj_rng)?);
        }
        let synthetic = synthetic_sequences(&trajectories);
        let synthetic_train: Vec<TrainSequence<'_>> = synthetic
            .iter()
            .map(|(s, e)| TrainSequence { items: s, exclude: e })
            .collect();
        let replay = t % config.replay_every == 0;

        if synthetic_train.is_empty() {
            log::warn!("iteration {t}: every trajectory was discarded; no policy update");
            outcome.skipped.push(t);
        } else {
            let batch = TrainBatch::build(
                &synthetic_train,
                state.model.max_len(),
                state.model.num_items(),
                config.negatives_per_step,
                &mut batch_rng,
            );
            let (probe, probe_adam) = probe_finetune(&state.model, &state.model_adam, &batch)?;
            let m0 = match before {
                Some(m) => m,
                None => oracle.measure(&state.model)?,
            };
            let m1 = oracle.measure(&probe)?;
            let r = compute_reward(&m0, &m1, &config.reward)?;
            let advantage = r - baseline.unwrap_or(0.0);
            policy_update(&mut state.policy, &mut state.policy_optimizer, &trajectories, advantage)?;
            if let Some(decay) = config.baseline_decay {
                baseline = Some(match baseline {
                    Some(b) => decay * b + (1.0 - decay) * r,
                    None => r,
                });
            }
            before = Some(m0);
            if config.persist_probe {
                state.model = probe;
                state.model_adam = probe_adam;
                before = Some(m1);
            }
            let (ht_before, ndcg_before, sim_before) = split_measurement(&m0);
            let (ht_after, ndcg_after, sim_after) = split_measurement(&m1);
            outcome.trace.push(RewardRecord {
                t,
                ht_before,
                ht_after,
                ndcg_before,
                ndcg_after,
                sim_before,
                sim_after,
                r,
                replay,
            });
            rewards.push(r);
        }

        if replay {
            let picked = sample_users(&originals, config.batch_size, &mut replay_rng);
            let original: Vec<TrainSequence<'_>> =
                picked.iter().map(|&u| TrainSequence::own(ds.train_sequence(u))).collect();
            replay_update(
                &mut state.model,
                &mut state.model_adam,
                &synthetic_train,
                &original,
                config.negatives_per_step,
                &mut replay_rng,
            )?;
            outcome.replays += 1;
            before = None;
        }
        if t + 1 == config.max_iterations {
            outcome.last_trajectories = trajectories;
        }

        if config.convergence.enabled && rewards.len() >= config.convergence.window {
            let window = &rewards[rewards.len() - config.convergence.window..];
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            if mean.abs() < config.convergence.tolerance {
                log::info!("reward moving average {mean:e} below tolerance after iteration {t}");
                outcome.converged_at = Some(t);
                break;
            }
        }
    }
    outcome.state = state;
    Ok(outcome)
}

fn split_measurement(m: &Measurement) -> (Option<f64>, Option<f64>, Option<f64>) {
    match *m {
        Measurement::Metrics { ht, ndcg } => (Some(ht), Some(ndcg), None),
        Measurement::Simulator { mean_rating } => (None, None, Some(mean_rating)),
    }
}

/// Edits every core training sequence once with the given policy.
pub fn augment_core(
    ds: &InteractionDataset,
    policy: &AugmentorPolicy,
    table: Option<&SubstitutionTable>,
    seed: u64,
) -> Result<Vec<EditTrajectory>> {
    let mut rng = rng::stream(seed, rng::TRAJECTORIES);
    ds.training_users(UserGroup::Core, 1)
        .into_iter()
        .map(|u| {
            let seq = ds.train_sequence(u);
            let seq = &seq[seq.len().saturating_sub(policy.max_len())..];
            policy.sample_trajectory(u, seq, table, &mut rng)
        })
        .collect()
}
