//! End-to-end stages assembled from a [`RunConfig`].

use autodiff::{Adam, AdamConfig, Tensor};

use crate::augmentor::{build_substitution_table, init_policy, ActionSpace, SubstitutionTable};
use crate::config::RunConfig;
use crate::data::{self, Event, InteractionDataset};
use crate::evaluator::{cooccurrence_embeddings, ContinuitySource};
use crate::recommender::{init_model, EpochLog, RecommenderModel};
use crate::simulator::{init_env, SimEnv};
use crate::synthetic::generate_synthetic;
use crate::trainer::{pretrain, run_l2aug, CoTrainOutcome, CoTrainState, RewardOracle, RewardSource};
use crate::Result;

/// Events named by the config: the data file when set, the synthetic
/// fixture otherwise.
pub fn load_events(config: &RunConfig) -> Result<Vec<Event>> {
    match &config.data {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            data::parse_events(&text, &path.display().to_string())
        }
        None => Ok(generate_synthetic(&config.synthetic)?.events),
    }
}

/// Classified, split and truncated dataset.
pub fn prepare_dataset(config: &RunConfig, events: &[Event]) -> Result<InteractionDataset> {
    if events.is_empty() {
        return Err(crate::Error::EmptyInput("interaction data".into()));
    }
    data::prepare(InteractionDataset::from_events(events), &config.split)
}

pub fn pretrain_model(config: &RunConfig, ds: &InteractionDataset) -> Result<(RecommenderModel, Adam, Vec<EpochLog>)> {
    let mut model = init_model(&config.model, ds.num_items(), config.seed)?;
    let (adam, log) = pretrain(&mut model, ds, &config.fit, config.seed)?;
    Ok((model, adam, log))
}

/// A fresh optimizer for a model loaded without saved state.
pub fn fresh_adam(config: &RunConfig, model: &RecommenderModel) -> Adam {
    Adam::new(AdamConfig::with_lr(config.fit.lr), model.params())
}

/// The substitution table, built from every training sequence, when the
/// action space can substitute.
pub fn substitution_table(config: &RunConfig, ds: &InteractionDataset) -> Option<SubstitutionTable> {
    (config.policy.action_space == ActionSpace::KeepDropSubstitute)
        .then(|| build_substitution_table(ds.num_items(), &ds.train_sequences()))
}

pub fn simulator_env(config: &RunConfig, ds: &InteractionDataset) -> Result<SimEnv> {
    init_env(ds, cooccurrence_embeddings(ds), &config.simulator, config.seed)
}

pub fn reward_oracle(config: &RunConfig, ds: &InteractionDataset, meta_users: &[usize]) -> Result<RewardOracle> {
    match config.trainer.reward.source {
        RewardSource::Metrics => RewardOracle::metrics(ds, meta_users, config.trainer.reward.k),
        RewardSource::Simulator => RewardOracle::simulator(simulator_env(config, ds)?, meta_users),
    }
}

/// Samples the meta set and co-trains a fresh policy with the recommender.
pub fn cotrain(
    config: &RunConfig,
    ds: &InteractionDataset,
    model: RecommenderModel,
    model_adam: Adam,
) -> Result<(Vec<usize>, CoTrainOutcome)> {
    let meta = data::sample_meta_set(ds, config.split.meta_ratio, config.seed)?;
    let oracle = reward_oracle(config, ds, &meta)?;
    let policy = init_policy(&config.policy, ds.num_items(), config.seed)?;
    let table = substitution_table(config, ds);
    let state = CoTrainState::new(model, model_adam, policy, &config.trainer);
    let outcome = run_l2aug(&config.trainer, ds, &oracle, state, table.as_ref(), config.seed)?;
    Ok((meta, outcome))
}

pub fn continuity_embeddings(
    source: ContinuitySource,
    ds: &InteractionDataset,
    model: Option<&RecommenderModel>,
) -> Result<Tensor> {
    match (source, model) {
        (ContinuitySource::Cooccurrence, _) => Ok(cooccurrence_embeddings(ds)),
        (ContinuitySource::Recommender, Some(m)) => Ok(m.item_embeddings().clone()),
        (ContinuitySource::Recommender, None) => Err(crate::Error::InvalidArgument(
            "continuity from recommender embeddings needs a trained recommender".into(),
        )),
    }
}
