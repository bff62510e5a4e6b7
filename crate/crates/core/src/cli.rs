//! Command-line surface. Every verb writes into a fresh run directory
//! `<run_root>/<verb>-<config hash>-<unix time>` holding the resolved
//! config, a provenance record and the verb's artifacts. Inputs produced by
//! earlier verbs are read from the directory given with `--from`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::augmentor::{write_augmented_tsv, AugmentorPolicy};
use crate::config::{parse_config, resolve, RunConfig};
use crate::data::{self, Event, InteractionDataset, UserGroup};
use crate::evaluator::{evaluate, interest_continuity, random_drop_sweep, EvalSplit};
use crate::pipeline;
use crate::recommender::RecommenderModel;
use crate::simulator::online_episode;
use crate::synthetic::generate_synthetic;
use crate::trainer::{augment_core, write_trace_jsonl};
use crate::{Error, Result};

pub mod artifacts {
    pub const CONFIG: &str = "config.json";
    pub const PROVENANCE: &str = "provenance.json";
    pub const EVENTS: &str = "events.tsv";
    pub const INTENDED_GROUPS: &str = "intended_groups.tsv";
    pub const SUMMARY: &str = "dataset_summary.json";
    pub const RECOMMENDER: &str = "recommender.ckpt";
    pub const RECOMMENDER_ADAM: &str = "recommender_adam.ckpt";
    pub const POLICY: &str = "policy.ckpt";
    pub const TRAINING_LOG: &str = "training_log.jsonl";
    pub const REWARD_TRACE: &str = "reward_trace.jsonl";
    pub const META_USERS: &str = "meta_users.json";
    pub const METRICS_FINETUNE: &str = "metrics_finetune.json";
    pub const METRICS_TEST: &str = "metrics_test.json";
    pub const RANKS: &str = "ranks.jsonl";
    pub const AUGMENTED: &str = "augmented.tsv";
    pub const CONTINUITY: &str = "continuity.json";
    pub const SWEEP_DROP: &str = "sweep_drop.csv";
    pub const SWEEP_META_RATIO: &str = "sweep_meta_ratio.csv";
    pub const EPISODES: &str = "episodes.jsonl";
    pub const SIMULATION: &str = "simulation.json";
}

use artifacts as a;

/// Version string with the git description captured at build time.
pub fn version() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("L2AUG_GIT_DESCRIBE"))
}

#[derive(Debug, Parser)]
#[command(name = "l2aug", version = env!("CARGO_PKG_VERSION"), about = "Learned sequence-editing augmentation for sequential recommenders")]
pub struct Cli {
    /// JSON run configuration; defaults apply to every missing key
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// override a config key, e.g. `--set trainer.max_iterations=100`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// more log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an interaction file and report dataset statistics
    Ingest {
        /// tab-separated `user_id item_id timestamp` lines; defaults to the config's `data`
        data: Option<PathBuf>,
    },
    /// Generate the synthetic core/casual fixture
    SynthData,
    /// Train the recommender on every original training sequence
    Pretrain {
        /// earlier run directory whose events are reused (else the config's data or fixture)
        #[arg(long, value_name = "RUN_DIR")]
        from: Option<PathBuf>,
    },
    /// Co-train the augmentation policy and the pretrained recommender
    Train {
        /// earlier run directory holding the needed checkpoints
        #[arg(long, value_name = "RUN_DIR")]
        from: PathBuf,
    },
    /// Evaluate a recommender checkpoint per user group
    Evaluate {
        /// earlier run directory holding the needed checkpoints
        #[arg(long, value_name = "RUN_DIR")]
        from: PathBuf,
    },
    /// Edit every core-user sequence with a trained policy
    Augment {
        /// earlier run directory holding the needed checkpoints
        #[arg(long, value_name = "RUN_DIR")]
        from: PathBuf,
    },
    /// Consecutive-item similarity per user group
    AnalyzeContinuity {
        /// earlier run directory whose events are reused (else the config's data or fixture)
        #[arg(long, value_name = "RUN_DIR")]
        from: Option<PathBuf>,
    },
    /// Retrain from scratch with core-user items dropped at several rates
    SweepDrop {
        /// earlier run directory whose events are reused (else the config's data or fixture)
        #[arg(long, value_name = "RUN_DIR")]
        from: Option<PathBuf>,
    },
    /// Co-train with several meta-set ratios
    SweepMetaRatio {
        /// earlier run directory whose events are reused (else the config's data or fixture)
        #[arg(long, value_name = "RUN_DIR")]
        from: Option<PathBuf>,
    },
    /// Play simulated online episodes against a recommender checkpoint
    Simulate {
        /// earlier run directory holding the needed checkpoints
        #[arg(long, value_name = "RUN_DIR")]
        from: PathBuf,
        /// users per group (all when omitted)
        #[arg(long)]
        users: Option<usize>,
    },
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::SynthData => "synth-data",
            Command::Pretrain { .. } => "pretrain",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Augment { .. } => "augment",
            Command::AnalyzeContinuity { .. } => "analyze-continuity",
            Command::SweepDrop { .. } => "sweep-drop",
            Command::SweepMetaRatio { .. } => "sweep-meta-ratio",
            Command::Simulate { .. } => "simulate",
        }
    }

    fn from(&self) -> Option<&Path> {
        match self {
            Command::Pretrain { from }
            | Command::AnalyzeContinuity { from }
            | Command::SweepDrop { from }
            | Command::SweepMetaRatio { from } => from.as_deref(),
            Command::Train { from } | Command::Evaluate { from } | Command::Augment { from } => Some(from),
            Command::Simulate { from, .. } => Some(from),
            Command::Ingest { .. } | Command::SynthData => None,
        }
    }
}

#[derive(Serialize)]
struct Provenance<'a> {
    verb: &'a str,
    seed: u64,
    version: &'a str,
    git_describe: &'a str,
    config_hash: &'a str,
    created_unix: u64,
    from: Option<&'a Path>,
}

fn create_run_dir(config: &RunConfig, verb: &str) -> Result<PathBuf> {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let base = format!("{verb}-{}-{ts}", &config.hash()[..12]);
    fs::create_dir_all(&config.run_root)?;
    let mut dir = config.run_root.join(&base);
    let mut n = 1;
    while dir.exists() {
        dir = config.run_root.join(format!("{base}-{n}"));
        n += 1;
    }
    fs::create_dir(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(w.flush()?)
}

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn write_events_file(path: &Path, events: &[Event]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    data::write_events(&mut w, events)?;
    Ok(w.flush()?)
}

/// Events of the `--from` run, or of the configuration when absent.
fn source_events(config: &RunConfig, from: Option<&Path>) -> Result<Vec<Event>> {
    match from {
        Some(dir) => {
            let path = require(dir, a::EVENTS)?;
            data::parse_events(&fs::read_to_string(&path)?, &path.display().to_string())
        }
        None => pipeline::load_events(config),
    }
}

fn load_recommender(dir: &Path) -> Result<RecommenderModel> {
    RecommenderModel::load(require(dir, a::RECOMMENDER)?)
}

fn save_recommender(dir: &Path, model: &RecommenderModel, adam: &autodiff::Adam) -> Result<()> {
    model.save(dir.join(a::RECOMMENDER))?;
    autodiff::checkpoint::save(dir.join(a::RECOMMENDER_ADAM), &adam.export_state(model.params()))?;
    Ok(())
}

fn write_evaluation(dir: &Path, model: &RecommenderModel, ds: &InteractionDataset, config: &RunConfig) -> Result<()> {
    let mut ranks = BufWriter::new(File::create(dir.join(a::RANKS))?);
    for (split, name) in [
        (EvalSplit::Finetune, a::METRICS_FINETUNE),
        (EvalSplit::Test, a::METRICS_TEST),
    ] {
        let result = evaluate(model, ds, split, &config.eval)?;
        write_json(&dir.join(name), &result.summary_json())?;
        for r in &result.ranks {
            let line = serde_json::json!({
                "split": split,
                "user": ds.user_id(r.user),
                "group": r.group.as_str(),
                "rank": r.rank,
            });
            writeln!(ranks, "{line}")?;
        }
    }
    Ok(ranks.flush()?)
}

fn csv_header(keys: impl Iterator<Item = String>, lead: &str) -> String {
    std::iter::once(lead.to_string()).chain(keys).collect::<Vec<_>>().join(",")
}

/// Runs one verb and returns its run directory.
pub fn run_command(cli: &Cli) -> Result<PathBuf> {
    let config = match &cli.config {
        Some(path) => parse_config(path, &cli.overrides)?,
        None => resolve("{}", &cli.overrides)?,
    };
    let verb = cli.command.verb();
    let from = cli.command.from();
    if let Some(dir) = from {
        if !dir.is_dir() {
            return Err(Error::MissingArtifact(dir.to_path_buf()));
        }
    }
    // check prerequisites before creating anything
    let needs: &[&str] = match &cli.command {
        Command::Train { .. } => &[a::EVENTS, a::RECOMMENDER],
        Command::Evaluate { .. } | Command::Simulate { .. } => &[a::EVENTS, a::RECOMMENDER],
        Command::Augment { .. } => &[a::EVENTS, a::POLICY],
        _ => &[],
    };
    for name in needs {
        require(from.expect("verbs with prerequisites take --from"), name)?;
    }

    let dir = create_run_dir(&config, verb)?;
    fs::write(dir.join(a::CONFIG), config.echo() + "\n")?;
    let hash = config.hash();
    let version = version();
    write_json(
        &dir.join(a::PROVENANCE),
        &Provenance {
            verb,
            seed: config.seed,
            version: &version,
            git_describe: env!("L2AUG_GIT_DESCRIBE"),
            config_hash: &hash,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            from,
        },
    )?;
    log::info!("{verb}: writing to {}", dir.display());

    match &cli.command {
        Command::Ingest { data: path } => {
            let events = match path {
                Some(p) => data::parse_events(&fs::read_to_string(p)?, &p.display().to_string())?,
                None => pipeline::load_events(&config)?,
            };
            let ds = pipeline::prepare_dataset(&config, &events)?;
            write_events_file(&dir.join(a::EVENTS), &events)?;
            write_json(&dir.join(a::SUMMARY), &ds.summary())?;
        }
        Command::SynthData => {
            let synth = generate_synthetic(&config.synthetic)?;
            write_events_file(&dir.join(a::EVENTS), &synth.events)?;
            let mut w = BufWriter::new(File::create(dir.join(a::INTENDED_GROUPS))?);
            for (user, group) in &synth.intended {
                writeln!(w, "{user}\t{}", group.as_str())?;
            }
            w.flush()?;
            let ds = pipeline::prepare_dataset(&config, &synth.events)?;
            write_json(&dir.join(a::SUMMARY), &ds.summary())?;
        }
        Command::Pretrain { from } => {
            let events = source_events(&config, from.as_deref())?;
            let ds = pipeline::prepare_dataset(&config, &events)?;
            let (model, adam, log) = pipeline::pretrain_model(&config, &ds)?;
            write_events_file(&dir.join(a::EVENTS), &events)?;
            save_recommender(&dir, &model, &adam)?;
            let mut w = BufWriter::new(File::create(dir.join(a::TRAINING_LOG))?);
            for line in &log {
                serde_json::to_writer(&mut w, line)?;
                writeln!(w)?;
            }
            w.flush()?;
            write_evaluation(&dir, &model, &ds, &config)?;
        }
        Command::Train { from } => {
            let events = source_events(&config, Some(from))?;
            let ds = pipeline::prepare_dataset(&config, &events)?;
            let model = load_recommender(from)?;
            let adam = match from.join(a::RECOMMENDER_ADAM) {
                p if p.is_file() => autodiff::Adam::import_state(
                    autodiff::AdamConfig::with_lr(config.trainer.recommender_lr),
                    model.params(),
                    &autodiff::checkpoint::load(p)?,
                )?,
                _ => pipeline::fresh_adam(&config, &model),
            };
            let (meta, outcome) = pipeline::cotrain(&config, &ds, model, adam)?;
            let state = &outcome.state;
            write_events_file(&dir.join(a::EVENTS), &events)?;
            save_recommender(&dir, &state.model, &state.model_adam)?;
            state.policy.save(dir.join(a::POLICY))?;
            write_trace_jsonl(BufWriter::new(File::create(dir.join(a::REWARD_TRACE))?), &outcome.trace)?;
            let meta_ids: Vec<&str> = meta.iter().map(|&u| ds.user_id(u)).collect();
            write_json(&dir.join(a::META_USERS), &meta_ids)?;
            write_evaluation(&dir, &state.model, &ds, &config)?;
        }
        Command::Evaluate { from } => {
            let ds = pipeline::prepare_dataset(&config, &source_events(&config, Some(from))?)?;
            write_evaluation(&dir, &load_recommender(from)?, &ds, &config)?;
        }
        Command::Augment { from } => {
            let ds = pipeline::prepare_dataset(&config, &source_events(&config, Some(from))?)?;
            let policy = AugmentorPolicy::load(require(from, a::POLICY)?)?;
            let table = pipeline::substitution_table(&config, &ds);
            let trajectories = augment_core(&ds, &policy, table.as_ref(), config.seed)?;
            let mut w = BufWriter::new(File::create(dir.join(a::AUGMENTED))?);
            write_augmented_tsv(&mut w, &ds, &trajectories)?;
            w.flush()?;
        }
        Command::AnalyzeContinuity { from } => {
            let ds = pipeline::prepare_dataset(&config, &source_events(&config, from.as_deref())?)?;
            let model = match from {
                Some(d) if d.join(a::RECOMMENDER).is_file() => Some(load_recommender(d)?),
                _ => None,
            };
            let emb = pipeline::continuity_embeddings(config.continuity.source, &ds, model.as_ref())?;
            let synthetic: Vec<Vec<usize>> = match from {
                Some(d) if d.join(a::POLICY).is_file() => {
                    let policy = AugmentorPolicy::load(d.join(a::POLICY))?;
                    let table = pipeline::substitution_table(&config, &ds);
                    augment_core(&ds, &policy, table.as_ref(), config.seed)?
                        .into_iter()
                        .filter_map(|t| t.result.sequence().map(<[usize]>::to_vec))
                        .collect()
                }
                _ => Vec::new(),
            };
            let extra: Vec<(&str, &[Vec<usize>])> = if synthetic.is_empty() {
                Vec::new()
            } else {
                vec![("synthetic", synthetic.as_slice())]
            };
            let report = interest_continuity(&ds, &emb, &extra)?;
            write_json(&dir.join(a::CONTINUITY), &report)?;
        }
        Command::SweepDrop { from } => {
            let events = source_events(&config, from.as_deref())?;
            let ds = pipeline::prepare_dataset(&config, &events)?;
            let rows = random_drop_sweep(
                &ds,
                &config.sweep.drop_rates,
                &config.model,
                &config.fit,
                config.sweep.split,
                &config.eval,
                config.seed,
            )?;
            let mut w = BufWriter::new(File::create(dir.join(a::SWEEP_DROP))?);
            if let Some(first) = rows.first() {
                writeln!(w, "{}", csv_header(first.metrics.keys().cloned(), "rate"))?;
            }
            for row in &rows {
                let values: Vec<String> = row.metrics.values().map(|v| v.to_string()).collect();
                writeln!(w, "{},{}", row.rate, values.join(","))?;
            }
            w.flush()?;
        }
        Command::SweepMetaRatio { from } => {
            let events = source_events(&config, from.as_deref())?;
            let ds = pipeline::prepare_dataset(&config, &events)?;
            let (model, adam) = match from {
                Some(d) if d.join(a::RECOMMENDER).is_file() => {
                    let m = load_recommender(d)?;
                    let adam = pipeline::fresh_adam(&config, &m);
                    (m, adam)
                }
                _ => {
                    let (m, adam, _) = pipeline::pretrain_model(&config, &ds)?;
                    (m, adam)
                }
            };
            let mut w = BufWriter::new(File::create(dir.join(a::SWEEP_META_RATIO))?);
            let mut header_written = false;
            for &ratio in &config.sweep.meta_ratios {
                let mut c = config.clone();
                c.split.meta_ratio = ratio;
                let (_, outcome) = pipeline::cotrain(&c, &ds, model.clone(), adam.clone())?;
                let result = evaluate(&outcome.state.model, &ds, config.sweep.split, &config.eval)?;
                for group in ["casual", "core"] {
                    let Some(g) = result.groups.get(group) else { continue };
                    if !header_written {
                        writeln!(w, "{}", csv_header(g.metrics.keys().cloned(), "meta_ratio,group"))?;
                        header_written = true;
                    }
                    let values: Vec<String> = g.metrics.values().map(|v| v.to_string()).collect();
                    writeln!(w, "{ratio},{group},{}", values.join(","))?;
                }
            }
            w.flush()?;
        }
        Command::Simulate { from, users } => {
            let ds = pipeline::prepare_dataset(&config, &source_events(&config, Some(from))?)?;
            let model = load_recommender(from)?;
            let env = pipeline::simulator_env(&config, &ds)?;
            let mut w = BufWriter::new(File::create(dir.join(a::EPISODES))?);
            let mut summary = serde_json::Map::new();
            for group in [UserGroup::Core, UserGroup::Casual] {
                let mut members: Vec<usize> = ds.users_in(group).into_iter().filter(|&u| env.user(u).is_ok()).collect();
                if let Some(n) = users {
                    members.truncate(*n);
                }
                let mut total = 0.0;
                for &u in &members {
                    let mut local = env.clone();
                    let episode =
                        online_episode(&mut local, &model, u, config.simulator.steps, config.simulator.list_size)?;
                    episode.write_jsonl(&mut w)?;
                    total += episode.mean_step_reward();
                }
                let mean = if members.is_empty() { 0.0 } else { total / members.len() as f64 };
                summary.insert(
                    group.as_str().into(),
                    serde_json::json!({ "mean_reward": mean, "n_users": members.len() }),
                );
            }
            w.flush()?;
            write_json(&dir.join(a::SIMULATION), &summary)?;
        }
    }
    Ok(dir)
}

/// Parses arguments, runs the verb and maps the outcome to an exit code:
/// 0 on success, 1 on usage or configuration errors, 2 on runtime failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run_command(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
