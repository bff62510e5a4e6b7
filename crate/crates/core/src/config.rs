//! Run configuration: JSON with defaults, named presets and dotted-key
//! overrides. Unknown keys and type mismatches are rejected with the full
//! key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::augmentor::PolicyConfig;
use crate::data::SplitConfig;
use crate::evaluator::{ContinuitySource, EvalOptions, EvalSplit};
use crate::recommender::{FitConfig, ModelConfig};
use crate::simulator::SimConfig;
use crate::synthetic::SyntheticSpec;
use crate::trainer::TrainerConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub drop_rates: Vec<f64>,
    pub meta_ratios: Vec<f64>,
    /// split whose targets the sweeps report
    pub split: EvalSplit,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            drop_rates: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            meta_ratios: vec![0.05, 0.1, 0.2, 0.3],
            split: EvalSplit::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuityConfig {
    pub source: ContinuitySource,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self {
            source: ContinuitySource::Cooccurrence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// interaction file (`user_id<TAB>item_id<TAB>timestamp`); when null the
    /// synthetic fixture is generated instead
    pub data: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub policy: PolicyConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalOptions,
    pub simulator: SimConfig,
    pub sweep: SweepConfig,
    pub continuity: ContinuityConfig,
    pub seed: u64,
    pub run_root: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            synthetic: SyntheticSpec::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            fit: FitConfig::default(),
            policy: PolicyConfig::default(),
            trainer: TrainerConfig::default(),
            eval: EvalOptions::default(),
            simulator: SimConfig::default(),
            sweep: SweepConfig::default(),
            continuity: ContinuityConfig::default(),
            seed: 0,
            run_root: PathBuf::from("runs"),
        }
    }
}

pub const PRESETS: [&str; 2] = ["paper_defaults", "desk"];

/// Overlay applied by a named preset.
pub fn preset(name: &str) -> Result<Value> {
    let overlay = match name {
        "paper_defaults" => serde_json::json!({
            "fit": { "batch_size": 512 },
            "trainer": { "batch_size": 512 },
        }),
        "desk" => serde_json::json!({
            "model": { "dim": 32, "max_len": 50 },
            "fit": { "lr": 0.003 },
            "policy": { "dim": 32, "max_len": 50 },
            "split": { "max_sequence_length": 50 },
        }),
        other => {
            return Err(Error::Config {
                key: "preset".into(),
                message: format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")),
            })
        }
    };
    Ok(overlay)
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_u64() => "a non-negative integer",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn compatible(default: &Value, given: &Value) -> bool {
    match (default, given) {
        // optional fields default to null and accept any value
        (Value::Null, _) => true,
        (_, Value::Null) => false,
        (Value::Number(d), Value::Number(g)) => !d.is_u64() || g.is_u64(),
        (Value::Bool(_), Value::Bool(_)) | (Value::String(_), Value::String(_)) | (Value::Array(_), Value::Array(_)) => {
            true
        }
        (Value::Object(_), Value::Object(_)) => true,
        _ => false,
    }
}

/// Deep-merges `given` into `base`, rejecting keys `base` lacks. Objects
/// tagged with a different `rule` replace the default wholesale.
fn merge(base: &mut Value, given: &Value, path: &str) -> Result<()> {
    let key = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    if !compatible(base, given) {
        return Err(Error::Config {
            key: path.to_string(),
            message: format!("expected {}, found {}", kind(base), kind(given)),
        });
    }
    match (base, given) {
        (Value::Object(b), Value::Object(g)) => {
            if let (Some(br), Some(gr)) = (b.get("rule"), g.get("rule")) {
                if br != gr {
                    *b = g.clone();
                    return Ok(());
                }
            }
            for (k, v) in g {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v, &key(k))?,
                    None => {
                        return Err(Error::Config {
                            key: key(k),
                            message: "unknown key".into(),
                        })
                    }
                }
            }
        }
        (b, g) => *b = g.clone(),
    }
    Ok(())
}

/// Parses `key.path=value`; the value is read as JSON and falls back to a
/// plain string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config {
        key: spec.to_string(),
        message: "override must look like key.path=value".into(),
    })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

fn nest(key: &str, value: Value) -> Value {
    key.rsplit('.').fold(value, |acc, part| {
        let mut m = Map::new();
        m.insert(part.to_string(), acc);
        Value::Object(m)
    })
}

/// Resolves a configuration from JSON text plus overrides. Order of
/// precedence: defaults, preset, file, overrides.
pub fn resolve(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut given: Value = if text.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(text).map_err(|e| Error::Config {
            key: "<root>".into(),
            message: e.to_string(),
        })?
    };
    let Value::Object(obj) = &mut given else {
        return Err(Error::Config {
            key: "<root>".into(),
            message: "configuration must be a JSON object".into(),
        });
    };
    let preset_name = match obj.remove("preset") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(other) => {
            return Err(Error::Config {
                key: "preset".into(),
                message: format!("expected a string, found {}", kind(&other)),
            })
        }
    };

    let mut resolved = serde_json::to_value(RunConfig::default())?;
    if let Some(name) = &preset_name {
        merge(&mut resolved, &preset(name)?, "")?;
    }
    merge(&mut resolved, &given, "")?;
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        if key == "preset" {
            return Err(Error::Config {
                key,
                message: "presets belong in the config file".into(),
            });
        }
        merge(&mut resolved, &nest(&key, value), "")?;
    }
    let config: RunConfig = serde_json::from_value(resolved).map_err(|e| Error::Config {
        key: "<root>".into(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// Reads and resolves a configuration file.
pub fn parse_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        key: path.display().to_string(),
        message: e.to_string(),
    })?;
    resolve(&text, overrides)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.synthetic.validate()?;
        self.trainer.validate()?;
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if self.model.dim == 0 {
            return bad("model.dim", "must be at least 1".into());
        }
        if self.policy.dim == 0 {
            return bad("policy.dim", "must be at least 1".into());
        }
        if self.policy.max_len < self.split.max_sequence_length {
            return bad(
                "policy.max_len",
                format!(
                    "must cover split.max_sequence_length ({})",
                    self.split.max_sequence_length
                ),
            );
        }
        if self.fit.batch_size == 0 {
            return bad("fit.batch_size", "must be at least 1".into());
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return bad("eval.ks", "must list positive cutoffs".into());
        }
        if let Some(r) = self.sweep.drop_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad("sweep.drop_rates", format!("{r} is not in [0, 1]"));
        }
        if let Some(r) = self.sweep.meta_ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return bad("sweep.meta_ratios", format!("{r} is not in (0, 1)"));
        }
        if self.simulator.memory_size == 0 {
            return bad("simulator.memory_size", "must be at least 1".into());
        }
        Ok(())
    }

    /// Pretty JSON of the fully resolved configuration.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
