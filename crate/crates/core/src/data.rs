//! Interaction events, core/casual grouping, time-based splits and the meta
//! validation set.
//!
//! Events file format: UTF-8 TSV, one `user_id<TAB>item_id<TAB>timestamp`
//! per line, timestamp in integer seconds. Lines starting with `#` and blank
//! lines are skipped.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
}

impl Event {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: u64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserGroup {
    Core,
    Casual,
}

impl UserGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            UserGroup::Core => "core",
            UserGroup::Casual => "casual",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Finetune,
    Test,
    Discarded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimedItem {
    pub item: usize,
    pub timestamp: u64,
}

/// Per-user split assignment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UserSplit {
    /// one entry per event, aligned with the user's chronological events
    pub assignments: Vec<Split>,
    /// training items, oldest first (possibly truncated to the most recent ones)
    pub train: Vec<usize>,
    pub finetune: Option<usize>,
    pub test: Option<usize>,
}

/// How users are divided into core and casual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupingRule {
    /// core iff the mean gap between consecutive events is below `days`
    MeanGap { days: f64 },
    /// the `core_fraction` most active users (by event count) are core
    FrequencyQuantile { core_fraction: f64 },
}

impl Default for GroupingRule {
    fn default() -> Self {
        GroupingRule::MeanGap { days: 30.0 }
    }
}

/// How events are assigned to train / finetune / test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitRule {
    /// events before `cutoff` train; first at/after is finetune, second test
    Cutoff { cutoff: u64 },
    /// per user, the first `train_fraction` of events train, the next one
    /// finetune, the one after that test
    Chronological { train_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub grouping: GroupingRule,
    pub split: SplitRule,
    pub meta_ratio: f64,
    pub max_sequence_length: usize,
}

/// 2009-01-01T00:00:00Z
pub const DEFAULT_CUTOFF: u64 = 1_230_768_000;

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            grouping: GroupingRule::default(),
            split: SplitRule::Cutoff {
                cutoff: DEFAULT_CUTOFF,
            },
            meta_ratio: 0.10,
            max_sequence_length: 200,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if !(self.meta_ratio > 0.0 && self.meta_ratio < 1.0) {
            return bad("split.meta_ratio", "must be in (0, 1)");
        }
        if self.max_sequence_length < 2 {
            return bad("split.max_sequence_length", "must be at least 2");
        }
        match self.grouping {
            GroupingRule::MeanGap { days } if days <= 0.0 => {
                return bad("split.grouping.days", "must be positive")
            }
            GroupingRule::FrequencyQuantile { core_fraction } if !(0.0..=1.0).contains(&core_fraction) => {
                return bad("split.grouping.core_fraction", "must be in [0, 1]")
            }
            _ => {}
        }
        if let SplitRule::Chronological { train_fraction } = self.split {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return bad("split.split.train_fraction", "must be in (0, 1)");
            }
        }
        Ok(())
    }
}

/// Users, items and their chronologically ordered interactions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionDataset {
    items: Vec<String>,
    item_index: HashMap<String, usize>,
    users: Vec<String>,
    user_index: HashMap<String, usize>,
    events: Vec<Vec<TimedItem>>,
    groups: Vec<UserGroup>,
    splits: Vec<UserSplit>,
}

impl InteractionDataset {
    /// Builds the dense user and item maps in order of first appearance and
    /// sorts each user's events by time. Equal timestamps keep input order.
    pub fn from_events<'a, I>(events: I) -> Self
    where
        I: IntoIterator<Item = &'a Event>,
    {
        let mut ds = Self::default();
        for e in events {
            let item = ds.intern_item(&e.item_id);
            let user = match ds.user_index.get(&e.user_id) {
                Some(&u) => u,
                None => {
                    ds.users.push(e.user_id.clone());
                    ds.user_index.insert(e.user_id.clone(), ds.users.len() - 1);
                    ds.events.push(Vec::new());
                    ds.users.len() - 1
                }
            };
            ds.events[user].push(TimedItem {
                item,
                timestamp: e.timestamp,
            });
        }
        for seq in &mut ds.events {
            seq.sort_by_key(|e| e.timestamp);
        }
        ds
    }

    fn intern_item(&mut self, id: &str) -> usize {
        if let Some(&i) = self.item_index.get(id) {
            return i;
        }
        self.items.push(id.to_string());
        self.item_index.insert(id.to_string(), self.items.len() - 1);
        self.items.len() - 1
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_events(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }

    pub fn item_id(&self, item: usize) -> &str {
        &self.items[item]
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn user_id(&self, user: usize) -> &str {
        &self.users[user]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn events(&self, user: usize) -> &[TimedItem] {
        &self.events[user]
    }

    /// All items of a user, oldest first.
    pub fn sequence(&self, user: usize) -> Vec<usize> {
        self.events[user].iter().map(|e| e.item).collect()
    }

    pub fn groups(&self) -> &[UserGroup] {
        &self.groups
    }

    pub fn group(&self, user: usize) -> UserGroup {
        self.groups[user]
    }

    pub fn set_groups(&mut self, groups: Vec<UserGroup>) {
        assert_eq!(groups.len(), self.users.len());
        self.groups = groups;
    }

    pub fn users_in(&self, group: UserGroup) -> Vec<usize> {
        (0..self.num_users()).filter(|&u| self.groups[u] == group).collect()
    }

    pub fn is_split(&self) -> bool {
        !self.splits.is_empty()
    }

    pub fn splits(&self) -> &[UserSplit] {
        &self.splits
    }

    pub fn split(&self, user: usize) -> &UserSplit {
        &self.splits[user]
    }

    pub fn set_splits(&mut self, splits: Vec<UserSplit>) {
        assert_eq!(splits.len(), self.users.len());
        self.splits = splits;
    }

    pub fn train_sequence(&self, user: usize) -> &[usize] {
        &self.splits[user].train
    }

    /// Training sequences of every user, indexed by user.
    pub fn train_sequences(&self) -> Vec<Vec<usize>> {
        self.splits.iter().map(|s| s.train.clone()).collect()
    }

    /// Users of `group` whose training sequence has at least `min_len` items.
    pub fn training_users(&self, group: UserGroup, min_len: usize) -> Vec<usize> {
        (0..self.num_users())
            .filter(|&u| self.groups[u] == group && self.splits[u].train.len() >= min_len)
            .collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        let mean = |users: &[usize]| {
            if users.is_empty() {
                0.0
            } else {
                users.iter().map(|&u| self.events[u].len()).sum::<usize>() as f64 / users.len() as f64
            }
        };
        let all: Vec<usize> = (0..self.num_users()).collect();
        let (core, casual) = if self.groups.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            (self.users_in(UserGroup::Core), self.users_in(UserGroup::Casual))
        };
        DatasetSummary {
            n_items: self.num_items(),
            n_users: self.num_users(),
            n_events: self.num_events(),
            n_core_users: core.len(),
            n_casual_users: casual.len(),
            mean_interactions: mean(&all),
            mean_interactions_core: mean(&core),
            mean_interactions_casual: mean(&casual),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_items: usize,
    pub n_users: usize,
    pub n_events: usize,
    pub n_core_users: usize,
    pub n_casual_users: usize,
    pub mean_interactions: f64,
    pub mean_interactions_core: f64,
    pub mean_interactions_casual: f64,
}

pub fn parse_events(text: &str, origin: &str) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let timestamp = fields[2]
            .trim()
            .parse::<u64>()
            .map_err(|_| parse_err(format!("timestamp `{}` is not a non-negative integer", fields[2])))?;
        events.push(Event::new(fields[0], fields[1], timestamp));
    }
    if events.is_empty() {
        return Err(Error::EmptyInput(origin.to_string()));
    }
    Ok(events)
}

/// Reads an events TSV into an unsplit dataset.
pub fn ingest(path: impl AsRef<Path>) -> Result<InteractionDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let events = parse_events(&text, &path.display().to_string())?;
    Ok(InteractionDataset::from_events(&events))
}

pub fn write_events<W: Write>(mut w: W, events: &[Event]) -> Result<()> {
    writeln!(w, "# user_id\titem_id\ttimestamp")?;
    for e in events {
        writeln!(w, "{}\t{}\t{}", e.user_id, e.item_id, e.timestamp)?;
    }
    Ok(())
}

/// Mean gap between consecutive events in days; `None` for fewer than two
/// events.
pub fn mean_gap_days(events: &[TimedItem]) -> Option<f64> {
    if events.len() < 2 {
        return None;
    }
    let span = events[events.len() - 1].timestamp - events[0].timestamp;
    Some(span as f64 / (events.len() - 1) as f64 / SECONDS_PER_DAY)
}

/// Labels users core or casual. Gaps are measured over all of a user's
/// events; single-event users are casual.
pub fn classify_users(ds: &InteractionDataset, rule: GroupingRule) -> Vec<UserGroup> {
    match rule {
        GroupingRule::MeanGap { days } => (0..ds.num_users())
            .map(|u| match mean_gap_days(ds.events(u)) {
                Some(gap) if gap < days => UserGroup::Core,
                _ => UserGroup::Casual,
            })
            .collect(),
        GroupingRule::FrequencyQuantile { core_fraction } => {
            let mut order: Vec<usize> = (0..ds.num_users()).collect();
            // most active first, ties by user index
            order.sort_by_key(|&u| std::cmp::Reverse(ds.events(u).len()));
            let n_core = (core_fraction * ds.num_users() as f64).round() as usize;
            let mut groups = vec![UserGroup::Casual; ds.num_users()];
            for &u in order.iter().take(n_core) {
                groups[u] = UserGroup::Core;
            }
            groups
        }
    }
}

/// Assigns every event to train, finetune, test or discarded.
pub fn split_events(ds: &InteractionDataset, rule: SplitRule) -> Result<Vec<UserSplit>> {
    if let SplitRule::Cutoff { cutoff } = rule {
        let any_after = (0..ds.num_users()).any(|u| ds.events(u).iter().any(|e| e.timestamp >= cutoff));
        if !any_after {
            return Err(Error::NoEvaluationData(cutoff));
        }
    }
    Ok((0..ds.num_users())
        .map(|u| {
            let events = ds.events(u);
            let n_train = match rule {
                SplitRule::Cutoff { cutoff } => events.iter().take_while(|e| e.timestamp < cutoff).count(),
                SplitRule::Chronological { train_fraction } => {
                    ((events.len() as f64 * train_fraction).ceil() as usize).clamp(1, events.len())
                }
            };
            let mut split = UserSplit::default();
            for (p, e) in events.iter().enumerate() {
                let s = match p.checked_sub(n_train) {
                    None => Split::Train,
                    Some(0) => Split::Finetune,
                    Some(1) => Split::Test,
                    Some(_) => Split::Discarded,
                };
                match s {
                    Split::Train => split.train.push(e.item),
                    Split::Finetune => split.finetune = Some(e.item),
                    Split::Test => split.test = Some(e.item),
                    Split::Discarded => {}
                }
                split.assignments.push(s);
            }
            split
        })
        .collect())
}

/// Time-based split at cutting timestamp `cutoff`.
pub fn split_by_time(ds: &InteractionDataset, cutoff: u64) -> Result<Vec<UserSplit>> {
    split_events(ds, SplitRule::Cutoff { cutoff })
}

/// Keeps only the most recent `max_len` training items of every user.
pub fn truncate_sequences(ds: &mut InteractionDataset, max_len: usize) {
    for s in &mut ds.splits {
        if s.train.len() > max_len {
            s.train.drain(..s.train.len() - max_len);
        }
    }
}

/// `round(ratio * n)` with halves rounded up.
pub fn meta_set_size(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 0.5).floor() as usize
}

/// Casual users eligible for the meta set: they have training history and a
/// finetune target to measure.
pub fn meta_candidates(ds: &InteractionDataset) -> Vec<usize> {
    (0..ds.num_users())
        .filter(|&u| {
            ds.group(u) == UserGroup::Casual && !ds.split(u).train.is_empty() && ds.split(u).finetune.is_some()
        })
        .collect()
}

/// Samples `round(ratio * N)` of the N eligible casual users uniformly
/// without replacement. Returned indices are sorted.
pub fn sample_meta_set(ds: &InteractionDataset, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config {
            key: "split.meta_ratio".into(),
            message: "must be in (0, 1)".into(),
        });
    }
    let mut candidates = meta_candidates(ds);
    let m = meta_set_size(ratio, candidates.len());
    if m == 0 {
        return Err(Error::EmptyMetaSet {
            ratio,
            casual: candidates.len(),
        });
    }
    candidates.shuffle(&mut rng::stream(seed, rng::META_SET));
    let mut meta = candidates[..m].to_vec();
    meta.sort_unstable();
    Ok(meta)
}

/// Classifies, splits and truncates in one go.
pub fn prepare(mut ds: InteractionDataset, config: &SplitConfig) -> Result<InteractionDataset> {
    config.validate()?;
    let groups = classify_users(&ds, config.grouping);
    ds.set_groups(groups);
    let splits = split_events(&ds, config.split)?;
    ds.set_splits(splits);
    truncate_sequences(&mut ds, config.max_sequence_length);
    Ok(ds)
}
