//! Synthetic interaction fixture with known core/casual structure.
//!
//! Items are split into contiguous clusters arranged as rings. A walk moves
//! to the next item of the current ring with the stay probability, and
//! otherwise jumps to a random item of another cluster. Core users emit the
//! walk with daily gaps. Casual users take the same kind of walk, keep each
//! step with the subsample rate, replace each kept item by a uniformly random
//! one with the noise rate, and visit every 40 to 60 days. The last two
//! events of every user fall at or after the cutting timestamp.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use autodiff::Tensor;

use crate::data::{Event, InteractionDataset, UserGroup, DEFAULT_CUTOFF};
use crate::rng::{self, Rng};
use crate::{Error, Result};

const DAY: u64 = 86_400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_items: usize,
    pub num_clusters: usize,
    /// probability that a walk stays in its cluster at each step
    pub stay_probability: f64,
    pub num_core_users: usize,
    pub core_length: usize,
    pub num_casual_users: usize,
    /// length of the walk a casual sequence is subsampled from
    pub casual_walk_length: usize,
    pub casual_subsample: f64,
    pub casual_noise: f64,
    pub cutoff: u64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_items: 500,
            num_clusters: 4,
            stay_probability: 0.9,
            num_core_users: 300,
            core_length: 50,
            num_casual_users: 600,
            casual_walk_length: 20,
            casual_subsample: 0.4,
            casual_noise: 0.2,
            cutoff: DEFAULT_CUTOFF,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: format!("synthetic.{key}"),
                message: message.to_string(),
            })
        };
        for (key, p) in [
            ("stay_probability", self.stay_probability),
            ("casual_subsample", self.casual_subsample),
            ("casual_noise", self.casual_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(key, "must be a probability in [0, 1]");
            }
        }
        if self.casual_subsample == 0.0 && self.num_casual_users > 0 {
            return bad("casual_subsample", "must be positive when there are casual users");
        }
        for (key, v) in [
            ("num_items", self.num_items),
            ("num_clusters", self.num_clusters),
            ("core_length", self.core_length),
            ("casual_walk_length", self.casual_walk_length),
        ] {
            if v < 1 {
                return bad(key, "must be at least 1");
            }
        }
        if self.num_clusters > self.num_items {
            return bad("num_clusters", "cannot exceed num_items");
        }
        if self.core_length < 3 || self.casual_walk_length < 3 {
            return bad("core_length", "sequences need at least 3 items");
        }
        Ok(())
    }

    /// Item index range of a cluster. Clusters differ in size by at most one.
    pub fn cluster_range(&self, cluster: usize) -> std::ops::Range<usize> {
        let base = self.num_items / self.num_clusters;
        let extra = self.num_items % self.num_clusters;
        let start = cluster * base + cluster.min(extra);
        let len = base + usize::from(cluster < extra);
        start..start + len
    }

    pub fn cluster_of(&self, item: usize) -> usize {
        (0..self.num_clusters)
            .find(|&c| self.cluster_range(c).contains(&item))
            .expect("item outside catalog")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub events: Vec<Event>,
    /// user id and the group the generator intended
    pub intended: Vec<(String, UserGroup)>,
}

pub fn item_name(item: usize) -> String {
    format!("item_{item:04}")
}

struct Walker<'a> {
    spec: &'a SyntheticSpec,
}

impl Walker<'_> {
    fn start(&self, rng: &mut Rng) -> usize {
        rng.gen_range(0..self.spec.num_items)
    }

    fn step(&self, item: usize, rng: &mut Rng) -> usize {
        let spec = self.spec;
        let cluster = spec.cluster_of(item);
        if spec.num_clusters == 1 || rng.gen_bool(spec.stay_probability) {
            let r = spec.cluster_range(cluster);
            r.start + (item - r.start + 1) % r.len()
        } else {
            let mut other = rng.gen_range(0..spec.num_clusters - 1);
            if other >= cluster {
                other += 1;
            }
            rng.gen_range(spec.cluster_range(other))
        }
    }

    fn walk(&self, len: usize, rng: &mut Rng) -> Vec<usize> {
        let mut seq = Vec::with_capacity(len);
        let mut item = self.start(rng);
        seq.push(item);
        while seq.len() < len {
            item = self.step(item, rng);
            seq.push(item);
        }
        seq
    }
}

/// Timestamps with the given gap range (days); the second-to-last event
/// lands in `[cutoff, cutoff + lead_days)`.
fn timestamps(n: usize, cutoff: u64, gap_days: (u64, u64), lead_days: u64, rng: &mut Rng) -> Vec<u64> {
    let gap = |rng: &mut Rng| rng.gen_range(gap_days.0 * DAY..=gap_days.1 * DAY);
    let mut ts = vec![0; n];
    ts[n - 2] = cutoff + rng.gen_range(0..lead_days * DAY);
    ts[n - 1] = ts[n - 2] + gap(rng);
    for k in (0..n - 2).rev() {
        ts[k] = ts[k + 1] - gap(rng);
    }
    ts
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, rng::SYNTHETIC);
    let walker = Walker { spec };
    let mut events = Vec::new();
    let mut intended = Vec::new();

    for u in 0..spec.num_core_users {
        let user = format!("core_{u:05}");
        let seq = walker.walk(spec.core_length, &mut rng);
        let ts = timestamps(seq.len(), spec.cutoff, (1, 3), 1, &mut rng);
        events.extend(seq.iter().zip(&ts).map(|(&i, &t)| Event::new(&user, item_name(i), t)));
        intended.push((user, UserGroup::Core));
    }

    for u in 0..spec.num_casual_users {
        let user = format!("casual_{u:05}");
        let seq = loop {
            let walk = walker.walk(spec.casual_walk_length, &mut rng);
            let mut kept = Vec::new();
            for item in walk {
                if rng.gen_bool(spec.casual_subsample) {
                    let item = if rng.gen_bool(spec.casual_noise) {
                        rng.gen_range(0..spec.num_items)
                    } else {
                        item
                    };
                    kept.push(item);
                }
            }
            if kept.len() >= 3 {
                break kept;
            }
        };
        let ts = timestamps(seq.len(), spec.cutoff, (40, 60), 10, &mut rng);
        events.extend(seq.iter().zip(&ts).map(|(&i, &t)| Event::new(&user, item_name(i), t)));
        intended.push((user, UserGroup::Casual));
    }

    Ok(SyntheticData { events, intended })
}

/// One-hot cluster indicator per dataset item, for items named by
/// [`item_name`]. Items with other names get a zero row.
pub fn cluster_embeddings(spec: &SyntheticSpec, ds: &InteractionDataset) -> Tensor {
    let mut rows = vec![vec![0.0; spec.num_clusters]; ds.num_items()];
    for (i, row) in rows.iter_mut().enumerate() {
        let parsed = ds.item_id(i).strip_prefix("item_").and_then(|n| n.parse::<usize>().ok());
        if let Some(item) = parsed.filter(|&n| n < spec.num_items) {
            row[spec.cluster_of(item)] = 1.0;
        }
    }
    Tensor::from_rows(&rows).expect("rows share a width")
}
