use std::io::Write;

use serde::{Deserialize, Serialize};

use super::SubstitutionTable;
use crate::data::InteractionDataset;
use crate::{Error, Result};

/// Edit action. The integer codes are part of the serialized format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Drop = 0,
    Keep = 1,
    Substitute = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Drop, Action::Keep, Action::Substitute];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Action::from_index(v.into()).ok_or_else(|| format!("unknown action code {v}"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    #[default]
    KeepDrop,
    KeepDropSubstitute,
}

impl ActionSpace {
    pub fn size(self) -> usize {
        match self {
            ActionSpace::KeepDrop => 2,
            ActionSpace::KeepDropSubstitute => 3,
        }
    }

    pub fn actions(self) -> &'static [Action] {
        &Action::ALL[..self.size()]
    }
}

/// Result of editing a sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmented {
    Sequence(Vec<usize>),
    /// fewer than two items survived; the sequence has no transition to train on
    Discard,
}

impl Augmented {
    pub fn sequence(&self) -> Option<&[usize]> {
        match self {
            Augmented::Sequence(s) => Some(s),
            Augmented::Discard => None,
        }
    }
}

/// Applies one action per position. Order is preserved.
pub fn apply_actions(sequence: &[usize], actions: &[Action], table: Option<&SubstitutionTable>) -> Result<Augmented> {
    if actions.len() != sequence.len() {
        return Err(Error::MisalignedActions {
            actions: actions.len(),
            len: sequence.len(),
        });
    }
    let mut out = Vec::with_capacity(sequence.len());
    for (&item, &action) in sequence.iter().zip(actions) {
        match action {
            Action::Keep => out.push(item),
            Action::Drop => {}
            Action::Substitute => out.push(table.ok_or(Error::MissingSubstitutionTable)?.partner(item)),
        }
    }
    Ok(if out.len() < 2 {
        Augmented::Discard
    } else {
        Augmented::Sequence(out)
    })
}

/// Sampled edits of one source sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditTrajectory {
    pub source_user: usize,
    pub source: Vec<usize>,
    pub actions: Vec<Action>,
    /// log-probability of each sampled action under the sampling policy
    pub log_probs: Vec<f64>,
    pub result: Augmented,
}

/// Writes `source_user<TAB>item_ids<TAB>actions`, one line per kept
/// trajectory. Discarded trajectories are skipped.
pub fn write_augmented_tsv<W: Write>(mut w: W, ds: &InteractionDataset, trajectories: &[EditTrajectory]) -> Result<()> {
    for t in trajectories {
        let Some(seq) = t.result.sequence() else {
            continue;
        };
        let items: Vec<&str> = seq.iter().map(|&i| ds.item_id(i)).collect();
        let actions: Vec<String> = t.actions.iter().map(|a| a.index().to_string()).collect();
        writeln!(
            w,
            "{}\t{}\t{}",
            ds.user_id(t.source_user),
            items.join(","),
            actions.join(",")
        )?;
    }
    Ok(())
}
