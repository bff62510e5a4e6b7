//! The sequence-editing policy. Each position of a source sequence is
//! encoded by one causal self-attention layer over item plus positional
//! embeddings, and a linear head turns the state into a distribution over
//! edit actions.

mod edit;
mod substitution;

use std::io::{Read, Write};
use std::path::Path;

use autodiff::{AttentionMask, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use edit::{apply_actions, write_augmented_tsv, Action, ActionSpace, Augmented, EditTrajectory};
pub use substitution::{build_substitution_table, item_correlation, SubstitutionTable};

use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub dim: usize,
    pub max_len: usize,
    pub action_space: ActionSpace,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            max_len: 200,
            action_space: ActionSpace::KeepDrop,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AugmentorPolicy {
    num_items: usize,
    dim: usize,
    max_len: usize,
    action_space: ActionSpace,
    item_emb: ParamId,
    pos_emb: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wa: ParamId,
    params: ParamStore,
}

const NAMES: [&str; 6] = [
    "policy.item_emb",
    "policy.pos_emb",
    "policy.wq",
    "policy.wk",
    "policy.wv",
    "policy.wa",
];

pub fn init_policy(config: &PolicyConfig, num_items: usize, seed: u64) -> Result<AugmentorPolicy> {
    if config.dim == 0 || config.max_len == 0 || num_items == 0 {
        return Err(Error::InvalidArgument(
            "policy needs a positive dimension, max_len and catalog".into(),
        ));
    }
    let d = config.dim;
    let shapes = [
        vec![num_items, d],
        vec![config.max_len, d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![config.action_space.size(), d],
    ];
    let mut rng = rng::stream(seed, rng::INIT_POLICY);
    let bound = 1.0 / (d as f64).sqrt();
    let mut params = ParamStore::new();
    for (name, shape) in NAMES.iter().zip(shapes) {
        params.insert(*name, Tensor::uniform(shape, bound, &mut rng));
    }
    AugmentorPolicy::from_params(params)
}

impl AugmentorPolicy {
    pub fn from_params(params: ParamStore) -> Result<Self> {
        let ids = NAMES.map(|n| params.id(n));
        let [item_emb, pos_emb, wq, wk, wv, wa] = match ids {
            [Ok(a), Ok(b), Ok(c), Ok(d), Ok(e), Ok(f)] => [a, b, c, d, e, f],
            _ => return Err(Error::InvalidArgument("parameters hold no augmentor policy".into())),
        };
        let (num_items, dim) = params.get(item_emb).dims2();
        let max_len = params.get(pos_emb).dims2().0;
        let action_space = match params.get(wa).dims2().0 {
            2 => ActionSpace::KeepDrop,
            3 => ActionSpace::KeepDropSubstitute,
            n => return Err(Error::InvalidArgument(format!("action head with {n} actions"))),
        };
        Ok(Self {
            num_items,
            dim,
            max_len,
            action_space,
            item_emb,
            pos_emb,
            wq,
            wk,
            wv,
            wa,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn action_space(&self) -> ActionSpace {
        self.action_space
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn action_head_id(&self) -> ParamId {
        self.wa
    }

    fn check(&self, seq: &[usize]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        if seq.len() > self.max_len {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: self.max_len,
            });
        }
        match seq.iter().find(|&&i| i >= self.num_items) {
            Some(&item) => Err(Error::UnknownItem {
                item,
                catalog: self.num_items,
            }),
            None => Ok(()),
        }
    }

    /// States `h_1..h_m` recorded on `tape` with parameters bound by `bind`.
    fn states_on(&self, tape: &mut Tape, p: &[Var], seq: &[usize]) -> Result<Var> {
        self.check(seq)?;
        let var = |id: ParamId| p[id.index()];
        let items = tape.gather(var(self.item_emb), seq)?;
        let positions: Vec<usize> = (0..seq.len()).collect();
        let pos = tape.gather(var(self.pos_emb), &positions)?;
        let e = tape.add(items, pos)?;
        let q = tape.matmul(e, var(self.wq))?;
        let k = tape.matmul(e, var(self.wk))?;
        let v = tape.matmul(e, var(self.wv))?;
        Ok(tape.attention(q, k, v, AttentionMask::Causal)?)
    }

    /// `m x |A|` log-probabilities.
    fn log_policy_on(&self, tape: &mut Tape, p: &[Var], seq: &[usize]) -> Result<Var> {
        let h = self.states_on(tape, p, seq)?;
        let logits = tape.matmul_t(h, p[self.wa.index()])?;
        Ok(tape.log_softmax(logits)?)
    }

    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.ids().map(|id| tape.param(&self.params, id)).collect()
    }

    /// Records the states of `seq` on `tape`, with this policy's parameters
    /// as the differentiable leaves.
    pub fn state_graph(&self, tape: &mut Tape, seq: &[usize]) -> Result<Var> {
        let p = self.bind(tape);
        self.states_on(tape, &p, seq)
    }

    /// Encoded states, one row per position.
    pub fn encode_states(&self, seq: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let h = self.states_on(&mut tape, &p, seq)?;
        Ok(tape.value(h).clone())
    }

    /// Action distribution for a single state vector.
    pub fn distribution_from_state(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "state of length {} for a policy of dimension {}",
                h.len(),
                self.dim
            )));
        }
        let mut tape = Tape::new();
        let hv = tape.constant(Tensor::from_vec(vec![1, self.dim], h.to_vec())?);
        let wa = tape.constant(self.params.get(self.wa).clone());
        let logits = tape.matmul_t(hv, wa)?;
        let probs = tape.softmax(logits)?;
        Ok(tape.value(probs).data().to_vec())
    }

    /// Per-position action distributions (`m x |A|`).
    pub fn action_distribution(&self, seq: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let lp = self.log_policy_on(&mut tape, &p, seq)?;
        let mut probs = tape.value(lp).clone();
        probs.data_mut().iter_mut().for_each(|v| *v = v.exp());
        Ok(probs)
    }

    /// Samples one action per position independently and applies them.
    pub fn sample_trajectory(
        &self,
        source_user: usize,
        seq: &[usize],
        table: Option<&SubstitutionTable>,
        rng: &mut Rng,
    ) -> Result<EditTrajectory> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let lp = self.log_policy_on(&mut tape, &p, seq)?;
        let lp = tape.value(lp);
        let n = self.action_space.size();
        let mut actions = Vec::with_capacity(seq.len());
        let mut log_probs = Vec::with_capacity(seq.len());
        for k in 0..seq.len() {
            let row = lp.row(k);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (a, &l) in row.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    chosen = a;
                    break;
                }
            }
            actions.push(Action::from_index(chosen).expect("action index within space"));
            log_probs.push(row[chosen]);
        }
        let result = apply_actions(seq, &actions, table)?;
        Ok(EditTrajectory {
            source_user,
            source: seq.to_vec(),
            actions,
            log_probs,
            result,
        })
    }

    /// Records `reward * sum log pi(a_k | h_k)` over all trajectories.
    pub fn surrogate(&self, tape: &mut Tape, trajectories: &[EditTrajectory], reward: f64) -> Result<Var> {
        let p = self.bind(tape);
        let n = self.action_space.size();
        let mut total: Option<Var> = None;
        for t in trajectories {
            if t.actions.len() != t.source.len() {
                return Err(Error::MisalignedActions {
                    actions: t.actions.len(),
                    len: t.source.len(),
                });
            }
            let lp = self.log_policy_on(tape, &p, &t.source)?;
            let mut onehot = Tensor::zeros(vec![t.source.len(), n]);
            for (k, a) in t.actions.iter().enumerate() {
                if a.index() >= n {
                    return Err(Error::InvalidArgument(format!("action {a:?} outside the action space")));
                }
                onehot.row_mut(k)[a.index()] = 1.0;
            }
            let mask = tape.constant(onehot);
            let picked = tape.mul(lp, mask)?;
            let s = tape.sum(picked)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let total = match total {
            Some(t) => t,
            None => tape.constant(Tensor::scalar(0.0)),
        };
        Ok(tape.scale(total, reward)?)
    }

    /// Surrogate value and its gradient (ascent direction).
    pub fn surrogate_grads(&self, trajectories: &[EditTrajectory], reward: f64) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let s = self.surrogate(&mut tape, trajectories, reward)?;
        let value = tape.scalar(s);
        if !value.is_finite() {
            return Err(autodiff::AutodiffError::NonFinite {
                op: "surrogate",
                node: s.index(),
            }
            .into());
        }
        Ok((value, tape.backward(s)?))
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        autodiff::checkpoint::write_params(w, &self.params)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        Self::from_params(autodiff::checkpoint::read_params(r)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
