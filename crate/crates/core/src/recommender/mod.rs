//! Next-item recommenders: a causal self-attention encoder and a gated
//! recurrent encoder. Both score the whole catalog by the dot product of
//! the last hidden state with the (shared) item embedding table.

mod batch;

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use autodiff::{Adam, AttentionMask, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use batch::{BatchRow, TrainBatch, TrainSequence, PAD};

use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SelfAttention,
    Recurrent,
}

impl Architecture {
    fn prefix(self) -> &'static str {
        match self {
            Architecture::SelfAttention => "sasrec",
            Architecture::Recurrent => "gru",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub dim: usize,
    /// self-attention blocks; ignored by the recurrent encoder
    pub blocks: usize,
    pub max_len: usize,
    pub feed_forward: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::SelfAttention,
            dim: 100,
            blocks: 2,
            max_len: 200,
            feed_forward: true,
        }
    }
}

#[derive(Clone, Debug)]
struct AttentionBlock {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    ffn: Option<[ParamId; 4]>,
}

#[derive(Clone, Debug)]
struct GruCell {
    // [z, r, h] input weights, recurrent weights and biases
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
}

#[derive(Clone, Debug)]
enum Layout {
    SelfAttention { pos_emb: ParamId, blocks: Vec<AttentionBlock> },
    Recurrent(GruCell),
}

#[derive(Clone, Debug)]
pub struct RecommenderModel {
    architecture: Architecture,
    num_items: usize,
    dim: usize,
    max_len: usize,
    item_emb: ParamId,
    layout: Layout,
    params: ParamStore,
}

/// Parameters bound to one tape.
struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    fn new(tape: &mut Tape, params: &ParamStore) -> Self {
        Self {
            vars: params.ids().map(|id| tape.param(params, id)).collect(),
        }
    }

    fn get(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }
}

fn names(arch: Architecture, blocks: usize, feed_forward: bool) -> Vec<(String, [usize; 2])> {
    // shapes use 0 for the catalog size, 1 for D and 2 for max_len
    let p = arch.prefix();
    let mut out = vec![(format!("{p}.item_emb"), [0, 1])];
    match arch {
        Architecture::SelfAttention => {
            out.push((format!("{p}.pos_emb"), [2, 1]));
            for b in 0..blocks {
                for w in ["wq", "wk", "wv"] {
                    out.push((format!("{p}.block{b}.{w}"), [1, 1]));
                }
                if feed_forward {
                    out.push((format!("{p}.block{b}.ffn_w1"), [1, 1]));
                    out.push((format!("{p}.block{b}.ffn_b1"), [1, usize::MAX]));
                    out.push((format!("{p}.block{b}.ffn_w2"), [1, 1]));
                    out.push((format!("{p}.block{b}.ffn_b2"), [1, usize::MAX]));
                }
            }
        }
        Architecture::Recurrent => {
            for g in ["z", "r", "h"] {
                out.push((format!("{p}.w_{g}"), [1, 1]));
                out.push((format!("{p}.u_{g}"), [1, 1]));
                out.push((format!("{p}.b_{g}"), [1, usize::MAX]));
            }
        }
    }
    out
}

/// Uniform initialization in `[-1/sqrt(D), 1/sqrt(D)]`.
pub fn init_model(config: &ModelConfig, num_items: usize, seed: u64) -> Result<RecommenderModel> {
    if config.dim == 0 {
        return Err(Error::Config {
            key: "model.dim".into(),
            message: "must be at least 1".into(),
        });
    }
    if num_items == 0 {
        return Err(Error::InvalidArgument("catalog is empty".into()));
    }
    if config.max_len == 0 {
        return Err(Error::Config {
            key: "model.max_len".into(),
            message: "must be at least 1".into(),
        });
    }
    let mut rng = rng::stream(seed, rng::INIT_RECOMMENDER);
    let bound = 1.0 / (config.dim as f64).sqrt();
    let sizes = [num_items, config.dim, config.max_len];
    let mut params = ParamStore::new();
    for (name, dims) in names(config.architecture, config.blocks, config.feed_forward) {
        let shape = if dims[1] == usize::MAX {
            vec![sizes[dims[0]]]
        } else {
            vec![sizes[dims[0]], sizes[dims[1]]]
        };
        params.insert(name, Tensor::uniform(shape, bound, &mut rng));
    }
    RecommenderModel::from_params(params, config.max_len)
}

impl RecommenderModel {
    /// Rebuilds a model from named parameters, inferring the architecture.
    pub fn from_params(params: ParamStore, max_len: usize) -> Result<Self> {
        let architecture = if params.id("sasrec.item_emb").is_ok() {
            Architecture::SelfAttention
        } else if params.id("gru.item_emb").is_ok() {
            Architecture::Recurrent
        } else {
            return Err(Error::InvalidArgument("parameters hold no known recommender".into()));
        };
        let p = architecture.prefix();
        let item_emb = params.id(&format!("{p}.item_emb"))?;
        let (num_items, dim) = params.get(item_emb).dims2();
        let id = |name: String| params.id(&name);
        let layout = match architecture {
            Architecture::SelfAttention => {
                let pos_emb = id(format!("{p}.pos_emb"))?;
                if params.get(pos_emb).dims2() != (max_len, dim) {
                    return Err(Error::InvalidArgument(format!(
                        "positional table {:?} does not match max_len {max_len}",
                        params.get(pos_emb).shape()
                    )));
                }
                let mut blocks = Vec::new();
                while let Ok(wq) = id(format!("{p}.block{}.wq", blocks.len())) {
                    let b = blocks.len();
                    let ffn = match id(format!("{p}.block{b}.ffn_w1")) {
                        Ok(w1) => Some([
                            w1,
                            id(format!("{p}.block{b}.ffn_b1"))?,
                            id(format!("{p}.block{b}.ffn_w2"))?,
                            id(format!("{p}.block{b}.ffn_b2"))?,
                        ]),
                        Err(_) => None,
                    };
                    blocks.push(AttentionBlock {
                        wq,
                        wk: id(format!("{p}.block{b}.wk"))?,
                        wv: id(format!("{p}.block{b}.wv"))?,
                        ffn,
                    });
                }
                Layout::SelfAttention { pos_emb, blocks }
            }
            Architecture::Recurrent => {
                let gate = |kind: &str| -> Result<[ParamId; 3]> {
                    Ok([
                        id(format!("{p}.{kind}_z"))?,
                        id(format!("{p}.{kind}_r"))?,
                        id(format!("{p}.{kind}_h"))?,
                    ])
                };
                Layout::Recurrent(GruCell {
                    w: gate("w")?,
                    u: gate("u")?,
                    b: gate("b")?,
                })
            }
        };
        Ok(Self {
            architecture,
            num_items,
            dim,
            max_len,
            item_emb,
            layout,
            params,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn item_embeddings(&self) -> &Tensor {
        self.params.get(self.item_emb)
    }

    fn check_items(&self, items: &[usize]) -> Result<()> {
        match items.iter().find(|&&i| i >= self.num_items) {
            Some(&item) => Err(Error::UnknownItem {
                item,
                catalog: self.num_items,
            }),
            None => Ok(()),
        }
    }

    /// Hidden states (`m x D`), one per input position.
    fn encode(&self, tape: &mut Tape, bound: &Bound, items: &[usize]) -> Result<Var> {
        let m = items.len();
        let x = tape.gather(bound.get(self.item_emb), items)?;
        match &self.layout {
            Layout::SelfAttention { pos_emb, blocks } => {
                if m > self.max_len {
                    return Err(Error::SequenceTooLong {
                        len: m,
                        max: self.max_len,
                    });
                }
                // right-aligned: the newest item always sits at max_len - 1
                let positions: Vec<usize> = (self.max_len - m..self.max_len).collect();
                let pos = tape.gather(bound.get(*pos_emb), &positions)?;
                let mut x = tape.add(x, pos)?;
                for block in blocks {
                    let q = tape.matmul(x, bound.get(block.wq))?;
                    let k = tape.matmul(x, bound.get(block.wk))?;
                    let v = tape.matmul(x, bound.get(block.wv))?;
                    let a = tape.attention(q, k, v, AttentionMask::Causal)?;
                    x = tape.add(x, a)?;
                    if let Some([w1, b1, w2, b2]) = block.ffn {
                        let h = tape.matmul(x, bound.get(w1))?;
                        let h = tape.add_row(h, bound.get(b1))?;
                        let h = tape.relu(h)?;
                        let h = tape.matmul(h, bound.get(w2))?;
                        let h = tape.add_row(h, bound.get(b2))?;
                        x = tape.add(x, h)?;
                    }
                }
                Ok(x)
            }
            Layout::Recurrent(cell) => {
                let proj = |tape: &mut Tape, g: usize| -> Result<Var> {
                    let p = tape.matmul(x, bound.get(cell.w[g]))?;
                    Ok(tape.add_row(p, bound.get(cell.b[g]))?)
                };
                let (xz, xr, xh) = (proj(tape, 0)?, proj(tape, 1)?, proj(tape, 2)?);
                let mut h = tape.constant(Tensor::zeros(vec![1, self.dim]));
                let mut outs = Vec::with_capacity(m);
                for t in 0..m {
                    let hz = tape.matmul(h, bound.get(cell.u[0]))?;
                    let xz_t = tape.slice_rows(xz, t, t + 1)?;
                    let z = tape.add(xz_t, hz)?;
                    let z = tape.sigmoid(z)?;
                    let hr = tape.matmul(h, bound.get(cell.u[1]))?;
                    let xr_t = tape.slice_rows(xr, t, t + 1)?;
                    let r = tape.add(xr_t, hr)?;
                    let r = tape.sigmoid(r)?;
                    let rh = tape.mul(r, h)?;
                    let hh = tape.matmul(rh, bound.get(cell.u[2]))?;
                    let xh_t = tape.slice_rows(xh, t, t + 1)?;
                    let cand = tape.add(xh_t, hh)?;
                    let cand = tape.tanh(cand)?;
                    let diff = tape.sub(cand, h)?;
                    let step = tape.mul(z, diff)?;
                    h = tape.add(h, step)?;
                    outs.push(h);
                }
                Ok(tape.concat_rows(&outs)?)
            }
        }
    }

    /// Scores every catalog item as the next interaction after `prefix`.
    /// Prefixes longer than `max_len` keep their most recent items.
    pub fn score_next(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        self.check_items(prefix)?;
        let prefix = &prefix[prefix.len().saturating_sub(self.max_len)..];
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let h = self.encode(&mut tape, &bound, prefix)?;
        let last = tape.slice_rows(h, prefix.len() - 1, prefix.len())?;
        let scores = tape.matmul_t(last, bound.get(self.item_emb))?;
        Ok(tape.value(scores).data().to_vec())
    }

    /// Scores after every position of `items` (`m x |I|`, row-major).
    pub fn score_all_positions(&self, items: &[usize]) -> Result<Tensor> {
        if items.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        self.check_items(items)?;
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let h = self.encode(&mut tape, &bound, items)?;
        let scores = tape.matmul_t(h, bound.get(self.item_emb))?;
        Ok(tape.value(scores).clone())
    }

    /// Sampled-negative cross-entropy summed over unmasked steps, recorded
    /// on `tape` so the caller can differentiate it.
    pub fn training_loss(&self, tape: &mut Tape, batch: &TrainBatch) -> Result<Var> {
        let bound = Bound::new(tape, &self.params);
        let mut terms = Vec::new();
        let n_neg = batch.negatives_per_step();
        for r in 0..batch.rows() {
            let row = batch.row(r);
            if row.inputs.is_empty() {
                continue;
            }
            self.check_items(row.inputs)?;
            self.check_items(row.targets)?;
            self.check_items(row.negatives)?;
            let h = self.encode(tape, &bound, row.inputs)?;
            let pos = tape.gather(bound.get(self.item_emb), row.targets)?;
            let pos = tape.mul(h, pos)?;
            let pos = tape.sum_rows(pos)?;
            let pos = tape.log_sigmoid(pos)?;
            terms.push(tape.sum(pos)?);
            for n in 0..n_neg {
                let negs: Vec<usize> = row.negatives.iter().skip(n).step_by(n_neg).copied().collect();
                let neg = tape.gather(bound.get(self.item_emb), &negs)?;
                let neg = tape.mul(h, neg)?;
                let neg = tape.sum_rows(neg)?;
                let neg = tape.scale(neg, -1.0)?;
                let neg = tape.log_sigmoid(neg)?;
                terms.push(tape.sum(neg)?);
            }
        }
        if terms.is_empty() {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        Ok(tape.scale(total, -1.0)?)
    }

    /// Loss value and parameter gradients for one batch.
    pub fn loss_and_grads(&self, batch: &TrainBatch) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let loss = self.training_loss(&mut tape, batch)?;
        let value = tape.scalar(loss);
        Ok((value, tape.backward(loss)?))
    }

    /// One optimizer step on `batch`; returns the summed loss.
    pub fn train_step(&mut self, adam: &mut Adam, batch: &TrainBatch) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(batch)?;
        adam.step(&mut self.params, &grads)?;
        Ok(loss)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    const MAX_LEN_KEY: &'static str = "meta.max_len";

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut store = self.params.clone();
        store.insert(Self::MAX_LEN_KEY, Tensor::scalar(self.max_len as f64));
        autodiff::checkpoint::write_params(w, &store)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let stored = autodiff::checkpoint::read_params(r)?;
        let max_len = stored.get(stored.id(Self::MAX_LEN_KEY)?).item() as usize;
        let mut params = ParamStore::new();
        for (_, name, t) in stored.iter().filter(|(_, n, _)| *n != Self::MAX_LEN_KEY) {
            params.insert(name, t.clone());
        }
        Self::from_params(params, max_len)
    }
}

/// Optimization settings for fitting a recommender.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub negatives_per_step: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            negatives_per_step: 1,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: u64,
}

/// One shuffled pass over `sequences`; returns the mean per-step loss.
/// Sequences shorter than two items carry no transitions and are skipped.
pub fn train_epoch(
    model: &mut RecommenderModel,
    sequences: &[TrainSequence<'_>],
    adam: &mut Adam,
    fit: &FitConfig,
    rng: &mut Rng,
) -> Result<f64> {
    if fit.batch_size == 0 {
        return Err(Error::Config {
            key: "fit.batch_size".into(),
            message: "must be at least 1".into(),
        });
    }
    let mut order: Vec<usize> = (0..sequences.len()).filter(|&i| sequences[i].items.len() >= 2).collect();
    if order.is_empty() {
        return Err(Error::EmptyInput("training sequences".into()));
    }
    order.shuffle(rng);
    let (mut total, mut steps) = (0.0, 0usize);
    for chunk in order.chunks(fit.batch_size) {
        let seqs: Vec<TrainSequence<'_>> = chunk.iter().map(|&i| sequences[i]).collect();
        let batch = TrainBatch::build(&seqs, model.max_len(), model.num_items(), fit.negatives_per_step, rng);
        total += model.train_step(adam, &batch)?;
        steps += batch.num_steps();
    }
    Ok(total / steps as f64)
}

/// Runs `fit.epochs` epochs with a fresh optimizer and returns the log.
pub fn fit(
    model: &mut RecommenderModel,
    sequences: &[TrainSequence<'_>],
    fit: &FitConfig,
    seed: u64,
) -> Result<(Adam, Vec<EpochLog>)> {
    let mut adam = Adam::new(autodiff::AdamConfig::with_lr(fit.lr), model.params());
    let mut rng = rng::stream(seed, rng::PRETRAIN);
    let mut log = Vec::with_capacity(fit.epochs);
    for epoch in 0..fit.epochs {
        let start = Instant::now();
        let mean_loss = train_epoch(model, sequences, &mut adam, fit, &mut rng)?;
        let wall_ms = start.elapsed().as_millis() as u64;
        log::info!("epoch {epoch}: mean loss {mean_loss:.4} ({wall_ms} ms)");
        log.push(EpochLog {
            epoch,
            mean_loss,
            wall_ms,
        });
    }
    Ok((adam, log))
}
