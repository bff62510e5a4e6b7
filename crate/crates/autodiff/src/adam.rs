use crate::{AutodiffError, Gradients, ParamStore, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected adaptive-moment optimizer over a whole [`ParamStore`].
///
/// The moment accumulators mirror the store layout one-to-one.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| {
            s.iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first: zeros(store),
            second: zeros(store),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second
    }

    /// Optimizer state as named tensors (`adam.m.<param>`, `adam.v.<param>`
    /// and the scalar `adam.step`) so it can be checkpointed next to the
    /// parameters of `store`.
    pub fn export_state(&self, store: &ParamStore) -> ParamStore {
        let mut out = ParamStore::new();
        out.insert("adam.step", Tensor::scalar(self.step as f64));
        for (id, name, _) in store.iter() {
            out.insert(format!("adam.m.{name}"), self.first[id.index()].clone());
            out.insert(format!("adam.v.{name}"), self.second[id.index()].clone());
        }
        out
    }

    /// Restores state written by [`Adam::export_state`] for the same layout.
    pub fn import_state(config: AdamConfig, store: &ParamStore, state: &ParamStore) -> Result<Self> {
        let step = state.get(state.id("adam.step")?).item();
        let mut adam = Self::new(config, store);
        adam.step = step as u64;
        for (id, name, t) in store.iter() {
            for (prefix, slot) in [("m", &mut adam.first), ("v", &mut adam.second)] {
                let saved = state.get(state.id(&format!("adam.{prefix}.{name}"))?);
                if saved.shape() != t.shape() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "import_state",
                        lhs: t.shape().to_vec(),
                        rhs: saved.shape().to_vec(),
                    });
                }
                slot[id.index()] = saved.clone();
            }
        }
        Ok(adam)
    }

    /// One descent step: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Parameters missing from `grads` are treated as having a zero
    /// gradient. Every gradient is validated before anything is written, so a
    /// rejected step leaves both the store and the optimizer untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            if !g.is_finite() {
                return Err(AutodiffError::NonFiniteGradient {
                    name: store.name(id).to_string(),
                });
            }
            if g.shape() != store.get(id).shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    lhs: store.get(id).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let grad = grads.get(id);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let theta = store.get_mut(id).data_mut();
            for j in 0..theta.len() {
                let gj = grad.map_or(0.0, |g| g.data()[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                if m[j] == 0.0 {
                    continue;
                }
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                theta[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
