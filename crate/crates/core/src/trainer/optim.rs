use autodiff::{Adam, AdamConfig, Gradients, ParamStore};
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Gradient-ascent optimizer for the policy.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyOptimizer {
    Adam(Adam),
    Sgd { lr: f64 },
}

impl PolicyOptimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore) -> Self {
        match kind {
            OptimizerKind::Adam => PolicyOptimizer::Adam(Adam::new(AdamConfig::with_lr(lr), params)),
            OptimizerKind::Sgd => PolicyOptimizer::Sgd { lr },
        }
    }

    /// Moves `params` along `grads` (ascent).
    pub fn ascend(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        match self {
            PolicyOptimizer::Adam(adam) => {
                let mut descent = grads.clone();
                descent.scale(-1.0);
                adam.step(params, &descent)?;
            }
            PolicyOptimizer::Sgd { lr } => {
                for (id, g) in grads.iter() {
                    if !g.is_finite() {
                        return Err(autodiff::AutodiffError::NonFiniteGradient {
                            name: params.name(id).to_string(),
                        }
                        .into());
                    }
                }
                for (id, g) in grads.iter() {
                    for (p, d) in params.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                        *p += *lr * d;
                    }
                }
            }
        }
        Ok(())
    }
}
