//! AdaMax with linear warmup followed by inverse-square-root decay.

use serde::{Deserialize, Serialize};

use super::params::ParamGroup;
use super::NnError;

pub const DEFAULT_WARMUP_STEPS: u64 = 500;
pub const DEFAULT_WARMUP_FLOOR: f64 = 1e-5;

/// Learning rate at 1-based `step`.
///
/// Linear from `floor` to `base_lr` over the warmup, then
/// `base_lr * sqrt(warmup_steps / step)`.
pub fn lr_at(step: u64, base_lr: f64, warmup_steps: u64, floor: f64) -> f64 {
    let step = step.max(1);
    if warmup_steps == 0 {
        return base_lr;
    }
    if step <= warmup_steps {
        floor + (base_lr - floor) * step as f64 / warmup_steps as f64
    } else {
        base_lr * (warmup_steps as f64 / step as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaMaxConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    pub warmup_floor: f64,
}

impl Default for AdaMaxConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: DEFAULT_WARMUP_STEPS,
            warmup_floor: DEFAULT_WARMUP_FLOOR,
        }
    }
}

impl AdaMaxConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(step, self.base_lr, self.warmup_steps, self.warmup_floor)
    }
}

/// First-moment and infinity-norm accumulators shaped like the group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<G> {
    pub step: u64,
    pub moment: G,
    pub inf_norm: G,
}

impl<G: ParamGroup> OptimizerState<G> {
    pub fn new(params: &G) -> Self {
        Self {
            step: 0,
            moment: params.zeros_like(),
            inf_norm: params.zeros_like(),
        }
    }
}

/// One AdaMax update. Gradients are checked for non-finite values before
/// anything is modified.
pub fn adamax_step<G: ParamGroup>(
    params: &mut G,
    grads: &G,
    state: &mut OptimizerState<G>,
    cfg: &AdaMaxConfig,
) -> Result<f64, NnError> {
    let grads = grads.named();
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(NnError::NonFiniteGradient(name.clone()));
    }
    state.step += 1;
    let lr = cfg.lr_at(state.step);
    let step_size = lr / (1.0 - cfg.beta1.powi(state.step.min(i32::MAX as u64) as i32));
    let moments = state.moment.named_mut();
    let norms = state.inf_norm.named_mut();
    for ((((_, p), (_, g)), (_, m)), (_, u)) in params
        .named_mut()
        .into_iter()
        .zip(grads)
        .zip(moments)
        .zip(norms)
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            u.data[i] = (cfg.beta2 * u.data[i]).max(gi.abs() + cfg.eps);
            p.data[i] -= step_size * m.data[i] / u.data[i];
        }
    }
    Ok(lr)
}
