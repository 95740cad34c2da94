use serde::{Deserialize, Serialize};
use srseg_autograd::AdamConfig;

use crate::{Error, Result};

/// Which epoch counter drives learning-rate decay.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayScope {
    /// Epochs since the start of training.
    #[default]
    Global,
    /// Epochs since the start of the current stage.
    Stage,
}

/// Adam with step decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub decay_scope: DecayScope,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 1e-3,
            decay_factor: 10.0,
            decay_every: 20,
            decay_scope: DecayScope::Global,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "base_lr {} must be positive",
                self.base_lr
            )));
        }
        if !(self.decay_factor > 1.0 && self.decay_factor.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "decay_factor {} must exceed 1",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidSpec("decay_every must be at least 1".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0)
        {
            return Err(Error::InvalidSpec(
                "Adam betas must be in [0, 1) and eps positive".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// `base_lr / decay_factor^floor(epoch / decay_every)`.
pub fn lr_at_epoch(cfg: &OptimizerConfig, epoch: usize) -> f64 {
    let k = (epoch / cfg.decay_every) as i32;
    cfg.base_lr / cfg.decay_factor.powi(k)
}

/// Learning rate for global `epoch` inside a stage that began at `stage_start`.
pub fn lr_for(cfg: &OptimizerConfig, epoch: usize, stage_start: usize) -> f64 {
    match cfg.decay_scope {
        DecayScope::Global => lr_at_epoch(cfg, epoch),
        DecayScope::Stage => lr_at_epoch(cfg, epoch - stage_start),
    }
}
