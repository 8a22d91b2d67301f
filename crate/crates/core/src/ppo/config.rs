use crate::error::{Error, Result};

/// What the critic regresses onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValueTarget {
    /// GAE return `Â + V`.
    #[default]
    GaeReturn,
    /// One-step target `r + γ V(s')`.
    Td0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub clip: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub update_epochs: usize,
    pub minibatches: usize,
    pub episodes_per_iter: usize,
    pub iterations: usize,
    pub max_grad_norm: f64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Multiplier applied to rewards before GAE; raw rewards reach the
    /// hundreds per episode, which stalls a clipped value loss.
    pub reward_scale: f64,
    pub shared_backbone: bool,
    pub value_target: ValueTarget,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            ent_coef: 0.01,
            vf_coef: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            update_epochs: 4,
            minibatches: 4,
            episodes_per_iter: 16,
            iterations: 100,
            max_grad_norm: 0.5,
            lr: 1e-4,
            weight_decay: 1e-4,
            reward_scale: 0.01,
            shared_backbone: false,
            value_target: ValueTarget::GaeReturn,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        let unit_closed = |v: f64| v > 0.0 && v <= 1.0;
        if !unit_open(self.clip) {
            return Err(Error::Config(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if !unit_closed(self.gamma) || !unit_closed(self.gae_lambda) {
            return Err(Error::Config("gamma and gae_lambda must lie in (0, 1]".into()));
        }
        if self.update_epochs == 0 || self.minibatches == 0 || self.episodes_per_iter == 0 {
            return Err(Error::Config(
                "update_epochs, minibatches and episodes_per_iter must be >= 1".into(),
            ));
        }
        let nonneg = [self.ent_coef, self.vf_coef, self.weight_decay, self.lr];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("coefficients and learning rate must be finite and >= 0".into()));
        }
        if !(self.max_grad_norm > 0.0) || !(self.reward_scale > 0.0) || !self.reward_scale.is_finite() {
            return Err(Error::Config("max_grad_norm and reward_scale must be > 0".into()));
        }
        Ok(())
    }
}
