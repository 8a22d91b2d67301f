//! Actor and critic parameters, and their checkpoint encoding.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, NamedTensor};
use crate::nn::dist::LOG_STD_BOUNDS;
use crate::nn::{Activation, DenseNet, Layer, NetGrad};
use crate::rewards::{RewardConfig, RewardWeights};

const LEAF_HIDDEN: [usize; 2] = [128, 128];
const MU_HIDDEN: [usize; 2] = [64, 64];
const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
const POLICY_GAIN: f64 = 0.01;
const VALUE_GAIN: f64 = 1.0;

/// Leaf actor (shared by all leaf pairs), MU actor and critic.
///
/// The leaf network outputs `bins` logits for `Δa`, then `bins` logits for
/// `Δb`, then with a shared backbone one value estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub leaf: DenseNet,
    pub mu: DenseNet,
    pub mu_log_std: f64,
    pub critic: Option<DenseNet>,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub leaf: NetGrad,
    pub mu: NetGrad,
    pub mu_log_std: f64,
    pub critic: Option<NetGrad>,
}

impl PolicyGrad {
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.leaf.slices_mut();
        out.extend(self.mu.slices_mut());
        out.push(std::slice::from_mut(&mut self.mu_log_std));
        if let Some(c) = &mut self.critic {
            out.extend(c.slices_mut());
        }
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.leaf.slices();
        out.extend(self.mu.slices());
        out.push(std::slice::from_ref(&self.mu_log_std));
        if let Some(c) = &self.critic {
            out.extend(c.slices());
        }
        out
    }
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(env: &EnvConfig, shared_backbone: bool, rng: &mut R) -> Self {
        let bins = env.leaf_bins();
        let leaf_out = 2 * bins + usize::from(shared_backbone);
        let mut leaf = DenseNet::mlp(env.leaf_obs_dim(), &LEAF_HIDDEN, leaf_out, HIDDEN_GAIN, 1.0, rng);
        {
            let head = leaf.layers.last_mut().expect("nonempty");
            head.weight.slice_mut(s![..2 * bins, ..]).mapv_inplace(|w| w * POLICY_GAIN);
            if shared_backbone {
                head.weight.slice_mut(s![2 * bins.., ..]).mapv_inplace(|w| w * VALUE_GAIN);
            }
        }
        let mut mu = DenseNet::mlp(env.mu_obs_dim(), &MU_HIDDEN, 1, HIDDEN_GAIN, POLICY_GAIN, rng);
        let (lo, hi) = env.mu_range;
        mu.layers.last_mut().expect("nonempty").bias[0] = 0.5 * (lo + hi);
        let critic = (!shared_backbone)
            .then(|| DenseNet::mlp(env.leaf_obs_dim(), &LEAF_HIDDEN, 1, HIDDEN_GAIN, VALUE_GAIN, rng));
        Self {
            leaf,
            mu,
            mu_log_std: 0.0,
            critic,
            bins,
        }
    }

    pub fn shared_backbone(&self) -> bool {
        self.critic.is_none()
    }

    /// Effective log standard deviation of the MU policy.
    pub fn log_std(&self) -> f64 {
        self.mu_log_std.clamp(LOG_STD_BOUNDS.0, LOG_STD_BOUNDS.1)
    }

    /// Whether the log-std parameter sits inside its clamp and receives gradient.
    pub fn log_std_active(&self) -> bool {
        self.mu_log_std > LOG_STD_BOUNDS.0 && self.mu_log_std < LOG_STD_BOUNDS.1
    }

    /// State values for a batch of leaf observations.
    pub fn values(&self, leaf_obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        match &self.critic {
            Some(c) => Ok(c.predict(leaf_obs)?.column(0).to_vec()),
            None => Ok(self.leaf.predict(leaf_obs)?.column(2 * self.bins).to_vec()),
        }
    }

    pub fn zero_grad(&self) -> PolicyGrad {
        PolicyGrad {
            leaf: NetGrad::zeros_like(&self.leaf),
            mu: NetGrad::zeros_like(&self.mu),
            mu_log_std: 0.0,
            critic: self.critic.as_ref().map(NetGrad::zeros_like),
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = self.leaf.param_slices();
        out.extend(self.mu.param_slices());
        out.push(std::slice::from_ref(&self.mu_log_std));
        if let Some(c) = &self.critic {
            out.extend(c.param_slices());
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.leaf.param_slices_mut();
        out.extend(self.mu.param_slices_mut());
        out.push(std::slice::from_mut(&mut self.mu_log_std));
        if let Some(c) = &mut self.critic {
            out.extend(c.param_slices_mut());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

fn net_tensors(prefix: &str, net: &DenseNet, out: &mut Vec<NamedTensor>) {
    for (i, l) in net.layers.iter().enumerate() {
        let (rows, cols) = l.weight.dim();
        out.push(NamedTensor::new(
            format!("{prefix}.{i}.weight"),
            vec![rows, cols],
            l.weight.iter().copied().collect(),
        ));
        out.push(NamedTensor::new(format!("{prefix}.{i}.bias"), vec![rows], l.bias.to_vec()));
    }
}

fn net_from_tensors(prefix: &str, tensors: &[NamedTensor]) -> Result<Option<DenseNet>> {
    let find = |name: String| tensors.iter().find(|t| t.name == name);
    let mut layers = Vec::new();
    while let Some(w) = find(format!("{prefix}.{}.weight", layers.len())) {
        let i = layers.len();
        let b = find(format!("{prefix}.{i}.bias"))
            .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.{i}.bias")))?;
        if w.dims.len() != 2 || b.dims != [w.dims[0]] {
            return Err(Error::Checkpoint(format!("bad shapes for {prefix}.{i}")));
        }
        layers.push(Layer {
            weight: Array2::from_shape_vec((w.dims[0], w.dims[1]), w.data.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?,
            bias: Array1::from(b.data.clone()),
            activation: Activation::Tanh,
        });
    }
    if layers.is_empty() {
        return Ok(None);
    }
    layers.last_mut().expect("nonempty").activation = Activation::Identity;
    DenseNet::new(layers)
        .map(Some)
        .map_err(|e| Error::Checkpoint(format!("{prefix}: {e}")))
}

/// Trained parameters together with the environment they were trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub env: EnvConfig,
}

impl Checkpoint {
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let e = &self.env;
        let mut out = vec![
            NamedTensor::scalar("cfg.control_points", e.control_points as f64),
            NamedTensor::scalar("cfg.max_step", e.max_step as f64),
            NamedTensor::scalar("cfg.mu_min", e.mu_range.0),
            NamedTensor::scalar("cfg.mu_max", e.mu_range.1),
            NamedTensor::scalar("cfg.y_norm", e.y_norm as f64),
            NamedTensor::new("cfg.reward_weights", vec![5], e.rewards.weights.0.to_vec()),
            NamedTensor::scalar("mu.log_std", self.params.mu_log_std),
        ];
        net_tensors("leaf", &self.params.leaf, &mut out);
        net_tensors("mu", &self.params.mu, &mut out);
        if let Some(c) = &self.params.critic {
            net_tensors("critic", c, &mut out);
        }
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let scalar = |name: &str| -> Result<f64> {
            tensors
                .iter()
                .find(|t| t.name == name)
                .filter(|t| t.data.len() == 1)
                .map(|t| t.data[0])
                .ok_or_else(|| Error::Checkpoint(format!("missing scalar {name}")))
        };
        let count = |name: &str| -> Result<usize> {
            let v = scalar(name)?;
            if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::Checkpoint(format!("{name} = {v} is not a count")))
            }
        };
        let weights = tensors
            .iter()
            .find(|t| t.name == "cfg.reward_weights" && t.data.len() == 5)
            .ok_or_else(|| Error::Checkpoint("missing cfg.reward_weights".into()))?;
        let env = EnvConfig {
            control_points: count("cfg.control_points")?,
            max_step: count("cfg.max_step")? as i64,
            mu_range: (scalar("cfg.mu_min")?, scalar("cfg.mu_max")?),
            y_norm: count("cfg.y_norm")?,
            rewards: RewardConfig {
                weights: RewardWeights(weights.data.clone().try_into().expect("5 weights")),
                ..RewardConfig::default()
            },
        };
        env.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let leaf = net_from_tensors("leaf", tensors)?.ok_or_else(|| Error::Checkpoint("missing leaf network".into()))?;
        let mu = net_from_tensors("mu", tensors)?.ok_or_else(|| Error::Checkpoint("missing MU network".into()))?;
        let critic = net_from_tensors("critic", tensors)?;
        let bins = env.leaf_bins();
        let leaf_out = 2 * bins + usize::from(critic.is_none());
        if leaf.input_dim() != env.leaf_obs_dim() || leaf.output_dim() != leaf_out {
            return Err(Error::Checkpoint("leaf network does not match the stored config".into()));
        }
        if mu.input_dim() != env.mu_obs_dim() || mu.output_dim() != 1 {
            return Err(Error::Checkpoint("MU network does not match the stored config".into()));
        }
        if let Some(c) = &critic {
            if c.input_dim() != env.leaf_obs_dim() || c.output_dim() != 1 {
                return Err(Error::Checkpoint("critic does not match the stored config".into()));
            }
        }
        let params = PolicyParams {
            leaf,
            mu,
            mu_log_std: scalar("mu.log_std")?,
            critic,
            bins,
        };
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(Self { params, env })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(&checkpoint::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_env() -> EnvConfig {
        EnvConfig {
            y_norm: 8,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn init_shapes() {
        let env = small_env();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = PolicyParams::init(&env, false, &mut rng);
        assert_eq!(p.leaf.input_dim(), env.leaf_obs_dim());
        assert_eq!(p.leaf.output_dim(), 18);
        assert_eq!(p.mu.layers[2].bias[0], 1.5);
        assert!(p.critic.is_some());
        let shared = PolicyParams::init(&env, true, &mut rng);
        assert_eq!(shared.leaf.output_dim(), 19);
        assert!(shared.shared_backbone());
        // policy head rows are scaled down to near-uniform logits
        let head = &p.leaf.layers[2].weight;
        assert!(head.iter().all(|w| w.abs() <= POLICY_GAIN + 1e-12));
    }

    #[test]
    fn checkpoint_round_trip() {
        let env = small_env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for shared in [false, true] {
            let ck = Checkpoint {
                params: PolicyParams::init(&env, shared, &mut rng),
                env: env.clone(),
            };
            let back = Checkpoint::from_tensors(&ck.to_tensors()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn checkpoint_rejects_mismatched_shapes() {
        let env = small_env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ck = Checkpoint {
            params: PolicyParams::init(&env, false, &mut rng),
            env: env.clone(),
        };
        let mut tensors = ck.to_tensors();
        tensors.iter_mut().find(|t| t.name == "cfg.y_norm").unwrap().data[0] = 16.0;
        assert!(Checkpoint::from_tensors(&tensors).is_err());
    }
}
