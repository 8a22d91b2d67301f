//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::ppo::{TrainConfig, ValueTarget};
use crate::refine::RidgeConfig;
use crate::rewards::{ApertureScope, RewardVariant};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub ridge_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            env: EnvConfig::default(),
            ridge_alpha: RidgeConfig::default().alpha,
        }
    }
}

pub const KEYS: &[&str] = &[
    "clip",
    "ent_coef",
    "vf_coef",
    "gamma",
    "gae_lambda",
    "update_epochs",
    "minibatches",
    "episodes_per_iter",
    "iterations",
    "max_grad_norm",
    "lr",
    "weight_decay",
    "reward_scale",
    "shared_backbone",
    "value_target",
    "seed",
    "control_points",
    "max_step",
    "mu_min",
    "mu_max",
    "y_norm",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "lambda5",
    "reward_variant",
    "aperture_scope",
    "ridge_alpha",
];

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(line, format!("invalid value `{raw}` for `{key}`")))
}

impl RunConfig {
    /// Applies one assignment. `line` is only used for error messages.
    pub fn set(&mut self, key: &str, raw: &str, line: usize) -> Result<()> {
        let t = &mut self.train;
        let e = &mut self.env;
        let w = &mut e.rewards.weights.0;
        match key {
            "clip" => t.clip = value(line, key, raw)?,
            "ent_coef" => t.ent_coef = value(line, key, raw)?,
            "vf_coef" => t.vf_coef = value(line, key, raw)?,
            "gamma" => t.gamma = value(line, key, raw)?,
            "gae_lambda" => t.gae_lambda = value(line, key, raw)?,
            "update_epochs" => t.update_epochs = value(line, key, raw)?,
            "minibatches" => t.minibatches = value(line, key, raw)?,
            "episodes_per_iter" => t.episodes_per_iter = value(line, key, raw)?,
            "iterations" => t.iterations = value(line, key, raw)?,
            "max_grad_norm" => t.max_grad_norm = value(line, key, raw)?,
            "lr" => t.lr = value(line, key, raw)?,
            "weight_decay" => t.weight_decay = value(line, key, raw)?,
            "reward_scale" => t.reward_scale = value(line, key, raw)?,
            "shared_backbone" => t.shared_backbone = value(line, key, raw)?,
            "value_target" => {
                t.value_target = match raw {
                    "gae" => ValueTarget::GaeReturn,
                    "td0" => ValueTarget::Td0,
                    _ => return Err(Error::parse(line, format!("value_target must be gae or td0, got `{raw}`"))),
                }
            }
            "seed" => t.seed = value(line, key, raw)?,
            "control_points" => e.control_points = value(line, key, raw)?,
            "max_step" => e.max_step = value(line, key, raw)?,
            "mu_min" => e.mu_range.0 = value(line, key, raw)?,
            "mu_max" => e.mu_range.1 = value(line, key, raw)?,
            "y_norm" => e.y_norm = value(line, key, raw)?,
            "lambda1" => w[0] = value(line, key, raw)?,
            "lambda2" => w[1] = value(line, key, raw)?,
            "lambda3" => w[2] = value(line, key, raw)?,
            "lambda4" => w[3] = value(line, key, raw)?,
            "lambda5" => w[4] = value(line, key, raw)?,
            "reward_variant" => {
                e.rewards.variant = match raw {
                    "pseudocode" => RewardVariant::Pseudocode,
                    "literal" => RewardVariant::Literal,
                    _ => return Err(Error::parse(line, format!("reward_variant must be pseudocode or literal, got `{raw}`"))),
                }
            }
            "aperture_scope" => {
                e.rewards.aperture = match raw {
                    "full" => ApertureScope::Full,
                    "per_pair" => ApertureScope::PerPair,
                    _ => return Err(Error::parse(line, format!("aperture_scope must be full or per_pair, got `{raw}`"))),
                }
            }
            "ridge_alpha" => self.ridge_alpha = value(line, key, raw)?,
            _ => return Err(Error::parse(line, format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, "expected `key = value`"))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(i + 1, format!("duplicate key `{key}`")));
            }
            cfg.set(key, val.trim(), i + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.env.validate()?;
        if !(self.ridge_alpha >= 0.0 && self.ridge_alpha.is_finite()) {
            return Err(Error::Config("ridge_alpha must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let e = &self.env;
        let w = e.rewards.weights.0;
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("writing to a String");
        put("clip", t.clip.to_string());
        put("ent_coef", t.ent_coef.to_string());
        put("vf_coef", t.vf_coef.to_string());
        put("gamma", t.gamma.to_string());
        put("gae_lambda", t.gae_lambda.to_string());
        put("update_epochs", t.update_epochs.to_string());
        put("minibatches", t.minibatches.to_string());
        put("episodes_per_iter", t.episodes_per_iter.to_string());
        put("iterations", t.iterations.to_string());
        put("max_grad_norm", t.max_grad_norm.to_string());
        put("lr", t.lr.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("reward_scale", t.reward_scale.to_string());
        put("shared_backbone", t.shared_backbone.to_string());
        put("value_target", match t.value_target {
            ValueTarget::GaeReturn => "gae",
            ValueTarget::Td0 => "td0",
        }
        .into());
        put("seed", t.seed.to_string());
        put("control_points", e.control_points.to_string());
        put("max_step", e.max_step.to_string());
        put("mu_min", e.mu_range.0.to_string());
        put("mu_max", e.mu_range.1.to_string());
        put("y_norm", e.y_norm.to_string());
        for (i, v) in w.iter().enumerate() {
            put(&format!("lambda{}", i + 1), v.to_string());
        }
        put("reward_variant", match e.rewards.variant {
            RewardVariant::Pseudocode => "pseudocode",
            RewardVariant::Literal => "literal",
        }
        .into());
        put("aperture_scope", match e.rewards.aperture {
            ApertureScope::Full => "full",
            ApertureScope::PerPair => "per_pair",
        }
        .into());
        put("ridge_alpha", self.ridge_alpha.to_string());
        out
    }
}
