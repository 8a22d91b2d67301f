//! Two-level multi-agent PPO: a leaf policy shared by every leaf pair and one
//! MU policy per control point, trained through their joint probability ratio.

pub mod config;
pub mod loss;
pub mod policy;
pub mod rollout;
pub mod sequence;
pub mod train;

pub use config::{TrainConfig, ValueTarget};
pub use loss::{clipped_surrogate, clipped_value_loss, evaluate_batch, normalize_advantages, probability_ratio, BatchEval};
pub use policy::{Checkpoint, PolicyGrad, PolicyParams};
pub use rollout::{collect_rollouts, compute_gae, run_episode, ActionMode, RolloutBuffer, Transition};
pub use sequence::{random_sequence, sequence, sequence_with_alpha};
pub use train::{probe_mnse, train, train_from, write_metrics_csv, IterationMetrics, TrainReport, METRICS_HEADER};
