//! Dense networks with hand-written reverse mode, action distributions,
//! AdamW, and the checkpoint format.

pub mod checkpoint;
pub mod dense;
pub mod dist;
pub mod optim;

pub use dense::{Activation, DenseNet, Layer, NetGrad, Tape};
pub use dist::{categorical_logprob_entropy, gaussian_logprob_entropy, CategoricalEval, GaussianEval};
pub use optim::{clip_grad_norm, AdamW, CosineSchedule};
