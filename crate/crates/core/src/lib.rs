//! Reinforced leaf sequencing: converts 2D fluence maps into multileaf
//! collimator leaf positions and monitor units with a two-level PPO policy.

pub mod baseline;
pub mod config;
pub mod env;
pub mod error;
pub mod fluence;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod normalize;
pub mod ppo;
pub mod refine;
pub mod rewards;

pub use error::{Error, Result};
pub use fluence::{FluenceGrid, LeafPair, MachineState, PlanSequence};
