//! A laboratory for deterministic-policy-gradient actor-critic methods.
//!
//! * [`nn`]: dense networks with exact reverse-mode gradients and Adam.
//! * [`replay`]: uniform experience replay with terminal/timeout distinction.
//! * [`agents`]: TD3 and its ablation lattice (clipped double Q, delayed
//!   policy updates, target policy smoothing, DQ-AC, DDQN-AC, DDPG).
//! * [`envs`]: small deterministic-physics control tasks and rollouts.
//! * [`tabular`]: Q-learning, double Q-learning and clipped double
//!   Q-learning on explicit finite MDPs, with a value-iteration oracle.
//! * [`diagnostics`]: overestimation-bias measurement, TD-residual traces and
//!   target-rate sweeps.
//! * [`harness`]: configuration, seeded experiment runs, the ablation matrix
//!   and CSV aggregation.

pub mod agents;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod fsutil;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod tabular;

pub use error::{Error, Result};
