//! DDPG-family agents: TD3, its ablations, DQ-AC and DDQN-AC.
//!
//! Actions are produced as `center + half_range * tanh(..)`. Exploration and
//! smoothing noise standard deviations, and the smoothing clip, are expressed
//! in units of the action half-range, so on a `[-1, 1]` box they are used
//! verbatim.

mod agent;
mod snapshot;

pub use agent::{Agent, CriticLosses, NetRole, StepReport, Targets};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which family of target computation an agent uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Target actor and target critic(s); clipped double Q optional.
    Td3,
    /// Two actors, two critics, crossed targets from the current actors.
    DqAc,
    /// One critic; the target uses the current actor and the target critic.
    DdqnAc,
    /// Single critic at the target actor's action.
    DdpgBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Critic updates per actor/target update; 1 disables delaying.
    pub policy_delay: u64,
    pub explore_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub batch_size: usize,
    /// Uniform-random actions for this many environment steps before the policy acts.
    pub start_steps: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    /// Weight decay on critic weight matrices (biases excluded).
    pub critic_l2: f64,
    pub hidden: Vec<usize>,
    /// Initial weights are uniform in `±init_scale/sqrt(fan_in)`.
    pub init_scale: f64,
    /// Filled from the environment when left empty.
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub mode: Mode,
    pub clipped_double_q: bool,
    pub target_smoothing: bool,
    /// When false only the critics learn; the policy stays at its initialization.
    pub train_actor: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            explore_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            batch_size: 100,
            start_steps: 10_000,
            critic_lr: 1e-3,
            actor_lr: 1e-3,
            critic_l2: 0.0,
            hidden: vec![400, 300],
            init_scale: 1.0,
            action_low: Vec::new(),
            action_high: Vec::new(),
            mode: Mode::Td3,
            clipped_double_q: true,
            target_smoothing: true,
            train_actor: true,
        }
    }
}

fn positive_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {x}")))
    }
}

fn non_negative_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be >= 0 and finite, got {x}")))
    }
}

impl AgentConfig {
    pub fn with_action_bounds(mut self, low: Vec<f64>, high: Vec<f64>) -> Self {
        self.action_low = low;
        self.action_high = high;
        self
    }

    pub fn actor_count(&self) -> usize {
        if self.mode == Mode::DqAc {
            2
        } else {
            1
        }
    }

    pub fn critic_count(&self) -> usize {
        match self.mode {
            Mode::DqAc => 2,
            Mode::Td3 if self.clipped_double_q => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && (0.0..1.0).contains(&self.gamma)) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.policy_delay == 0 {
            return Err(Error::Config("policy_delay must be >= 1".into()));
        }
        non_negative_finite("explore_noise", self.explore_noise)?;
        non_negative_finite("target_noise", self.target_noise)?;
        positive_finite("noise_clip", self.noise_clip)?;
        positive_finite("critic_lr", self.critic_lr)?;
        positive_finite("actor_lr", self.actor_lr)?;
        non_negative_finite("critic_l2", self.critic_l2)?;
        positive_finite("init_scale", self.init_scale)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.action_low.is_empty() || self.action_low.len() != self.action_high.len() {
            return Err(Error::Config(format!(
                "action bounds must be non-empty and equally long, got {} and {}",
                self.action_low.len(),
                self.action_high.len()
            )));
        }
        for (lo, hi) in self.action_low.iter().zip(&self.action_high) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("invalid action bound pair [{lo}, {hi}]")));
            }
        }
        if self.clipped_double_q && self.mode != Mode::Td3 {
            return Err(Error::Config(format!(
                "clipped_double_q only applies to mode td3, not {:?}",
                self.mode
            )));
        }
        Ok(())
    }
}

/// The ablation lattice: every row of the comparison table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Td3,
    Ddpg,
    Ahe,
    AheDp,
    AheTps,
    AheCdq,
    Td3NoDp,
    Td3NoTps,
    Td3NoCdq,
    DqAc,
    DdqnAc,
}

impl Variant {
    pub const ALL: [Variant; 11] = [
        Variant::Td3,
        Variant::Ddpg,
        Variant::Ahe,
        Variant::AheDp,
        Variant::AheTps,
        Variant::AheCdq,
        Variant::Td3NoDp,
        Variant::Td3NoTps,
        Variant::Td3NoCdq,
        Variant::DqAc,
        Variant::DdqnAc,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Td3 => "td3",
            Variant::Ddpg => "ddpg",
            Variant::Ahe => "ahe",
            Variant::AheDp => "ahe+dp",
            Variant::AheTps => "ahe+tps",
            Variant::AheCdq => "ahe+cdq",
            Variant::Td3NoDp => "td3-dp",
            Variant::Td3NoTps => "td3-tps",
            Variant::Td3NoCdq => "td3-cdq",
            Variant::DqAc => "dq-ac",
            Variant::DdqnAc => "ddqn-ac",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Td3 => "TD3",
            Variant::Ddpg => "DDPG",
            Variant::Ahe => "AHE",
            Variant::AheDp => "AHE + DP",
            Variant::AheTps => "AHE + TPS",
            Variant::AheCdq => "AHE + CDQ",
            Variant::Td3NoDp => "TD3 - DP",
            Variant::Td3NoTps => "TD3 - TPS",
            Variant::Td3NoCdq => "TD3 - CDQ",
            Variant::DqAc => "DQ-AC",
            Variant::DdqnAc => "DDQN-AC",
        }
    }

    /// Expands the variant over `base`. The delay used when delayed updates
    /// are on is `base.policy_delay`; everything else in `base` is kept
    /// except the fields the variant pins.
    pub fn apply(self, base: &AgentConfig) -> AgentConfig {
        let delay = base.policy_delay;
        let flags = |mode, cdq, dp: bool, tps| AgentConfig {
            mode,
            clipped_double_q: cdq,
            policy_delay: if dp { delay } else { 1 },
            target_smoothing: tps,
            ..base.clone()
        };
        match self {
            Variant::Td3 => flags(Mode::Td3, true, true, true),
            Variant::Ahe => flags(Mode::Td3, false, false, false),
            Variant::AheDp => flags(Mode::Td3, false, true, false),
            Variant::AheTps => flags(Mode::Td3, false, false, true),
            Variant::AheCdq => flags(Mode::Td3, true, false, false),
            Variant::Td3NoDp => flags(Mode::Td3, true, false, true),
            Variant::Td3NoTps => flags(Mode::Td3, true, true, false),
            Variant::Td3NoCdq => flags(Mode::Td3, false, true, true),
            Variant::DqAc => flags(Mode::DqAc, false, true, true),
            Variant::DdqnAc => flags(Mode::DdqnAc, false, true, true),
            Variant::Ddpg => AgentConfig {
                actor_lr: 1e-4,
                tau: 1e-3,
                batch_size: 64,
                critic_l2: 1e-2,
                ..flags(Mode::DdpgBaseline, false, false, false)
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(' ', "");
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == key)
            .ok_or_else(|| {
                let ids: Vec<_> = Variant::ALL.iter().map(|v| v.id()).collect();
                Error::Config(format!("unknown variant '{s}', expected one of {ids:?}"))
            })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
