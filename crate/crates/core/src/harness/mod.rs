//! Experiment configuration, the seeded training loop, the ablation matrix,
//! aggregation across seeds and plot emission.

mod aggregate;
mod plot;
mod pool;
mod run;

pub use aggregate::{aggregate, aggregate_dir, read_curve_csv, summary_csv, Curve, GroupSummary, Summary};
pub use plot::{render_svg, smooth};
pub use pool::run_pool;
pub use run::{
    ablation_metric, curve_csv, run_ablation_matrix, run_all, run_dir, run_experiment, train, AblationRow,
    CurvePoint, RunOutcome, CURVE_CSV_HEADER,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentConfig, Variant};
use crate::envs::{make_env, Env};
use crate::error::{Error, Result};

/// Scale preset that fills every key the config file leaves out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Published protocol: 400/300 networks, 10^6 steps, 10 seeds.
    Paper,
    /// Minutes on one core: 64/64 networks, 3 * 10^4 steps, 5 seeds.
    Desk,
}

/// Variant row plus optional per-flag overrides applied after expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantSpec {
    pub name: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clipped_double_q: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_smoothing: Option<bool>,
    /// `true` uses `agent.policy_delay`, `false` forces 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delayed: Option<bool>,
}

impl Default for VariantSpec {
    fn default() -> Self {
        Self {
            name: Variant::Td3,
            clipped_double_q: None,
            target_smoothing: None,
            delayed: None,
        }
    }
}

impl VariantSpec {
    pub fn named(name: Variant) -> Self {
        Self {
            name,
            ..Self::default()
        }
    }

    pub fn expand(&self, base: &AgentConfig) -> AgentConfig {
        let mut cfg = self.name.apply(base);
        if let Some(c) = self.clipped_double_q {
            cfg.clipped_double_q = c;
        }
        if let Some(t) = self.target_smoothing {
            cfg.target_smoothing = t;
        }
        if let Some(d) = self.delayed {
            cfg.policy_delay = if d { base.policy_delay } else { 1 };
        }
        cfg
    }
}

/// Value-bias measurement during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSettings {
    pub enabled: bool,
    /// When false only the critic estimate is recorded (no rollouts).
    pub monte_carlo: bool,
    /// States sampled uniformly from replay.
    pub n_states: usize,
    pub episodes: usize,
    /// Rollout length for true values; chosen from `tolerance` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Largest acceptable truncation bound `gamma^H R_max / (1 - gamma)`.
    pub tolerance: f64,
    /// Measure only at evaluations with `step >= after_fraction * total_steps`.
    pub after_fraction: f64,
}

impl Default for BiasSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            monte_carlo: true,
            n_states: 1000,
            episodes: 100,
            horizon: None,
            tolerance: 1.0,
            after_fraction: 0.0,
        }
    }
}

/// Longest rollout the automatic horizon will pick.
pub const MAX_AUTO_HORIZON: usize = 5000;

impl BiasSettings {
    pub fn horizon_for(&self, gamma: f64, reward_bound: f64) -> usize {
        self.horizon.unwrap_or_else(|| {
            crate::diagnostics::horizon_for_tolerance(gamma, reward_bound, self.tolerance, MAX_AUTO_HORIZON)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub profile: Profile,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Defaults to `total_steps`, i.e. the entire history.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_capacity: Option<usize>,
    /// Concurrent runs; 0 means one per available core.
    pub workers: usize,
    pub variant: VariantSpec,
    pub agent: AgentConfig,
    pub bias: BiasSettings,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self {
                env: "pendulum".into(),
                profile,
                total_steps: 1_000_000,
                eval_every: 5000,
                eval_episodes: 10,
                seeds: (0..10).collect(),
                out_dir: PathBuf::from("runs"),
                replay_capacity: None,
                workers: 0,
                variant: VariantSpec::default(),
                agent: AgentConfig::default(),
                bias: BiasSettings::default(),
            },
            Profile::Desk => Self {
                total_steps: 30_000,
                eval_every: 1000,
                seeds: (0..5).collect(),
                agent: AgentConfig {
                    hidden: vec![64, 64],
                    start_steps: 1000,
                    ..AgentConfig::default()
                },
                profile,
                ..Self::profile(Profile::Paper)
            },
        }
    }

    /// Parses a TOML document and lays it over the defaults of the profile
    /// it names (`desk` when absent). Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::Parse(format!("config: {e}")))?;
        let profile = match user.get("profile") {
            None => Profile::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::Config(format!("profile: {e}")))?,
        };
        let mut table = toml::Table::try_from(Self::profile(profile))
            .map_err(|e| Error::Config(format!("profile defaults: {e}")))?;
        merge(&mut table, user);
        let cfg: Self = table.try_into().map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        make_env(&self.env)?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.eval_every == 0 || (self.total_steps > 0 && self.eval_every > self.total_steps) {
            return Err(Error::Config(format!(
                "eval_every must lie in [1, total_steps], got {} with total_steps {}",
                self.eval_every, self.total_steps
            )));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        if self.replay_capacity == Some(0) {
            return Err(Error::Config("replay_capacity must be >= 1".into()));
        }
        let b = &self.bias;
        if b.n_states == 0 || b.episodes == 0 || !(b.tolerance > 0.0) || !(0.0..=1.0).contains(&b.after_fraction) {
            return Err(Error::Config(format!("invalid bias settings {b:?}")));
        }
        let env = make_env(&self.env)?;
        self.agent_config(env.as_ref()).map(|_| ())
    }

    /// The agent configuration actually trained: variant expanded, action
    /// bounds taken from the environment when not given, validated.
    pub fn agent_config(&self, env: &dyn Env) -> Result<AgentConfig> {
        let mut cfg = self.variant.expand(&self.agent);
        let spec = env.spec();
        if cfg.action_low.is_empty() && cfg.action_high.is_empty() {
            cfg.action_low = spec.action_low.clone();
            cfg.action_high = spec.action_high.clone();
        }
        if cfg.action_low.len() != spec.action_dim {
            return Err(Error::Config(format!(
                "{} has {} action dimensions, config bounds have {}",
                spec.id,
                spec.action_dim,
                cfg.action_low.len()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn replay_capacity(&self) -> usize {
        self.replay_capacity.unwrap_or(self.total_steps.max(1) as usize)
    }

    /// Short SHA-256 of everything that shapes a single run's numbers;
    /// seeds, output location and worker count are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.out_dir = PathBuf::new();
        c.workers = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn worker_count(&self) -> usize {
        match self.workers {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }
}

/// Recursive overlay of `top` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
