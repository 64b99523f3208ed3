//! Desk-scale continuous-control environments and rollout utilities.
//!
//! Every environment is a pure function of `(state, action)`: the state
//! carries its own step counter and, for noisy rewards, a noise key, so a
//! replayed trajectory reproduces bit-for-bit.

mod noisy;
mod pendulum;
mod reacher;

pub use noisy::Noisy1d;
pub use pendulum::Pendulum;
pub use reacher::Reacher2d;

use std::fmt::Debug;

use crate::error::{check_len, Error, Result};
use crate::replay::EndKind;
use crate::rng::Rng;

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub id: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_horizon: usize,
    pub dt: f64,
    /// Largest possible `|reward|` for one step.
    pub reward_bound: f64,
}

impl EnvSpec {
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect()
    }
}

/// Full simulator state: physical variables plus bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub physical: Vec<f64>,
    pub step: usize,
    pub noise_key: u64,
}

/// Raw result of integrating one step, before horizon bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics {
    pub next: EnvState,
    pub reward: f64,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: EnvState,
    pub reward: f64,
    pub end: EndKind,
}

pub trait Env: Debug + Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Draws an initial state from the documented start distribution.
    fn reset(&self, rng: &mut Rng) -> EnvState;

    fn observe(&self, state: &EnvState) -> Vec<f64>;

    /// Rebuilds a simulator state (counter 0) from an observation.
    fn restore(&self, observation: &[f64], noise_key: u64) -> Result<EnvState>;

    /// Integrates one step with an in-bounds action, ignoring the horizon.
    fn dynamics(&self, state: &EnvState, action: &[f64]) -> Dynamics;

    /// One environment step. Actions are clipped into bounds; `Timeout` is
    /// reported when the horizon is reached without a failure.
    fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepResult> {
        let spec = self.spec();
        check_len("env action", spec.action_dim, action.len())?;
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::Contract("NaN action passed to env step".into()));
        }
        if state.step >= spec.max_horizon {
            return Err(Error::Contract(format!(
                "step called at counter {} past horizon {}",
                state.step, spec.max_horizon
            )));
        }
        let action = spec.clip_action(action);
        let d = self.dynamics(state, &action);
        let end = if d.failed {
            EndKind::Terminal
        } else if d.next.step >= spec.max_horizon {
            EndKind::Timeout
        } else {
            EndKind::None
        };
        Ok(StepResult {
            state: d.next,
            reward: d.reward,
            end,
        })
    }
}

pub const ENV_IDS: [&str; 3] = ["pendulum", "reacher2d", "noisy1d"];

/// Looks an environment up by its registry id.
pub fn make_env(id: &str) -> Result<Box<dyn Env>> {
    match id {
        "pendulum" => Ok(Box::new(Pendulum::default())),
        "reacher2d" => Ok(Box::new(Reacher2d::default())),
        "noisy1d" => Ok(Box::new(Noisy1d::default())),
        other => Err(Error::Config(format!(
            "unknown environment '{other}', expected one of {ENV_IDS:?}"
        ))),
    }
}

/// Sample mean and standard deviation (n - 1 denominator, 0 for one sample).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnStats {
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Undiscounted return of one episode from `state` until terminal or timeout.
pub fn episode_return<P>(env: &dyn Env, mut state: EnvState, policy: &mut P) -> Result<f64>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut total = 0.0;
    loop {
        let action = policy(&env.observe(&state))?;
        let out = env.step(&state, &action)?;
        total += out.reward;
        if out.end.ends_episode() {
            return Ok(total);
        }
        state = out.state;
    }
}

/// Runs `episodes` noise-free episodes of a deterministic policy.
pub fn rollout_eval<P>(env: &dyn Env, policy: &mut P, episodes: usize, rng: &mut Rng) -> Result<ReturnStats>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if episodes == 0 {
        return Err(Error::Precondition("rollout_eval needs at least one episode".into()));
    }
    let returns = (0..episodes)
        .map(|_| {
            let start = env.reset(rng);
            episode_return(env, start, policy)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&returns);
    Ok(ReturnStats {
        mean,
        std,
        episodes,
    })
}

/// Discounted return `sum gamma^i r_i` over at most `horizon` steps, stopping
/// early on failure.
pub fn discounted_return<P>(
    env: &dyn Env,
    mut state: EnvState,
    policy: &mut P,
    gamma: f64,
    horizon: usize,
) -> Result<f64>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let spec = env.spec();
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let action = spec.clip_action(&policy(&env.observe(&state))?);
        let d = env.dynamics(&state, &action);
        total += discount * d.reward;
        if d.failed {
            break;
        }
        discount *= gamma;
        state = d.next;
    }
    Ok(total)
}

/// Monte-Carlo estimate of the policy's discounted value from the given
/// start states, averaged over `episodes_per_state` rollouts each.
///
/// Rollouts run for `horizon` steps (stopping on failure). Each repeat from
/// the same start uses a fresh noise key, which matters only for
/// environments with stochastic rewards.
pub fn mc_true_value<P>(
    env: &dyn Env,
    policy: &mut P,
    start_states: &[EnvState],
    episodes_per_state: usize,
    gamma: f64,
    horizon: usize,
) -> Result<f64>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if start_states.is_empty() || episodes_per_state == 0 {
        return Err(Error::Precondition("mc_true_value needs start states and episodes".into()));
    }
    let mut total = 0.0;
    for start in start_states {
        for rep in 0..episodes_per_state {
            let mut s = start.clone();
            s.noise_key = crate::rng::mix64(start.noise_key ^ (rep as u64).wrapping_mul(0x9E37));
            total += discounted_return(env, s, policy, gamma, horizon)?;
        }
    }
    Ok(total / (start_states.len() * episodes_per_state) as f64)
}

/// Upper bound on the value mass dropped by truncating at `horizon`:
/// `gamma^H * R_max / (1 - gamma)`.
pub fn truncation_bound(gamma: f64, horizon: usize, reward_bound: f64) -> f64 {
    if gamma >= 1.0 {
        return f64::INFINITY;
    }
    gamma.powi(horizon as i32) * reward_bound / (1.0 - gamma)
}
