//! Point-mass reacher in the plane.
//!
//! State and observation: `[px, py, vx, vy, gx, gy]`. The mass is pushed by a
//! force in `[-1, 1]^2` with linear drag, integrated by semi-implicit Euler.
//! The arena is the square `[-1, 1]^2`; leaving it is a terminal failure.
//! Reward is `1 - |p' - g| / (2 sqrt 2) - 0.05 |u|^2` with `p'` clamped to the
//! arena, so every step lies in `[0, 1]` and exiting forfeits future reward.
//! Start: `p ~ U[-0.5, 0.5]^2`, `v = 0`, `g ~ U[-0.7, 0.7]^2`.

use rand::Rng as _;

use super::{Dynamics, Env, EnvSpec, EnvState};
use crate::error::{check_len, Result};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct Reacher2d {
    spec: EnvSpec,
    pub force_gain: f64,
    pub drag: f64,
    pub arena: f64,
}

impl Default for Reacher2d {
    fn default() -> Self {
        Self {
            spec: EnvSpec {
                id: "reacher2d",
                state_dim: 6,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_horizon: 200,
                dt: 0.05,
                reward_bound: 1.0,
            },
            force_gain: 2.0,
            drag: 0.5,
            arena: 1.0,
        }
    }
}

impl Env for Reacher2d {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut Rng) -> EnvState {
        let mut physical = Vec::with_capacity(6);
        physical.push(rng.random_range(-0.5..=0.5));
        physical.push(rng.random_range(-0.5..=0.5));
        physical.extend([0.0, 0.0]);
        physical.push(rng.random_range(-0.7..=0.7));
        physical.push(rng.random_range(-0.7..=0.7));
        EnvState {
            physical,
            step: 0,
            noise_key: 0,
        }
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        state.physical.clone()
    }

    fn restore(&self, observation: &[f64], noise_key: u64) -> Result<EnvState> {
        check_len("reacher observation", 6, observation.len())?;
        Ok(EnvState {
            physical: observation.to_vec(),
            step: 0,
            noise_key,
        })
    }

    fn dynamics(&self, state: &EnvState, action: &[f64]) -> Dynamics {
        let p = &state.physical;
        let dt = self.spec.dt;
        let vx = p[2] + (self.force_gain * action[0] - self.drag * p[2]) * dt;
        let vy = p[3] + (self.force_gain * action[1] - self.drag * p[3]) * dt;
        let px = p[0] + vx * dt;
        let py = p[1] + vy * dt;
        let failed = px.abs() > self.arena || py.abs() > self.arena;
        let (cx, cy) = (px.clamp(-self.arena, self.arena), py.clamp(-self.arena, self.arena));
        let dist = ((cx - p[4]).powi(2) + (cy - p[5]).powi(2)).sqrt();
        let effort = action[0] * action[0] + action[1] * action[1];
        let reward = 1.0 - dist / (2.0 * 2f64.sqrt()) - 0.05 * effort;
        Dynamics {
            next: EnvState {
                physical: vec![px, py, vx, vy, p[4], p[5]],
                step: state.step + 1,
                noise_key: state.noise_key,
            },
            reward,
            failed,
        }
    }
}
