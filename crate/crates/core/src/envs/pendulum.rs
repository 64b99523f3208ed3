//! Torque-limited pendulum swing-up.
//!
//! Angle convention: `theta = 0` is upright, `theta = pi` hangs straight down
//! (the stable equilibrium). Observation is `[cos theta, sin theta, theta_dot]`.
//! Semi-implicit Euler: velocity first, then angle with the new velocity.
//! Reward is `-(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2)` on the pre-step
//! state. Start distribution: `theta ~ U[-pi, pi]`, `theta_dot ~ U[-1, 1]`.

use std::f64::consts::PI;

use rand::Rng as _;

use super::{Dynamics, Env, EnvSpec, EnvState};
use crate::error::{check_len, Result};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    /// Angular speed clamp; `None` gives the frictionless, unclamped system.
    pub max_speed: Option<f64>,
    fixed_start: Option<Vec<f64>>,
}

impl Default for Pendulum {
    fn default() -> Self {
        let max_speed = 8.0;
        let max_torque = 2.0;
        Self {
            spec: EnvSpec {
                id: "pendulum",
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-max_torque],
                action_high: vec![max_torque],
                max_horizon: 200,
                dt: 0.05,
                reward_bound: PI * PI + 0.1 * max_speed * max_speed + 0.001 * max_torque * max_torque,
            },
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            damping: 0.0,
            max_speed: Some(max_speed),
            fixed_start: None,
        }
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    /// Frictionless pendulum without the speed clamp, for conservation checks.
    pub fn frictionless(dt: f64) -> Self {
        let mut p = Self {
            max_speed: None,
            ..Self::default()
        };
        p.spec.dt = dt;
        p.spec.reward_bound = f64::INFINITY;
        p
    }

    /// Every reset returns the given `[theta, theta_dot]`.
    pub fn with_fixed_start(mut self, physical: Vec<f64>) -> Self {
        self.fixed_start = Some(physical);
        self
    }

    /// Mechanical energy of a uniform rod pivoting at one end.
    pub fn energy(&self, state: &EnvState) -> f64 {
        let (theta, omega) = (state.physical[0], state.physical[1]);
        let inertia = self.mass * self.length * self.length / 3.0;
        0.5 * inertia * omega * omega + 0.5 * self.mass * self.gravity * self.length * theta.cos()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut Rng) -> EnvState {
        let physical = match &self.fixed_start {
            Some(p) => p.clone(),
            None => vec![rng.random_range(-PI..=PI), rng.random_range(-1.0..=1.0)],
        };
        EnvState {
            physical,
            step: 0,
            noise_key: 0,
        }
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        let (theta, omega) = (state.physical[0], state.physical[1]);
        vec![theta.cos(), theta.sin(), omega]
    }

    fn restore(&self, observation: &[f64], noise_key: u64) -> Result<EnvState> {
        check_len("pendulum observation", 3, observation.len())?;
        Ok(EnvState {
            physical: vec![observation[1].atan2(observation[0]), observation[2]],
            step: 0,
            noise_key,
        })
    }

    fn dynamics(&self, state: &EnvState, action: &[f64]) -> Dynamics {
        let (theta, omega) = (state.physical[0], state.physical[1]);
        let u = action[0];
        let dt = self.spec.dt;
        let cost = wrap_angle(theta).powi(2) + 0.1 * omega * omega + 0.001 * u * u;
        let alpha = 3.0 * self.gravity / (2.0 * self.length) * theta.sin()
            + 3.0 / (self.mass * self.length * self.length) * u
            - self.damping * omega;
        let mut new_omega = omega + alpha * dt;
        if let Some(limit) = self.max_speed {
            new_omega = new_omega.clamp(-limit, limit);
        }
        let new_theta = theta + new_omega * dt;
        Dynamics {
            next: EnvState {
                physical: vec![new_theta, new_omega],
                step: state.step + 1,
                noise_key: state.noise_key,
            },
            reward: -cost,
            failed: false,
        }
    }
}
