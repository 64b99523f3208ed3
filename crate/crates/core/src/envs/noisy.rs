//! One-dimensional positioning task with Gaussian reward noise.
//!
//! `x' = clip(x + 0.1 a, -1, 1)`, reward `-x'^2 + sigma * eps` where `eps` is a
//! standard normal truncated to `[-4, 4]`. The noise is a deterministic function
//! of the state's noise key and step counter, so `step` stays pure. Start:
//! `x ~ U[-1, 1]`, a fresh noise key per episode. Horizon 50.

use rand::Rng as _;

use super::{Dynamics, Env, EnvSpec, EnvState};
use crate::error::{check_len, Result};
use crate::rng::{mix64, Rng};

#[derive(Clone, Debug)]
pub struct Noisy1d {
    spec: EnvSpec,
    pub reward_noise: f64,
    pub speed: f64,
}

impl Default for Noisy1d {
    fn default() -> Self {
        Self::with_noise(1.0)
    }
}

impl Noisy1d {
    pub fn with_noise(reward_noise: f64) -> Self {
        Self {
            spec: EnvSpec {
                id: "noisy1d",
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_horizon: 50,
                dt: 1.0,
                reward_bound: 1.0 + 4.0 * reward_noise,
            },
            reward_noise,
            speed: 0.1,
        }
    }
}

/// Standard normal from two hashed uniforms (Box-Muller), truncated to +-4.
fn hashed_normal(key: u64, counter: u64) -> f64 {
    let a = mix64(key ^ mix64(counter));
    let b = mix64(a);
    let u1 = ((a >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = (b >> 11) as f64 / (1u64 << 53) as f64;
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    z.clamp(-4.0, 4.0)
}

impl Env for Noisy1d {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut Rng) -> EnvState {
        EnvState {
            physical: vec![rng.random_range(-1.0..=1.0)],
            step: 0,
            noise_key: rng.random(),
        }
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        state.physical.clone()
    }

    fn restore(&self, observation: &[f64], noise_key: u64) -> Result<EnvState> {
        check_len("noisy1d observation", 1, observation.len())?;
        Ok(EnvState {
            physical: observation.to_vec(),
            step: 0,
            noise_key,
        })
    }

    fn dynamics(&self, state: &EnvState, action: &[f64]) -> Dynamics {
        let x = (state.physical[0] + self.speed * action[0]).clamp(-1.0, 1.0);
        let noise = self.reward_noise * hashed_normal(state.noise_key, state.step as u64);
        Dynamics {
            next: EnvState {
                physical: vec![x],
                step: state.step + 1,
                noise_key: state.noise_key,
            },
            reward: -x * x + noise,
            failed: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn reward_noise_has_unit_scale() {
        let n = 20_000;
        let zs: Vec<f64> = (0..n).map(|k| hashed_normal(12345, k)).collect();
        let mean = zs.iter().sum::<f64>() / n as f64;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn noiseless_variant_is_deterministic_quadratic_cost() {
        let env = Noisy1d::with_noise(0.0);
        let s = env.reset(&mut stream(0, 0));
        let out = env.step(&s, &[1.0]).unwrap();
        let x = (s.physical[0] + 0.1).clamp(-1.0, 1.0);
        assert_eq!(out.reward, -x * x);
    }
}
