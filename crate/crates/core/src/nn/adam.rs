//! Bias-corrected Adam over a network's flat parameter layout.

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// First/second moment tables and step counter for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; net.param_count()],
            v: vec![0.0; net.param_count()],
            t: 0,
        }
    }

    pub fn from_parts(config: AdamConfig, m: Vec<f64>, v: Vec<f64>, t: u64) -> Result<Self> {
        check_len("adam moments", m.len(), v.len())?;
        if v.iter().any(|&x| x < 0.0 || !x.is_finite()) || m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("invalid adam moment table".into()));
        }
        Ok(Self { config, m, v, t })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one descent step. Non-finite gradients leave both the network
    /// and the optimizer state untouched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        check_len("adam step gradients", net.param_count(), grads.0.len())?;
        check_len("adam step state", net.param_count(), self.m.len())?;
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient passed to adam".into()));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, &g), m), v) in net
            .params_mut()
            .iter_mut()
            .zip(&grads.0)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        if !net.is_finite() {
            return Err(Error::Numeric("adam step produced non-finite parameters".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng::stream;
    use rand::Rng as _;

    fn scalar_net(p: f64) -> Mlp {
        Mlp::from_params(&[1, 1], Activation::Relu, Activation::Identity, vec![p, 0.0]).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.5);
        let mut adam = AdamState::new(&net, AdamConfig::with_learning_rate(1e-3));
        adam.step(&mut net, &Gradients(vec![1.0, 0.0])).unwrap();
        assert!((net.params()[0] - (0.5 - 1e-3)).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut net = scalar_net(0.25);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut net, &Gradients(vec![0.0, 0.0])).unwrap();
        }
        assert_eq!(net.params(), &[0.25, 0.0]);
    }

    #[test]
    fn nan_gradient_leaves_everything_unchanged() {
        let mut net = scalar_net(0.25);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &Gradients(vec![0.3, 0.1])).unwrap();
        let (before_net, before_state) = (net.clone(), adam.clone());
        let err = adam.step(&mut net, &Gradients(vec![f64::NAN, 0.0]));
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(net, before_net);
        assert_eq!(adam, before_state);
    }

    // Textbook Adam written out per scalar, used as an independent reference.
    fn reference_adam(theta: &mut [f64], grads: &[Vec<f64>], cfg: AdamConfig) {
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        for (step, g) in grads.iter().enumerate() {
            let t = (step + 1) as f64;
            for i in 0..theta.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / (1.0 - cfg.beta1.powf(t));
                let vh = v[i] / (1.0 - cfg.beta2.powf(t));
                theta[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }

    #[test]
    fn matches_reference_over_random_steps() {
        let mut rng = stream(42, 0);
        let mut net =
            Mlp::init(&[3, 4, 2], Activation::Relu, Activation::Identity, 1.0, &mut rng).unwrap();
        let mut theta = net.params().to_vec();
        let grads: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..net.param_count()).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let cfg = AdamConfig::with_learning_rate(3e-3);
        let mut adam = AdamState::new(&net, cfg);
        for g in &grads {
            adam.step(&mut net, &Gradients(g.clone())).unwrap();
        }
        reference_adam(&mut theta, &grads, cfg);
        let max_diff = theta
            .iter()
            .zip(net.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff}");
        assert!(adam.second_moment().iter().all(|&v| v >= 0.0));
    }
}
