use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

/// An explicit finite MDP with Gaussian reward noise.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// `P[s][a][s']`, flattened.
    transitions: Vec<f64>,
    /// Mean reward `R[s][a]`, flattened.
    rewards: Vec<f64>,
    noise_std: Vec<f64>,
    gamma: f64,
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        noise_std: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("an MDP needs at least one state and one action".into()));
        }
        let cells = n_states * n_actions;
        if transitions.len() != cells * n_states || rewards.len() != cells || noise_std.len() != cells {
            return Err(Error::Config(format!(
                "MDP tables have lengths {}, {}, {}; expected {}, {cells}, {cells}",
                transitions.len(),
                rewards.len(),
                noise_std.len(),
                cells * n_states
            )));
        }
        if !(gamma.is_finite() && (0.0..1.0).contains(&gamma)) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if rewards.iter().any(|r| !r.is_finite()) || noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("rewards must be finite and noise std >= 0".into()));
        }
        for (cell, row) in transitions.chunks_exact(n_states).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "transition row for state {} action {} is not a distribution (sum {sum})",
                    cell / n_actions,
                    cell % n_actions
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            noise_std,
            gamma,
        })
    }

    /// Random MDP: mean rewards uniform in `[0, 1]`, transition rows from
    /// normalized uniform weights, constant reward noise.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, reward_noise: f64, rng: &mut Rng) -> Result<Self> {
        let cells = n_states * n_actions;
        let mut transitions = Vec::with_capacity(cells * n_states);
        for _ in 0..cells {
            let w: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            transitions.extend(w.iter().map(|x| x / total));
        }
        let rewards = (0..cells).map(|_| rng.random::<f64>()).collect();
        Self::new(n_states, n_actions, transitions, rewards, vec![reward_noise; cells], gamma)
    }

    /// Random MDP addressed by seed, as used from the command line.
    pub fn from_seed(seed: u64) -> Result<Self> {
        Self::random(6, 3, 0.9, 0.0, &mut stream(seed, crate::rng::streams::TABULAR))
    }

    /// Benchmark for overestimation: 6 states, 3 actions, every mean reward 0
    /// with unit Gaussian noise, fixed random transitions, `gamma = 0.9`.
    /// Its optimal value is identically zero, so any nonzero estimate is bias.
    pub fn noisy_benchmark() -> Self {
        let mut rng = stream(0x5eed, crate::rng::streams::TABULAR);
        let base = Self::random(6, 3, 0.9, 1.0, &mut rng).expect("valid benchmark");
        Self {
            rewards: vec![0.0; 18],
            ..base
        }
    }

    /// Deterministic chain: action 0 moves right (staying at the end), any
    /// other action returns to state 0. Reward 1 for each step that lands on
    /// the last state.
    pub fn chain(n_states: usize, n_actions: usize, gamma: f64) -> Result<Self> {
        let mut transitions = vec![0.0; n_states * n_actions * n_states];
        let mut rewards = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            for a in 0..n_actions {
                let next = if a == 0 { (s + 1).min(n_states - 1) } else { 0 };
                transitions[(s * n_actions + a) * n_states + next] = 1.0;
                if next == n_states - 1 {
                    rewards[s * n_actions + a] = 1.0;
                }
            }
        }
        Self::new(n_states, n_actions, transitions, rewards, vec![0.0; n_states * n_actions], gamma)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && (0.0..1.0).contains(&gamma)) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_reward_noise(mut self, std: f64) -> Self {
        self.noise_std = vec![std; self.n_states * self.n_actions];
        self
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn noise_std(&self, s: usize, a: usize) -> f64 {
        self.noise_std[s * self.n_actions + a]
    }

    /// Whether every reward noise std is zero.
    pub fn is_deterministic_reward(&self) -> bool {
        self.noise_std.iter().all(|&s| s == 0.0)
    }

    /// Samples `(reward, next_state)` for taking `a` in `s`.
    pub fn sample(&self, s: usize, a: usize, rng: &mut Rng) -> (f64, usize) {
        let u: f64 = rng.random();
        let row = self.transition_row(s, a);
        let mut acc = 0.0;
        let mut next = self.n_states - 1;
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = i;
                break;
            }
        }
        let std = self.noise_std(s, a);
        let noise = if std > 0.0 {
            std * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        (self.reward(s, a) + noise, next)
    }

    /// Plain-text form: `n_states n_actions gamma`, then the transition
    /// tensor, mean rewards and noise stds, each row-major. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let mut next = |what: &str| -> Result<&str> {
            tokens
                .next()
                .ok_or_else(|| Error::Parse(format!("MDP file ended while reading {what}")))
        };
        let int = |t: &str| t.parse::<usize>().map_err(|e| Error::Parse(format!("bad integer '{t}': {e}")));
        let float = |t: &str| t.parse::<f64>().map_err(|e| Error::Parse(format!("bad number '{t}': {e}")));
        let n_states = int(next("n_states")?)?;
        let n_actions = int(next("n_actions")?)?;
        let gamma = float(next("gamma")?)?;
        let cells = n_states * n_actions;
        let mut read = |n: usize, what: &str| -> Result<Vec<f64>> { (0..n).map(|_| float(next(what)?)).collect() };
        let transitions = read(cells * n_states, "transitions")?;
        let rewards = read(cells, "rewards")?;
        let noise = read(cells, "noise")?;
        if tokens.next().is_some() {
            return Err(Error::Parse("trailing tokens after MDP tables".into()));
        }
        Self::new(n_states, n_actions, transitions, rewards, noise, gamma)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let row = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut out = format!(
            "# n_states n_actions gamma\n{} {} {:?}\n# transitions P[s][a][s']\n",
            self.n_states, self.n_actions, self.gamma
        );
        for r in self.transitions.chunks_exact(self.n_states) {
            out += &row(r);
            out.push('\n');
        }
        out += "# mean rewards R[s][a]\n";
        for r in self.rewards.chunks_exact(self.n_actions) {
            out += &row(r);
            out.push('\n');
        }
        out += "# reward noise std\n";
        for r in self.noise_std.chunks_exact(self.n_actions) {
            out += &row(r);
            out.push('\n');
        }
        out
    }
}
