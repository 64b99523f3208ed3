//! Overestimation measurement, TD-residual accumulation and target-rate sweeps.

use crate::agents::{Agent, NetRole};
use crate::envs::{mc_true_value, truncation_bound, Env, EnvState};
use crate::error::{check_len, Error, Result};
use crate::harness::{self, ExperimentConfig};
use crate::nn::Mlp;
use crate::rng::mix64;

/// Critic estimate against a Monte-Carlo estimate of the true value.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasPoint {
    pub step: u64,
    /// Mean of `Q1(s, pi(s))` over the sampled states.
    pub estimate_mean: f64,
    pub true_mean: f64,
    /// `estimate_mean - true_mean`.
    pub gap: f64,
    pub n_states: usize,
    pub n_episodes: usize,
    pub seed: u64,
    /// `gamma^H * R_max / (1 - gamma)` for the rollout horizon used.
    pub truncation_bound: f64,
    /// Set when the truncation bound exceeds the reporting tolerance.
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasOptions {
    pub gamma: f64,
    /// Monte-Carlo rollouts, one per start state, cycling through the sample.
    pub episodes: usize,
    pub horizon: usize,
    pub truncation_tolerance: f64,
}

/// Shortest horizon whose truncation bound is at most `tolerance`, capped at `cap`.
pub fn horizon_for_tolerance(gamma: f64, reward_bound: f64, tolerance: f64, cap: usize) -> usize {
    (1..=cap)
        .find(|&h| truncation_bound(gamma, h, reward_bound) <= tolerance)
        .unwrap_or(cap)
}

/// Mean of `Q1(s, pi(s))` over `states`, evaluated as one batch.
pub fn value_estimate(agent: &Agent, states: &[Vec<f64>]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Precondition("value estimate needs at least one state".into()));
    }
    let flat: Vec<f64> = states.iter().flatten().copied().collect();
    check_len("value estimate states", states.len() * agent.state_dim(), flat.len())?;
    let actions = agent.act_batch(&flat, states.len())?;
    let q = agent.q_values(0, &flat, &actions, states.len())?;
    Ok(q.iter().sum::<f64>() / q.len() as f64)
}

/// Compares the agent's value estimate on `states` (observations, typically
/// sampled uniformly from replay) with discounted Monte-Carlo returns of its
/// deterministic policy from those states. Deterministic given the inputs.
pub fn estimate_value_bias(
    agent: &Agent,
    env: &dyn Env,
    states: &[Vec<f64>],
    options: &BiasOptions,
    step: u64,
    seed: u64,
) -> Result<BiasPoint> {
    if states.is_empty() || options.episodes == 0 {
        return Err(Error::Precondition("bias estimate needs states and at least one episode".into()));
    }
    let estimate_mean = value_estimate(agent, states)?;

    let starts = (0..options.episodes)
        .map(|i| env.restore(&states[i % states.len()], mix64(seed ^ mix64(step) ^ i as u64)))
        .collect::<Result<Vec<EnvState>>>()?;
    let mut policy = |obs: &[f64]| agent.act(obs);
    let true_mean = mc_true_value(env, &mut policy, &starts, 1, options.gamma, options.horizon)?;
    let bound = truncation_bound(options.gamma, options.horizon, env.spec().reward_bound);
    Ok(BiasPoint {
        step,
        estimate_mean,
        true_mean,
        gap: estimate_mean - true_mean,
        n_states: states.len(),
        n_episodes: options.episodes,
        seed,
        truncation_bound: bound,
        truncated: bound > options.truncation_tolerance,
    })
}

pub const BIAS_CSV_HEADER: &str = "step,estimate_mean,true_mean,gap,n_states,n_episodes,seed";

pub fn write_bias_csv<W: std::io::Write>(out: &mut W, points: &[BiasPoint]) -> Result<()> {
    writeln!(out, "# td3lab bias v1")?;
    writeln!(out, "{BIAS_CSV_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{},{},{}",
            p.step, p.estimate_mean, p.true_mean, p.gap, p.n_states, p.n_episodes, p.seed
        )?;
    }
    Ok(())
}

/// One trajectory for residual analysis: `states`/`actions` hold `T + 1`
/// pairs for `T` rewards. When `terminal`, the last pair contributes no
/// bootstrap value.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualTrace {
    pub gamma: f64,
    /// `delta_i = r_i + gamma Q(s_{i+1}, a_{i+1}) - Q(s_i, a_i)`.
    pub deltas: Vec<f64>,
    /// `partial_sums[k] = sum_{i <= k} gamma^i delta_i`.
    pub partial_sums: Vec<f64>,
    /// `Q(s_i, a_i)` for `i = 0..=T` (the last is zeroed when terminal).
    pub q_values: Vec<f64>,
    /// `sum_i gamma^i r_i`.
    pub discounted_return: f64,
    /// `gamma^T Q(s_T, a_T)`, zero on terminal trajectories.
    pub tail: f64,
}

impl ResidualTrace {
    /// `|Q(s_0, a_0) + sum gamma^i delta_i - (sum gamma^i r_i + tail)|`; zero
    /// up to rounding for any critic.
    pub fn identity_error(&self) -> f64 {
        let lhs = self.q_values[0] + self.partial_sums.last().copied().unwrap_or(0.0);
        (lhs - (self.discounted_return + self.tail)).abs()
    }
}

/// TD residuals of `critic` along a trajectory, evaluated in one batch.
pub fn td_residual_trace(critic: &Mlp, trajectory: &Trajectory, gamma: f64) -> Result<ResidualTrace> {
    let t = trajectory.rewards.len();
    if t == 0 {
        return Err(Error::Precondition("residual trace needs at least one step".into()));
    }
    check_len("trajectory states", t + 1, trajectory.states.len())?;
    check_len("trajectory actions", t + 1, trajectory.actions.len())?;
    let mut input = Vec::new();
    for (s, a) in trajectory.states.iter().zip(&trajectory.actions) {
        input.extend_from_slice(s);
        input.extend_from_slice(a);
    }
    let mut q = critic.forward_batch(&input, t + 1)?.0;
    if trajectory.terminal {
        q[t] = 0.0;
    }
    let mut deltas = Vec::with_capacity(t);
    let mut partial_sums = Vec::with_capacity(t);
    let (mut discount, mut acc, mut ret) = (1.0, 0.0, 0.0);
    for i in 0..t {
        let r = trajectory.rewards[i];
        let delta = r + gamma * q[i + 1] - q[i];
        acc += discount * delta;
        ret += discount * r;
        deltas.push(delta);
        partial_sums.push(acc);
        discount *= gamma;
    }
    Ok(ResidualTrace {
        gamma,
        deltas,
        partial_sums,
        discounted_return: ret,
        tail: discount * q[t],
        q_values: q,
    })
}

/// Value-estimate curve of one `(tau, seed)` training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TauCurve {
    pub tau: f64,
    pub seed: u64,
    /// `(step, mean Q1(s, pi(s)) over replay-sampled states)`.
    pub points: Vec<(u64, f64)>,
}

impl TauCurve {
    /// Sample variance of the estimate over the curve's second half.
    pub fn late_variance(&self) -> f64 {
        let late: Vec<f64> = self.points[self.points.len() / 2..].iter().map(|p| p.1).collect();
        crate::envs::mean_std(&late).1.powi(2)
    }
}

/// Trains one agent per `(tau, seed)` and records its value estimates at
/// every evaluation. With `fixed_policy` only the critics learn.
pub fn tau_sweep(base: &ExperimentConfig, taus: &[f64], fixed_policy: bool) -> Result<Vec<TauCurve>> {
    if taus.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Config(format!("every tau must lie in (0, 1], got {taus:?}")));
    }
    let mut jobs = Vec::new();
    for &tau in taus {
        for &seed in &base.seeds {
            let mut cfg = base.clone();
            cfg.agent.tau = tau;
            cfg.agent.train_actor = !fixed_policy;
            cfg.bias.enabled = true;
            cfg.bias.monte_carlo = false;
            jobs.push((tau, seed, cfg));
        }
    }
    let runs = harness::run_pool(&jobs, base.worker_count(), |(_, seed, cfg)| harness::train(cfg, *seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(jobs
        .iter()
        .zip(runs)
        .map(|((tau, seed, _), run)| TauCurve {
            tau: *tau,
            seed: *seed,
            points: run
                .points
                .iter()
                .filter_map(|p| p.estimate_mean.map(|e| (p.step, e)))
                .collect(),
        })
        .collect())
}

/// One-sample, one-sided t-test of `mean > 0`. Returns `(t, p)`.
pub fn t_test_positive(samples: &[f64]) -> Result<(f64, f64)> {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    if samples.len() < 2 {
        return Err(Error::Precondition("a t-test needs at least two samples".into()));
    }
    let (mean, std) = crate::envs::mean_std(samples);
    let n = samples.len() as f64;
    let t = mean / (std / n.sqrt());
    if t.is_infinite() {
        return Ok((t, if t > 0.0 { 0.0 } else { 1.0 }));
    }
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Numeric(format!("t distribution: {e}")))?;
    Ok((t, dist.sf(t)))
}

/// Critic 1 of a trained agent, for residual probes.
pub fn critic_of(agent: &Agent) -> Result<&Mlp> {
    agent.network(NetRole::Critic(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentConfig;
    use crate::envs::{Noisy1d, Pendulum};
    use crate::nn::Activation;
    use crate::rng::stream;
    use rand::Rng as _;

    fn agent(seed: u64) -> Agent {
        let cfg = AgentConfig {
            hidden: vec![8],
            ..AgentConfig::default().with_action_bounds(vec![-2.0], vec![2.0])
        };
        Agent::new(cfg, 3, seed).unwrap()
    }

    fn zero_critic(agent: &mut Agent) {
        let sizes = agent.network(NetRole::Critic(0)).unwrap().sizes().to_vec();
        agent
            .set_network(NetRole::Critic(0), Mlp::zeros(&sizes, Activation::Relu, Activation::Identity).unwrap())
            .unwrap();
    }

    #[test]
    fn zero_critic_gap_is_minus_true_value() {
        let mut a = agent(1);
        zero_critic(&mut a);
        let env = Pendulum::default();
        let mut rng = stream(2, 0);
        let states: Vec<Vec<f64>> = (0..20).map(|_| env.observe(&env.reset(&mut rng))).collect();
        let opts = BiasOptions {
            gamma: 0.99,
            episodes: 10,
            horizon: 300,
            truncation_tolerance: 1.0,
        };
        let p = estimate_value_bias(&a, &env, &states, &opts, 0, 0).unwrap();
        assert_eq!(p.estimate_mean, 0.0);
        assert_eq!(p.gap, -p.true_mean);
        assert!(p.true_mean < 0.0);
        assert!(p.truncated);
        assert_eq!(p, estimate_value_bias(&a, &env, &states, &opts, 0, 0).unwrap());
    }

    #[test]
    fn exact_critic_at_a_fixed_point_has_no_gap() {
        // Noiseless 1-d task, zero-output actor, start at x = 0: the state
        // never moves and every reward is 0, so the zero critic is exact.
        let env = Noisy1d::with_noise(0.0);
        let cfg = AgentConfig {
            hidden: vec![],
            gamma: 0.9,
            ..AgentConfig::default().with_action_bounds(vec![-1.0], vec![1.0])
        };
        let mut a = Agent::new(cfg, 1, 0).unwrap();
        let zero_actor = Mlp::zeros(&[1, 1], Activation::Relu, Activation::Tanh).unwrap();
        a.set_network(NetRole::Actor(0), zero_actor).unwrap();
        zero_critic(&mut a);
        let states = vec![vec![0.0]; 5];
        let opts = BiasOptions {
            gamma: 0.9,
            episodes: 5,
            horizon: 400,
            truncation_tolerance: 1e-6,
        };
        let p = estimate_value_bias(&a, &env, &states, &opts, 0, 0).unwrap();
        assert!(p.gap.abs() < 1e-6);
        assert!(!p.truncated);
    }

    #[test]
    fn horizon_for_tolerance_is_minimal() {
        let h = horizon_for_tolerance(0.99, 16.3, 1.0, 10_000);
        assert!(truncation_bound(0.99, h, 16.3) <= 1.0);
        assert!(truncation_bound(0.99, h - 1, 16.3) > 1.0);
    }

    fn random_trajectory(rng: &mut crate::rng::Rng, len: usize, terminal: bool) -> Trajectory {
        Trajectory {
            states: (0..=len).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            actions: (0..=len).map(|_| vec![rng.random_range(-2.0..2.0)]).collect(),
            rewards: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            terminal,
        }
    }

    #[test]
    fn telescoping_identity_holds() {
        let mut rng = stream(3, 0);
        for k in 0..20 {
            let a = agent(k);
            let traj = random_trajectory(&mut rng, 1 + k as usize * 5, k % 2 == 0);
            let trace = td_residual_trace(critic_of(&a).unwrap(), &traj, 0.99).unwrap();
            assert!(trace.identity_error() < 1e-10);
            if traj.terminal {
                assert_eq!(trace.tail, 0.0);
            }
        }
    }

    #[test]
    fn trace_matches_naive_loop() {
        let mut rng = stream(4, 0);
        let a = agent(9);
        let critic = critic_of(&a).unwrap();
        let traj = random_trajectory(&mut rng, 30, false);
        let trace = td_residual_trace(critic, &traj, 0.9).unwrap();
        let q = |i: usize| {
            let mut x = traj.states[i].clone();
            x.extend_from_slice(&traj.actions[i]);
            critic.predict(&x).unwrap()[0]
        };
        let mut acc = 0.0;
        for i in 0..30 {
            let delta = traj.rewards[i] + 0.9 * q(i + 1) - q(i);
            acc += 0.9_f64.powi(i as i32) * delta;
            assert!((trace.deltas[i] - delta).abs() < 1e-12);
            assert!((trace.partial_sums[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn bellman_consistent_critic_has_zero_residuals() {
        // Loop with constant reward r and a constant critic c = r / (1 - gamma).
        let (r, gamma) = (0.5, 0.75);
        let c = r / (1.0 - gamma);
        let critic = Mlp::from_params(&[2, 1], Activation::Relu, Activation::Identity, vec![0.0, 0.0, c]).unwrap();
        let traj = Trajectory {
            states: vec![vec![0.3]; 11],
            actions: vec![vec![0.1]; 11],
            rewards: vec![r; 10],
            terminal: false,
        };
        let trace = td_residual_trace(&critic, &traj, gamma).unwrap();
        assert!(trace.deltas.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn empty_trajectory_rejected() {
        let a = agent(0);
        let traj = Trajectory {
            states: vec![vec![0.0; 3]],
            actions: vec![vec![0.0]],
            rewards: vec![],
            terminal: true,
        };
        assert!(td_residual_trace(critic_of(&a).unwrap(), &traj, 0.9).is_err());
    }

    #[test]
    fn t_test_reference_values() {
        // t = 2 with 9 degrees of freedom: upper tail 0.0382764.
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, -1.0, -2.0, 0.0, 1.0, 0.0];
        let (mean, std) = crate::envs::mean_std(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x - mean + 2.0 * std / 10f64.sqrt()).collect();
        let (t, p) = t_test_positive(&shifted).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert!((p - 0.038_276_41).abs() < 1e-7, "{p}");
        assert_eq!(t_test_positive(&[1.0, 1.0]).unwrap().1, 0.0);
        assert!(t_test_positive(&[1.0]).is_err());
    }

    #[test]
    fn bias_csv_schema() {
        let p = BiasPoint {
            step: 5,
            estimate_mean: 1.5,
            true_mean: 1.0,
            gap: 0.5,
            n_states: 10,
            n_episodes: 2,
            seed: 3,
            truncation_bound: 0.0,
            truncated: false,
        };
        let mut out = Vec::new();
        write_bias_csv(&mut out, &[p]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), BIAS_CSV_HEADER);
        assert_eq!(text.lines().nth(2).unwrap(), "5,1.5,1.0,0.5,10,2,3");
    }
}
