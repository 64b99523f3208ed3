use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{AgentConfig, Mode};
use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, Gradients, Mlp};
use crate::replay::{Batch, ReplayBuffer};
use crate::rng::{stream, streams, Rng};

/// A live network, its target copy and its optimizer.
#[derive(Clone, Debug)]
pub(crate) struct Learner {
    pub(crate) net: Mlp,
    pub(crate) target: Mlp,
    pub(crate) opt: AdamState,
}

impl Learner {
    fn new(net: Mlp, learning_rate: f64) -> Self {
        let opt = AdamState::new(&net, AdamConfig::with_learning_rate(learning_rate));
        Self {
            target: net.clone(),
            net,
            opt,
        }
    }
}

/// Addresses one network inside an agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetRole {
    Actor(usize),
    TargetActor(usize),
    Critic(usize),
    TargetCritic(usize),
}

/// Regression targets for critic 1 and critic 2. They coincide except in
/// mode `DqAc`, where each critic gets its own crossed target.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
}

/// Pre-update mean squared TD losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticLosses {
    pub critic1: f64,
    pub critic2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub losses: CriticLosses,
    /// True when the delayed branch (actor step and Polyak update) ran.
    pub delayed_update: bool,
    /// Mean `Q1(s, pi(s))` over the batch before the actor step.
    pub actor_objective: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub(crate) config: AgentConfig,
    pub(crate) state_dim: usize,
    pub(crate) action_dim: usize,
    center: Vec<f64>,
    half_range: Vec<f64>,
    pub(crate) actors: Vec<Learner>,
    pub(crate) critics: Vec<Learner>,
    pub(crate) critic_updates: u64,
    pub(crate) actor_updates: u64,
}

const INIT_STREAMS_ACTOR: [u64; 2] = [streams::ACTOR_INIT, streams::ACTOR2_INIT];
const INIT_STREAMS_CRITIC: [u64; 2] = [streams::CRITIC1_INIT, streams::CRITIC2_INIT];

impl Agent {
    /// Builds the networks for `config`; each network draws its initialization
    /// from its own stream of `seed`, so enabling a second critic does not
    /// change the first one.
    pub fn new(config: AgentConfig, state_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 {
            return Err(Error::Config("state_dim must be positive".into()));
        }
        let action_dim = config.action_low.len();
        let actor_sizes: Vec<usize> = std::iter::once(state_dim)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(action_dim))
            .collect();
        let critic_sizes: Vec<usize> = std::iter::once(state_dim + action_dim)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let actors = (0..config.actor_count())
            .map(|i| {
                let mut rng = stream(seed, INIT_STREAMS_ACTOR[i]);
                let net = Mlp::init(&actor_sizes, Activation::Relu, Activation::Tanh, config.init_scale, &mut rng)?;
                Ok(Learner::new(net, config.actor_lr))
            })
            .collect::<Result<Vec<_>>>()?;
        let critics = (0..config.critic_count())
            .map(|i| {
                let mut rng = stream(seed, INIT_STREAMS_CRITIC[i]);
                let net =
                    Mlp::init(&critic_sizes, Activation::Relu, Activation::Identity, config.init_scale, &mut rng)?;
                Ok(Learner::new(net, config.critic_lr))
            })
            .collect::<Result<Vec<_>>>()?;
        let center = config
            .action_low
            .iter()
            .zip(&config.action_high)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect();
        let half_range = config
            .action_low
            .iter()
            .zip(&config.action_high)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect();
        Ok(Self {
            config,
            state_dim,
            action_dim,
            center,
            half_range,
            actors,
            critics,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actor_count(&self) -> usize {
        self.actors.len()
    }

    pub fn critic_count(&self) -> usize {
        self.critics.len()
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    pub fn network(&self, role: NetRole) -> Result<&Mlp> {
        let missing = || Error::Config(format!("agent has no network {role:?}"));
        Ok(match role {
            NetRole::Actor(i) => &self.actors.get(i).ok_or_else(missing)?.net,
            NetRole::TargetActor(i) => &self.actors.get(i).ok_or_else(missing)?.target,
            NetRole::Critic(i) => &self.critics.get(i).ok_or_else(missing)?.net,
            NetRole::TargetCritic(i) => &self.critics.get(i).ok_or_else(missing)?.target,
        })
    }

    /// Replaces one network with another of identical shape and activations.
    pub fn set_network(&mut self, role: NetRole, net: Mlp) -> Result<()> {
        let current = self.network(role)?;
        if current.sizes() != net.sizes()
            || current.hidden_activation() != net.hidden_activation()
            || current.output_activation() != net.output_activation()
        {
            return Err(Error::Contract(format!("replacement for {role:?} has a different shape")));
        }
        let slot = match role {
            NetRole::Actor(i) => &mut self.actors[i].net,
            NetRole::TargetActor(i) => &mut self.actors[i].target,
            NetRole::Critic(i) => &mut self.critics[i].net,
            NetRole::TargetCritic(i) => &mut self.critics[i].target,
        };
        *slot = net;
        Ok(())
    }

    /// Digest of the behaviour actor's parameters.
    pub fn actor_fingerprint(&self) -> u64 {
        self.actors[0].net.fingerprint()
    }

    fn scale_actions(&self, raw: &mut [f64]) {
        for row in raw.chunks_exact_mut(self.action_dim) {
            for ((a, c), h) in row.iter_mut().zip(&self.center).zip(&self.half_range) {
                *a = c + h * *a;
            }
        }
    }

    fn clip_actions(&self, actions: &mut [f64]) {
        for row in actions.chunks_exact_mut(self.action_dim) {
            for ((a, lo), hi) in row.iter_mut().zip(&self.config.action_low).zip(&self.config.action_high) {
                *a = a.clamp(*lo, *hi);
            }
        }
    }

    fn policy_batch(&self, net: &Mlp, states: &[f64], n: usize) -> Result<Vec<f64>> {
        let (mut out, _) = net.forward_batch(states, n)?;
        self.scale_actions(&mut out);
        Ok(out)
    }

    /// Deterministic behaviour-policy action.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_len("agent state", self.state_dim, state.len())?;
        self.policy_batch(&self.actors[0].net, state, 1)
    }

    /// Deterministic actions for `n` row-major states.
    pub fn act_batch(&self, states: &[f64], n: usize) -> Result<Vec<f64>> {
        self.policy_batch(&self.actors[0].net, states, n)
    }

    /// Policy action plus, when `explore`, Gaussian noise; always clipped to bounds.
    pub fn select_action(&self, state: &[f64], explore: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        let mut a = self.act(state)?;
        if explore {
            for (x, h) in a.iter_mut().zip(&self.half_range) {
                let z: f64 = rng.sample(StandardNormal);
                *x += self.config.explore_noise * h * z;
            }
        }
        self.clip_actions(&mut a);
        Ok(a)
    }

    /// Uniform draw over the action box, used during warmup.
    pub fn random_action(&self, rng: &mut Rng) -> Vec<f64> {
        self.config
            .action_low
            .iter()
            .zip(&self.config.action_high)
            .map(|(&lo, &hi)| rng.random_range(lo..=hi))
            .collect()
    }

    /// One clipped smoothing perturbation, each coordinate in `±noise_clip * half_range`.
    pub fn smoothing_noise(&self, rng: &mut Rng) -> Vec<f64> {
        self.half_range.iter().map(|&h| self.clipped_noise(h, rng)).collect()
    }

    fn clipped_noise(&self, half_range: f64, rng: &mut Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let bound = self.config.noise_clip * half_range;
        (self.config.target_noise * half_range * z).clamp(-bound, bound)
    }

    /// Network whose action at `s'` enters the target for actor slot `i`.
    fn target_policy(&self, i: usize) -> &Mlp {
        match self.config.mode {
            Mode::Td3 | Mode::DdpgBaseline => &self.actors[i].target,
            Mode::DqAc | Mode::DdqnAc => &self.actors[i].net,
        }
    }

    fn smooth_in_place(&self, actions: &mut [f64], rng: &mut Rng) {
        if !self.config.target_smoothing {
            return;
        }
        for row in actions.chunks_exact_mut(self.action_dim) {
            for (a, &h) in row.iter_mut().zip(&self.half_range) {
                *a += self.clipped_noise(h, rng);
            }
        }
        self.clip_actions(actions);
    }

    /// Target-policy action at one next state, smoothed when the flag is on.
    pub fn smooth_target_action(&self, next_state: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        check_len("agent next state", self.state_dim, next_state.len())?;
        let mut a = self.policy_batch(self.target_policy(0), next_state, 1)?;
        self.smooth_in_place(&mut a, rng);
        Ok(a)
    }

    /// Next-state actions for each actor slot (one set, or two in `DqAc`).
    pub fn next_actions(&self, batch: &Batch, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        self.check_batch(batch)?;
        (0..self.actors.len())
            .map(|i| {
                let mut a = self.policy_batch(self.target_policy(i), &batch.next_states, batch.len)?;
                self.smooth_in_place(&mut a, rng);
                Ok(a)
            })
            .collect()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.len == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        check_len("batch state dim", self.state_dim, batch.state_dim)?;
        check_len("batch action dim", self.action_dim, batch.action_dim)
    }

    fn critic_inputs(&self, states: &[f64], actions: &[f64], n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * (self.state_dim + self.action_dim));
        for (s, a) in states.chunks_exact(self.state_dim).zip(actions.chunks_exact(self.action_dim)) {
            out.extend_from_slice(s);
            out.extend_from_slice(a);
        }
        out
    }

    /// `Q_i(s, a)` for a batch under the live critic `i`.
    pub fn q_values(&self, critic: usize, states: &[f64], actions: &[f64], n: usize) -> Result<Vec<f64>> {
        check_len("q states", n * self.state_dim, states.len())?;
        check_len("q actions", n * self.action_dim, actions.len())?;
        let net = &self.network(NetRole::Critic(critic))?;
        Ok(net.forward_batch(&self.critic_inputs(states, actions, n), n)?.0)
    }

    /// Single-critic bootstrap targets `r + gamma * Q'_i(s', a')`, or `r` on
    /// terminal transitions.
    pub fn critic_target_values(&self, critic: usize, batch: &Batch, next_actions: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        check_len("next actions", batch.len * self.action_dim, next_actions.len())?;
        let net = self.network(NetRole::TargetCritic(critic))?;
        let (q, _) = net.forward_batch(&self.critic_inputs(&batch.next_states, next_actions, batch.len), batch.len)?;
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.ends)
            .zip(&q)
            .map(|((&r, end), &q)| {
                if end.is_terminal() {
                    r
                } else {
                    r + self.config.gamma * q
                }
            })
            .collect())
    }

    /// Builds targets from precomputed next actions (see [`Agent::next_actions`]).
    pub fn targets_given_actions(&self, batch: &Batch, next_actions: &[Vec<f64>]) -> Result<Targets> {
        check_len("next action sets", self.actors.len(), next_actions.len())?;
        match self.config.mode {
            Mode::DqAc => Ok(Targets {
                y1: self.critic_target_values(1, batch, &next_actions[0])?,
                y2: self.critic_target_values(0, batch, &next_actions[1])?,
            }),
            Mode::Td3 | Mode::DdpgBaseline | Mode::DdqnAc => {
                let mut y = self.critic_target_values(0, batch, &next_actions[0])?;
                if self.critics.len() == 2 {
                    let y_other = self.critic_target_values(1, batch, &next_actions[0])?;
                    for (a, b) in y.iter_mut().zip(y_other) {
                        *a = a.min(b);
                    }
                }
                Ok(Targets { y2: y.clone(), y1: y })
            }
        }
    }

    pub fn compute_targets(&self, batch: &Batch, rng: &mut Rng) -> Result<Targets> {
        let next = self.next_actions(batch, rng)?;
        self.targets_given_actions(batch, &next)
    }

    /// Pre-update MSE of critic `i` against `y` and its parameter gradient,
    /// including the weight-decay term.
    pub fn critic_loss_gradient(&self, critic: usize, batch: &Batch, y: &[f64]) -> Result<(f64, Gradients)> {
        self.check_batch(batch)?;
        check_len("critic targets", batch.len, y.len())?;
        let net = self.network(NetRole::Critic(critic))?;
        let n = batch.len as f64;
        let (q, cache) = net.forward_batch(&self.critic_inputs(&batch.states, &batch.actions, batch.len), batch.len)?;
        let mut loss = 0.0;
        let dq: Vec<f64> = q
            .iter()
            .zip(y)
            .map(|(&q, &y)| {
                let e = q - y;
                loss += e * e;
                2.0 * e / n
            })
            .collect();
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("critic {} loss is not finite", critic + 1)));
        }
        let (mut grads, _) = net.backward(&cache, &dq)?;
        if self.config.critic_l2 > 0.0 {
            for range in net.weight_ranges() {
                for (g, w) in grads.0[range.clone()].iter_mut().zip(&net.params()[range]) {
                    *g += self.config.critic_l2 * w;
                }
            }
        }
        Ok((loss, grads))
    }

    /// One Adam step per critic on the shared batch. Targets are constants.
    pub fn update_critics(&mut self, batch: &Batch, targets: &Targets) -> Result<CriticLosses> {
        let mut losses = [0.0; 2];
        for i in 0..self.critics.len() {
            let y = if i == 0 { &targets.y1 } else { &targets.y2 };
            let (loss, grads) = self.critic_loss_gradient(i, batch, y)?;
            let learner = &mut self.critics[i];
            learner.opt.step(&mut learner.net, &grads)?;
            losses[i] = loss;
        }
        Ok(CriticLosses {
            critic1: losses[0],
            critic2: (self.critics.len() == 2).then_some(losses[1]),
        })
    }

    /// Critic that actor `i` ascends: critic 1, or its paired critic in `DqAc`.
    fn critic_for_actor(&self, i: usize) -> usize {
        if self.config.mode == Mode::DqAc {
            i
        } else {
            0
        }
    }

    /// Mean `Q(s, pi_i(s))` over `n` states and the gradient of its negation
    /// with respect to actor `i`'s parameters.
    pub fn actor_objective_gradient(&self, actor: usize, states: &[f64], n: usize) -> Result<(f64, Gradients)> {
        if n == 0 {
            return Err(Error::Precondition("actor update needs at least one state".into()));
        }
        check_len("actor states", n * self.state_dim, states.len())?;
        let policy = self.network(NetRole::Actor(actor))?;
        let critic = &self.critics[self.critic_for_actor(actor)].net;
        let (mut actions, actor_cache) = policy.forward_batch(states, n)?;
        self.scale_actions(&mut actions);
        let (q, critic_cache) = critic.forward_batch(&self.critic_inputs(states, &actions, n), n)?;
        let objective = q.iter().sum::<f64>() / n as f64;
        let din = critic.input_gradient(&critic_cache, &vec![-1.0 / n as f64; n])?;
        let width = self.state_dim + self.action_dim;
        let mut du = Vec::with_capacity(n * self.action_dim);
        for row in din.chunks_exact(width) {
            du.extend(row[self.state_dim..].iter().zip(&self.half_range).map(|(g, h)| g * h));
        }
        let (grads, _) = policy.backward(&actor_cache, &du)?;
        Ok((objective, grads))
    }

    /// One deterministic policy-gradient step for every actor; critics are
    /// untouched. Returns the pre-step objective of actor 1.
    pub fn update_actor_dpg(&mut self, states: &[f64], n: usize) -> Result<f64> {
        let mut first = 0.0;
        for i in 0..self.actors.len() {
            let (objective, grads) = self.actor_objective_gradient(i, states, n)?;
            let learner = &mut self.actors[i];
            learner.opt.step(&mut learner.net, &grads)?;
            if i == 0 {
                first = objective;
            }
        }
        self.actor_updates += 1;
        Ok(first)
    }

    /// `target <- tau * live + (1 - tau) * target` for every network pair.
    pub fn polyak_update(&mut self) -> Result<()> {
        let tau = self.config.tau;
        for l in self.actors.iter_mut().chain(self.critics.iter_mut()) {
            l.target.polyak_toward(&l.net, tau)?;
        }
        Ok(())
    }

    /// Samples a batch, updates the critics and, on every `policy_delay`-th
    /// critic update, the actor and all targets.
    pub fn train_step(&mut self, buffer: &ReplayBuffer, rng: &mut Rng) -> Result<StepReport> {
        if buffer.len() < self.config.batch_size {
            return Err(Error::Precondition(format!(
                "replay holds {} transitions, batch needs {}",
                buffer.len(),
                self.config.batch_size
            )));
        }
        let batch = buffer.sample(self.config.batch_size, rng)?;
        let targets = self.compute_targets(&batch, rng)?;
        let losses = self.update_critics(&batch, &targets)?;
        self.critic_updates += 1;
        let mut report = StepReport {
            losses,
            delayed_update: false,
            actor_objective: None,
        };
        if self.critic_updates.is_multiple_of(self.config.policy_delay) {
            if self.config.train_actor {
                report.actor_objective = Some(self.update_actor_dpg(&batch.states, batch.len)?);
            }
            self.polyak_update()?;
            report.delayed_update = true;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Variant;
    use crate::nn::relative_error;
    use crate::replay::{EndKind, Transition};

    fn config(hidden: Vec<usize>) -> AgentConfig {
        AgentConfig {
            hidden,
            batch_size: 8,
            ..AgentConfig::default().with_action_bounds(vec![-1.0, -2.0], vec![1.0, 2.0])
        }
    }

    fn random_batch(agent: &Agent, n: usize, rng: &mut Rng) -> Batch {
        let items: Vec<Transition> = (0..n)
            .map(|k| Transition {
                state: (0..agent.state_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: agent.random_action(rng),
                reward: rng.random_range(-1.0..1.0),
                next_state: (0..agent.state_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                end: [EndKind::None, EndKind::Terminal, EndKind::Timeout][k % 3],
            })
            .collect();
        Batch::from_transitions(agent.state_dim, agent.action_dim, &items).unwrap()
    }

    fn filled_buffer(agent: &Agent, n: usize, seed: u64) -> ReplayBuffer {
        let mut rng = stream(seed, 99);
        let mut buf = ReplayBuffer::new(n, agent.state_dim, agent.action_dim).unwrap();
        let batch = random_batch(agent, n, &mut rng);
        for i in 0..n {
            buf.push(Transition {
                state: batch.state(i).to_vec(),
                action: batch.action(i).to_vec(),
                reward: batch.rewards[i],
                next_state: batch.next_state(i).to_vec(),
                end: batch.ends[i],
            })
            .unwrap();
        }
        buf
    }

    #[test]
    fn targets_start_as_exact_copies_and_shapes_chain() {
        let agent = Agent::new(Variant::DqAc.apply(&config(vec![16, 16])), 3, 1).unwrap();
        assert_eq!((agent.actor_count(), agent.critic_count()), (2, 2));
        for i in 0..2 {
            assert_eq!(agent.network(NetRole::Actor(i)).unwrap(), agent.network(NetRole::TargetActor(i)).unwrap());
            assert_eq!(agent.network(NetRole::Critic(i)).unwrap(), agent.network(NetRole::TargetCritic(i)).unwrap());
        }
        assert_eq!(agent.network(NetRole::Critic(0)).unwrap().sizes(), &[5, 16, 16, 1]);
        assert_eq!(agent.network(NetRole::Actor(0)).unwrap().sizes(), &[3, 16, 16, 2]);
        assert_ne!(
            agent.network(NetRole::Critic(0)).unwrap(),
            agent.network(NetRole::Critic(1)).unwrap()
        );
    }

    #[test]
    fn second_critic_does_not_disturb_the_first() {
        let with = Agent::new(Variant::Td3.apply(&config(vec![8])), 3, 5).unwrap();
        let without = Agent::new(Variant::Ahe.apply(&config(vec![8])), 3, 5).unwrap();
        assert_eq!(with.network(NetRole::Critic(0)).unwrap(), without.network(NetRole::Critic(0)).unwrap());
        assert_eq!(with.network(NetRole::Actor(0)).unwrap(), without.network(NetRole::Actor(0)).unwrap());
    }

    #[test]
    fn greedy_action_is_repeatable_and_zero_noise_matches_it() {
        let cfg = AgentConfig {
            explore_noise: 0.0,
            ..config(vec![8])
        };
        let agent = Agent::new(cfg, 3, 2).unwrap();
        let s = [0.1, -0.4, 0.9];
        let mut rng = stream(0, 0);
        let greedy = agent.select_action(&s, false, &mut rng).unwrap();
        assert_eq!(greedy, agent.select_action(&s, false, &mut rng).unwrap());
        assert_eq!(greedy, agent.select_action(&s, true, &mut rng).unwrap());
    }

    #[test]
    fn explored_actions_stay_in_bounds() {
        let cfg = AgentConfig {
            explore_noise: 3.0,
            init_scale: 5.0,
            ..config(vec![8])
        };
        let agent = Agent::new(cfg, 3, 3).unwrap();
        let mut rng = stream(1, 0);
        for _ in 0..10_000 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let a = agent.select_action(&s, true, &mut rng).unwrap();
            assert!(a[0].abs() <= 1.0 && a[1].abs() <= 2.0, "{a:?}");
        }
    }

    #[test]
    fn zero_smoothing_noise_returns_target_action() {
        let cfg = AgentConfig {
            target_noise: 0.0,
            ..config(vec![8])
        };
        let agent = Agent::new(cfg, 3, 4).unwrap();
        let s = [0.3, 0.2, -0.1];
        let base = agent.policy_batch(&agent.actors[0].target, &s, 1).unwrap();
        assert_eq!(agent.smooth_target_action(&s, &mut stream(0, 0)).unwrap(), base);
    }

    #[test]
    fn smoothing_perturbation_respects_clip() {
        let agent = Agent::new(config(vec![8]), 3, 4).unwrap();
        let mut rng = stream(2, 0);
        for _ in 0..2000 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let base = agent.policy_batch(&agent.actors[0].target, &s, 1).unwrap();
            let a = agent.smooth_target_action(&s, &mut rng).unwrap();
            // Half-ranges are 1 and 2, so the clip is 0.5 and 1.0.
            assert!((a[0] - base[0]).abs() <= 0.5 && (a[1] - base[1]).abs() <= 1.0);
            assert!(a[0].abs() <= 1.0 && a[1].abs() <= 2.0);
        }
    }

    #[test]
    fn smoothing_noise_std_matches_clipped_normal_moment() {
        use statrs::distribution::{Continuous, ContinuousCDF, Normal};
        let agent = Agent::new(
            config(vec![4]).with_action_bounds(vec![-1.0], vec![1.0]),
            1,
            0,
        )
        .unwrap();
        let (sigma, c) = (0.2_f64, 0.5_f64);
        let k = c / sigma;
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        // Censored normal: mass beyond the clip collapses onto +-c.
        let inner = (2.0 * std_normal.cdf(k) - 1.0) - 2.0 * k * std_normal.pdf(k);
        let expected = (sigma * sigma * inner + 2.0 * c * c * (1.0 - std_normal.cdf(k))).sqrt();
        let mut rng = stream(11, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| agent.smoothing_noise(&mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = sigma / (2.0 * n as f64).sqrt();
        assert!((var.sqrt() - expected).abs() < 4.0 * se, "{} vs {expected}", var.sqrt());
    }

    #[test]
    fn terminal_target_is_the_reward() {
        let mut agent = Agent::new(config(vec![8]), 3, 6).unwrap();
        for i in 0..2 {
            let mut big = agent.network(NetRole::TargetCritic(i)).unwrap().clone();
            big.params_mut().iter_mut().for_each(|p| *p = 1e6);
            agent.set_network(NetRole::TargetCritic(i), big).unwrap();
        }
        let t = Transition {
            state: vec![0.0; 3],
            action: vec![0.0, 0.0],
            reward: 1.0,
            next_state: vec![0.5; 3],
            end: EndKind::Terminal,
        };
        let batch = Batch::from_transitions(3, 2, [&t]).unwrap();
        let y = agent.compute_targets(&batch, &mut stream(0, 0)).unwrap();
        assert_eq!(y.y1, vec![1.0]);
        let timeout = Transition {
            end: EndKind::Timeout,
            ..t
        };
        let batch = Batch::from_transitions(3, 2, [&timeout]).unwrap();
        assert!(agent.compute_targets(&batch, &mut stream(0, 0)).unwrap().y1[0] > 1e3);
    }

    #[test]
    fn identical_target_critics_make_clipping_a_no_op() {
        let mut agent = Agent::new(config(vec![8]), 3, 7).unwrap();
        let c1 = agent.network(NetRole::TargetCritic(0)).unwrap().clone();
        agent.set_network(NetRole::TargetCritic(1), c1).unwrap();
        let mut rng = stream(3, 0);
        let batch = random_batch(&agent, 20, &mut rng);
        let next = agent.next_actions(&batch, &mut rng).unwrap();
        let y = agent.targets_given_actions(&batch, &next).unwrap();
        assert_eq!(y.y1, agent.critic_target_values(0, &batch, &next[0]).unwrap());
    }

    fn critic(ws: f64, wa: f64, b: f64) -> Mlp {
        Mlp::from_params(&[2, 1], Activation::Relu, Activation::Identity, vec![ws, wa, b]).unwrap()
    }

    /// One-dimensional state and action, linear critics, tanh actor.
    fn hand_built(mode: Mode, cdq: bool) -> Agent {
        let cfg = AgentConfig {
            gamma: 0.5,
            hidden: vec![],
            mode,
            clipped_double_q: cdq,
            target_smoothing: false,
            ..AgentConfig::default().with_action_bounds(vec![-1.0], vec![1.0])
        };
        let mut agent = Agent::new(cfg, 1, 0).unwrap();
        let actor = |w| Mlp::from_params(&[1, 1], Activation::Relu, Activation::Tanh, vec![w, 0.1]).unwrap();
        for i in 0..agent.actor_count() {
            agent.set_network(NetRole::Actor(i), actor(0.7 + i as f64)).unwrap();
            agent.set_network(NetRole::TargetActor(i), actor(-0.4 + i as f64)).unwrap();
        }
        for i in 0..agent.critic_count() {
            let k = i as f64;
            agent.set_network(NetRole::Critic(i), critic(1.0, 2.0 - k, 0.0)).unwrap();
            agent.set_network(NetRole::TargetCritic(i), critic(0.5 + k, -1.5 + 3.0 * k, 0.25)).unwrap();
        }
        agent
    }

    fn one_step_batch(s2: f64, r: f64) -> Batch {
        let t = Transition {
            state: vec![0.2],
            action: vec![0.1],
            reward: r,
            next_state: vec![s2],
            end: EndKind::None,
        };
        Batch::from_transitions(1, 1, [&t]).unwrap()
    }

    #[test]
    fn hand_built_targets_match_direct_evaluation() {
        let (s2, r, gamma) = (0.8_f64, 0.3, 0.5);
        let q = |ws: f64, wa: f64, b: f64, a: f64| ws * s2 + wa * a + b;
        let batch = one_step_batch(s2, r);
        let mut rng = stream(0, 0);

        let td3 = hand_built(Mode::Td3, true);
        let a_t = (-0.4 * s2 + 0.1).tanh();
        let expected = r + gamma * q(0.5, -1.5, 0.25, a_t).min(q(1.5, 1.5, 0.25, a_t));
        let y = td3.compute_targets(&batch, &mut rng).unwrap();
        assert!((y.y1[0] - expected).abs() < 1e-12);

        let ddpg = hand_built(Mode::DdpgBaseline, false);
        let y = ddpg.compute_targets(&batch, &mut rng).unwrap();
        assert!((y.y1[0] - (r + gamma * q(0.5, -1.5, 0.25, a_t))).abs() < 1e-12);

        let ddqn = hand_built(Mode::DdqnAc, false);
        let a_live = (0.7 * s2 + 0.1).tanh();
        let y = ddqn.compute_targets(&batch, &mut rng).unwrap();
        assert!((y.y1[0] - (r + gamma * q(0.5, -1.5, 0.25, a_live))).abs() < 1e-12);

        let dq = hand_built(Mode::DqAc, false);
        let a1 = (0.7 * s2 + 0.1).tanh();
        let a2 = (1.7 * s2 + 0.1).tanh();
        let y = dq.compute_targets(&batch, &mut rng).unwrap();
        assert!((y.y1[0] - (r + gamma * q(1.5, 1.5, 0.25, a1))).abs() < 1e-12);
        assert!((y.y2[0] - (r + gamma * q(0.5, -1.5, 0.25, a2))).abs() < 1e-12);
    }

    #[test]
    fn clipped_target_never_exceeds_either_critic() {
        let mut rng = stream(4, 0);
        for seed in 0..50 {
            let agent = Agent::new(config(vec![8]), 3, seed).unwrap();
            let batch = random_batch(&agent, 16, &mut rng);
            let next = agent.next_actions(&batch, &mut rng).unwrap();
            let y = agent.targets_given_actions(&batch, &next).unwrap();
            for c in 0..2 {
                let single = agent.critic_target_values(c, &batch, &next[0]).unwrap();
                assert!(y.y1.iter().zip(&single).all(|(a, b)| a <= b));
            }
        }
    }

    #[test]
    fn terminal_targets_ignore_parameters() {
        let mut rng = stream(5, 0);
        let a = Agent::new(config(vec![8]), 3, 1).unwrap();
        let b = Agent::new(config(vec![8]), 3, 2).unwrap();
        let batch = random_batch(&a, 30, &mut rng);
        let ya = a.compute_targets(&batch, &mut stream(1, 1)).unwrap();
        let yb = b.compute_targets(&batch, &mut stream(1, 1)).unwrap();
        for i in 0..batch.len {
            if batch.ends[i] == EndKind::Terminal {
                assert_eq!(ya.y1[i], batch.rewards[i]);
                assert_eq!(ya.y1[i], yb.y1[i]);
            } else {
                assert_ne!(ya.y1[i], yb.y1[i]);
            }
        }
    }

    #[test]
    fn exact_targets_leave_critics_unchanged() {
        let mut agent = Agent::new(config(vec![8]), 3, 8).unwrap();
        let batch = random_batch(&agent, 10, &mut stream(6, 0));
        let before = agent.clone();
        let q1 = agent.q_values(0, &batch.states, &batch.actions, batch.len).unwrap();
        let losses = agent.update_critics(&batch, &Targets { y1: q1.clone(), y2: q1 }).unwrap();
        assert_eq!(losses.critic1, 0.0);
        assert_eq!(agent.network(NetRole::Critic(0)).unwrap(), before.network(NetRole::Critic(0)).unwrap());
        // Critic 2 was regressed onto critic 1's predictions, which it does not match.
        assert!(losses.critic2.unwrap() > 0.0);
    }

    #[test]
    fn repeated_updates_on_a_fixed_batch_reduce_loss() {
        let mut agent = Agent::new(config(vec![16, 16]), 3, 9).unwrap();
        let batch = random_batch(&agent, 32, &mut stream(7, 0));
        let y = agent.compute_targets(&batch, &mut stream(7, 1)).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let loss = agent.update_critics(&batch, &y).unwrap().critic1;
            assert!(loss < last, "{loss} !< {last}");
            last = loss;
        }
    }

    #[test]
    fn critic_gradient_is_twice_the_error_times_q_gradient() {
        let agent = Agent::new(config(vec![6]), 3, 10).unwrap();
        let batch = random_batch(&agent, 1, &mut stream(8, 0));
        let y = [0.37];
        let (_, grads) = agent.critic_loss_gradient(0, &batch, &y).unwrap();
        let net = agent.network(NetRole::Critic(0)).unwrap();
        let input = agent.critic_inputs(&batch.states, &batch.actions, 1);
        let q = net.predict(&input).unwrap()[0];
        let h = 1e-6;
        for i in 0..net.param_count() {
            let mut probe = net.clone();
            probe.params_mut()[i] += h;
            let up = probe.predict(&input).unwrap()[0];
            probe.params_mut()[i] -= 2.0 * h;
            let down = probe.predict(&input).unwrap()[0];
            let numeric = 2.0 * (q - y[0]) * (up - down) / (2.0 * h);
            assert!(relative_error(grads.0[i], numeric) < 1e-5, "param {i}");
        }
    }

    #[test]
    fn nan_target_aborts_with_numeric_error() {
        let mut agent = Agent::new(config(vec![4]), 3, 10).unwrap();
        let batch = random_batch(&agent, 3, &mut stream(8, 0));
        let y = Targets {
            y1: vec![f64::NAN; 3],
            y2: vec![0.0; 3],
        };
        assert!(matches!(agent.update_critics(&batch, &y), Err(Error::Numeric(_))));
    }

    #[test]
    fn action_blind_critic_leaves_actor_unchanged() {
        let mut agent = Agent::new(config(vec![8]), 3, 11).unwrap();
        let mut c = agent.network(NetRole::Critic(0)).unwrap().clone();
        // Zero the first-layer columns that read the action.
        let (width, hidden) = (5, 8);
        for row in 0..hidden {
            for col in 3..width {
                c.params_mut()[row * width + col] = 0.0;
            }
        }
        agent.set_network(NetRole::Critic(0), c).unwrap();
        let before = agent.network(NetRole::Actor(0)).unwrap().clone();
        let batch = random_batch(&agent, 10, &mut stream(9, 0));
        agent.update_actor_dpg(&batch.states, 10).unwrap();
        assert_eq!(agent.network(NetRole::Actor(0)).unwrap(), &before);
    }

    fn mean_q(agent: &Agent, actor: &Mlp, states: &[f64], n: usize) -> f64 {
        let actions = agent.policy_batch(actor, states, n).unwrap();
        agent.q_values(0, states, &actions, n).unwrap().iter().sum::<f64>() / n as f64
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let agent = Agent::new(config(vec![6, 5]), 3, 12).unwrap();
        let batch = random_batch(&agent, 7, &mut stream(10, 0));
        let (objective, grads) = agent.actor_objective_gradient(0, &batch.states, 7).unwrap();
        let actor = agent.network(NetRole::Actor(0)).unwrap();
        assert!((objective - mean_q(&agent, actor, &batch.states, 7)).abs() < 1e-12);
        let h = 1e-6;
        let mut worst = 0.0_f64;
        for i in 0..actor.param_count() {
            let mut probe = actor.clone();
            probe.params_mut()[i] += h;
            let up = mean_q(&agent, &probe, &batch.states, 7);
            probe.params_mut()[i] -= 2.0 * h;
            let down = mean_q(&agent, &probe, &batch.states, 7);
            let numeric = -(up - down) / (2.0 * h);
            worst = worst.max(relative_error(grads.0[i], numeric));
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn tiny_actor_step_does_not_lower_mean_q() {
        let cfg = AgentConfig {
            actor_lr: 1e-8,
            ..config(vec![8, 8])
        };
        let mut agent = Agent::new(cfg, 3, 13).unwrap();
        let batch = random_batch(&agent, 20, &mut stream(11, 0));
        let before = mean_q(&agent, agent.network(NetRole::Actor(0)).unwrap(), &batch.states, 20);
        let critic_before = agent.network(NetRole::Critic(0)).unwrap().clone();
        agent.update_actor_dpg(&batch.states, 20).unwrap();
        let after = mean_q(&agent, agent.network(NetRole::Actor(0)).unwrap(), &batch.states, 20);
        assert!(after >= before, "{after} < {before}");
        assert_eq!(agent.network(NetRole::Critic(0)).unwrap(), &critic_before);
    }

    #[test]
    fn polyak_rates() {
        let mut full = Agent::new(AgentConfig { tau: 1.0, ..config(vec![4]) }, 3, 14).unwrap();
        let mut c = full.network(NetRole::Critic(0)).unwrap().clone();
        c.params_mut().iter_mut().for_each(|p| *p += 1.0);
        full.set_network(NetRole::Critic(0), c.clone()).unwrap();
        full.polyak_update().unwrap();
        assert_eq!(full.network(NetRole::TargetCritic(0)).unwrap(), &c);

        let mut frozen = c.clone();
        frozen.polyak_toward(&Mlp::zeros(c.sizes(), Activation::Relu, Activation::Identity).unwrap(), 0.0).unwrap();
        assert_eq!(frozen, c);

        let mut slow = Agent::new(config(vec![4]), 3, 14).unwrap();
        let zeros = Mlp::zeros(c.sizes(), Activation::Relu, Activation::Identity).unwrap();
        let ones = Mlp::from_params(c.sizes(), Activation::Relu, Activation::Identity, vec![1.0; c.param_count()])
            .unwrap();
        slow.set_network(NetRole::TargetCritic(0), zeros).unwrap();
        slow.set_network(NetRole::Critic(0), ones).unwrap();
        slow.polyak_update().unwrap();
        assert!(slow.network(NetRole::TargetCritic(0)).unwrap().params().iter().all(|&p| p == 0.005));
    }

    #[test]
    fn delay_two_updates_actor_every_second_call() {
        let mut agent = Agent::new(config(vec![8]), 3, 15).unwrap();
        let buf = filled_buffer(&agent, 50, 1);
        let mut rng = stream(15, streams::TRAIN);
        for call in 1..=20u64 {
            let before = agent.actor_fingerprint();
            let report = agent.train_step(&buf, &mut rng).unwrap();
            assert_eq!(report.delayed_update, call % 2 == 0);
            assert_eq!(agent.actor_fingerprint() != before, call % 2 == 0, "call {call}");
        }
        assert_eq!(agent.actor_updates(), 10);
    }

    #[test]
    fn delay_three_over_a_thousand_calls() {
        let cfg = AgentConfig {
            policy_delay: 3,
            batch_size: 4,
            ..config(vec![4])
        };
        let mut agent = Agent::new(cfg, 3, 16).unwrap();
        let buf = filled_buffer(&agent, 20, 2);
        let mut rng = stream(16, streams::TRAIN);
        for _ in 0..1000 {
            agent.train_step(&buf, &mut rng).unwrap();
        }
        assert_eq!(agent.actor_updates(), 333);
        assert_eq!(agent.critic_updates(), 1000);
    }

    #[test]
    fn flags_off_reproduces_the_baseline_update_bit_for_bit() {
        let base = config(vec![8]);
        let ahe = Variant::Ahe.apply(&base);
        let baseline = AgentConfig {
            mode: Mode::DdpgBaseline,
            ..ahe.clone()
        };
        let mut a = Agent::new(ahe, 3, 17).unwrap();
        let mut b = Agent::new(baseline, 3, 17).unwrap();
        let buf = filled_buffer(&a, 40, 3);
        let (mut ra, mut rb) = (stream(17, 12), stream(17, 12));
        for _ in 0..25 {
            assert_eq!(a.train_step(&buf, &mut ra).unwrap(), b.train_step(&buf, &mut rb).unwrap());
        }
        for role in [NetRole::Actor(0), NetRole::TargetActor(0), NetRole::Critic(0), NetRole::TargetCritic(0)] {
            assert_eq!(a.network(role).unwrap(), b.network(role).unwrap());
        }
    }

    #[test]
    fn frozen_policy_mode_trains_only_critics() {
        let cfg = AgentConfig {
            train_actor: false,
            ..config(vec![8])
        };
        let mut agent = Agent::new(cfg, 3, 18).unwrap();
        let buf = filled_buffer(&agent, 30, 4);
        let actor = agent.network(NetRole::Actor(0)).unwrap().clone();
        let critic = agent.network(NetRole::Critic(0)).unwrap().clone();
        let mut rng = stream(18, 12);
        for _ in 0..6 {
            agent.train_step(&buf, &mut rng).unwrap();
        }
        assert_eq!(agent.network(NetRole::Actor(0)).unwrap(), &actor);
        assert_ne!(agent.network(NetRole::Critic(0)).unwrap(), &critic);
    }

    #[test]
    fn small_buffer_is_a_precondition_error() {
        let mut agent = Agent::new(config(vec![4]), 3, 19).unwrap();
        let buf = filled_buffer(&agent, 5, 5);
        assert!(matches!(agent.train_step(&buf, &mut stream(0, 0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn critic_weight_decay_shrinks_weights_only() {
        let cfg = AgentConfig {
            critic_l2: 0.5,
            ..Variant::Ddpg.apply(&config(vec![4]))
        };
        let agent = Agent::new(cfg, 3, 20).unwrap();
        let batch = random_batch(&agent, 4, &mut stream(12, 0));
        let plain = Agent {
            config: AgentConfig {
                critic_l2: 0.0,
                ..agent.config.clone()
            },
            ..agent.clone()
        };
        let y = [0.0; 4];
        let (_, g) = agent.critic_loss_gradient(0, &batch, &y).unwrap();
        let (_, g0) = plain.critic_loss_gradient(0, &batch, &y).unwrap();
        let net = agent.network(NetRole::Critic(0)).unwrap();
        let weights: Vec<usize> = net.weight_ranges().into_iter().flatten().collect();
        for i in 0..net.param_count() {
            let expected = if weights.contains(&i) {
                g0.0[i] + 0.5 * net.params()[i]
            } else {
                g0.0[i]
            };
            assert!((g.0[i] - expected).abs() < 1e-15);
        }
    }
}
