//! Tabular Q-learning, double Q-learning and clipped double Q-learning on
//! explicit finite MDPs, with a value-iteration oracle.
//!
//! Ties in every argmax go to the lowest action index.

mod mdp;

pub use mdp::FiniteMdp;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{stream, streams, Rng};

/// A state-action value table.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        crate::error::check_len("q table", n_states * n_actions, values.len())?;
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Greedy action, lowest index on ties.
    pub fn argmax(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max(&self, s: usize) -> f64 {
        self.get(s, self.argmax(s))
    }

    /// Sup-norm distance to another table of the same shape.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// `Q^A`, `Q^B` and per-cell visit counts.
#[derive(Clone, Debug, PartialEq)]
pub struct QTables {
    pub a: QTable,
    pub b: QTable,
    pub visits: Vec<u64>,
}

impl QTables {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            a: QTable::zeros(n_states, n_actions),
            b: QTable::zeros(n_states, n_actions),
            visits: vec![0; n_states * n_actions],
        }
    }

    /// Independent uniform `[-scale, scale]` entries in each table.
    pub fn random(n_states: usize, n_actions: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut t = Self::zeros(n_states, n_actions);
        for v in t.a.values.iter_mut().chain(t.b.values.iter_mut()) {
            *v = scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        t
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[s * self.a.n_actions + a]
    }

    fn check(&self, t: &TabularTransition, alpha: f64) -> Result<()> {
        let (ns, na) = (self.a.n_states, self.a.n_actions);
        if t.s >= ns || t.next >= ns || t.a >= na {
            return Err(Error::Contract(format!(
                "transition ({}, {}, -> {}) outside a {ns}x{na} table",
                t.s, t.a, t.next
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Contract(format!("step size {alpha} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TabularTransition {
    pub s: usize,
    pub a: usize,
    pub reward: f64,
    pub next: usize,
}

fn blend(q: &mut QTable, s: usize, a: usize, y: f64, alpha: f64) {
    let old = q.get(s, a);
    q.set(s, a, old + alpha * (y - old));
}

/// Greedy-target update of `Q^A`; `Q^B` is untouched.
pub fn q_learning_step(tables: &mut QTables, t: &TabularTransition, alpha: f64, gamma: f64) -> Result<()> {
    tables.check(t, alpha)?;
    let y = t.reward + gamma * tables.a.max(t.next);
    blend(&mut tables.a, t.s, t.a, y, alpha);
    Ok(())
}

/// A fair coin picks the table to update; it is evaluated by the other
/// table at its own greedy action.
pub fn double_q_step(tables: &mut QTables, t: &TabularTransition, alpha: f64, gamma: f64, rng: &mut Rng) -> Result<()> {
    tables.check(t, alpha)?;
    let (learner, critic) = if rng.random::<bool>() {
        (&mut tables.a, &tables.b)
    } else {
        (&mut tables.b, &tables.a)
    };
    let best = learner.argmax(t.next);
    let y = t.reward + gamma * critic.get(t.next, best);
    blend(learner, t.s, t.a, y, alpha);
    Ok(())
}

/// Which tables a clipped double Q step moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClippedUpdate {
    /// Both tables move toward the shared target (greedy action from `Q^A`).
    Both,
    /// A fair coin picks one table `X`; its greedy action sets the target
    /// `r + gamma * min(Q^X, Q^Y)` and only `X` moves.
    RandomSingle,
}

/// Target `r + gamma * min(Q^A(s', a*), Q^B(s', a*))` with `a* = argmax Q^A(s', .)`,
/// applied to both tables. Returns the target.
pub fn clipped_double_q_step(tables: &mut QTables, t: &TabularTransition, alpha: f64, gamma: f64) -> Result<f64> {
    tables.check(t, alpha)?;
    let best = tables.a.argmax(t.next);
    let y = t.reward + gamma * tables.a.get(t.next, best).min(tables.b.get(t.next, best));
    blend(&mut tables.a, t.s, t.a, y, alpha);
    blend(&mut tables.b, t.s, t.a, y, alpha);
    Ok(y)
}

/// The random-single-table form of [`clipped_double_q_step`].
pub fn clipped_double_q_single_step(
    tables: &mut QTables,
    t: &TabularTransition,
    alpha: f64,
    gamma: f64,
    rng: &mut Rng,
) -> Result<f64> {
    tables.check(t, alpha)?;
    let (learner, other) = if rng.random::<bool>() {
        (&mut tables.a, &tables.b)
    } else {
        (&mut tables.b, &tables.a)
    };
    let best = learner.argmax(t.next);
    let y = t.reward + gamma * learner.get(t.next, best).min(other.get(t.next, best));
    blend(learner, t.s, t.a, y, alpha);
    Ok(y)
}

/// Bellman optimality backup `(T Q)(s, a)`.
fn backup(mdp: &FiniteMdp, q: &QTable) -> QTable {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let v: Vec<f64> = (0..ns).map(|s| q.max(s)).collect();
    let mut out = QTable::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            let ev: f64 = mdp.transition_row(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            out.set(s, a, mdp.reward(s, a) + mdp.gamma() * ev);
        }
    }
    out
}

/// `||T Q - Q||_inf`.
pub fn bellman_residual(mdp: &FiniteMdp, q: &QTable) -> f64 {
    backup(mdp, q).sup_distance(q)
}

/// Iterates the Bellman optimality operator until the returned table's
/// residual is below `tol`.
pub fn value_iteration(mdp: &FiniteMdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("value iteration tolerance must be positive, got {tol}")));
    }
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    loop {
        let next = backup(mdp, &q);
        // The residual of `next` is at most gamma times this step's change.
        let change = next.sup_distance(&q);
        q = next;
        if mdp.gamma() * change < tol {
            return Ok(q);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TabularVariant {
    QLearning,
    DoubleQ,
    ClippedDoubleQ,
}

impl TabularVariant {
    pub const ALL: [TabularVariant; 3] = [
        TabularVariant::QLearning,
        TabularVariant::DoubleQ,
        TabularVariant::ClippedDoubleQ,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TabularVariant::QLearning => "q",
            TabularVariant::DoubleQ => "double-q",
            TabularVariant::ClippedDoubleQ => "clipped-dq",
        }
    }
}

impl fmt::Display for TabularVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TabularVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "q" | "q-learning" => Ok(TabularVariant::QLearning),
            "double-q" | "dq" => Ok(TabularVariant::DoubleQ),
            "clipped-dq" | "clipped" | "cdq" => Ok(TabularVariant::ClippedDoubleQ),
            other => Err(Error::Config(format!(
                "unknown tabular variant '{other}', expected q, double-q or clipped-dq"
            ))),
        }
    }
}

/// Step size as a function of the visit count `n >= 1` of the updated cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaSchedule {
    /// `c / (c + n)`.
    Visits { c: f64 },
    Constant(f64),
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule::Visits { c: 10.0 }
    }
}

impl AlphaSchedule {
    pub fn alpha(self, visits: u64) -> f64 {
        match self {
            AlphaSchedule::Visits { c } => c / (c + visits as f64),
            AlphaSchedule::Constant(a) => a,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularConfig {
    pub variant: TabularVariant,
    pub steps: u64,
    pub schedule: AlphaSchedule,
    /// Exploration rate of the epsilon-greedy behaviour policy on `Q^A`.
    pub epsilon: f64,
    pub clipped_update: ClippedUpdate,
    /// Initial entries uniform in `±init_scale`, independently per table.
    pub init_scale: f64,
    /// Bias is recorded every `checkpoint_every` steps and at the end.
    pub checkpoint_every: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            variant: TabularVariant::ClippedDoubleQ,
            steps: 100_000,
            schedule: AlphaSchedule::default(),
            epsilon: 0.1,
            clipped_update: ClippedUpdate::Both,
            init_scale: 0.0,
            checkpoint_every: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularRun {
    pub tables: QTables,
    /// `(step, E_s[max_a Q^A(s, a) - max_a Q*(s, a)])` under uniform states.
    pub bias_trace: Vec<(u64, f64)>,
    /// Largest `| gap_after - (1 - alpha) gap_before |` seen at updated cells,
    /// where gap is `Q^B - Q^A`; only tracked for the both-tables clipped update.
    pub contraction_error: Option<f64>,
}

impl TabularRun {
    pub fn final_bias(&self) -> f64 {
        self.bias_trace.last().map(|&(_, b)| b).unwrap_or(0.0)
    }
}

/// Mean over states of `max_a Q(s, a) - max_a Q*(s, a)`.
pub fn value_bias(q: &QTable, q_star: &QTable) -> f64 {
    let n = q.n_states();
    (0..n).map(|s| q.max(s) - q_star.max(s)).sum::<f64>() / n as f64
}

/// Runs one epsilon-greedy trajectory (start state uniform, never reset).
pub fn run_tabular(mdp: &FiniteMdp, config: &TabularConfig, q_star: &QTable, seed: u64) -> Result<TabularRun> {
    if !(0.0..=1.0).contains(&config.epsilon) {
        return Err(Error::Config(format!("epsilon must lie in [0, 1], got {}", config.epsilon)));
    }
    if config.checkpoint_every == 0 {
        return Err(Error::Config("checkpoint_every must be positive".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut rng = stream(seed, streams::TABULAR);
    let mut tables = if config.init_scale > 0.0 {
        QTables::random(ns, na, config.init_scale, &mut rng)
    } else {
        QTables::zeros(ns, na)
    };
    let track = config.variant == TabularVariant::ClippedDoubleQ && config.clipped_update == ClippedUpdate::Both;
    let mut contraction = 0.0_f64;
    let mut trace = vec![(0, value_bias(&tables.a, q_star))];
    let mut s = rng.random_range(0..ns);
    for step in 1..=config.steps {
        let a = if rng.random::<f64>() < config.epsilon {
            rng.random_range(0..na)
        } else {
            tables.a.argmax(s)
        };
        let (reward, next) = mdp.sample(s, a, &mut rng);
        let cell = s * na + a;
        tables.visits[cell] += 1;
        let alpha = config.schedule.alpha(tables.visits[cell]);
        let t = TabularTransition { s, a, reward, next };
        let gamma = mdp.gamma();
        match (config.variant, config.clipped_update) {
            (TabularVariant::QLearning, _) => q_learning_step(&mut tables, &t, alpha, gamma)?,
            (TabularVariant::DoubleQ, _) => double_q_step(&mut tables, &t, alpha, gamma, &mut rng)?,
            (TabularVariant::ClippedDoubleQ, ClippedUpdate::Both) => {
                let before = tables.b.get(s, a) - tables.a.get(s, a);
                clipped_double_q_step(&mut tables, &t, alpha, gamma)?;
                let after = tables.b.get(s, a) - tables.a.get(s, a);
                contraction = contraction.max((after - (1.0 - alpha) * before).abs());
            }
            (TabularVariant::ClippedDoubleQ, ClippedUpdate::RandomSingle) => {
                clipped_double_q_single_step(&mut tables, &t, alpha, gamma, &mut rng)?;
            }
        }
        if step % config.checkpoint_every == 0 || step == config.steps {
            trace.push((step, value_bias(&tables.a, q_star)));
        }
        s = next;
    }
    Ok(TabularRun {
        tables,
        bias_trace: trace,
        contraction_error: track.then_some(contraction),
    })
}
