//! Uniform experience replay over a fixed-capacity ring.

use rand::Rng as _;

use crate::error::{check_len, Error, Result};
use crate::nn::ByteReader;
use crate::rng::Rng;

/// How an environment step ended.
///
/// Only `Terminal` stops bootstrapping; a `Timeout` is the horizon running
/// out and is bootstrapped like any other step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EndKind {
    None,
    Terminal,
    Timeout,
}

impl EndKind {
    pub fn is_terminal(self) -> bool {
        self == EndKind::Terminal
    }

    pub fn ends_episode(self) -> bool {
        self != EndKind::None
    }

    fn code(self) -> u8 {
        match self {
            EndKind::None => 0,
            EndKind::Terminal => 1,
            EndKind::Timeout => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(EndKind::None),
            1 => Ok(EndKind::Terminal),
            2 => Ok(EndKind::Timeout),
            other => Err(Error::Parse(format!("unknown end kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub end: EndKind,
}

/// A mini-batch in row-major struct-of-arrays form.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub ends: Vec<EndKind>,
}

impl Batch {
    pub fn from_transitions<'a, I>(state_dim: usize, action_dim: usize, items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let mut batch = Batch {
            len: 0,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            ends: Vec::new(),
        };
        for t in items {
            check_len("batch state", state_dim, t.state.len())?;
            check_len("batch next state", state_dim, t.next_state.len())?;
            check_len("batch action", action_dim, t.action.len())?;
            batch.states.extend_from_slice(&t.state);
            batch.actions.extend_from_slice(&t.action);
            batch.rewards.push(t.reward);
            batch.next_states.extend_from_slice(&t.next_state);
            batch.ends.push(t.end);
            batch.len += 1;
        }
        Ok(batch)
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
    slots: Vec<Transition>,
    cursor: usize,
    wraps: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            bounds: None,
            slots: Vec::with_capacity(capacity.min(1 << 20)),
            cursor: 0,
            wraps: 0,
        })
    }

    /// Rejects pushed actions that leave `[low, high]`.
    pub fn with_action_bounds(mut self, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        check_len("replay action low bound", self.action_dim, low.len())?;
        check_len("replay action high bound", self.action_dim, high.len())?;
        self.bounds = Some((low, high));
        Ok(self)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Number of laps in which the cursor has started overwriting old slots.
    pub fn wraps(&self) -> u64 {
        self.wraps
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        check_len("replay state", self.state_dim, t.state.len())?;
        check_len("replay next state", self.state_dim, t.next_state.len())?;
        check_len("replay action", self.action_dim, t.action.len())?;
        if let Some((low, high)) = &self.bounds {
            let inside = t
                .action
                .iter()
                .zip(low.iter().zip(high))
                .all(|(a, (l, h))| a >= l && a <= h);
            if !inside {
                return Err(Error::Contract(format!(
                    "action {:?} outside bounds",
                    t.action
                )));
            }
        }
        if self.slots.len() < self.capacity {
            self.slots.push(t);
        } else {
            if self.cursor == 0 {
                self.wraps += 1;
            }
            self.slots[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.slots.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.slots[split..].iter().chain(&self.slots[..split])
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.slots.get(slot)
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::Precondition("cannot sample from an empty replay buffer".into()));
        }
        let len = self.slots.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        Batch::from_transitions(
            self.state_dim,
            self.action_dim,
            idx.iter().map(|&i| &self.slots[i]),
        )
    }

    /// Observations of `n` uniformly sampled stored transitions.
    pub fn sample_states(&self, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let idx = self.sample_indices(n, rng)?;
        Ok(idx.iter().map(|&i| self.slots[i].state.clone()).collect())
    }

    /// Flat dump: magic, dims and count, then packed transitions oldest first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RPL1");
        out.extend_from_slice(&(self.state_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.action_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.slots.len() as u64).to_le_bytes());
        for t in self.iter() {
            for v in t
                .state
                .iter()
                .chain(&t.action)
                .chain(std::iter::once(&t.reward))
                .chain(&t.next_state)
            {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(t.end.code());
        }
        out
    }

    /// Reads a dump into a buffer of the given capacity.
    pub fn from_bytes(bytes: &[u8], capacity: usize) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != b"RPL1" {
            return Err(Error::Parse("bad replay dump magic".into()));
        }
        let state_dim = r.u32()? as usize;
        let action_dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut buf = Self::new(capacity, state_dim, action_dim)?;
        let read = |n: usize, r: &mut ByteReader| (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>();
        for _ in 0..count {
            let state = read(state_dim, &mut r)?;
            let action = read(action_dim, &mut r)?;
            let reward = r.f64()?;
            let next_state = read(state_dim, &mut r)?;
            let end = EndKind::from_code(r.u8()?)?;
            buf.push(Transition {
                state,
                action,
                reward,
                next_state,
                end,
            })?;
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn item(k: f64) -> Transition {
        Transition {
            state: vec![k],
            action: vec![0.0],
            reward: k,
            next_state: vec![k + 1.0],
            end: EndKind::None,
        }
    }

    #[test]
    fn overwrites_oldest_once_full() {
        let mut b = ReplayBuffer::new(2, 1, 1).unwrap();
        for k in 1..=3 {
            b.push(item(k as f64)).unwrap();
        }
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0]);
    }

    #[test]
    fn size_after_one_push() {
        let mut b = ReplayBuffer::new(10, 1, 1).unwrap();
        b.push(item(0.0)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn filling_exactly_to_capacity_does_not_wrap_early() {
        let cap = 1_000_000;
        let mut b = ReplayBuffer::new(cap, 1, 1).unwrap();
        for k in 0..cap {
            b.push(item(k as f64)).unwrap();
        }
        assert_eq!(b.len(), cap);
        assert_eq!(b.wraps(), 0);
        assert_eq!(b.iter().next().unwrap().reward, 0.0);
        b.push(item(-1.0)).unwrap();
        assert_eq!(b.wraps(), 1);
        assert_eq!(b.iter().next().unwrap().reward, 1.0);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let mut b = ReplayBuffer::new(4, 2, 1).unwrap();
        assert!(matches!(b.push(item(0.0)), Err(Error::Shape { .. })));
    }

    #[test]
    fn out_of_bounds_action_rejected() {
        let mut b = ReplayBuffer::new(4, 1, 1)
            .unwrap()
            .with_action_bounds(vec![-1.0], vec![1.0])
            .unwrap();
        let mut t = item(0.0);
        t.action = vec![1.5];
        assert!(matches!(b.push(t), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let b = ReplayBuffer::new(4, 1, 1).unwrap();
        assert!(matches!(b.sample(3, &mut stream(0, 0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn single_item_sampled_repeatedly() {
        let mut b = ReplayBuffer::new(4, 1, 1).unwrap();
        b.push(item(7.0)).unwrap();
        let batch = b.sample(5, &mut stream(0, 0)).unwrap();
        assert_eq!(batch.rewards, vec![7.0; 5]);
    }

    #[test]
    fn same_seed_same_batch() {
        let mut b = ReplayBuffer::new(50, 1, 1).unwrap();
        for k in 0..50 {
            b.push(item(k as f64)).unwrap();
        }
        assert_eq!(
            b.sample(32, &mut stream(9, 1)).unwrap(),
            b.sample(32, &mut stream(9, 1)).unwrap()
        );
    }

    #[test]
    fn frequencies_concentrate() {
        let mut b = ReplayBuffer::new(10, 1, 1).unwrap();
        for k in 0..10 {
            b.push(item(k as f64)).unwrap();
        }
        let mut counts = [0usize; 10];
        for i in b.sample_indices(100_000, &mut stream(3, 0)).unwrap() {
            counts[i] += 1;
        }
        for c in counts {
            let f = c as f64 / 100_000.0;
            assert!((0.09..=0.11).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn dump_round_trip_keeps_order_and_end_kinds() {
        let mut b = ReplayBuffer::new(3, 1, 1).unwrap();
        for k in 0..5 {
            let mut t = item(k as f64);
            t.end = [EndKind::None, EndKind::Terminal, EndKind::Timeout][k % 3];
            b.push(t).unwrap();
        }
        let back = ReplayBuffer::from_bytes(&b.to_bytes(), 3).unwrap();
        assert!(back.iter().eq(b.iter()));
    }

    proptest! {
        // Sampling only ever returns the most recent `capacity` pushes.
        #[test]
        fn never_samples_overwritten(cap in 1usize..20, pushes in 1usize..80, seed in 0u64..100) {
            let mut b = ReplayBuffer::new(cap, 1, 1).unwrap();
            for k in 0..pushes {
                b.push(item(k as f64)).unwrap();
            }
            let oldest_live = pushes.saturating_sub(cap) as f64;
            let batch = b.sample(64, &mut stream(seed, 0)).unwrap();
            prop_assert!(batch.rewards.iter().all(|&r| r >= oldest_live && r < pushes as f64));
            prop_assert_eq!(b.len(), pushes.min(cap));
        }
    }
}
