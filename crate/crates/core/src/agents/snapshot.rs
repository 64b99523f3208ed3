//! Versioned binary agent snapshots.
//!
//! Layout (little-endian): magic `TD3A`, format version, the configuration as
//! length-prefixed JSON, state dimension, update counters, then for every
//! actor and critic its live network, target network and Adam state.

use std::path::Path;

use super::agent::{Agent, Learner};
use super::AgentConfig;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::{AdamConfig, AdamState, ByteReader, Mlp};

const MAGIC: &[u8; 4] = b"TD3A";
pub const SNAPSHOT_VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn write_learner(out: &mut Vec<u8>, l: &Learner) {
    out.extend_from_slice(&l.net.to_bytes());
    out.extend_from_slice(&l.target.to_bytes());
    let c = l.opt.config;
    put_f64s(out, &[c.learning_rate, c.beta1, c.beta2, c.epsilon]);
    put_u64(out, l.opt.steps());
    put_f64s(out, l.opt.first_moment());
    put_f64s(out, l.opt.second_moment());
}

fn read_net(r: &mut ByteReader<'_>, bytes: &[u8]) -> Result<Mlp> {
    let (net, used) = Mlp::from_bytes(&bytes[r.pos..])?;
    r.pos += used;
    Ok(net)
}

fn read_learner(r: &mut ByteReader<'_>, bytes: &[u8], expected: &Learner) -> Result<Learner> {
    let net = read_net(r, bytes)?;
    let target = read_net(r, bytes)?;
    for n in [&net, &target] {
        if n.sizes() != expected.net.sizes()
            || n.hidden_activation() != expected.net.hidden_activation()
            || n.output_activation() != expected.net.output_activation()
        {
            return Err(Error::Parse("snapshot network shape disagrees with its configuration".into()));
        }
    }
    let config = AdamConfig {
        learning_rate: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        epsilon: r.f64()?,
    };
    let t = r.u64()?;
    let p = net.param_count();
    let m = (0..p).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let v = (0..p).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let opt = AdamState::from_parts(config, m, v, t)?;
    Ok(Learner { net, target, opt })
}

impl Agent {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("agent config serializes");
        put_u64(&mut out, json.len() as u64);
        out.extend_from_slice(&json);
        put_u64(&mut out, self.state_dim as u64);
        put_u64(&mut out, self.critic_updates);
        put_u64(&mut out, self.actor_updates);
        for l in self.actors.iter().chain(&self.critics) {
            write_learner(&mut out, l);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Parse("not an agent snapshot".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Parse(format!(
                "agent snapshot version {version}, this build reads {SNAPSHOT_VERSION}"
            )));
        }
        let len = r.u64()? as usize;
        let config: AgentConfig = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Parse(format!("agent snapshot config: {e}")))?;
        let state_dim = r.u64()? as usize;
        let mut agent = Agent::new(config, state_dim, 0)?;
        agent.critic_updates = r.u64()?;
        agent.actor_updates = r.u64()?;
        for i in 0..agent.actors.len() {
            agent.actors[i] = read_learner(&mut r, bytes, &agent.actors[i])?;
        }
        for i in 0..agent.critics.len() {
            agent.critics[i] = read_learner(&mut r, bytes, &agent.critics[i])?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes after agent snapshot".into()));
        }
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{NetRole, Variant};
    use crate::replay::{EndKind, ReplayBuffer, Transition};
    use crate::rng::stream;

    fn trained(variant: Variant) -> (Agent, ReplayBuffer) {
        let cfg = AgentConfig {
            hidden: vec![8],
            batch_size: 4,
            ..variant.apply(&AgentConfig::default().with_action_bounds(vec![-2.0], vec![2.0]))
        };
        let mut agent = Agent::new(cfg, 2, 3).unwrap();
        let mut buf = ReplayBuffer::new(16, 2, 1).unwrap();
        for k in 0..16 {
            let x = k as f64 / 16.0;
            buf.push(Transition {
                state: vec![x, -x],
                action: vec![x],
                reward: x,
                next_state: vec![-x, x],
                end: if k % 5 == 0 { EndKind::Terminal } else { EndKind::None },
            })
            .unwrap();
        }
        let mut rng = stream(3, 12);
        for _ in 0..5 {
            agent.train_step(&buf, &mut rng).unwrap();
        }
        (agent, buf)
    }

    #[test]
    fn round_trip_resumes_identically() {
        for variant in [Variant::Td3, Variant::DqAc, Variant::Ddpg] {
            let (mut agent, buf) = trained(variant);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("agent.bin");
            agent.save(&path).unwrap();
            let mut back = Agent::load(&path).unwrap();
            assert_eq!(back.to_bytes(), agent.to_bytes());
            let (mut r1, mut r2) = (stream(9, 12), stream(9, 12));
            for _ in 0..3 {
                assert_eq!(agent.train_step(&buf, &mut r1).unwrap(), back.train_step(&buf, &mut r2).unwrap());
            }
            assert_eq!(
                agent.network(NetRole::Actor(0)).unwrap(),
                back.network(NetRole::Actor(0)).unwrap()
            );
        }
    }

    #[test]
    fn rejects_corruption() {
        let (agent, _) = trained(Variant::Td3);
        let bytes = agent.to_bytes();
        assert!(Agent::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Agent::from_bytes(&extra).is_err());
        let mut bad_version = bytes;
        bad_version[4] = 9;
        assert!(matches!(Agent::from_bytes(&bad_version), Err(Error::Parse(_))));
    }
}
