//! Binary checkpoints of the cloud trainer.
//!
//! Layout (little-endian): magic `CECK`, format `u16`, config JSON, the four
//! networks as parameter blobs, both Adam states, trainer step and fault
//! counters, trainer rng state, ingest counters, an optional replay dump,
//! and a CRC32 of everything before it. Each variable-length section is
//! prefixed with a `u64` byte count.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use cloudedge_core::ddpg::{ActorCritic, CRITIC_INPUT_DIM};
use cloudedge_core::mdp::OBSERVATION_DIM;
use cloudedge_core::nn::{Adam, AdamConfig, BlobError, Mlp, MlpSpec, ParamBlob};
use cloudedge_core::replay::{ReplayBuffer, ReplayError};
use cloudedge_core::rng;

use crate::service::{CloudConfig, CloudService};

const MAGIC: &[u8; 4] = b"CECK";
const FORMAT: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("checkpoint format: {0}")]
    Format(&'static str),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("network: {0}")]
    Blob(#[from] BlobError),
    #[error("replay: {0}")]
    Replay(#[from] ReplayError),
    #[error("config: {0}")]
    Config(String),
}

fn put_section(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn put_adam(out: &mut Vec<u8>, adam: &Adam<f32>) {
    let st = &adam.state;
    out.extend_from_slice(&st.step.to_le_bytes());
    out.extend_from_slice(&st.faults.to_le_bytes());
    let mut buf = Vec::with_capacity(8 * st.first_moment.len());
    for v in st.first_moment.iter().chain(&st.second_moment) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    put_section(out, &buf);
}

impl CloudService {
    /// Serialises the trainer. Without replay, a restore starts from an
    /// empty buffer and a zero step counter.
    pub fn checkpoint_bytes(&self, include_replay: bool) -> Result<Vec<u8>, CheckpointError> {
        let t = &self.trainer;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT.to_le_bytes());
        let cfg = serde_json::to_vec(self.config()).map_err(|e| CheckpointError::Config(e.to_string()))?;
        put_section(&mut out, &cfg);
        for net in [&t.actor, &t.critic, &t.target_actor, &t.target_critic] {
            put_section(&mut out, &ParamBlob::from_net(net).to_bytes());
        }
        put_adam(&mut out, &t.actor_opt);
        put_adam(&mut out, &t.critic_opt);
        out.extend_from_slice(&t.step.to_le_bytes());
        out.extend_from_slice(&t.faults.to_le_bytes());
        out.extend_from_slice(&rng::save_state(&t.rng));
        out.extend_from_slice(&self.experiences.to_le_bytes());
        out.extend_from_slice(&self.backlog.to_le_bytes());
        if include_replay {
            out.push(1);
            let mut buf = Vec::new();
            self.replay.write_to(&mut buf)?;
            put_section(&mut out, &buf);
        } else {
            out.push(0);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Writes atomically via a temporary file in the same directory.
    pub fn save_checkpoint(&self, path: &Path, include_replay: bool) -> Result<(), CheckpointError> {
        let bytes = self.checkpoint_bytes(include_replay)?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn restore_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        Self::restore_with_specs(
            bytes,
            &MlpSpec::actor(OBSERVATION_DIM),
            &MlpSpec::critic(CRITIC_INPUT_DIM),
        )
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::restore_bytes(&bytes)
    }

    /// Restores a checkpoint whose networks must match the given specs.
    pub fn restore_with_specs(
        bytes: &[u8],
        actor_spec: &MlpSpec,
        critic_spec: &MlpSpec,
    ) -> Result<Self, CheckpointError> {
        if bytes.len() < 10 {
            return Err(CheckpointError::Format("truncated"));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Cursor { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::Format("bad magic"));
        }
        if r.u16()? != FORMAT {
            return Err(CheckpointError::Format("unsupported format"));
        }
        let cfg: CloudConfig =
            serde_json::from_slice(r.section()?).map_err(|e| CheckpointError::Config(e.to_string()))?;
        let mut nets = Vec::with_capacity(4);
        for spec in [actor_spec, critic_spec, actor_spec, critic_spec] {
            let blob = ParamBlob::from_bytes(r.section()?)?;
            let version = blob.version;
            let mut net: Mlp<f32> = blob.into_net(spec)?;
            net.advance_version_to(version);
            nets.push(net);
        }
        let target_critic = nets.pop().unwrap();
        let target_actor = nets.pop().unwrap();
        let critic = nets.pop().unwrap();
        let actor = nets.pop().unwrap();
        let actor_opt = r.adam(AdamConfig::with_learning_rate(cfg.trainer.actor_lr), &actor)?;
        let critic_opt = r.adam(AdamConfig::with_learning_rate(cfg.trainer.critic_lr), &critic)?;
        let step = r.u64()?;
        let faults = r.u64()?;
        let rng_state: [u8; 56] = r.take(56)?.try_into().unwrap();
        let experiences = r.u64()?;
        let backlog = r.u64()?;
        let replay = match r.take(1)?[0] {
            0 => None,
            1 => Some(ReplayBuffer::read_from(&mut r.section()?)?),
            _ => return Err(CheckpointError::Format("replay flag")),
        };
        if r.pos != body.len() {
            return Err(CheckpointError::Format("trailing bytes"));
        }

        let mut trainer = ActorCritic::new(cfg.trainer.clone(), actor, critic, rng::load_state(&rng_state))
            .map_err(|e| CheckpointError::Config(e.to_string()))?;
        trainer.target_actor = target_actor;
        trainer.target_critic = target_critic;
        trainer.actor_opt = actor_opt;
        trainer.critic_opt = critic_opt;
        trainer.faults = faults;
        let has_replay = replay.is_some();
        if has_replay {
            trainer.step = step;
        }
        let mut svc = CloudService::from_parts(cfg, trainer, replay);
        svc.experiences = experiences;
        svc.backlog = if has_replay { backlog } else { 0 };
        Ok(svc)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or(CheckpointError::Format("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn section(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| CheckpointError::Format("section length"))?;
        self.take(n)
    }

    fn adam(&mut self, config: AdamConfig, net: &Mlp<f32>) -> Result<Adam<f32>, CheckpointError> {
        let step = self.u64()?;
        let faults = self.u64()?;
        let raw = self.section()?;
        let n = net.params().len();
        if raw.len() != 8 * n {
            return Err(CheckpointError::Format("optimiser state length"));
        }
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut adam = Adam::for_net(config, net);
        adam.state.first_moment = vals[..n].to_vec();
        adam.state.second_moment = vals[n..].to_vec();
        adam.state.step = step;
        adam.state.faults = faults;
        Ok(adam)
    }
}

/// Rolling checkpoint location inside a directory.
pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("cloud.ckpt")
}
