//! Bounded FIFO replay memory with uniform and combined experience replay
//! (CER) sampling. CER draws `B - 1` experiences uniformly with replacement
//! and always adds the most recently pushed one.

use std::io::{self, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::OBSERVATION_DIM;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay holds {have} experiences, batch needs {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("batch size must be positive")]
    EmptyBatch,
    #[error("replay file: {0}")]
    Format(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One transition `(o, a, r, o', terminal(s'))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub observation: [f32; OBSERVATION_DIM],
    pub action: f32,
    pub reward: f32,
    pub next_observation: [f32; OBSERVATION_DIM],
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Combined experience replay.
    #[default]
    Combined,
    Uniform,
}

/// Column-major view of a sampled batch, ready for the networks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub observations: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_observations: Vec<f32>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn from_experiences<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = &'a Experience>,
    {
        let mut b = Batch::default();
        for e in items {
            b.observations.extend_from_slice(&e.observation);
            b.actions.push(e.action);
            b.rewards.push(e.reward);
            b.next_observations.extend_from_slice(&e.next_observation);
            b.terminals.push(e.terminal);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn experience(&self, i: usize) -> Experience {
        let d = OBSERVATION_DIM;
        Experience {
            observation: self.observations[i * d..(i + 1) * d].try_into().unwrap(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_observation: self.next_observations[i * d..(i + 1) * d].try_into().unwrap(),
            terminal: self.terminals[i],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    storage: Vec<Experience>,
    capacity: usize,
    /// Slot the next push writes to.
    head: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            head: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Experiences pushed over the buffer's lifetime, evicted ones included.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, e: Experience) {
        if self.storage.len() < self.capacity {
            self.storage.push(e);
        } else {
            self.storage[self.head] = e;
        }
        self.head = (self.head + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn latest(&self) -> Option<&Experience> {
        if self.storage.is_empty() {
            None
        } else {
            Some(&self.storage[self.latest_slot()])
        }
    }

    fn latest_slot(&self) -> usize {
        (self.head + self.capacity - 1) % self.capacity
    }

    /// Storage slot of the `i`-th oldest experience.
    fn slot(&self, i: usize) -> usize {
        if self.storage.len() < self.capacity {
            i
        } else {
            (self.head + i) % self.capacity
        }
    }

    /// Oldest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> + '_ {
        (0..self.len()).map(move |i| &self.storage[self.slot(i)])
    }

    pub fn clear(&mut self) {
        self.storage.clear();
        self.head = 0;
    }

    fn check(&self, batch: usize) -> Result<(), ReplayError> {
        if batch == 0 {
            return Err(ReplayError::EmptyBatch);
        }
        if self.len() < batch {
            return Err(ReplayError::InsufficientData {
                have: self.len(),
                need: batch,
            });
        }
        Ok(())
    }

    /// Oldest-first positions of a CER batch: `batch - 1` uniform draws plus
    /// the latest experience at a random position.
    pub fn sample_cer_positions<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        self.check(batch)?;
        let n = self.len();
        let mut idx: Vec<usize> = (0..batch - 1).map(|_| rng.random_range(0..n)).collect();
        let at = rng.random_range(0..batch);
        idx.insert(at, n - 1);
        Ok(idx)
    }

    pub fn sample_uniform_positions<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        self.check(batch)?;
        let n = self.len();
        Ok((0..batch).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn get(&self, position: usize) -> Option<&Experience> {
        (position < self.len()).then(|| &self.storage[self.slot(position)])
    }

    fn gather(&self, positions: &[usize]) -> Batch {
        Batch::from_experiences(positions.iter().map(|&p| &self.storage[self.slot(p)]))
    }

    pub fn sample_cer<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch, ReplayError> {
        let pos = self.sample_cer_positions(batch, rng)?;
        Ok(self.gather(&pos))
    }

    pub fn sample_uniform<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Batch, ReplayError> {
        let pos = self.sample_uniform_positions(batch, rng)?;
        Ok(self.gather(&pos))
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        mode: Sampling,
        batch: usize,
        rng: &mut R,
    ) -> Result<Batch, ReplayError> {
        match mode {
            Sampling::Combined => self.sample_cer(batch, rng),
            Sampling::Uniform => self.sample_uniform(batch, rng),
        }
    }

    /// Writes `capacity, count, total pushed` and the experiences oldest
    /// first, all little-endian, observations and scalars as `f32`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ReplayError> {
        w.write_all(b"RB")?;
        w.write_all(&1u16.to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.pushed.to_le_bytes())?;
        let mut rec = Vec::with_capacity(RECORD_LEN);
        for e in self.iter() {
            rec.clear();
            for v in e.observation {
                rec.extend_from_slice(&v.to_le_bytes());
            }
            rec.extend_from_slice(&e.action.to_le_bytes());
            rec.extend_from_slice(&e.reward.to_le_bytes());
            for v in e.next_observation {
                rec.extend_from_slice(&v.to_le_bytes());
            }
            rec.push(e.terminal as u8);
            w.write_all(&rec)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ReplayError> {
        let mut head = [0u8; 28];
        r.read_exact(&mut head)?;
        if &head[..2] != b"RB" {
            return Err(ReplayError::Format("bad magic"));
        }
        if u16::from_le_bytes([head[2], head[3]]) != 1 {
            return Err(ReplayError::Format("unsupported version"));
        }
        let capacity = u64::from_le_bytes(head[4..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
        let pushed = u64::from_le_bytes(head[20..28].try_into().unwrap());
        if capacity == 0 || count > capacity || (count as u64) > pushed {
            return Err(ReplayError::Format("inconsistent counts"));
        }
        let mut buf = Self::new(capacity);
        let mut rec = [0u8; RECORD_LEN];
        let f = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap());
        for _ in 0..count {
            r.read_exact(&mut rec)?;
            let mut o = [0f32; OBSERVATION_DIM];
            let mut n = [0f32; OBSERVATION_DIM];
            for i in 0..OBSERVATION_DIM {
                o[i] = f(&rec[4 * i..4 * i + 4]);
                n[i] = f(&rec[48 + 4 * i..52 + 4 * i]);
            }
            let terminal = match rec[RECORD_LEN - 1] {
                0 => false,
                1 => true,
                _ => return Err(ReplayError::Format("bad terminal flag")),
            };
            buf.push(Experience {
                observation: o,
                action: f(&rec[40..44]),
                reward: f(&rec[44..48]),
                next_observation: n,
                terminal,
            });
        }
        buf.pushed = pushed;
        Ok(buf)
    }
}

const RECORD_LEN: usize = 4 * (2 * OBSERVATION_DIM + 2) + 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn exp(tag: f32) -> Experience {
        Experience {
            observation: [tag; OBSERVATION_DIM],
            action: tag / 1000.0,
            reward: -tag,
            next_observation: [tag + 0.5; OBSERVATION_DIM],
            terminal: (tag as i64) % 3 == 0,
        }
    }

    #[test]
    fn push_into_empty() {
        let mut b = ReplayBuffer::new(4);
        b.push(exp(1.0));
        assert_eq!(b.len(), 1);
        assert_eq!(b.latest(), Some(&exp(1.0)));
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..4 {
            b.push(exp(i as f32));
            assert_eq!(b.latest(), Some(&exp(i as f32)));
        }
        assert_eq!(b.len(), 3);
        let tags: Vec<f32> = b.iter().map(|e| e.observation[0]).collect();
        assert_eq!(tags, vec![1.0, 2.0, 3.0]);
        assert_eq!(b.total_pushed(), 4);
    }

    #[test]
    fn cer_single_item() {
        let mut b = ReplayBuffer::new(8);
        b.push(exp(5.0));
        let mut r = rng::stream(0, 0);
        let batch = b.sample_cer(1, &mut r).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch.experience(0), exp(5.0));
        let batch = b.sample_uniform(1, &mut r).unwrap();
        assert_eq!(batch.experience(0), exp(5.0));
    }

    #[test]
    fn insufficient_data() {
        let mut b = ReplayBuffer::new(8);
        b.push(exp(1.0));
        let mut r = rng::stream(0, 0);
        assert!(matches!(
            b.sample_cer(2, &mut r),
            Err(ReplayError::InsufficientData { have: 1, need: 2 })
        ));
        assert!(matches!(b.sample_uniform(0, &mut r), Err(ReplayError::EmptyBatch)));
    }

    #[test]
    fn cer_always_contains_latest_after_wraparound() {
        let mut b = ReplayBuffer::new(200);
        let mut r = rng::stream(9, 0);
        for i in 0..1000 {
            b.push(exp(i as f32));
            if b.len() >= 128 {
                let batch = b.sample_cer(128, &mut r).unwrap();
                assert!((0..128).any(|k| batch.experience(k) == exp(i as f32)));
            }
        }
    }

    #[test]
    fn sampling_is_reproducible_and_pure() {
        let mut b = ReplayBuffer::new(64);
        for i in 0..64 {
            b.push(exp(i as f32));
        }
        let before: Vec<_> = b.iter().copied().collect();
        let x = b.sample_cer(16, &mut rng::stream(4, 2)).unwrap();
        let y = b.sample_cer(16, &mut rng::stream(4, 2)).unwrap();
        assert_eq!(x, y);
        let after: Vec<_> = b.iter().copied().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn persistence_round_trip() {
        let mut b = ReplayBuffer::new(5);
        for i in 0..7 {
            b.push(exp(i as f32));
        }
        let mut bytes = Vec::new();
        b.write_to(&mut bytes).unwrap();
        let back = ReplayBuffer::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back.total_pushed(), 7);
        assert_eq!(back.latest(), b.latest());
        assert!(back.iter().eq(b.iter()));

        bytes[0] = b'X';
        assert!(ReplayBuffer::read_from(&mut bytes.as_slice()).is_err());
    }
}
