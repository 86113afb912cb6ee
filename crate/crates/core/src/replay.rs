//! Experience storage: the real-environment and model buffers, and mixed sampling.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::envs::Transition;
use crate::error::{Error, Result};

/// Fixed-capacity FIFO ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    storage: Vec<Transition>,
    write_index: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::contract("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            state_dim,
            action_dim,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            write_index: 0,
        })
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

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != self.state_dim
            || t.next_state.len() != self.state_dim
            || t.action.len() != self.action_dim
        {
            return Err(Error::contract(format!(
                "transition dims ({}, {}, {}) do not match buffer ({}, {})",
                t.state.len(),
                t.action.len(),
                t.next_state.len(),
                self.state_dim,
                self.action_dim
            )));
        }
        if !t.reward.is_finite() {
            return Err(Error::contract("transition reward is not finite"));
        }
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.write_index] = t;
        }
        self.write_index = (self.write_index + 1) % self.capacity;
        Ok(())
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) -> Result<()> {
        ts.into_iter().try_for_each(|t| self.push(t))
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.storage.get(index)
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.write_index };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    /// Uniform sampling with replacement; returns owned copies.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer("cannot sample from an empty buffer".into()));
        }
        Ok((0..n)
            .map(|_| self.storage[rng.random_range(0..self.storage.len())].clone())
            .collect())
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&[f64]> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer("cannot sample a start state from an empty buffer".into()));
        }
        Ok(&self.storage[rng.random_range(0..self.storage.len())].state)
    }

    pub fn clear(&mut self) {
        self.storage.clear();
        self.write_index = 0;
    }

    /// Debug dump: header `[capacity, state_dim, action_dim, count]` as u64,
    /// then per transition (oldest first) `s, a, r, s', done` as f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for v in [self.capacity, self.state_dim, self.action_dim, self.len()] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        for t in self.iter() {
            let done = if t.done { 1.0 } else { 0.0 };
            for v in t.state.iter().chain(&t.action).chain([&t.reward]).chain(&t.next_state).chain([&done]) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 32 {
            return Err(Error::Checkpoint("truncated buffer dump".into()));
        }
        let header: Vec<usize> = bytes[..32]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let (capacity, sd, ad, count) = (header[0], header[1], header[2], header[3]);
        let width = 2 * sd + ad + 2;
        let values: Vec<f64> = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.len() != count * width || (bytes.len() - 32) % 8 != 0 {
            return Err(Error::Checkpoint("buffer dump size mismatch".into()));
        }
        let mut buf = ReplayBuffer::new(capacity, sd, ad)?;
        for row in values.chunks_exact(width) {
            buf.push(Transition {
                state: row[..sd].to_vec(),
                action: row[sd..sd + ad].to_vec(),
                reward: row[sd + ad],
                next_state: row[sd + ad + 1..2 * sd + ad + 1].to_vec(),
                done: row[width - 1] != 0.0,
            })?;
        }
        Ok(buf)
    }
}

/// Draws batches from the environment and model buffers at a fixed ratio.
#[derive(Clone, Copy, Debug)]
pub struct MixedSampler<'a> {
    pub env_buffer: &'a ReplayBuffer,
    pub model_buffer: &'a ReplayBuffer,
    pub real_ratio: f64,
}

impl<'a> MixedSampler<'a> {
    pub fn new(env_buffer: &'a ReplayBuffer, model_buffer: &'a ReplayBuffer, real_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&real_ratio) {
            return Err(Error::contract(format!("real_ratio must lie in [0, 1], got {real_ratio}")));
        }
        Ok(MixedSampler {
            env_buffer,
            model_buffer,
            real_ratio,
        })
    }

    /// Number of environment transitions in a batch of `batch_size` when both
    /// buffers hold data.
    pub fn env_count(&self, batch_size: usize) -> usize {
        (self.real_ratio * batch_size as f64).round() as usize
    }

    /// A batch of exactly `batch_size` transitions: `round(real_ratio·B)` from
    /// the environment buffer first, the rest from the model buffer. When one
    /// buffer is empty the whole batch comes from the other.
    pub fn sample_mixed<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        match (self.env_buffer.is_empty(), self.model_buffer.is_empty()) {
            (true, true) => Err(Error::EmptyBuffer("both replay buffers are empty".into())),
            (false, true) => self.env_buffer.sample(batch_size, rng),
            (true, false) => self.model_buffer.sample(batch_size, rng),
            (false, false) => {
                let n_env = self.env_count(batch_size);
                let mut batch = self.env_buffer.sample(n_env, rng)?;
                batch.extend(self.model_buffer.sample(batch_size - n_env, rng)?);
                Ok(batch)
            }
        }
    }
}
