//! Fixed-capacity FIFO transition store with uniform minibatch sampling.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, RngStream};

pub const DEFAULT_CAPACITY: usize = 100_000;

const MAGIC: &[u8; 4] = b"FWRB";
const FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Terminal state reached; no bootstrapping.
    pub done: bool,
    /// Episode cut without a terminal state (time limit, relocation).
    pub truncated: bool,
}

/// Column-stacked minibatch. `terminal` is 1.0 only for true terminal
/// transitions; truncated ones bootstrap and carry 0.0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub terminal: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    done: Vec<bool>,
    truncated: Vec<bool>,
    /// Slot the next push writes to.
    cursor: usize,
    len: usize,
    /// Total pushes since creation.
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: vec![0.0; capacity * obs_dim],
            actions: vec![0.0; capacity * act_dim],
            rewards: vec![0.0; capacity],
            next_obs: vec![0.0; capacity * obs_dim],
            done: vec![false; capacity],
            truncated: vec![false; capacity],
            cursor: 0,
            len: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Number of transitions ever pushed, including evicted ones.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim {
            return Err(Error::shape(
                "replay push observation",
                self.obs_dim,
                format!("{} / {}", t.obs.len(), t.next_obs.len()),
            ));
        }
        if t.action.len() != self.act_dim {
            return Err(Error::shape("replay push action", self.act_dim, t.action.len()));
        }
        if t.done && t.truncated {
            return Err(Error::Config("transition both done and truncated".into()));
        }
        let finite = t.obs.iter().chain(&t.action).chain(&t.next_obs).all(|v| v.is_finite())
            && t.reward.is_finite();
        if !finite {
            return Err(Error::NonFinite("replay transition".into()));
        }

        let i = self.cursor;
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.obs);
        self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.next_obs);
        self.actions[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(&t.action);
        self.rewards[i] = t.reward;
        self.done[i] = t.done;
        self.truncated[i] = t.truncated;
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        self.pushed += 1;
        Ok(())
    }

    fn slot(&self, logical: usize) -> usize {
        if self.len < self.capacity {
            logical
        } else {
            (self.cursor + logical) % self.capacity
        }
    }

    /// Transition at `index`, counting from the oldest stored entry.
    pub fn get(&self, index: usize) -> Option<Transition> {
        (index < self.len).then(|| self.read_slot(self.slot(index)))
    }

    fn read_slot(&self, s: usize) -> Transition {
        Transition {
            obs: self.obs[s * self.obs_dim..(s + 1) * self.obs_dim].to_vec(),
            action: self.actions[s * self.act_dim..(s + 1) * self.act_dim].to_vec(),
            reward: self.rewards[s],
            next_obs: self.next_obs[s * self.obs_dim..(s + 1) * self.obs_dim].to_vec(),
            done: self.done[s],
            truncated: self.truncated[s],
        }
    }

    /// Logical indices of `n` uniform draws with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
        if self.len == 0 {
            return Err(Error::Empty("replay buffer"));
        }
        Ok((0..n).map(|_| rng.below(self.len)).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.read_slot(self.slot(i)))
            .collect())
    }

    /// Uniform minibatch gathered straight into matrices.
    pub fn sample_batch(&self, n: usize, rng: &mut RngStream) -> Result<Batch> {
        let mut batch = Batch::default();
        self.sample_batch_into(n, rng, &mut batch)?;
        Ok(batch)
    }

    pub fn sample_batch_into(&self, n: usize, rng: &mut RngStream, out: &mut Batch) -> Result<()> {
        let idx = self.sample_indices(n, rng)?;
        self.gather_into(&idx, out);
        Ok(())
    }

    pub(crate) fn gather_into(&self, logical: &[usize], out: &mut Batch) {
        let n = logical.len();
        out.obs.resize(n, self.obs_dim);
        out.next_obs.resize(n, self.obs_dim);
        out.actions.resize(n, self.act_dim);
        out.rewards.clear();
        out.terminal.clear();
        for (row, &i) in logical.iter().enumerate() {
            let s = self.slot(i);
            out.obs
                .row_mut(row)
                .copy_from_slice(&self.obs[s * self.obs_dim..(s + 1) * self.obs_dim]);
            out.next_obs
                .row_mut(row)
                .copy_from_slice(&self.next_obs[s * self.obs_dim..(s + 1) * self.obs_dim]);
            out.actions
                .row_mut(row)
                .copy_from_slice(&self.actions[s * self.act_dim..(s + 1) * self.act_dim]);
            out.rewards.push(self.rewards[s]);
            out.terminal.push(if self.done[s] { 1.0 } else { 0.0 });
        }
    }

    /// Writes the buffer as a flat little-endian file: header
    /// `FWRB, version, obs_dim, act_dim, capacity, len, pushed`, then the
    /// stored transitions oldest first.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FILE_VERSION.to_le_bytes())?;
        for v in [
            self.obs_dim as u64,
            self.act_dim as u64,
            self.capacity as u64,
            self.len as u64,
            self.pushed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for i in 0..self.len {
            let t = self.read_slot(self.slot(i));
            for v in t.obs.iter().chain(&t.action).chain(&[t.reward]).chain(&t.next_obs) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&[u8::from(t.done), u8::from(t.truncated)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a replay buffer file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FILE_VERSION {
            return Err(Error::Format(format!("unsupported replay file version {version}")));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let obs_dim = read_u64(&mut r)? as usize;
        let act_dim = read_u64(&mut r)? as usize;
        let capacity = read_u64(&mut r)? as usize;
        let len = read_u64(&mut r)? as usize;
        let pushed = read_u64(&mut r)?;
        if capacity == 0 || len > capacity {
            return Err(Error::Format(format!("bad header: capacity {capacity}, size {len}")));
        }
        let mut buf = Self::new(capacity, obs_dim, act_dim);
        let read_f64s = |r: &mut dyn Read, n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                out.push(f64::from_le_bytes(b));
            }
            Ok(out)
        };
        for _ in 0..len {
            let obs = read_f64s(&mut r, obs_dim)?;
            let action = read_f64s(&mut r, act_dim)?;
            let reward = read_f64s(&mut r, 1)?[0];
            let next_obs = read_f64s(&mut r, obs_dim)?;
            let mut flags = [0u8; 2];
            r.read_exact(&mut flags)?;
            buf.push(Transition {
                obs,
                action,
                reward,
                next_obs,
                done: flags[0] != 0,
                truncated: flags[1] != 0,
            })?;
        }
        buf.pushed = pushed;
        Ok(buf)
    }
}
