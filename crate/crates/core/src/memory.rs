//! Replay storage and exact nearest-neighbour queries over encoded states.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matlin::squared_distance;

/// Default replay capacity in transitions.
pub const DEFAULT_CAPACITY: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub r_ext: f64,
    pub r_int: f64,
    pub done: bool,
    pub next_obs: Vec<f64>,
    /// Encoding of `obs` as seen by the agent.
    pub z: Vec<f64>,
    /// Encoding of `next_obs`; the dynamics-model target.
    pub next_z: Vec<f64>,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.r_ext.is_finite()
            && self.r_int.is_finite()
            && [&self.obs, &self.next_obs, &self.z, &self.next_z]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    // next slot to overwrite once full
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer.iter())
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }

    /// The `k` stored encodings closest to `query`, nearest first.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .knn_with_distances(query, k)?
            .into_iter()
            .map(|(z, _)| z.to_vec())
            .collect())
    }

    /// Exact linear scan. Ties go to the older entry.
    pub fn knn_with_distances(&self, query: &[f64], k: usize) -> Result<Vec<(&[f64], f64)>> {
        if k == 0 {
            return Err(Error::InvalidSpec("k must be positive".into()));
        }
        if self.items.len() < k {
            return Err(Error::Insufficient {
                have: self.items.len(),
                need: k,
            });
        }
        let mut scored: Vec<(f64, usize, &[f64])> = Vec::with_capacity(self.items.len());
        for (age, t) in self.iter().enumerate() {
            if t.z.len() != query.len() {
                return Err(Error::dimension(
                    "knn",
                    format!("query of length {}", query.len()),
                    format!("stored encoding of length {}", t.z.len()),
                ));
            }
            scored.push((squared_distance(query, &t.z), age, &t.z));
        }
        let cmp = |a: &(f64, usize, &[f64]), b: &(f64, usize, &[f64])| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored.into_iter().map(|(d2, _, z)| (z, d2.sqrt())).collect())
    }
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}
