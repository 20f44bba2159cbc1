//! Fixed-capacity ring buffer of training transitions with uniform
//! without-replacement batch sampling.

use rand::Rng;

use crate::{Error, Result};

/// Compact training record; `bootstrap` is 1.0 when the successor value
/// should be bootstrapped (mid-episode and horizon cuts) and 0.0 for true
/// terminals (goal reached).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayItem {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub obs_next: Vec<f64>,
    pub bootstrap: f64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<ReplayItem>,
    write_idx: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            write_idx: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, item: ReplayItem) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.write_idx] = item;
        }
        self.write_idx = (self.write_idx + 1) % self.capacity;
    }

    pub fn get(&self, idx: usize) -> &ReplayItem {
        &self.items[idx]
    }

    /// Uniform batch of distinct indices; errors if the buffer holds fewer
    /// items than requested.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if batch > self.items.len() {
            return Err(Error::InvalidInput(format!(
                "batch of {batch} requested from buffer of {}",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch).into_vec())
    }
}
