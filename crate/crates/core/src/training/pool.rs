use rand::Rng;

use crate::networks::Tensor;

/// One generated image, with the condition it was scored under when it
/// belongs to a conditional discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub image: Tensor,
    pub condition: Option<Tensor>,
}

/// Fixed-capacity history of generated samples. A capacity of zero disables
/// pooling: every query returns its input.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePool {
    capacity: usize,
    entries: Vec<PoolEntry>,
}

impl ImagePool {
    pub fn new(capacity: usize) -> Self {
        ImagePool {
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub(crate) fn from_entries(capacity: usize, entries: Vec<PoolEntry>) -> Self {
        ImagePool { capacity, entries }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    /// Below capacity: stores `fresh` and returns it. At capacity: with
    /// probability one half returns `fresh` untouched, otherwise swaps it
    /// with a uniformly chosen stored entry and returns that entry.
    pub fn query<R: Rng + ?Sized>(&mut self, fresh: PoolEntry, rng: &mut R) -> PoolEntry {
        if self.capacity == 0 {
            return fresh;
        }
        if self.entries.len() < self.capacity {
            return self.resolve(fresh, None);
        }
        if rng.random_bool(0.5) {
            let slot = rng.random_range(0..self.capacity);
            self.resolve(fresh, Some(slot))
        } else {
            self.resolve(fresh, None)
        }
    }

    /// Deterministic core of [`query`](Self::query): `swap` selects the
    /// stored entry to hand out once the pool is full.
    pub fn resolve(&mut self, fresh: PoolEntry, swap: Option<usize>) -> PoolEntry {
        if self.entries.len() < self.capacity {
            self.entries.push(fresh.clone());
            return fresh;
        }
        match swap {
            Some(slot) if slot < self.entries.len() => std::mem::replace(&mut self.entries[slot], fresh),
            _ => fresh,
        }
    }
}
