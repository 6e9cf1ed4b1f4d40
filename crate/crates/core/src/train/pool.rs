use rand::Rng;
use serde::{Deserialize, Serialize};

/// Per-system `(trajectory id, t0)` pairs not yet drawn this epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPool {
    systems: Vec<String>,
    all: Vec<Vec<(usize, usize)>>,
    remaining: Vec<Vec<(usize, usize)>>,
}

impl TaskPool {
    /// `entries[s]` lists `(id, n_valid_t0)` for system `s`; every offset
    /// `0..n_valid_t0` becomes one task.
    pub fn new(systems: Vec<String>, entries: &[Vec<(usize, usize)>]) -> Self {
        let all: Vec<Vec<(usize, usize)>> = entries
            .iter()
            .map(|ids| ids.iter().flat_map(|&(id, n)| (0..n).map(move |t0| (id, t0))).collect())
            .collect();
        Self {
            systems,
            remaining: all.clone(),
            all,
        }
    }

    pub fn systems(&self) -> &[String] {
        &self.systems
    }

    pub fn reset(&mut self) {
        self.remaining = self.all.clone();
    }

    pub fn remaining(&self, system: usize) -> usize {
        self.remaining[system].len()
    }

    pub fn total(&self, system: usize) -> usize {
        self.all[system].len()
    }
}

/// Draws a system uniformly among those with at least `batch` tasks left,
/// then `batch` tasks from it without replacement. `None` signals the end
/// of the epoch.
pub fn sample_microbatch<R: Rng + ?Sized>(pool: &mut TaskPool, batch: usize, rng: &mut R) -> Option<(usize, Vec<(usize, usize)>)> {
    let eligible: Vec<usize> = (0..pool.systems.len()).filter(|&s| pool.remaining[s].len() >= batch.max(1)).collect();
    if eligible.is_empty() {
        return None;
    }
    let s = eligible[rng.random_range(0..eligible.len())];
    let left = &mut pool.remaining[s];
    let items = (0..batch).map(|_| left.swap_remove(rng.random_range(0..left.len()))).collect();
    Some((s, items))
}
