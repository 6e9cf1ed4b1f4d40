use serde::{Deserialize, Serialize};

use crate::error::{MppError, Result};
use crate::metrics::EPS_LOSS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub micro_batch_size: usize,
    /// Micro-batches accumulated per optimizer update (`m`).
    pub accum_steps: usize,
    pub total_updates: usize,
    pub warmup_updates: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub drop_path: f64,
    /// Updates between task-pool resets and log rows.
    pub epoch_updates: usize,
    pub seed: u64,
    pub eps_loss: f64,
    /// Validation trajectories per system scored at each epoch end.
    pub val_trajectories: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            micro_batch_size: 8,
            accum_steps: 5,
            total_updates: 3000,
            warmup_updates: 150,
            peak_lr: 3e-4,
            weight_decay: 1e-3,
            grad_clip: 1.0,
            drop_path: 0.1,
            epoch_updates: 400,
            seed: 0,
            eps_loss: EPS_LOSS,
            val_trajectories: 64,
        }
    }
}

impl TrainConfig {
    /// Sets the update budget with a 5% linear warmup.
    pub fn with_updates(mut self, total: usize) -> Self {
        self.total_updates = total;
        self.warmup_updates = (total as f64 * 0.05).round() as usize;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.micro_batch_size == 0 || self.accum_steps == 0 || self.epoch_updates == 0 {
            return Err(MppError::config("batch size, accumulation steps and epoch length must be positive"));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(MppError::config("peak_lr must be positive"));
        }
        if self.warmup_updates > self.total_updates {
            return Err(MppError::config("warmup longer than the run"));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 || self.weight_decay < 0.0 || self.eps_loss <= 0.0 {
            return Err(MppError::config("grad_clip and eps_loss must be positive, weight_decay non-negative"));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return Err(MppError::config("drop_path must be in [0, 1)"));
        }
        Ok(())
    }

    /// Learning rate of update `u` (0-based): linear warmup to `peak_lr`,
    /// then cosine decay to zero at `total_updates`.
    pub fn lr_at(&self, u: usize) -> f64 {
        if u < self.warmup_updates {
            return self.peak_lr * (u + 1) as f64 / self.warmup_updates as f64;
        }
        let span = self.total_updates.saturating_sub(self.warmup_updates).max(1) as f64;
        let progress = ((u - self.warmup_updates) as f64 / span).min(1.0);
        0.5 * self.peak_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
