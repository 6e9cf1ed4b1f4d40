//! Multi-system pretraining and finetuning: uniform per-micro-batch system
//! sampling, gradient accumulation, AdamW with warmup and cosine decay,
//! clipping, checkpoints and the load-balance simulation.

mod balance;
mod checkpoint;
mod config;
mod optim;
mod pool;
mod trainer;

pub use balance::load_balance_variance;
pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use optim::{clip_global_norm, AdamHyper, AdamW};
pub use pool::{sample_microbatch, TaskPool};
pub use trainer::{
    finetune, finetune_state, pretrain, restricted_ids, sample_gradients, test_report, train_ids, BoundModel, Checkpoint,
    EpochLog, TrainState,
};
