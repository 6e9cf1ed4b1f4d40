pub mod check;
pub mod data;
pub mod eval;
pub mod train;
pub mod transfer;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use mpp_core::backbone::ModelConfig;
use mpp_core::data::Dataset;
use mpp_core::metrics::{NullModel, Persistence, Predictor, SpectralOracle};
use mpp_core::train::{load_checkpoint, TrainConfig, TrainState};

use crate::settings::Settings;
use crate::Validation;

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Model preset: tiny, micro, ti, s, b, l.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub mlp_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Square patch size.
    #[arg(long)]
    pub patch: Option<usize>,
}

pub fn model_config(s: &mut Settings, a: &ModelArgs) -> Result<ModelConfig> {
    let preset = s.get("model.preset", a.model.clone(), "micro".to_string())?;
    let mut m = ModelConfig::preset(&preset)?;
    m.embed_dim = s.get("model.embed_dim", a.embed_dim, m.embed_dim)?;
    m.mlp_dim = s.get("model.mlp_dim", a.mlp_dim, m.mlp_dim)?;
    m.n_heads = s.get("model.heads", a.heads, m.n_heads)?;
    m.n_blocks = s.get("model.blocks", a.blocks, m.n_blocks)?;
    let p = s.get("model.patch", a.patch, m.patch[0])?;
    m.patch = [p, p];
    m.validate()?;
    Ok(m)
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Optimizer updates.
    #[arg(long)]
    pub updates: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    /// Micro-batches accumulated per update.
    #[arg(long)]
    pub accum: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Warmup updates (default 5% of the budget).
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub drop_path: Option<f64>,
    /// Updates per epoch (validation, checkpoint and pool reset).
    #[arg(long)]
    pub epoch_updates: Option<usize>,
    #[arg(long)]
    pub val_trajectories: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn train_config(s: &mut Settings, a: &TrainArgs, defaults: TrainConfig) -> Result<TrainConfig> {
    let updates = s.get("train.updates", a.updates, defaults.total_updates)?;
    let mut c = defaults.with_updates(updates);
    c.warmup_updates = s.get("train.warmup", a.warmup, c.warmup_updates)?;
    c.micro_batch_size = s.get("train.micro_batch", a.micro_batch, c.micro_batch_size)?;
    c.accum_steps = s.get("train.accum", a.accum, c.accum_steps)?;
    c.peak_lr = s.get("train.peak_lr", a.lr, c.peak_lr)?;
    c.weight_decay = s.get("train.weight_decay", a.weight_decay, c.weight_decay)?;
    c.grad_clip = s.get("train.grad_clip", a.grad_clip, c.grad_clip)?;
    c.drop_path = s.get("train.drop_path", a.drop_path, c.drop_path)?;
    c.epoch_updates = s.get("train.epoch_updates", a.epoch_updates, c.epoch_updates)?;
    c.val_trajectories = s.get("train.val_trajectories", a.val_trajectories, c.val_trajectories)?;
    c.seed = s.get("train.seed", a.seed, c.seed)?;
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Persistence,
    Null,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SourceArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Reference predictor instead of a checkpoint.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Use the generating solver as the model.
    #[arg(long)]
    pub oracle: bool,
}

pub enum Source {
    Model(Box<TrainState>),
    Persistence,
    Null,
    Oracle,
}

impl Source {
    pub fn resolve(s: &mut Settings, a: &SourceArgs) -> Result<Self> {
        let ckpt = s.opt::<String>("model.ckpt", a.ckpt.as_ref().map(|p| p.display().to_string()))?;
        let baseline = s.opt::<String>("model.baseline", a.baseline.map(|b| b.to_possible_value().expect("named").get_name().to_string()))?;
        let oracle = s.flag("model.oracle", a.oracle)?;
        let chosen = usize::from(ckpt.is_some()) + usize::from(baseline.is_some()) + usize::from(oracle);
        if chosen != 1 {
            return Err(Validation("choose exactly one of --ckpt, --baseline or --oracle".into()).into());
        }
        if let Some(path) = ckpt {
            return Ok(Self::Model(Box::new(load(Path::new(&path))?)));
        }
        if oracle {
            return Ok(Self::Oracle);
        }
        match baseline.as_deref() {
            Some("persistence") => Ok(Self::Persistence),
            Some("null") => Ok(Self::Null),
            Some(other) => Err(Validation(format!("unknown baseline `{other}`")).into()),
            None => unreachable!("one source was chosen"),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Model(_) => "model",
            Self::Persistence => "persistence",
            Self::Null => "null",
            Self::Oracle => "oracle",
        }
    }

    pub fn with<T>(&self, ds: &Dataset, f: impl FnOnce(&dyn Predictor) -> Result<T>) -> Result<T> {
        match self {
            Self::Model(state) => f(&state.bind(ds)),
            Self::Persistence => f(&Persistence),
            Self::Null => f(&NullModel),
            Self::Oracle => f(&SpectralOracle::from_dataset(ds)),
        }
    }
}

pub fn load(path: &Path) -> Result<TrainState> {
    if !path.exists() {
        return Err(Validation(format!("checkpoint {} does not exist", path.display())).into());
    }
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

pub fn open_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.join(mpp_core::data::MANIFEST_FILE).exists() {
        return Err(Validation(format!("{} is not a dataset (no manifest)", dir.display())).into());
    }
    Dataset::open(dir).with_context(|| format!("opening dataset {}", dir.display()))
}

pub fn warn_unused(s: &Settings) {
    for k in s.unused() {
        eprintln!("warning: config key `{k}` is not used by this command");
    }
}
