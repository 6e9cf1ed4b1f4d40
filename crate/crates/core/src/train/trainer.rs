use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::optim::{clip_global_norm, AdamW};
use super::pool::{sample_microbatch, TaskPool};
use crate::backbone::{Avit, ModelConfig};
use crate::data::{Dataset, FieldRegistry, HistoryWindow, Split, DEFAULT_HISTORY};
use crate::error::{MppError, Result};
use crate::metrics::{evaluate_suite, nmse_grad, nmse_sample, EvalOptions, Predictor, RolloutReport};
use crate::nn::ParamSet;
use crate::real::Real;

/// One row of the training log, written at every epoch end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub update: usize,
    pub lr: f64,
    pub train_nmse: f64,
    pub val_nrmse: BTreeMap<String, f64>,
}

/// Everything needed to continue training bit-exactly; this is what a
/// checkpoint file stores.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Avit<f32>,
    pub registry: FieldRegistry,
    pub opt: AdamW<f32>,
    pub config: TrainConfig,
    /// Optimizer updates completed.
    pub update: usize,
    pub rng: ChaCha8Rng,
    pub pool: TaskPool,
    pub log: Vec<EpochLog>,
    pub epoch_loss_sum: f64,
    pub epoch_loss_count: usize,
    pub best_val: Option<f64>,
}

pub type Checkpoint = TrainState;

/// A model paired with the registry positions of every system's fields.
pub struct BoundModel<'a> {
    pub model: &'a Avit<f32>,
    fields: HashMap<String, Vec<usize>>,
}

impl<'a> BoundModel<'a> {
    /// Resolves each dataset system's field names against `registry`;
    /// systems with unknown fields are left unbound and fail on use.
    pub fn new(model: &'a Avit<f32>, registry: &FieldRegistry, ds: &Dataset) -> Self {
        let fields = ds
            .manifest()
            .systems
            .iter()
            .filter_map(|s| registry.indices_of(&s.fields).ok().map(|idx| (s.name.clone(), idx)))
            .collect();
        Self { model, fields }
    }

    pub fn indices(&self, system: &str) -> Result<&[usize]> {
        self.fields.get(system).map(Vec::as_slice).ok_or_else(|| {
            MppError::config(format!(
                "model registry lacks fields of system `{system}`; extend the filters explicitly before using it"
            ))
        })
    }

    fn rebind<F: Real>(&self, window: &mut HistoryWindow<F>) -> Result<()> {
        window.field_indices = self.indices(&window.system)?.to_vec();
        Ok(())
    }
}

impl Predictor for BoundModel<'_> {
    fn predict_next(&self, window: &HistoryWindow<f64>) -> Result<Array3<f64>> {
        let mut w = window.clone();
        self.rebind(&mut w)?;
        self.model.predict_next(&w)
    }
}

/// Sums per-sample NMSE over `windows` and accumulates `scale` times its
/// gradient into `grads`. `keeps[i]` are the drop-path factors of sample `i`.
pub fn sample_gradients<F: Real>(
    model: &Avit<F>,
    windows: &[HistoryWindow<F>],
    keeps: &[Option<Vec<[F; 4]>>],
    eps: f64,
    scale: f64,
    grads: &mut ParamSet<F>,
) -> Result<f64> {
    let mut total = 0.0;
    for (w, keep) in windows.iter().zip(keeps) {
        let (pred, cache) = model.forward(&w.frames, &w.field_indices, w.periodic, keep.as_deref())?;
        if pred.iter().any(|x| !x.is_finite()) {
            return Err(MppError::NonFinite("training prediction"));
        }
        total += nmse_sample(&pred, &w.target, eps)?;
        let mut g = nmse_grad(&pred, &w.target, eps);
        g.mapv_inplace(|v| v * F::c(scale));
        model.backward(&cache, &g, grads);
    }
    Ok(total)
}

fn pool_for(ds: &Dataset, systems: &[String], ids: &[Vec<usize>]) -> Result<TaskPool> {
    let mut entries = Vec::with_capacity(systems.len());
    for ids in ids {
        let mut e = Vec::with_capacity(ids.len());
        for &id in ids {
            let n = ds.manifest().record(id)?.n_steps;
            e.push((id, n.saturating_sub(DEFAULT_HISTORY)));
        }
        entries.push(e);
    }
    Ok(TaskPool::new(systems.to_vec(), &entries))
}

fn train_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

impl TrainState {
    /// Fresh model over the dataset's registry.
    pub fn scratch(ds: &Dataset, systems: &[String], ids: &[Vec<usize>], model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let registry = ds.manifest().field_registry.clone();
        let mut model = Avit::<f32>::new(model, registry.len(), config.seed)?;
        model.config.drop_path_rate = config.drop_path;
        Self::assemble(ds, systems, ids, model, registry, config)
    }

    /// Continues from pretrained weights with a fresh optimizer, pool and
    /// log. Field names the model has not seen are appended to its
    /// registry and filters first.
    pub fn from_pretrained(
        pre: &TrainState,
        ds: &Dataset,
        systems: &[String],
        ids: &[Vec<usize>],
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut model = pre.model.clone();
        let mut registry = pre.registry.clone();
        let mut unseen = Vec::new();
        for name in systems {
            for f in &ds.manifest().system(name)?.fields {
                if !registry.contains(f) && !unseen.contains(f) {
                    unseen.push(f.clone());
                }
            }
        }
        if !unseen.is_empty() {
            registry.register(&unseen)?;
            model.extend_filters(unseen.len(), config.seed)?;
        }
        model.config.drop_path_rate = config.drop_path;
        Self::assemble(ds, systems, ids, model, registry, config)
    }

    fn assemble(
        ds: &Dataset,
        systems: &[String],
        ids: &[Vec<usize>],
        model: Avit<f32>,
        registry: FieldRegistry,
        config: TrainConfig,
    ) -> Result<Self> {
        if model.config.history != DEFAULT_HISTORY {
            return Err(MppError::config(format!("training uses context length {DEFAULT_HISTORY}")));
        }
        let pool = pool_for(ds, systems, ids)?;
        if (0..systems.len()).all(|s| pool.total(s) < config.micro_batch_size) && config.total_updates > 0 {
            return Err(MppError::Empty("training pool smaller than one micro-batch"));
        }
        Ok(Self {
            opt: AdamW::new(&model.params, config.weight_decay),
            model,
            registry,
            rng: train_rng(config.seed),
            config,
            update: 0,
            pool,
            log: Vec::new(),
            epoch_loss_sum: 0.0,
            epoch_loss_count: 0,
            best_val: None,
        })
    }

    pub fn bind<'a>(&'a self, ds: &Dataset) -> BoundModel<'a> {
        BoundModel::new(&self.model, &self.registry, ds)
    }

    fn load_windows(&self, bound: &BoundModel, ds: &Dataset, items: &[(usize, usize)]) -> Result<Vec<HistoryWindow<f32>>> {
        items
            .iter()
            .map(|&(id, t0)| {
                let mut w = ds.window::<f32>(id, t0, DEFAULT_HISTORY)?;
                bound.rebind(&mut w)?;
                Ok(w)
            })
            .collect()
    }

    /// One optimizer update from `accum_steps` micro-batches; returns the
    /// mean NMSE of the samples used.
    pub fn accumulate_update(&mut self, ds: &Dataset) -> Result<f64> {
        let c = self.config.clone();
        let mut grads = self.model.params.zeros_like();
        let bound = BoundModel::new(&self.model, &self.registry, ds);
        let scale = 1.0 / (c.micro_batch_size * c.accum_steps) as f64;
        let mut loss = 0.0;
        for _ in 0..c.accum_steps {
            let (_, items) = match sample_microbatch(&mut self.pool, c.micro_batch_size, &mut self.rng) {
                Some(x) => x,
                None => {
                    self.pool.reset();
                    sample_microbatch(&mut self.pool, c.micro_batch_size, &mut self.rng)
                        .ok_or(MppError::Empty("training pool smaller than one micro-batch"))?
                }
            };
            let windows = self.load_windows(&bound, ds, &items)?;
            let keeps: Vec<Option<Vec<[f32; 4]>>> = windows
                .iter()
                .map(|_| (self.model.config.drop_path_rate > 0.0).then(|| self.model.sample_keep(&mut self.rng)))
                .collect();
            loss += sample_gradients(&self.model, &windows, &keeps, c.eps_loss, scale, &mut grads).map_err(|e| MppError::Diverged {
                update: self.update,
                detail: e.to_string(),
            })?;
        }
        let loss = loss * scale;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(MppError::Diverged {
                update: self.update,
                detail: format!("loss {loss}, gradient finite: {}", grads.all_finite()),
            });
        }
        clip_global_norm(&mut grads, c.grad_clip);
        let lr = c.lr_at(self.update);
        self.opt.apply(&mut self.model.params, &grads, lr);
        self.update += 1;
        Ok(loss)
    }

    /// Validation T+1 NRMSE per system on up to `val_trajectories` ids.
    pub fn validate(&self, ds: &Dataset) -> Result<BTreeMap<String, f64>> {
        let opts = EvalOptions {
            k: 1,
            max_trajectories: Some(self.config.val_trajectories),
            ..EvalOptions::default()
        };
        let systems = self.pool.systems().to_vec();
        let reports = evaluate_suite(&self.bind(ds), ds, Split::Val, Some(&systems), &opts)?;
        Ok(reports.into_iter().map(|(k, r)| (k, r.t1)).collect())
    }

    /// Trains until `stop` updates have been made (capped at the budget).
    /// At every epoch end the log grows by one row and, if `out_dir` is
    /// given, `last.ckpt` and `best.ckpt` are written there.
    pub fn run_until(&mut self, ds: &Dataset, stop: usize, out_dir: Option<&Path>) -> Result<()> {
        let stop = stop.min(self.config.total_updates);
        while self.update < stop {
            let lr = self.config.lr_at(self.update);
            let loss = self.accumulate_update(ds)?;
            self.epoch_loss_sum += loss;
            self.epoch_loss_count += 1;
            let epoch_end = self.update.is_multiple_of(self.config.epoch_updates);
            if epoch_end || self.update == self.config.total_updates {
                let val = self.validate(ds)?;
                let mean_val = val.values().sum::<f64>() / val.len().max(1) as f64;
                self.log.push(EpochLog {
                    update: self.update,
                    lr,
                    train_nmse: self.epoch_loss_sum / self.epoch_loss_count as f64,
                    val_nrmse: val,
                });
                self.epoch_loss_sum = 0.0;
                self.epoch_loss_count = 0;
                if epoch_end {
                    self.pool.reset();
                }
                let improved = self.best_val.is_none_or(|b| mean_val < b);
                if improved {
                    self.best_val = Some(mean_val);
                }
                if let Some(dir) = out_dir {
                    save_checkpoint(self, &dir.join("last.ckpt"))?;
                    if improved {
                        save_checkpoint(self, &dir.join("best.ckpt"))?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn run(&mut self, ds: &Dataset, out_dir: Option<&Path>) -> Result<()> {
        self.run_until(ds, self.config.total_updates, out_dir)?;
        if let Some(dir) = out_dir {
            save_checkpoint(self, &dir.join("final.ckpt"))?;
        }
        Ok(())
    }
}

/// Training ids of each named system.
pub fn train_ids(ds: &Dataset, systems: &[String]) -> Result<Vec<Vec<usize>>> {
    systems
        .iter()
        .map(|s| {
            ds.manifest().system(s)?;
            let ids = ds.ids(s, Split::Train);
            if ids.is_empty() {
                return Err(MppError::Empty("training split"));
            }
            Ok(ids)
        })
        .collect()
}

/// The first `n` training ids of `system` after a seeded shuffle; subsets
/// for growing `n` are nested.
pub fn restricted_ids(ds: &Dataset, system: &str, n: usize, seed: u64) -> Result<Vec<usize>> {
    let mut ids = ds.ids(system, Split::Train);
    if n > ids.len() {
        return Err(MppError::config(format!(
            "{n} training samples requested but `{system}` has {} training trajectories",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    ids.shuffle(&mut rng);
    ids.truncate(n);
    ids.sort_unstable();
    Ok(ids)
}

/// Multi-system pretraining on the training splits of `systems`.
pub fn pretrain(ds: &Dataset, systems: &[String], model: ModelConfig, config: TrainConfig, out_dir: Option<&Path>) -> Result<TrainState> {
    let ids = train_ids(ds, systems)?;
    let mut state = TrainState::scratch(ds, systems, &ids, model, config)?;
    state.run(ds, out_dir)?;
    Ok(state)
}

/// Training state for finetuning on `n_samples` training trajectories of
/// `system`, from `init` or from scratch.
pub fn finetune_state(
    init: Option<&TrainState>,
    ds: &Dataset,
    system: &str,
    n_samples: usize,
    model: ModelConfig,
    config: TrainConfig,
) -> Result<TrainState> {
    let systems = vec![system.to_string()];
    let ids = vec![restricted_ids(ds, system, n_samples, config.seed)?];
    match init {
        Some(pre) => TrainState::from_pretrained(pre, ds, &systems, &ids, config),
        None => TrainState::scratch(ds, &systems, &ids, model, config),
    }
}

/// `k`-step rollout report of `state` on the test split of `system`.
pub fn test_report(state: &TrainState, ds: &Dataset, system: &str, k: usize) -> Result<RolloutReport> {
    let opts = EvalOptions { k, ..EvalOptions::default() };
    let systems = vec![system.to_string()];
    let mut reports = evaluate_suite(&state.bind(ds), ds, Split::Test, Some(&systems), &opts)?;
    reports.remove(system).ok_or(MppError::Empty("test split"))
}

/// Full finetuning on `n_samples` training trajectories of `system`
/// (from scratch when `init` is `None`), followed by a `k`-step rollout
/// evaluation on the test split.
pub fn finetune(
    init: Option<&TrainState>,
    ds: &Dataset,
    system: &str,
    n_samples: usize,
    model: ModelConfig,
    config: TrainConfig,
    k: usize,
    out_dir: Option<&Path>,
) -> Result<(TrainState, RolloutReport)> {
    let mut state = finetune_state(init, ds, system, n_samples, model, config)?;
    state.run(ds, out_dir)?;
    let report = test_report(&state, ds, system, k)?;
    Ok((state, report))
}
