use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use super::loss::nrmse_fields;
use crate::backbone::Avit;
use crate::data::{Dataset, HistoryWindow, Split};
use crate::error::{MppError, Result};
use crate::pde::{exact_spectral_step, BurgersSolver, Coefficients, Family, SystemSpec};
use crate::real::Real;

/// Anything that maps a history window to the next snapshot.
pub trait Predictor {
    fn predict_next(&self, window: &HistoryWindow<f64>) -> Result<Array3<f64>>;
}

impl<F: Real> Predictor for Avit<F> {
    fn predict_next(&self, window: &HistoryWindow<f64>) -> Result<Array3<f64>> {
        let w = window.cast::<F>();
        let (pred, _) = self.forward(&w.frames, &w.field_indices, w.periodic, None)?;
        Ok(pred.mapv(|x| x.f64()))
    }
}

/// Returns the newest context frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct Persistence;

impl Predictor for Persistence {
    fn predict_next(&self, window: &HistoryWindow<f64>) -> Result<Array3<f64>> {
        let t = window.history();
        Ok(window.frames.slice(s![t - 1, .., .., ..]).to_owned())
    }
}

/// Always predicts zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullModel;

impl Predictor for NullModel {
    fn predict_next(&self, window: &HistoryWindow<f64>) -> Result<Array3<f64>> {
        Ok(Array3::zeros(window.target.raw_dim()))
    }
}

/// The generating solver used as a model: advances the newest frame by
/// one `dt` with the trajectory's own coefficients.
#[derive(Debug, Clone, Default)]
pub struct SpectralOracle {
    systems: HashMap<String, SystemSpec>,
    coefficients: HashMap<usize, Coefficients>,
}

impl SpectralOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        let m = ds.manifest();
        let mut o = Self::new();
        for s in &m.systems {
            o.systems.insert(s.name.clone(), s.clone());
        }
        for r in &m.trajectory_index {
            o.coefficients.insert(r.id, r.coefficients.clone());
        }
        o
    }

    pub fn insert(&mut self, id: usize, spec: &SystemSpec, coefficients: &Coefficients) {
        self.systems.insert(spec.name.clone(), spec.clone());
        self.coefficients.insert(id, coefficients.clone());
    }
}

impl Predictor for SpectralOracle {
    fn predict_next(&self, window: &HistoryWindow<f64>) -> Result<Array3<f64>> {
        let spec = self.systems.get(&window.system).ok_or_else(|| MppError::Unknown {
            kind: "system",
            name: window.system.clone(),
        })?;
        let c = self.coefficients.get(&window.trajectory).ok_or_else(|| MppError::Unknown {
            kind: "trajectory id",
            name: window.trajectory.to_string(),
        })?;
        let t = window.history();
        let mut out = Array3::zeros(window.target.raw_dim());
        for f in 0..window.n_fields() {
            let u = window.frames.slice(s![t - 1, f, .., ..]).to_owned();
            let next = match spec.family {
                Family::Burgers => BurgersSolver::new(spec.n, spec.length, c.delta)?.evolve(&u, spec.dt)?,
                _ => exact_spectral_step(&u, &c.v, c.delta, spec.dt, spec.length)?,
            };
            out.slice_mut(s![f, .., ..]).assign(&next);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    pub predictions: Vec<Array3<f64>>,
    /// Step (1-based) at which the prediction first became non-finite.
    pub diverged_at: Option<usize>,
}

/// Feeds each prediction back as the newest frame for `k` steps. Stops at
/// the first non-finite prediction and flags it.
pub fn rollout(model: &dyn Predictor, window: &HistoryWindow<f64>, k: usize) -> Result<RolloutOutput> {
    if k == 0 {
        return Err(MppError::config("rollout needs k >= 1"));
    }
    let mut w = window.clone();
    let mut predictions = Vec::with_capacity(k);
    for step in 1..=k {
        let pred = match model.predict_next(&w) {
            Ok(p) => p,
            Err(MppError::NonFinite(_)) => {
                return Ok(RolloutOutput {
                    predictions,
                    diverged_at: Some(step),
                })
            }
            Err(e) => return Err(e),
        };
        if pred.iter().any(|x| !x.is_finite()) {
            predictions.push(pred);
            return Ok(RolloutOutput {
                predictions,
                diverged_at: Some(step),
            });
        }
        w.advance(&pred, None);
        predictions.push(pred);
    }
    Ok(RolloutOutput {
        predictions,
        diverged_at: None,
    })
}

/// NRMSE summary of rollouts for one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub system: String,
    pub fields: Vec<String>,
    pub examples: usize,
    /// `[step][field]`, each averaged over examples.
    pub per_step_field: Vec<Vec<f64>>,
    /// Mean over fields of `per_step_field`.
    pub per_step: Vec<f64>,
    pub t1: f64,
    /// Mean of steps 1..=min(5, k).
    pub mean5: f64,
    /// Number of rollouts that produced a non-finite prediction.
    pub diverged: usize,
}

impl RolloutReport {
    fn from_errors(system: &str, fields: &[String], errors: &[Vec<Vec<f64>>], diverged: usize) -> Result<Self> {
        if errors.is_empty() {
            return Err(MppError::Empty("evaluation windows"));
        }
        let k = errors[0].len();
        let nf = fields.len();
        let n = errors.len() as f64;
        let mut per_step_field = vec![vec![0.0; nf]; k];
        for ex in errors {
            for (s, row) in ex.iter().enumerate() {
                for (f, v) in row.iter().enumerate() {
                    per_step_field[s][f] += v / n;
                }
            }
        }
        let per_step: Vec<f64> = per_step_field.iter().map(|r| r.iter().sum::<f64>() / nf as f64).collect();
        let m = k.min(5);
        Ok(Self {
            system: system.to_string(),
            fields: fields.to_vec(),
            examples: errors.len(),
            t1: per_step[0],
            mean5: per_step[..m].iter().sum::<f64>() / m as f64,
            per_step,
            per_step_field,
            diverged,
        })
    }
}

/// Per-step, per-field NRMSE of one rollout against `truth[step]`. Steps
/// after a divergence are reported as infinite.
fn score(out: &RolloutOutput, truth: &[Array3<f64>], nf: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(truth.len());
    for (s, u) in truth.iter().enumerate() {
        match out.predictions.get(s) {
            Some(p) if p.iter().all(|x| x.is_finite()) => rows.push(nrmse_fields(p, u)?),
            _ => rows.push(vec![f64::INFINITY; nf]),
        }
    }
    Ok(rows)
}

/// Rollout of `k` steps from the window at `t0` of trajectory `id`, scored
/// against the stored trajectory.
pub fn rollout_report(model: &dyn Predictor, ds: &Dataset, id: usize, t0: usize, history: usize, k: usize) -> Result<RolloutReport> {
    let window = ds.window::<f64>(id, t0, history)?;
    let truth = (0..k).map(|s| ds.snapshot::<f64>(id, t0 + history + s)).collect::<Result<Vec<_>>>()?;
    let out = rollout(model, &window, k)?;
    let spec = ds.manifest().system(&window.system)?;
    let errors = score(&out, &truth, window.n_fields())?;
    RolloutReport::from_errors(&window.system, &spec.fields, &[errors], usize::from(out.diverged_at.is_some()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: usize,
    pub history: usize,
    /// Spacing of evaluated window starts; every trajectory contributes the
    /// starts `0, stride, ...` that leave room for `k` steps.
    pub t0_stride: usize,
    /// Cap on trajectories per system (`None` evaluates the whole split).
    pub max_trajectories: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 5,
            history: crate::data::DEFAULT_HISTORY,
            t0_stride: usize::MAX,
            max_trajectories: None,
        }
    }
}

/// Rollout reports for every system of the dataset on `split`, iterating
/// systems by name and trajectories by id.
pub fn evaluate_suite(
    model: &dyn Predictor,
    ds: &Dataset,
    split: Split,
    systems: Option<&[String]>,
    opts: &EvalOptions,
) -> Result<BTreeMap<String, RolloutReport>> {
    if opts.k == 0 {
        return Err(MppError::config("evaluation needs k >= 1"));
    }
    let mut names: Vec<String> = match systems {
        Some(s) => s.to_vec(),
        None => ds.manifest().systems.iter().map(|s| s.name.clone()).collect(),
    };
    names.sort();
    let mut out = BTreeMap::new();
    for name in names {
        let spec = ds.manifest().system(&name)?;
        let mut ids = ds.ids(&name, split);
        ids.sort_unstable();
        if let Some(cap) = opts.max_trajectories {
            ids.truncate(cap);
        }
        if ids.is_empty() {
            return Err(MppError::Empty("evaluation split"));
        }
        let mut errors = Vec::new();
        let mut diverged = 0;
        for id in ids {
            let n_steps = ds.manifest().record(id)?.n_steps;
            if n_steps < opts.history + opts.k {
                return Err(MppError::WindowRange {
                    t0: 0,
                    t: opts.history + opts.k,
                    n_steps,
                });
            }
            let last = n_steps - opts.history - opts.k;
            let mut t0 = 0;
            loop {
                let window = ds.window::<f64>(id, t0, opts.history)?;
                let truth = (0..opts.k)
                    .map(|s| ds.snapshot::<f64>(id, t0 + opts.history + s))
                    .collect::<Result<Vec<_>>>()?;
                let r = rollout(model, &window, opts.k)?;
                diverged += usize::from(r.diverged_at.is_some());
                errors.push(score(&r, &truth, window.n_fields())?);
                match t0.checked_add(opts.t0_stride.max(1)) {
                    Some(next) if next <= last => t0 = next,
                    _ => break,
                }
            }
        }
        out.insert(name.clone(), RolloutReport::from_errors(&name, &spec.fields, &errors, diverged)?);
    }
    Ok(out)
}
