//! Central finite-difference verification of the hand-written gradients.

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{Avit, ModelConfig};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    /// `|a - n| / max(|a|, |n|)` over the whole tensor.
    pub rel_error: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.rel_error <= self.tolerance)
    }
}

/// Relative error between analytic and numeric gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

/// Randomised inputs for a check: a model with every parameter perturbed
/// away from its structured initialisation, a window and a loss weighting.
pub struct Probe {
    pub model: Avit<f64>,
    pub frames: Array4<f64>,
    pub fields: Vec<usize>,
    pub periodic: [bool; 2],
    pub weights: Array3<f64>,
}

impl Probe {
    pub fn new(config: ModelConfig, spatial: [usize; 2], n_fields: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Avit::<f64>::new(config, n_fields + 1, seed)?;
        for t in model.params.tensors_mut() {
            t.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
        }
        let history = model.config.history;
        let frames = Array4::from_shape_fn((history, n_fields, spatial[0], spatial[1]), |_| rng.random_range(-1.0..1.0));
        let weights = Array3::from_shape_fn((n_fields, spatial[0], spatial[1]), |_| rng.random_range(-1.0..1.0));
        // Skip registry slot 0 so sub-selection is exercised.
        let fields = (1..=n_fields).collect();
        Ok(Self {
            model,
            frames,
            fields,
            periodic: [true, spatial[1] > 1],
            weights,
        })
    }

    pub fn loss(&self, model: &Avit<f64>, frames: &Array4<f64>) -> Result<f64> {
        let (pred, _) = model.forward(frames, &self.fields, self.periodic, None)?;
        Ok((&pred * &self.weights).sum())
    }
}

/// Knobs for [`check_model_with`].
#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen entries per tensor.
    pub max_elements: Option<usize>,
    /// Test hook: perturbs the analytic gradient of the named tensor so the
    /// check is expected to fail on it.
    pub corrupt: Option<String>,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            max_elements: None,
            corrupt: None,
            seed: 0,
        }
    }
}

/// Checks every parameter tensor and the input window of `probe.model`.
pub fn check_model(probe: &Probe, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    check_model_with(
        probe,
        &CheckOptions {
            step,
            tolerance,
            ..CheckOptions::default()
        },
    )
}

fn chosen(len: usize, max: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match max {
        Some(m) if m < len => rand::seq::index::sample(rng, len, m).into_vec(),
        _ => (0..len).collect(),
    }
}

pub fn check_model_with(probe: &Probe, opts: &CheckOptions) -> Result<GradCheckReport> {
    let step = opts.step;
    let model = &probe.model;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (_, cache) = model.forward(&probe.frames, &probe.fields, probe.periodic, None)?;
    let mut grads = model.params.zeros_like();
    let d_frames = model.backward(&cache, &probe.weights, &mut grads);
    if let Some(name) = &opts.corrupt {
        let p = model.params.find(name).ok_or_else(|| crate::MppError::Unknown {
            kind: "parameter tensor",
            name: name.clone(),
        })?;
        grads.get_mut(p).mapv_inplace(|g| 1.5 * g + 0.1);
    }

    let mut tensors = Vec::new();
    let mut work = model.clone();
    for (k, name) in model.params.names().iter().enumerate() {
        let all = grads.tensors()[k].as_slice_memory_order().expect("contiguous");
        let idx = chosen(all.len(), opts.max_elements, &mut rng);
        let analytic: Vec<f64> = idx.iter().map(|&i| all[i]).collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        for &i in &idx {
            let orig = model.params.tensors()[k].as_slice_memory_order().expect("contiguous")[i];
            let mut eval = |v: f64| -> Result<f64> {
                work.params.tensors_mut()[k].as_slice_memory_order_mut().expect("contiguous")[i] = v;
                probe.loss(&work, &probe.frames)
            };
            let plus = eval(orig + step)?;
            let minus = eval(orig - step)?;
            eval(orig)?;
            numeric.push((plus - minus) / (2.0 * step));
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            elements: analytic.len(),
            rel_error: relative_error(&analytic, &numeric),
            grad_norm: analytic.iter().map(|a| a * a).sum::<f64>().sqrt(),
        });
    }

    let all = d_frames.as_slice().expect("contiguous");
    let idx = chosen(all.len(), opts.max_elements, &mut rng);
    let analytic: Vec<f64> = idx.iter().map(|&i| all[i]).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut frames = probe.frames.clone();
    for &i in &idx {
        let orig = frames.as_slice().expect("contiguous")[i];
        frames.as_slice_mut().expect("contiguous")[i] = orig + step;
        let plus = probe.loss(model, &frames)?;
        frames.as_slice_mut().expect("contiguous")[i] = orig - step;
        let minus = probe.loss(model, &frames)?;
        frames.as_slice_mut().expect("contiguous")[i] = orig;
        numeric.push((plus - minus) / (2.0 * step));
    }
    tensors.push(TensorCheck {
        name: "input".into(),
        elements: analytic.len(),
        rel_error: relative_error(&analytic, &numeric),
        grad_norm: analytic.iter().map(|a| a * a).sum::<f64>().sqrt(),
    });
    Ok(GradCheckReport {
        step,
        tolerance: opts.tolerance,
        tensors,
    })
}
