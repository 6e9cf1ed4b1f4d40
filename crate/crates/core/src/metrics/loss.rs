use ndarray::{Array3, ArrayBase, Axis, Data, Dimension, Ix3};
use serde::{Deserialize, Serialize};

use crate::error::{MppError, Result};
use crate::real::Real;

pub const EPS_LOSS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub eps_loss: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { eps_loss: EPS_LOSS }
    }
}

fn check<F: Real, S: Data<Elem = F>, T: Data<Elem = F>, D: Dimension>(
    pred: &ArrayBase<S, D>,
    target: &ArrayBase<T, D>,
) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(MppError::shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    if pred.iter().chain(target.iter()).any(|x| !x.is_finite()) {
        return Err(MppError::NonFinite("loss input"));
    }
    Ok(())
}

fn sq_err<F: Real, S: Data<Elem = F>, T: Data<Elem = F>, D: Dimension>(
    pred: &ArrayBase<S, D>,
    target: &ArrayBase<T, D>,
) -> (f64, f64) {
    pred.iter().zip(target.iter()).fold((0.0, 0.0), |(e, n), (p, u)| {
        let (p, u) = (p.f64(), u.f64());
        (e + (p - u) * (p - u), n + u * u)
    })
}

/// `||pred - target||^2 / (||target||^2 + eps)` over all fields and points.
pub fn nmse_sample<F: Real, S: Data<Elem = F>, T: Data<Elem = F>, D: Dimension>(
    pred: &ArrayBase<S, D>,
    target: &ArrayBase<T, D>,
    eps: f64,
) -> Result<f64> {
    check(pred, target)?;
    let (e, n) = sq_err(pred, target);
    Ok(e / (n + eps))
}

/// Mean of [`nmse_sample`] over a micro-batch.
pub fn nmse<F: Real>(preds: &[Array3<F>], targets: &[Array3<F>], eps: f64) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(MppError::shape("prediction and target batches must be equal and non-empty"));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        total += nmse_sample(p, t, eps)?;
    }
    Ok(total / preds.len() as f64)
}

/// Gradient of [`nmse_sample`] with respect to the prediction.
pub fn nmse_grad<F: Real>(pred: &Array3<F>, target: &Array3<F>, eps: f64) -> Array3<F> {
    let (_, n) = sq_err(pred, target);
    let scale = F::c(2.0 / (n + eps));
    let mut g = pred - target;
    g.mapv_inplace(|v| v * scale);
    g
}

/// Per-field `sqrt(||p_f - u_f||^2 / (||u_f||^2 + eps))` of one `[F, H, W]` example.
pub fn nrmse_fields<F: Real, S: Data<Elem = F>, T: Data<Elem = F>>(
    pred: &ArrayBase<S, Ix3>,
    target: &ArrayBase<T, Ix3>,
) -> Result<Vec<f64>> {
    check(pred, target)?;
    Ok(pred
        .axis_iter(Axis(0))
        .zip(target.axis_iter(Axis(0)))
        .map(|(p, u)| {
            let (e, n) = sq_err(&p, &u);
            (e / (n + EPS_LOSS)).sqrt()
        })
        .collect())
}

/// Square root per field, mean over fields, then mean over examples.
pub fn nrmse<F: Real>(preds: &[Array3<F>], targets: &[Array3<F>]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(MppError::shape("prediction and target batches must be equal and non-empty"));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        let per = nrmse_fields(p, t)?;
        total += per.iter().sum::<f64>() / per.len() as f64;
    }
    Ok(total / preds.len() as f64)
}
