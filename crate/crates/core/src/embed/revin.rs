use ndarray::{s, Array3, Array4, Axis};

use crate::error::{MppError, Result};
use crate::real::Real;

/// Stability constant added to the per-field standard deviation.
pub const EPS_NORM: f64 = 1e-5;

/// Per-field statistics of an input window, kept for denormalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps_norm: f64,
}

impl NormStats {
    /// The divisor `std + eps_norm` of field `f`.
    pub fn scale(&self, f: usize) -> f64 {
        self.std[f] + self.eps_norm
    }

    pub fn n_fields(&self) -> usize {
        self.mean.len()
    }
}

/// Standardises each field of `frames` (`[T, F, H, W]`) with mean and
/// population std taken over all frames and grid points.
pub fn revin_normalize<F: Real>(frames: &Array4<F>) -> (Array4<F>, NormStats) {
    let n_fields = frames.dim().1;
    let mut mean = Vec::with_capacity(n_fields);
    let mut std = Vec::with_capacity(n_fields);
    let mut out = frames.clone();
    for f in 0..n_fields {
        let view = frames.index_axis(Axis(1), f);
        let n = view.len() as f64;
        let m = view.iter().map(|x| x.f64()).sum::<f64>() / n;
        let var = view.iter().map(|x| (x.f64() - m).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = F::c(sd + EPS_NORM);
        let mf = F::c(m);
        out.slice_mut(s![.., f, .., ..]).mapv_inplace(|x| (x - mf) / scale);
        mean.push(m);
        std.push(sd);
    }
    (
        out,
        NormStats {
            mean,
            std,
            eps_norm: EPS_NORM,
        },
    )
}

/// `y = y_hat (std + eps) + mean` per field of `[F, H, W]`.
pub fn revin_denormalize<F: Real>(pred: &Array3<F>, stats: &NormStats) -> Result<Array3<F>> {
    if pred.dim().0 != stats.n_fields() {
        return Err(MppError::shape(format!(
            "prediction has {} fields, statistics have {}",
            pred.dim().0,
            stats.n_fields()
        )));
    }
    let mut out = pred.clone();
    for (f, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let scale = F::c(stats.scale(f));
        let mean = F::c(stats.mean[f]);
        plane.mapv_inplace(|x| x * scale + mean);
    }
    Ok(out)
}

/// Gradient with respect to the raw frames of a loss that depends on them
/// through the normalised frames (`d_norm`) and through the statistics used
/// by [`revin_denormalize`] (`d_out` applied to `pred_norm`).
pub fn revin_backward<F: Real>(
    frames: &Array4<F>,
    stats: &NormStats,
    d_norm: &Array4<F>,
    pred_norm: &Array3<F>,
    d_out: &Array3<F>,
) -> Array4<F> {
    let mut grad = Array4::<F>::zeros(frames.raw_dim());
    for f in 0..stats.n_fields() {
        let x = frames.index_axis(Axis(1), f);
        let dn = d_norm.index_axis(Axis(1), f);
        let n = x.len() as f64;
        let mu = stats.mean[f];
        let sigma = stats.std[f];
        let s = stats.scale(f);
        let d_mean_direct: f64 = d_out.index_axis(Axis(0), f).iter().map(|v| v.f64()).sum();
        let d_scale_direct: f64 = d_out
            .index_axis(Axis(0), f)
            .iter()
            .zip(pred_norm.index_axis(Axis(0), f).iter())
            .map(|(a, b)| a.f64() * b.f64())
            .sum();
        let sum_dn: f64 = dn.iter().map(|v| v.f64()).sum();
        let sum_dn_x: f64 = dn.iter().zip(x.iter()).map(|(a, b)| a.f64() * (b.f64() - mu)).sum();
        let g_mean = d_mean_direct - sum_dn / s;
        let g_scale = d_scale_direct - sum_dn_x / (s * s);
        let mut out = grad.index_axis_mut(Axis(1), f);
        ndarray::Zip::from(&mut out).and(&x).and(&dn).for_each(|g, &xv, &dv| {
            let centered = xv.f64() - mu;
            let d_sigma = if sigma > 0.0 { centered / (n * sigma) } else { 0.0 };
            *g = F::c(dv.f64() / s + g_mean / n + g_scale * d_sigma);
        });
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_field_normalises_to_zero() {
        let frames = Array4::from_elem((4, 1, 8, 1), 3.5f64);
        let (norm, stats) = revin_normalize(&frames);
        assert!(norm.iter().all(|&x| x == 0.0));
        assert_eq!(stats.mean, vec![3.5]);
        assert_eq!(stats.std, vec![0.0]);
    }

    #[test]
    fn denormalize_constants() {
        let stats = NormStats {
            mean: vec![2.0, -1.0],
            std: vec![0.5, 3.0],
            eps_norm: EPS_NORM,
        };
        let zeros = Array3::<f64>::zeros((2, 4, 1));
        let out = revin_denormalize(&zeros, &stats).unwrap();
        assert!(out.index_axis(Axis(0), 0).iter().all(|&x| x == 2.0));
        let ones = Array3::<f64>::ones((2, 4, 1));
        let out = revin_denormalize(&ones, &stats).unwrap();
        assert!(out.index_axis(Axis(0), 1).iter().all(|&x| (x - (-1.0 + 3.0 + EPS_NORM)).abs() < 1e-15));
        assert!(revin_denormalize(&Array3::<f64>::zeros((3, 4, 1)), &stats).is_err());
    }

    #[test]
    fn standardisation_identity() {
        let frames = Array4::from_shape_fn((3, 2, 6, 1), |(t, f, h, _)| ((t * 13 + f * 5 + h) as f64 * 0.71).sin() * (f + 1) as f64 + f as f64);
        let (norm, stats) = revin_normalize(&frames);
        for f in 0..2 {
            let v = norm.index_axis(Axis(1), f);
            let m = v.mean().unwrap();
            let sd = (v.mapv(|x| (x - m).powi(2)).mean().unwrap()).sqrt();
            assert!(m.abs() <= 1e-6);
            assert!((sd - stats.std[f] / (stats.std[f] + EPS_NORM)).abs() < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn round_trip(vals in proptest::collection::vec(-50.0f64..50.0, 4 * 8), offset in -10.0f64..10.0) {
            let frames = Array4::from_shape_vec((4, 1, 8, 1), vals).unwrap().mapv(|x| x + offset);
            let (norm, stats) = revin_normalize(&frames);
            // treat the last normalised frame as a prediction
            let pred = norm.slice(s![3, .., .., ..]).to_owned();
            let back = revin_denormalize(&pred, &stats).unwrap();
            for (a, b) in back.iter().zip(frames.slice(s![3, .., .., ..]).iter()) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }
}
