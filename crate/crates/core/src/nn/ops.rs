use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::real::Real;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through one `exp`; several times cheaper than the libm routine.
#[inline]
fn fast_tanh<F: Real>(u: F) -> F {
    let two = F::c(2.0);
    F::one() - two / ((two * u).exp() + F::one())
}

/// Tanh-approximated GeLU.
pub fn gelu<F: Real>(x: &Array2<F>) -> Array2<F> {
    let c = F::c(GELU_C);
    let a = F::c(GELU_A);
    let half = F::c(0.5);
    x.mapv(|v| half * v * (F::one() + fast_tanh(c * (v + a * v * v * v))))
}

/// Gradient through [`gelu`] given its pre-activation input.
pub fn gelu_backward<F: Real>(pre: &Array2<F>, grad_out: &Array2<F>) -> Array2<F> {
    let c = F::c(GELU_C);
    let a = F::c(GELU_A);
    let three_a = F::c(3.0 * GELU_A);
    let half = F::c(0.5);
    let mut out = grad_out.clone();
    ndarray::Zip::from(&mut out).and(pre).for_each(|g, &v| {
        let t = fast_tanh(c * (v + a * v * v * v));
        let d = half * (F::one() + t) + half * v * (F::one() - t * t) * c * (F::one() + three_a * v * v);
        *g *= d;
    });
    out
}

/// `x W + b`, rows are tokens.
pub fn linear<F: Real>(x: &ArrayView2<F>, w: &ArrayView2<F>, b: Option<ArrayView1<F>>) -> Array2<F> {
    let mut y = x.dot(w);
    if let Some(b) = b {
        y += &b;
    }
    y
}

/// Accumulates `dW += x^T dy`, `db += sum(dy)` and returns `dx = dy W^T`.
pub fn linear_backward<F: Real>(
    x: &ArrayView2<F>,
    w: &ArrayView2<F>,
    dy: &ArrayView2<F>,
    mut dw: ndarray::ArrayViewMut2<F>,
    db: Option<ndarray::ArrayViewMut1<F>>,
) -> Array2<F> {
    ndarray::linalg::general_mat_mul(F::one(), &x.t(), dy, F::one(), &mut dw);
    if let Some(mut db) = db {
        db += &dy.sum_axis(Axis(0));
    }
    dy.dot(&w.t())
}

/// Per-channel normalisation over all rows (token positions) of one sample,
/// with learnable affine.
#[derive(Debug, Clone, Copy)]
pub struct InstanceNorm {
    pub eps: f64,
}

impl Default for InstanceNorm {
    fn default() -> Self {
        Self { eps: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct NormCache<F> {
    pub xhat: Array2<F>,
    pub inv_std: Array1<F>,
}

impl InstanceNorm {
    pub fn forward<F: Real>(&self, x: &Array2<F>, gamma: ArrayView1<F>, beta: ArrayView1<F>) -> (Array2<F>, NormCache<F>) {
        let n = F::c(x.nrows() as f64);
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let eps = F::c(self.eps);
        let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
        let xhat = centered * &inv_std;
        let y = &xhat * &gamma + beta;
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward<F: Real>(
        &self,
        cache: &NormCache<F>,
        gamma: ArrayView1<F>,
        dy: &Array2<F>,
        mut dgamma: ndarray::ArrayViewMut1<F>,
        mut dbeta: ndarray::ArrayViewMut1<F>,
    ) -> Array2<F> {
        let n = F::c(dy.nrows() as f64);
        dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        dbeta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &gamma;
        let mean_d = dxhat.sum_axis(Axis(0)) / n;
        let mean_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0)) / n;
        let mut dx = dxhat - &mean_d;
        dx -= &(&cache.xhat * &mean_dx);
        dx * &cache.inv_std
    }
}
