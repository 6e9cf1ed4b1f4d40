//! Multi-head attention along one axis of a `[T, H, W]` token grid.
//!
//! Tokens are `[T*H*W, D]` with rows ordered `(t, h, w)`. Every line of
//! tokens along the chosen axis is an independent sequence; only
//! `n_tokens * axis_len` scores are ever formed.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::rpe::RpeConfig;
use crate::error::{MppError, Result};
use crate::nn::{Param, ParamSet};
use crate::real::Real;

/// Epsilon inside the square root of the QK L2 normalisation.
pub const QK_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisKind {
    Time,
    Height,
    Width,
}

impl AxisKind {
    pub const ALL: [AxisKind; 3] = [AxisKind::Time, AxisKind::Height, AxisKind::Width];

    fn index(self) -> usize {
        match self {
            AxisKind::Time => 0,
            AxisKind::Height => 1,
            AxisKind::Width => 2,
        }
    }

    /// Sequence starts, element stride and length along this axis.
    pub fn sequences(self, dims: [usize; 3]) -> (Vec<usize>, usize, usize) {
        let [t, h, w] = dims;
        match self {
            AxisKind::Time => ((0..h * w).collect(), h * w, t),
            AxisKind::Height => {
                let mut bases = Vec::with_capacity(t * w);
                for ti in 0..t {
                    for wi in 0..w {
                        bases.push(ti * h * w + wi);
                    }
                }
                (bases, w, h)
            }
            AxisKind::Width => ((0..t * h).map(|r| r * w).collect(), 1, w),
        }
    }

    pub fn len(self, dims: [usize; 3]) -> usize {
        dims[self.index()]
    }
}

/// Handles of one attention parameter group inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnHandles {
    /// `[D, 3D]`, columns are Q | K | V.
    pub wqkv: Param,
    /// `[D, D]`.
    pub wo: Param,
    /// `[D]`.
    pub bo: Param,
    /// Per-head QK temperature, `[heads]`.
    pub tau: Param,
    /// Relative position bias table, `[buckets, heads]`.
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct AttnCache<F> {
    axis: AxisKind,
    dims: [usize; 3],
    input: Array2<F>,
    /// Only V is formed on axes of length one.
    fast: bool,
    qhat: Array2<F>,
    khat: Array2<F>,
    v: Array2<F>,
    rq: Vec<F>,
    rk: Vec<F>,
    /// `[seq][head][i][j]` softmax probabilities.
    probs: Vec<F>,
    buckets: Vec<usize>,
    concat: Array2<F>,
    /// Number of attention scores this call formed.
    pub scores: usize,
}

fn check_shapes<F: Real>(x: &Array2<F>, dims: [usize; 3], params: &ParamSet<F>, h: &AttnHandles, heads: usize) -> Result<usize> {
    let d = x.ncols();
    if x.nrows() != dims.iter().product::<usize>() {
        return Err(MppError::shape(format!("{} tokens do not match grid {:?}", x.nrows(), dims)));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(MppError::shape(format!("width {d} not divisible into {heads} heads")));
    }
    if params.shape(h.wqkv) != [d, 3 * d] || params.shape(h.wo) != [d, d] || params.shape(h.tau) != [heads] {
        return Err(MppError::shape("attention parameter shapes do not match token width"));
    }
    if params.shape(h.bias)[1] != heads {
        return Err(MppError::shape("position bias table has wrong head count"));
    }
    Ok(d / heads)
}

/// Dot product with eight independent accumulators so it vectorises.
#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// L2-normalises each head block of each row in place; returns the norms.
fn normalize_heads<F: Real>(x: &mut Array2<F>, heads: usize) -> Vec<F> {
    let d = x.ncols();
    let dh = d / heads;
    let eps = F::c(QK_EPS);
    let mut norms = Vec::with_capacity(x.nrows() * heads);
    for mut row in x.rows_mut() {
        let r = row.as_slice_mut().expect("standard layout");
        for h in 0..heads {
            let blk = &mut r[h * dh..(h + 1) * dh];
            let n = (dot(blk, blk) + eps).sqrt();
            for v in blk.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
    }
    norms
}

/// Forward pass on already-normalised tokens `x`.
pub fn axial_attention<F: Real>(
    x: &Array2<F>,
    dims: [usize; 3],
    axis: AxisKind,
    heads: usize,
    params: &ParamSet<F>,
    h: &AttnHandles,
    rpe: &RpeConfig,
    periodic: bool,
) -> Result<(Array2<F>, AttnCache<F>)> {
    let dh = check_shapes(x, dims, params, h, heads)?;
    let d = x.ncols();
    let n = x.nrows();
    let wqkv = params.v2(h.wqkv);
    let (bases, stride, len) = axis.sequences(dims);
    let scores = n * len;

    if len == 1 {
        let v = x.dot(&wqkv.slice(s![.., 2 * d..]));
        let mut out = v.dot(&params.v2(h.wo));
        out += &params.v1(h.bo);
        let cache = AttnCache {
            axis,
            dims,
            input: x.clone(),
            fast: true,
            qhat: Array2::zeros((0, d)),
            khat: Array2::zeros((0, d)),
            concat: v.clone(),
            v,
            rq: Vec::new(),
            rk: Vec::new(),
            probs: Vec::new(),
            buckets: Vec::new(),
            scores,
        };
        return Ok((out, cache));
    }

    let qkv = x.dot(&wqkv);
    let mut qhat = qkv.slice(s![.., ..d]).to_owned();
    let mut khat = qkv.slice(s![.., d..2 * d]).to_owned();
    let v = qkv.slice(s![.., 2 * d..]).to_owned();
    let rq = normalize_heads(&mut qhat, heads);
    let rk = normalize_heads(&mut khat, heads);
    let buckets = rpe.bucket_matrix(len, periodic);
    let tau = params.v1(h.tau);
    let table = params.v2(h.bias);

    let qs = qhat.as_slice().expect("standard layout");
    let ks = khat.as_slice().expect("standard layout");
    let vs = v.as_slice().expect("standard layout");
    let mut concat = Array2::<F>::zeros((n, d));
    let cs = concat.as_slice_mut().expect("standard layout");
    let mut probs = vec![F::zero(); bases.len() * heads * len * len];
    let mut row_buf = vec![F::zero(); len];
    for (si, &base) in bases.iter().enumerate() {
        for hd in 0..heads {
            let c0 = hd * dh;
            let pblk = &mut probs[(si * heads + hd) * len * len..][..len * len];
            for i in 0..len {
                let ri = (base + i * stride) * d + c0;
                let qi = &qs[ri..ri + dh];
                let mut max = F::neg_infinity();
                for j in 0..len {
                    let rj = (base + j * stride) * d + c0;
                    let sc = tau[hd] * dot(qi, &ks[rj..rj + dh]) + table[[buckets[i * len + j], hd]];
                    row_buf[j] = sc;
                    if sc > max {
                        max = sc;
                    }
                }
                let mut z = F::zero();
                for s in row_buf.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                let out = &mut cs[ri..ri + dh];
                for j in 0..len {
                    let p = row_buf[j] / z;
                    pblk[i * len + j] = p;
                    let rj = (base + j * stride) * d + c0;
                    axpy(out, p, &vs[rj..rj + dh]);
                }
            }
        }
    }
    let mut out = concat.dot(&params.v2(h.wo));
    out += &params.v1(h.bo);
    Ok((
        out,
        AttnCache {
            axis,
            dims,
            input: x.clone(),
            fast: false,
            qhat,
            khat,
            v,
            rq,
            rk,
            probs,
            buckets,
            concat,
            scores,
        },
    ))
}

/// Accumulates parameter gradients into `grads` and returns `d x`.
pub fn axial_attention_backward<F: Real>(
    cache: &AttnCache<F>,
    d_out: &Array2<F>,
    heads: usize,
    params: &ParamSet<F>,
    h: &AttnHandles,
    grads: &mut ParamSet<F>,
) -> Array2<F> {
    let d = d_out.ncols();
    let n = d_out.nrows();
    let dh = d / heads;
    let wqkv = params.v2(h.wqkv);
    let wo = params.v2(h.wo);

    ndarray::linalg::general_mat_mul(F::one(), &cache.concat.t(), d_out, F::one(), &mut grads.m2(h.wo));
    let dbo = d_out.sum_axis(ndarray::Axis(0));
    grads.m1(h.bo).zip_mut_with(&dbo, |a, &b| *a += b);
    let d_concat = d_out.dot(&wo.t());

    if cache.fast {
        let wv = wqkv.slice(s![.., 2 * d..]);
        ndarray::linalg::general_mat_mul(
            F::one(),
            &cache.input.t(),
            &d_concat,
            F::one(),
            &mut grads.m2(h.wqkv).slice_mut(s![.., 2 * d..]),
        );
        return d_concat.dot(&wv.t());
    }

    let (bases, stride, len) = cache.axis.sequences(cache.dims);
    let tau = params.v1(h.tau);
    let qs = cache.qhat.as_slice().expect("standard layout");
    let ks = cache.khat.as_slice().expect("standard layout");
    let vs = cache.v.as_slice().expect("standard layout");
    let dos = d_concat.as_slice().expect("standard layout");
    let mut dq = vec![F::zero(); n * d];
    let mut dk = vec![F::zero(); n * d];
    let mut dv = vec![F::zero(); n * d];
    let mut dtau = Array1::<F>::zeros(heads);
    let mut dtable = Array2::<F>::zeros(grads.v2(h.bias).raw_dim());
    let mut dp = vec![F::zero(); len];
    for (si, &base) in bases.iter().enumerate() {
        for hd in 0..heads {
            let c0 = hd * dh;
            let pblk = &cache.probs[(si * heads + hd) * len * len..][..len * len];
            for i in 0..len {
                let ri = (base + i * stride) * d + c0;
                let doi = &dos[ri..ri + dh];
                let mut avg = F::zero();
                for j in 0..len {
                    let rj = (base + j * stride) * d + c0;
                    let p = pblk[i * len + j];
                    let g = dot(doi, &vs[rj..rj + dh]);
                    dp[j] = g;
                    avg += p * g;
                    axpy(&mut dv[rj..rj + dh], p, doi);
                }
                for j in 0..len {
                    let rj = (base + j * stride) * d + c0;
                    let ds = pblk[i * len + j] * (dp[j] - avg);
                    if ds == F::zero() {
                        continue;
                    }
                    dtable[[cache.buckets[i * len + j], hd]] += ds;
                    let (qi, kj) = (&qs[ri..ri + dh], &ks[rj..rj + dh]);
                    dtau[hd] += ds * dot(qi, kj);
                    axpy(&mut dq[ri..ri + dh], tau[hd] * ds, kj);
                    axpy(&mut dk[rj..rj + dh], tau[hd] * ds, qi);
                }
            }
        }
    }
    grads.m1(h.tau).zip_mut_with(&dtau, |a, &b| *a += b);
    grads.m2(h.bias).zip_mut_with(&dtable, |a, &b| *a += b);

    // Back through the per-head L2 normalisation.
    let mut dqkv = Array2::<F>::zeros((n, 3 * d));
    for r in 0..n {
        for hd in 0..heads {
            let c0 = hd * dh;
            let base = r * d + c0;
            for (which, (hat, dhat, norms)) in [(qs, &dq, &cache.rq), (ks, &dk, &cache.rk)].into_iter().enumerate() {
                let (hb, db) = (&hat[base..base + dh], &dhat[base..base + dh]);
                let proj = dot(hb, db);
                let nrm = norms[r * heads + hd];
                let mut row = dqkv.slice_mut(s![r, which * d + c0..which * d + c0 + dh]);
                for ((o, &g), &v) in row.iter_mut().zip(db).zip(hb) {
                    *o = (g - v * proj) / nrm;
                }
            }
        }
        dqkv.slice_mut(s![r, 2 * d..]).assign(&ArrayView1::from(&dv[r * d..(r + 1) * d]));
    }
    ndarray::linalg::general_mat_mul(F::one(), &cache.input.t(), &dqkv, F::one(), &mut grads.m2(h.wqkv));
    dqkv.dot(&wqkv.t())
}

/// Convenience view of the parameters as plain arrays, used by references.
pub fn attn_views<'a, F: Real>(
    params: &'a ParamSet<F>,
    h: &AttnHandles,
) -> (ArrayView2<'a, F>, ArrayView2<'a, F>, ArrayView1<'a, F>, ArrayView1<'a, F>, ArrayView2<'a, F>) {
    (params.v2(h.wqkv), params.v2(h.wo), params.v1(h.bo), params.v1(h.tau), params.v2(h.bias))
}
