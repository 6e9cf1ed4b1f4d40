//! Pre-norm residual block: time, height and width attention followed by a
//! GeLU MLP. Height and width read the same projection parameters.

use ndarray::{Array1, Array2, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{axial_attention, axial_attention_backward, AttnCache, AttnHandles, AxisKind};
use super::rpe::RpeConfig;
use crate::error::Result;
use crate::nn::{gelu, gelu_backward, linear, linear_backward, InstanceNorm, NormCache, Param, ParamSet};
use crate::real::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockHandles {
    /// `(gamma, beta)` of the norm in front of each sub-layer.
    pub norms: [(Param, Param); 4],
    pub time: AttnHandles,
    pub space: AttnHandles,
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

pub(crate) fn uniform<F: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> ndarray::ArrayD<F> {
    let a = 1.0 / (fan_in as f64).sqrt();
    ndarray::ArrayD::from_shape_fn(IxDyn(shape), |_| F::c(rng.random_range(-a..a)))
}

impl BlockHandles {
    /// Registers one block's tensors. `rpe_time`/`rpe_space` are the shared
    /// bias tables.
    pub fn register<F: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<F>,
        prefix: &str,
        dim: usize,
        mlp_dim: usize,
        heads: usize,
        rpe_time: Param,
        rpe_space: Param,
        rng: &mut R,
    ) -> Self {
        let dh = dim / heads;
        let norm = |params: &mut ParamSet<F>, k: usize| {
            (
                params.add(format!("{prefix}.norm{k}.gamma"), ndarray::ArrayD::from_elem(IxDyn(&[dim]), F::one())),
                params.add(format!("{prefix}.norm{k}.beta"), ParamSet::<F>::zeros(&[dim])),
            )
        };
        let norms = [norm(params, 0), norm(params, 1), norm(params, 2), norm(params, 3)];
        let mut attn = |params: &mut ParamSet<F>, name: &str, bias: Param| AttnHandles {
            wqkv: params.add(format!("{prefix}.{name}.wqkv"), uniform(&[dim, 3 * dim], dim, rng)),
            wo: params.add(format!("{prefix}.{name}.wo"), uniform(&[dim, dim], dim, rng)),
            bo: params.add(format!("{prefix}.{name}.bo"), ParamSet::<F>::zeros(&[dim])),
            tau: params.add(
                format!("{prefix}.{name}.tau"),
                ndarray::ArrayD::from_elem(IxDyn(&[heads]), F::c((dh as f64).sqrt())),
            ),
            bias,
        };
        let time = attn(params, "time", rpe_time);
        let space = attn(params, "space", rpe_space);
        Self {
            norms,
            time,
            space,
            w1: params.add(format!("{prefix}.mlp.w1"), uniform(&[dim, mlp_dim], dim, rng)),
            b1: params.add(format!("{prefix}.mlp.b1"), ParamSet::<F>::zeros(&[mlp_dim])),
            w2: params.add(format!("{prefix}.mlp.w2"), uniform(&[mlp_dim, dim], mlp_dim, rng)),
            b2: params.add(format!("{prefix}.mlp.b2"), ParamSet::<F>::zeros(&[dim])),
        }
    }

    pub fn attn(&self, axis: AxisKind) -> &AttnHandles {
        match axis {
            AxisKind::Time => &self.time,
            _ => &self.space,
        }
    }
}

/// Static settings shared by every block.
#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub heads: usize,
    pub rpe: RpeConfig,
    pub norm: InstanceNorm,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum SubCache<F> {
    Attn(AttnCache<F>),
    Mlp { xn: Array2<F>, pre: Array2<F>, act: Array2<F> },
}

#[derive(Debug, Clone)]
struct SubLayer<F> {
    norm: NormCache<F>,
    keep: F,
    inner: SubCache<F>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    subs: [Option<SubLayer<F>>; 4],
    pub scores: usize,
}

/// Sub-layer `k` of a block: 0..3 are the attention axes, 3 is the MLP.
const AXES: [AxisKind; 3] = AxisKind::ALL;

/// `keep[k]` multiplies sub-layer `k`'s residual branch (drop path);
/// 0 skips the branch, 1 at evaluation.
pub fn block_forward<F: Real>(
    x: &Array2<F>,
    dims: [usize; 3],
    spec: &BlockSpec,
    params: &ParamSet<F>,
    h: &BlockHandles,
    periodic: [bool; 2],
    keep: [F; 4],
) -> Result<(Array2<F>, BlockCache<F>)> {
    let mut x = x.clone();
    let mut subs: [Option<SubLayer<F>>; 4] = [None, None, None, None];
    let mut scores = 0;
    for k in 0..4 {
        if keep[k] == F::zero() {
            continue;
        }
        let (g, b) = h.norms[k];
        let (xn, norm) = spec.norm.forward(&x, params.v1(g), params.v1(b));
        let (out, inner) = if k < 3 {
            let axis = AXES[k];
            let per = match axis {
                AxisKind::Time => false,
                AxisKind::Height => periodic[0],
                AxisKind::Width => periodic[1],
            };
            let (out, c) = axial_attention(&xn, dims, axis, spec.heads, params, h.attn(axis), &spec.rpe, per)?;
            scores += c.scores;
            (out, SubCache::Attn(c))
        } else {
            let pre = linear(&xn.view(), &params.v2(h.w1), Some(params.v1(h.b1)));
            let act = gelu(&pre);
            let out = linear(&act.view(), &params.v2(h.w2), Some(params.v1(h.b2)));
            (out, SubCache::Mlp { xn, pre, act })
        };
        x.scaled_add(keep[k], &out);
        subs[k] = Some(SubLayer { norm, keep: keep[k], inner });
    }
    Ok((x, BlockCache { subs, scores }))
}

/// Accumulates parameter gradients and returns `d x`.
pub fn block_backward<F: Real>(
    cache: &BlockCache<F>,
    d_y: &Array2<F>,
    spec: &BlockSpec,
    params: &ParamSet<F>,
    h: &BlockHandles,
    grads: &mut ParamSet<F>,
) -> Array2<F> {
    let mut dx = d_y.clone();
    for k in (0..4).rev() {
        let Some(sub) = &cache.subs[k] else { continue };
        let d_out = dx.mapv(|v| v * sub.keep);
        let d_xn = match &sub.inner {
            SubCache::Attn(c) => axial_attention_backward(c, &d_out, spec.heads, params, h.attn(AXES[k]), grads),
            SubCache::Mlp { xn, pre, act } => {
                let mut db2 = Array1::zeros(d_out.ncols());
                let d_act = linear_backward(&act.view(), &params.v2(h.w2), &d_out.view(), grads.m2(h.w2), Some(db2.view_mut()));
                grads.m1(h.b2).zip_mut_with(&db2, |a, &b| *a += b);
                let d_pre = gelu_backward(pre, &d_act);
                let mut db1 = Array1::zeros(d_pre.ncols());
                let d_xn = linear_backward(&xn.view(), &params.v2(h.w1), &d_pre.view(), grads.m2(h.w1), Some(db1.view_mut()));
                grads.m1(h.b1).zip_mut_with(&db1, |a, &b| *a += b);
                d_xn
            }
        };
        let (g, b) = h.norms[k];
        let mut dg = Array1::zeros(d_xn.ncols());
        let mut db = Array1::zeros(d_xn.ncols());
        let d_in = spec.norm.backward(&sub.norm, params.v1(g), &d_xn, dg.view_mut(), db.view_mut());
        grads.m1(g).zip_mut_with(&dg, |a, &v| *a += v);
        grads.m1(b).zip_mut_with(&db, |a, &v| *a += v);
        dx += &d_in;
    }
    dx
}
