//! Dense attention over all `T*H*W` tokens, used only as a test oracle.
//!
//! Pairs of tokens that do not lie on a common line of the chosen axis are
//! masked out, so on any grid this reproduces axial attention while forming
//! `(T*H*W)^2` scores.

use ndarray::Array2;

use super::attention::{attn_views, AttnHandles, AxisKind, QK_EPS};
use super::block::{BlockHandles, BlockSpec};
use super::rpe::{periodic_displacement, RpeConfig};
use crate::nn::{gelu, linear, ParamSet};

fn coords(r: usize, dims: [usize; 3]) -> [usize; 3] {
    let [_, h, w] = dims;
    [r / (h * w), (r / w) % h, r % w]
}

/// Dense masked reference for one attention call; returns the output and
/// the number of scores formed.
pub fn dense_attention(
    x: &Array2<f64>,
    dims: [usize; 3],
    axis: AxisKind,
    heads: usize,
    params: &ParamSet<f64>,
    h: &AttnHandles,
    rpe: &RpeConfig,
    periodic: bool,
) -> (Array2<f64>, usize) {
    let (wqkv, wo, bo, tau, table) = attn_views(params, h);
    let n = x.nrows();
    let d = x.ncols();
    let dh = d / heads;
    let ax = match axis {
        AxisKind::Time => 0,
        AxisKind::Height => 1,
        AxisKind::Width => 2,
    };
    let qkv = x.dot(&wqkv);
    let unit = |r: usize, off: usize, hd: usize| -> Vec<f64> {
        let v: Vec<f64> = (0..dh).map(|c| qkv[[r, off + hd * dh + c]]).collect();
        let norm = (v.iter().map(|a| a * a).sum::<f64>() + QK_EPS).sqrt();
        v.into_iter().map(|a| a / norm).collect()
    };
    let mut concat = Array2::<f64>::zeros((n, d));
    let mut scores = 0;
    for hd in 0..heads {
        for i in 0..n {
            let ci = coords(i, dims);
            let qi = unit(i, 0, hd);
            let mut logits = vec![f64::NEG_INFINITY; n];
            for (j, logit) in logits.iter_mut().enumerate() {
                scores += 1;
                let cj = coords(j, dims);
                let same_line = (0..3).all(|a| a == ax || ci[a] == cj[a]);
                if !same_line {
                    continue;
                }
                let kj = unit(j, d, hd);
                let dot: f64 = qi.iter().zip(&kj).map(|(a, b)| a * b).sum();
                let disp = periodic_displacement(ci[ax], cj[ax], dims[ax], periodic);
                *logit = tau[hd] * dot + table[[rpe.bucket(disp), hd]];
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                for c in 0..dh {
                    concat[[i, hd * dh + c]] += e[j] / z * qkv[[j, 2 * d + hd * dh + c]];
                }
            }
        }
    }
    let mut out = concat.dot(&wo);
    out += &bo;
    (out, scores / heads)
}

/// One transformer block in evaluation mode with dense attention.
pub fn dense_block(
    x: &Array2<f64>,
    dims: [usize; 3],
    spec: &BlockSpec,
    params: &ParamSet<f64>,
    h: &BlockHandles,
    periodic: [bool; 2],
) -> (Array2<f64>, usize) {
    let mut x = x.clone();
    let mut scores = 0;
    for (k, axis) in AxisKind::ALL.into_iter().enumerate() {
        let (g, b) = h.norms[k];
        let (xn, _) = spec.norm.forward(&x, params.v1(g), params.v1(b));
        let per = match axis {
            AxisKind::Time => false,
            AxisKind::Height => periodic[0],
            AxisKind::Width => periodic[1],
        };
        let (out, s) = dense_attention(&xn, dims, axis, spec.heads, params, h.attn(axis), &spec.rpe, per);
        scores += s;
        x += &out;
    }
    let (g, b) = h.norms[3];
    let (xn, _) = spec.norm.forward(&x, params.v1(g), params.v1(b));
    let act = gelu(&linear(&xn.view(), &params.v2(h.w1), Some(params.v1(h.b1))));
    x += &linear(&act.view(), &params.v2(h.w2), Some(params.v1(h.b2)));
    (x, scores)
}
