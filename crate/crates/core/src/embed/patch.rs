//! hMLP patching: a cascade of non-overlapping strided linear stages with
//! GeLU between stages (none after the last), and its transposed mirror.
//! Grids are pixel-major `[frames * h * w, C]` with rows ordered `(t, h, w)`.

use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView4, Axis};

use crate::error::{MppError, Result};
use crate::nn::{gelu, gelu_backward};
use crate::real::Real;

/// Weights `[k_h, k_w, C_in, C_out]` and bias `[C_out]` of one stage.
/// Axes of extent 1 (1D systems) use only tap 0 of the kernel along that axis.
#[derive(Debug, Clone, Copy)]
pub struct StageParams<'a, F> {
    pub weight: ArrayView4<'a, F>,
    pub bias: ArrayView1<'a, F>,
}

#[derive(Debug, Clone)]
struct StageCache<F> {
    input: Array2<F>,
    pre: Array2<F>,
    in_dims: [usize; 2],
    stride: [usize; 2],
    last: bool,
}

#[derive(Debug, Clone)]
pub struct PatchCache<F> {
    frames: usize,
    stages: Vec<StageCache<F>>,
}

/// Effective per-stage strides for a grid: the configured stride on axes
/// longer than one point, 1 on degenerate axes.
pub fn stage_strides_for(strides: &[usize], spatial: [usize; 2]) -> Result<Vec<[usize; 2]>> {
    let patch: usize = strides.iter().product();
    let mut out = Vec::with_capacity(strides.len());
    for &s in strides {
        out.push([
            if spatial[0] > 1 { s } else { 1 },
            if spatial[1] > 1 { s } else { 1 },
        ]);
    }
    for len in spatial {
        if len > 1 && !len.is_multiple_of(patch) {
            return Err(MppError::shape(format!(
                "patch size {patch} does not divide grid axis of length {len}"
            )));
        }
    }
    Ok(out)
}

fn weight_matrix<F: Real>(w: &ArrayView4<F>, stride: [usize; 2]) -> Array2<F> {
    let (_, _, cin, cout) = w.dim();
    w.slice(s![..stride[0], ..stride[1], .., ..])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((stride[0] * stride[1] * cin, cout))
        .expect("contiguous")
}

fn row(t: usize, i: usize, j: usize, dims: [usize; 2]) -> usize {
    (t * dims[0] + i) * dims[1] + j
}

/// Encodes a `[frames*H*W, D]` grid into `[frames*H'*W', D]` tokens.
pub fn patch_encode<F: Real>(
    grid: &Array2<F>,
    frames: usize,
    spatial: [usize; 2],
    stages: &[StageParams<F>],
    strides: &[[usize; 2]],
) -> Result<(Array2<F>, [usize; 2], PatchCache<F>)> {
    if grid.nrows() != frames * spatial[0] * spatial[1] {
        return Err(MppError::shape("grid rows do not match frames x spatial size"));
    }
    if stages.len() != strides.len() {
        return Err(MppError::shape("stage count mismatch"));
    }
    let mut x = grid.clone();
    let mut dims = spatial;
    let mut caches = Vec::with_capacity(stages.len());
    for (k, (stage, &stride)) in stages.iter().zip(strides).enumerate() {
        if !dims[0].is_multiple_of(stride[0]) || !dims[1].is_multiple_of(stride[1]) {
            return Err(MppError::shape(format!("stride {stride:?} does not divide {dims:?}")));
        }
        let cin = x.ncols();
        let out_dims = [dims[0] / stride[0], dims[1] / stride[1]];
        let taps = stride[0] * stride[1];
        let mut cols = Array2::<F>::zeros((frames * out_dims[0] * out_dims[1], taps * cin));
        for t in 0..frames {
            for i in 0..out_dims[0] {
                for j in 0..out_dims[1] {
                    let r = row(t, i, j, out_dims);
                    for a in 0..stride[0] {
                        for b in 0..stride[1] {
                            let src = row(t, i * stride[0] + a, j * stride[1] + b, dims);
                            let tap = a * stride[1] + b;
                            cols.slice_mut(s![r, tap * cin..(tap + 1) * cin]).assign(&x.row(src));
                        }
                    }
                }
            }
        }
        let mut pre = cols.dot(&weight_matrix(&stage.weight, stride));
        pre += &stage.bias;
        let last = k + 1 == stages.len();
        x = if last { pre.clone() } else { gelu(&pre) };
        caches.push(StageCache {
            input: cols,
            pre,
            in_dims: dims,
            stride,
            last,
        });
        dims = out_dims;
    }
    Ok((x, dims, PatchCache { frames, stages: caches }))
}

/// Returns the grid gradient and per-stage `(dW, db)` (same shapes as the
/// stage parameters).
pub fn patch_encode_backward<F: Real>(
    cache: &PatchCache<F>,
    stages: &[StageParams<F>],
    d_tokens: &Array2<F>,
) -> (Array2<F>, Vec<(Array4<F>, Array1<F>)>) {
    let mut grads = Vec::with_capacity(stages.len());
    let mut d = d_tokens.clone();
    for (stage, c) in stages.iter().zip(&cache.stages).rev() {
        let d_pre = if c.last { d } else { gelu_backward(&c.pre, &d) };
        let cin = stage.weight.dim().2;
        let wm = weight_matrix(&stage.weight, c.stride);
        let dwm = c.input.t().dot(&d_pre);
        let mut dw = Array4::<F>::zeros(stage.weight.raw_dim());
        dw.slice_mut(s![..c.stride[0], ..c.stride[1], .., ..]).assign(
            &dwm.into_shape_with_order((c.stride[0], c.stride[1], cin, stage.weight.dim().3))
                .expect("contiguous"),
        );
        let db = d_pre.sum_axis(Axis(0));
        let dcols = d_pre.dot(&wm.t());
        let dims = c.in_dims;
        let out_dims = [dims[0] / c.stride[0], dims[1] / c.stride[1]];
        let mut dx = Array2::<F>::zeros((cache.frames * dims[0] * dims[1], cin));
        for t in 0..cache.frames {
            for i in 0..out_dims[0] {
                for j in 0..out_dims[1] {
                    let r = row(t, i, j, out_dims);
                    for a in 0..c.stride[0] {
                        for b in 0..c.stride[1] {
                            let dst = row(t, i * c.stride[0] + a, j * c.stride[1] + b, dims);
                            let tap = a * c.stride[1] + b;
                            dx.row_mut(dst).assign(&dcols.slice(s![r, tap * cin..(tap + 1) * cin]));
                        }
                    }
                }
            }
        }
        grads.push((dw, db));
        d = dx;
    }
    grads.reverse();
    (d, grads)
}

fn transposed_matrix<F: Real>(w: &ArrayView4<F>, stride: [usize; 2]) -> Array2<F> {
    let (_, _, cin, cout) = w.dim();
    w.slice(s![..stride[0], ..stride[1], .., ..])
        .permuted_axes([2, 0, 1, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cin, stride[0] * stride[1] * cout))
        .expect("contiguous")
}

/// Decodes `[frames*h*w, D]` tokens back to the full grid with transposed
/// stages; `strides` are given in decoder order.
pub fn patch_decode<F: Real>(
    tokens: &Array2<F>,
    frames: usize,
    token_dims: [usize; 2],
    stages: &[StageParams<F>],
    strides: &[[usize; 2]],
) -> Result<(Array2<F>, [usize; 2], PatchCache<F>)> {
    if tokens.nrows() != frames * token_dims[0] * token_dims[1] {
        return Err(MppError::shape("token rows do not match frames x token grid"));
    }
    if stages.len() != strides.len() {
        return Err(MppError::shape("stage count mismatch"));
    }
    let mut x = tokens.clone();
    let mut dims = token_dims;
    let mut caches = Vec::with_capacity(stages.len());
    for (k, (stage, &stride)) in stages.iter().zip(strides).enumerate() {
        let cout = stage.weight.dim().3;
        let out_dims = [dims[0] * stride[0], dims[1] * stride[1]];
        let y = x.dot(&transposed_matrix(&stage.weight, stride));
        let mut pre = Array2::<F>::zeros((frames * out_dims[0] * out_dims[1], cout));
        for t in 0..frames {
            for i in 0..dims[0] {
                for j in 0..dims[1] {
                    let r = row(t, i, j, dims);
                    for a in 0..stride[0] {
                        for b in 0..stride[1] {
                            let dst = row(t, i * stride[0] + a, j * stride[1] + b, out_dims);
                            let tap = a * stride[1] + b;
                            pre.row_mut(dst).assign(&y.slice(s![r, tap * cout..(tap + 1) * cout]));
                        }
                    }
                }
            }
        }
        pre += &stage.bias;
        let last = k + 1 == stages.len();
        let out = if last { pre.clone() } else { gelu(&pre) };
        caches.push(StageCache {
            input: x,
            pre,
            in_dims: dims,
            stride,
            last,
        });
        x = out;
        dims = out_dims;
    }
    Ok((x, dims, PatchCache { frames, stages: caches }))
}

pub fn patch_decode_backward<F: Real>(
    cache: &PatchCache<F>,
    stages: &[StageParams<F>],
    d_grid: &Array2<F>,
) -> (Array2<F>, Vec<(Array4<F>, Array1<F>)>) {
    let mut grads = Vec::with_capacity(stages.len());
    let mut d = d_grid.clone();
    for (stage, c) in stages.iter().zip(&cache.stages).rev() {
        let d_pre = if c.last { d } else { gelu_backward(&c.pre, &d) };
        let (_, _, cin, cout) = stage.weight.dim();
        let dims = c.in_dims;
        let out_dims = [dims[0] * c.stride[0], dims[1] * c.stride[1]];
        let taps = c.stride[0] * c.stride[1];
        let mut dy = Array2::<F>::zeros((c.input.nrows(), taps * cout));
        for t in 0..cache.frames {
            for i in 0..dims[0] {
                for j in 0..dims[1] {
                    let r = row(t, i, j, dims);
                    for a in 0..c.stride[0] {
                        for b in 0..c.stride[1] {
                            let src = row(t, i * c.stride[0] + a, j * c.stride[1] + b, out_dims);
                            let tap = a * c.stride[1] + b;
                            dy.slice_mut(s![r, tap * cout..(tap + 1) * cout]).assign(&d_pre.row(src));
                        }
                    }
                }
            }
        }
        let db = d_pre.sum_axis(Axis(0));
        let wm = transposed_matrix(&stage.weight, c.stride);
        let dwm = c.input.t().dot(&dy); // [cin, taps*cout]
        let dw_perm = dwm
            .into_shape_with_order((cin, c.stride[0], c.stride[1], cout))
            .expect("contiguous")
            .permuted_axes([1, 2, 0, 3]);
        let mut dw = Array4::<F>::zeros(stage.weight.raw_dim());
        dw.slice_mut(s![..c.stride[0], ..c.stride[1], .., ..]).assign(&dw_perm);
        let dx = dy.dot(&wm.t());
        grads.push((dw, db));
        d = dx;
    }
    grads.reverse();
    (d, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_stage(rng: &mut ChaCha8Rng, k: usize, c: usize) -> (Array4<f64>, Array1<f64>) {
        (
            Array4::from_shape_fn((k, k, c, c), |_| rng.random_range(-0.5..0.5)),
            Array1::from_shape_fn(c, |_| rng.random_range(-0.1..0.1)),
        )
    }

    #[test]
    fn shapes_and_factorisation() {
        let strides = stage_strides_for(&[2, 2], [16, 16]).unwrap();
        assert_eq!(strides, vec![[2, 2], [2, 2]]);
        assert_eq!(stage_strides_for(&[2, 2], [16, 1]).unwrap(), vec![[2, 1], [2, 1]]);
        assert!(stage_strides_for(&[2, 2], [10, 10]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = 3;
        let params: Vec<_> = (0..2).map(|_| rand_stage(&mut rng, 2, c)).collect();
        let stages: Vec<_> = params.iter().map(|(w, b)| StageParams { weight: w.view(), bias: b.view() }).collect();
        let grid = Array2::from_shape_fn((2 * 16 * 16, c), |_| rng.random_range(-1.0..1.0));
        let (tokens, tdims, _) = patch_encode(&grid, 2, [16, 16], &stages, &strides).unwrap();
        assert_eq!(tdims, [4, 4]);
        assert_eq!(tokens.dim(), (2 * 16, c));
        let rev: Vec<_> = strides.iter().rev().copied().collect();
        let (out, odims, _) = patch_decode(&tokens, 2, tdims, &stages, &rev).unwrap();
        assert_eq!(odims, [16, 16]);
        assert_eq!(out.dim(), grid.dim());
    }

    #[test]
    fn zero_tokens_decode_to_zero() {
        let w = Array4::<f64>::from_elem((2, 2, 2, 2), 0.3);
        let b = Array1::<f64>::zeros(2);
        let stages = vec![StageParams { weight: w.view(), bias: b.view() }; 2];
        let (out, _, _) = patch_decode(&Array2::zeros((4, 2)), 1, [2, 2], &stages, &[[2, 2], [2, 2]]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    fn check_fd(encode: bool, spatial: [usize; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(if encode { 1 } else { 2 });
        let c = 2;
        let mut params: Vec<_> = (0..2).map(|_| rand_stage(&mut rng, 2, c)).collect();
        let strides = stage_strides_for(&[2, 2], spatial).unwrap();
        let (in_dims, strides) = if encode {
            (spatial, strides)
        } else {
            let p = [spatial[0] / 4, (spatial[1] / 4).max(1)];
            (p, strides.into_iter().rev().collect())
        };
        let input = Array2::from_shape_fn((in_dims[0] * in_dims[1], c), |_| rng.random_range(-1.0..1.0));
        let run = |params: &[(Array4<f64>, Array1<f64>)], input: &Array2<f64>| {
            let stages: Vec<_> = params.iter().map(|(w, b)| StageParams { weight: w.view(), bias: b.view() }).collect();
            if encode {
                patch_encode(input, 1, in_dims, &stages, &strides).unwrap()
            } else {
                patch_decode(input, 1, in_dims, &stages, &strides).unwrap()
            }
        };
        let (out, _, cache) = run(&params, &input);
        let r = Array2::from_shape_fn(out.raw_dim(), |_| rng.random_range(-1.0..1.0));
        let loss = |params: &[(Array4<f64>, Array1<f64>)], input: &Array2<f64>| (run(params, input).0 * &r).sum();
        let stages: Vec<_> = params.iter().map(|(w, b)| StageParams { weight: w.view(), bias: b.view() }).collect();
        let (dx, grads) = if encode {
            patch_encode_backward(&cache, &stages, &r)
        } else {
            patch_decode_backward(&cache, &stages, &r)
        };
        let h = 1e-5;
        for k in 0..params.len() {
            for idx in 0..params[k].0.len() {
                let orig = params[k].0.as_slice().unwrap()[idx];
                params[k].0.as_slice_mut().unwrap()[idx] = orig + h;
                let lp = loss(&params, &input);
                params[k].0.as_slice_mut().unwrap()[idx] = orig - h;
                let lm = loss(&params, &input);
                params[k].0.as_slice_mut().unwrap()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads[k].0.as_slice().unwrap()[idx];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "stage {k} weight {idx}: {an} vs {fd}");
            }
            for idx in 0..params[k].1.len() {
                let orig = params[k].1[idx];
                params[k].1[idx] = orig + h;
                let lp = loss(&params, &input);
                params[k].1[idx] = orig - h;
                let lm = loss(&params, &input);
                params[k].1[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - grads[k].1[idx]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
        let mut x = input.clone();
        for idx in 0..x.len() {
            let orig = x.as_slice().unwrap()[idx];
            x.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(&params, &x);
            x.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(&params, &x);
            x.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - dx.as_slice().unwrap()[idx]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        check_fd(true, [8, 8]);
        check_fd(true, [8, 1]);
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        check_fd(false, [8, 8]);
        check_fd(false, [8, 1]);
    }
}
