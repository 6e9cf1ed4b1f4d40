use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{MppError, Result};
use crate::real::Real;

/// Global embedding columns `E` (`[D, F_total]`) and reconstruction rows
/// `R` (`[F_total, D]`) shared across every system.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterFilters<F> {
    pub embed: Array2<F>,
    pub recon: Array2<F>,
}

impl<F: Real> MasterFilters<F> {
    /// `E ~ U(-1/sqrt(F_total), 1/sqrt(F_total))`, `R ~ U(-1/sqrt(D), 1/sqrt(D))`.
    pub fn init<R: Rng + ?Sized>(dim: usize, n_fields: usize, rng: &mut R) -> Self {
        let e_scale = 1.0 / (n_fields.max(1) as f64).sqrt();
        let r_scale = 1.0 / (dim as f64).sqrt();
        Self {
            embed: Array2::from_shape_fn((dim, n_fields), |_| F::c(rng.random_range(-e_scale..e_scale))),
            recon: Array2::from_shape_fn((n_fields, dim), |_| F::c(rng.random_range(-r_scale..r_scale))),
        }
    }

    pub fn n_fields(&self) -> usize {
        self.embed.ncols()
    }

    pub fn dim(&self) -> usize {
        self.embed.nrows()
    }

    /// Appends `n_new` fields drawn with the pre-extension init scales;
    /// existing entries are untouched.
    pub fn extend<R: Rng + ?Sized>(&self, n_new: usize, rng: &mut R) -> Result<Self> {
        if n_new == 0 {
            return Err(MppError::config("extend_filters needs at least one new field"));
        }
        let (d, f) = (self.dim(), self.n_fields());
        let e_scale = 1.0 / (f.max(1) as f64).sqrt();
        let r_scale = 1.0 / (d as f64).sqrt();
        let mut embed = Array2::zeros((d, f + n_new));
        embed.slice_mut(ndarray::s![.., ..f]).assign(&self.embed);
        let mut recon = Array2::zeros((f + n_new, d));
        recon.slice_mut(ndarray::s![..f, ..]).assign(&self.recon);
        for j in f..f + n_new {
            for i in 0..d {
                embed[[i, j]] = F::c(rng.random_range(-e_scale..e_scale));
            }
        }
        for j in f..f + n_new {
            for i in 0..d {
                recon[[j, i]] = F::c(rng.random_range(-r_scale..r_scale));
            }
        }
        Ok(Self { embed, recon })
    }
}

fn check_indices(idx: &[usize], n_fields: usize) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= n_fields) {
        return Err(MppError::shape(format!("field index {bad} outside registry of {n_fields}")));
    }
    Ok(())
}

/// Per-pixel sum of the sub-selected embedding columns weighted by field
/// values. `frames` is `[T, n_fields, H, W]`; the result is pixel-major
/// `[T*H*W, D]` with rows ordered `(t, h, w)`.
pub fn embed_fields<F: Real>(frames: &Array4<F>, field_indices: &[usize], embed: ArrayView2<F>) -> Result<Array2<F>> {
    let (t, nf, h, w) = frames.dim();
    if nf != field_indices.len() {
        return Err(MppError::shape(format!("{nf} fields but {} indices", field_indices.len())));
    }
    check_indices(field_indices, embed.ncols())?;
    let x = pixel_major(frames);
    let sub = embed.select(Axis(1), field_indices); // [D, nf]
    debug_assert_eq!(x.nrows(), t * h * w);
    Ok(x.dot(&sub.t()))
}

/// `[T, F, H, W]` to `[T*H*W, F]`.
pub(crate) fn pixel_major<F: Real>(frames: &Array4<F>) -> Array2<F> {
    let (t, nf, h, w) = frames.dim();
    let permuted = frames.view().permuted_axes([0, 2, 3, 1]);
    permuted
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((t * h * w, nf))
        .expect("contiguous")
}

/// Accumulates the embedding gradient and returns the gradient with respect
/// to the frames, `[T, n_fields, H, W]`. `pixels` is the pixel-major input
/// (see [`embed_fields`]).
pub fn embed_backward<F: Real>(
    pixels: &Array2<F>,
    dims: (usize, usize, usize),
    field_indices: &[usize],
    embed: ArrayView2<F>,
    d_grid: &Array2<F>,
    mut d_embed: ArrayViewMut2<F>,
) -> Array4<F> {
    let d_sub = d_grid.t().dot(pixels); // [D, nf]
    for (k, &f) in field_indices.iter().enumerate() {
        let mut col = d_embed.column_mut(f);
        col += &d_sub.column(k);
    }
    let sub = embed.select(Axis(1), field_indices);
    let d_pixels = d_grid.dot(&sub); // [THW, nf]
    let (t, h, w) = dims;
    let nf = field_indices.len();
    d_pixels
        .into_shape_with_order((t, h, w, nf))
        .expect("contiguous")
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .into_owned()
}

/// Inner products of every pixel's decoded vector with the sub-selected
/// reconstruction rows. `grid` is `[H*W, D]`; returns `[n_fields, H, W]`.
pub fn reconstruct_fields<F: Real>(grid: &Array2<F>, spatial: [usize; 2], field_indices: &[usize], recon: ArrayView2<F>) -> Result<Array3<F>> {
    check_indices(field_indices, recon.nrows())?;
    let [h, w] = spatial;
    if grid.nrows() != h * w {
        return Err(MppError::shape(format!("grid has {} pixels, expected {}", grid.nrows(), h * w)));
    }
    let sub = recon.select(Axis(0), field_indices); // [nf, D]
    let out = grid.dot(&sub.t()); // [HW, nf]
    Ok(out
        .reversed_axes()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((field_indices.len(), h, w))
        .expect("contiguous"))
}

/// Accumulates `dR` and returns the gradient with respect to the grid.
pub fn reconstruct_backward<F: Real>(
    grid: &Array2<F>,
    field_indices: &[usize],
    recon: ArrayView2<F>,
    d_out: &Array3<F>,
    mut d_recon: ArrayViewMut2<F>,
) -> Array2<F> {
    let nf = field_indices.len();
    let d_flat = d_out.view().into_shape_with_order((nf, grid.nrows())).expect("contiguous"); // [nf, HW]
    let d_sub = d_flat.dot(grid); // [nf, D]
    for (k, &f) in field_indices.iter().enumerate() {
        let mut row = d_recon.row_mut(f);
        row += &d_sub.row(k);
    }
    let sub = recon.select(Axis(0), field_indices);
    d_flat.t().dot(&sub)
}
