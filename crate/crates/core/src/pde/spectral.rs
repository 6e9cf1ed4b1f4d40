use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Field;
use crate::error::{MppError, Result};

/// FFT plans and wavenumbers for a periodic `[H, W]` grid with equal axis length.
pub struct SpectralGrid {
    shape: [usize; 2],
    length: f64,
    fwd: [Arc<dyn Fft<f64>>; 2],
    inv: [Arc<dyn Fft<f64>>; 2],
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("shape", &self.shape)
            .field("length", &self.length)
            .finish()
    }
}

impl SpectralGrid {
    pub fn new(shape: [usize; 2], length: f64) -> Result<Self> {
        for &n in &shape {
            if n == 0 || (n > 1 && n % 2 != 0) {
                return Err(MppError::config(format!(
                    "grid axis of length {n} is not supported by the spectral transform (need even N)"
                )));
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = [planner.plan_fft_forward(shape[0]), planner.plan_fft_forward(shape[1])];
        let inv = [planner.plan_fft_inverse(shape[0]), planner.plan_fft_inverse(shape[1])];
        Ok(Self {
            shape,
            length,
            fwd,
            inv,
        })
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    /// Signed integer mode index of FFT bin `i` on an axis of `n` points.
    pub fn mode_index(i: usize, n: usize) -> i64 {
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Angular wavenumber `2 pi n / L` of FFT bin `i` on `axis`.
    pub fn wavenumber(&self, axis: usize, i: usize) -> f64 {
        2.0 * PI * Self::mode_index(i, self.shape[axis]) as f64 / self.length
    }

    pub fn is_nyquist(&self, axis: usize, i: usize) -> bool {
        let n = self.shape[axis];
        n > 1 && i == n / 2
    }

    fn transform(&self, data: &mut Array2<Complex64>, plans: &[Arc<dyn Fft<f64>>; 2]) {
        let [h, w] = self.shape;
        if w > 1 {
            for mut row in data.rows_mut() {
                let slice = row.as_slice_mut().expect("row-major field");
                plans[1].process(slice);
            }
        }
        if h > 1 {
            let mut col = vec![Complex64::default(); h];
            for j in 0..w {
                for i in 0..h {
                    col[i] = data[[i, j]];
                }
                plans[0].process(&mut col);
                for i in 0..h {
                    data[[i, j]] = col[i];
                }
            }
        }
    }

    pub fn forward(&self, u: &Field) -> Array2<Complex64> {
        let mut data = u.mapv(|x| Complex64::new(x, 0.0));
        if !data.is_standard_layout() {
            data = data.as_standard_layout().to_owned();
        }
        self.transform(&mut data, &self.fwd);
        data
    }

    /// Inverse transform, normalised, keeping the real part.
    pub fn inverse_real(&self, mut spec: Array2<Complex64>) -> Field {
        self.transform(&mut spec, &self.inv);
        let scale = 1.0 / (self.shape[0] * self.shape[1]) as f64;
        spec.mapv(|z| z.re * scale)
    }

    /// Multiplier `exp((-i k.v - delta |k|^2) dt)` for every mode.
    pub fn propagator(&self, v: &[f64], delta: f64, dt: f64) -> Array2<Complex64> {
        let [h, w] = self.shape;
        let vy = v.first().copied().unwrap_or(0.0);
        let vx = v.get(1).copied().unwrap_or(vy);
        Array2::from_shape_fn((h, w), |(i, j)| {
            let ky = self.wavenumber(0, i);
            let kx = if w > 1 { self.wavenumber(1, j) } else { 0.0 };
            let phase = -(ky * vy + kx * vx) * dt;
            let decay = -delta * (ky * ky + kx * kx) * dt;
            Complex64::from_polar(decay.exp(), phase)
        })
    }

    /// Exact evolution of a constant-coefficient advection-diffusion field.
    pub fn propagate(&self, u_hat: &Array2<Complex64>, v: &[f64], delta: f64, dt: f64) -> Field {
        let mult = self.propagator(v, delta, dt);
        self.inverse_real(u_hat * &mult)
    }
}

fn check_field(u: &Field) -> Result<()> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MppError::NonFinite("input field"))
    }
}

/// Exact solution of `u_t + v . grad u = delta lap u` after time `dt` on a
/// periodic domain of length `length` per axis.
pub fn exact_spectral_step(u: &Field, v: &[f64], delta: f64, dt: f64, length: f64) -> Result<Field> {
    check_field(u)?;
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(MppError::config(format!("dt={dt} must be non-negative")));
    }
    if !v.iter().all(|x| x.is_finite()) || !delta.is_finite() {
        return Err(MppError::NonFinite("coefficients"));
    }
    let (h, w) = u.dim();
    let grid = SpectralGrid::new([h, w], length)?;
    if v.iter().all(|&x| x == 0.0) && delta == 0.0 {
        return Ok(u.clone());
    }
    Ok(grid.propagate(&grid.forward(u), v, delta, dt))
}

/// Band-limited resampling of a periodic field sampled on a cell-centred grid
/// to a different resolution (1D fields, `W = 1`). Modes beyond the target
/// Nyquist are dropped.
pub fn resample_periodic(u: &Field, n_new: usize) -> Result<Field> {
    let (n, w) = u.dim();
    if w != 1 {
        return Err(MppError::shape("resample_periodic expects a 1D field"));
    }
    let src = SpectralGrid::new([n, 1], 1.0)?;
    let dst = SpectralGrid::new([n_new, 1], 1.0)?;
    let u_hat = src.forward(u);
    let mut out = Array2::<Complex64>::zeros((n_new, 1));
    let limit = (n.min(n_new) / 2) as i64;
    for i in 0..n {
        let m = SpectralGrid::mode_index(i, n);
        if m.abs() >= limit {
            continue;
        }
        // Coefficients referenced to x = 0 rather than to the first cell centre.
        let c = u_hat[[i, 0]] / n as f64 * Complex64::from_polar(1.0, -PI * m as f64 / n as f64);
        let dst_i = if m >= 0 { m as usize } else { (n_new as i64 + m) as usize };
        out[[dst_i, 0]] = c * n_new as f64 * Complex64::from_polar(1.0, PI * m as f64 / n_new as f64);
    }
    Ok(dst.inverse_real(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::grid_points;

    fn sine(n: usize, wn: f64) -> Field {
        let xs = grid_points(n, 1.0);
        Array2::from_shape_fn((n, 1), |(i, _)| (2.0 * PI * wn * xs[i]).sin())
    }

    fn max_diff(a: &Field, b: &Field) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn half_domain_shift_negates_sine() {
        let u = sine(64, 1.0);
        let out = exact_spectral_step(&u, &[0.5], 0.0, 1.0, 1.0).unwrap();
        assert!(max_diff(&out, &u.mapv(|x| -x)) < 1e-12);
    }

    #[test]
    fn single_mode_decays_by_e() {
        let u = sine(64, 1.0);
        let delta = 1.0 / (4.0 * PI * PI);
        let out = exact_spectral_step(&u, &[0.0], delta, 1.0, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!(max_diff(&out, &u.mapv(|x| e * x)) < 1e-12);
        let both = exact_spectral_step(&u, &[0.5], delta, 1.0, 1.0).unwrap();
        assert!(max_diff(&both, &u.mapv(|x| -e * x)) < 1e-12);
    }

    #[test]
    fn zero_coefficients_are_identity() {
        let u = Array2::from_shape_fn((16, 1), |(i, _)| (i as f64 * 0.37).cos() + 0.1);
        let out = exact_spectral_step(&u, &[0.0], 0.0, 5.0, 1.0).unwrap();
        assert_eq!(out, u);
    }

    #[test]
    fn rejects_bad_input() {
        let mut u = sine(16, 1.0);
        u[[3, 0]] = f64::NAN;
        assert!(matches!(
            exact_spectral_step(&u, &[1.0], 0.0, 1.0, 1.0),
            Err(MppError::NonFinite(_))
        ));
        let odd = Array2::zeros((15, 1));
        assert!(exact_spectral_step(&odd, &[1.0], 0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn two_dimensional_shift() {
        let n = 16;
        let xs = grid_points(n, 1.0);
        let u = Array2::from_shape_fn((n, n), |(i, j)| (2.0 * PI * (xs[i] + 2.0 * xs[j])).sin());
        let out = exact_spectral_step(&u, &[0.25, 0.125], 0.0, 1.0, 1.0).unwrap();
        // phase shift 2 pi (0.25 + 2 * 0.125) = pi
        assert!(max_diff(&out, &u.mapv(|x| -x)) < 1e-12);
    }

    #[test]
    fn resample_reproduces_band_limited_field() {
        let coarse = sine(32, 3.0);
        let fine = resample_periodic(&coarse, 128).unwrap();
        assert!(max_diff(&fine, &sine(128, 3.0)) < 1e-12);
        let back = resample_periodic(&fine, 32).unwrap();
        assert!(max_diff(&back, &coarse) < 1e-12);
    }
}
