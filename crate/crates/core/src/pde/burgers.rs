use ndarray::Array2;
use num_complex::Complex64;

use super::spectral::SpectralGrid;
use super::Field;
use crate::error::{MppError, Result};

/// Pseudo-spectral viscous Burgers solver, `u_t + u u_x = delta u_xx`,
/// in conservative form with 2/3-rule dealiasing and classical RK4.
#[derive(Debug)]
pub struct BurgersSolver {
    grid: SpectralGrid,
    length: f64,
    delta: f64,
    /// `-i k / 2` on kept modes, zero on dealiased modes and Nyquist.
    flux_coeff: Vec<Complex64>,
    /// `-delta k^2`.
    visc: Vec<f64>,
}

impl BurgersSolver {
    pub fn new(n: usize, length: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(MppError::config(format!("burgers requires delta > 0, got {delta}")));
        }
        let grid = SpectralGrid::new([n, 1], length)?;
        let cutoff = (n / 3) as i64;
        let mut flux_coeff = Vec::with_capacity(n);
        let mut visc = Vec::with_capacity(n);
        for i in 0..n {
            let m = SpectralGrid::mode_index(i, n);
            let k = grid.wavenumber(0, i);
            let keep = m.abs() <= cutoff && !grid.is_nyquist(0, i);
            flux_coeff.push(if keep {
                Complex64::new(0.0, -0.5 * k)
            } else {
                Complex64::new(0.0, 0.0)
            });
            visc.push(-delta * k * k);
        }
        Ok(Self {
            grid,
            length,
            delta,
            flux_coeff,
            visc,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dx(&self) -> f64 {
        self.length / self.grid.shape()[0] as f64
    }

    /// Largest stable step for the given state, `0.5 dx / max|u|`.
    pub fn cfl_limit(&self, u: &Field) -> f64 {
        let umax = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if umax == 0.0 {
            f64::INFINITY
        } else {
            0.5 * self.dx() / umax
        }
    }

    fn rhs(&self, u_hat: &Array2<Complex64>) -> Array2<Complex64> {
        let u = self.grid.inverse_real(u_hat.clone());
        let sq_hat = self.grid.forward(&u.mapv(|x| x * x));
        let mut out = sq_hat;
        for (i, z) in out.iter_mut().enumerate() {
            *z = *z * self.flux_coeff[i] + u_hat[[i, 0]] * self.visc[i];
        }
        out
    }

    /// One RK4 step in spectral space; no CFL check.
    pub fn advance(&self, u_hat: &Array2<Complex64>, dt: f64) -> Array2<Complex64> {
        let k1 = self.rhs(u_hat);
        let k2 = self.rhs(&(u_hat + &(&k1 * (0.5 * dt))));
        let k3 = self.rhs(&(u_hat + &(&k2 * (0.5 * dt))));
        let k4 = self.rhs(&(u_hat + &(&k3 * dt)));
        u_hat + &((k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (dt / 6.0))
    }

    pub fn step(&self, u: &Field, dt: f64) -> Result<Field> {
        if !u.iter().all(|x| x.is_finite()) {
            return Err(MppError::NonFinite("burgers state"));
        }
        let limit = self.cfl_limit(u);
        if dt > limit {
            return Err(MppError::Cfl { dt, limit });
        }
        let out = self.grid.inverse_real(self.advance(&self.grid.forward(u), dt));
        if !out.iter().all(|x| x.is_finite()) {
            return Err(MppError::NonFinite("burgers state"));
        }
        Ok(out)
    }

    /// Advances by `interval` using `ceil(interval / min(interval, 0.25 dx / max|u|))`
    /// equal substeps.
    pub fn evolve(&self, u: &Field, interval: f64) -> Result<Field> {
        let limit = 0.5 * self.cfl_limit(u);
        let target = interval.min(limit);
        let substeps = (interval / target).ceil().max(1.0) as usize;
        let h = interval / substeps as f64;
        let mut state = u.clone();
        for _ in 0..substeps {
            state = self.step(&state, h)?;
        }
        Ok(state)
    }
}

/// One RK4 step of viscous Burgers on a 1D periodic field of shape `[N, 1]`.
pub fn burgers_step(u: &Field, delta: f64, dt: f64, length: f64) -> Result<Field> {
    let (n, w) = u.dim();
    if w != 1 {
        return Err(MppError::shape("burgers_step expects a 1D field"));
    }
    BurgersSolver::new(n, length, delta)?.step(u, dt)
}
