//! Exact and pseudo-spectral trajectory generation on periodic domains.
//!
//! Fields are stored as `[H, W]` arrays; 1D systems use `W = 1`.

mod burgers;
mod generate;
mod initial;
mod spectral;
mod system;

use ndarray::Array2;

pub use burgers::{burgers_step, BurgersSolver};
pub use generate::{generate_corpus, generate_trajectory, CorpusEntry};
pub use initial::sample_initial_condition;
pub use spectral::{exact_spectral_step, resample_periodic, SpectralGrid};
pub use system::{Coefficient, Coefficients, Family, InitialConditionSpec, SystemSpec, Trajectory};

/// A real field sampled on a cell-centred periodic grid, shape `[H, W]`.
pub type Field = Array2<f64>;

/// Cell-centred coordinates `x_j = (j + 1/2) L / N`.
pub fn grid_points(n: usize, length: f64) -> Vec<f64> {
    (0..n).map(|j| (j as f64 + 0.5) * length / n as f64).collect()
}
