//! Shared inputs for the criterion benches in `benches/`.

use mpp_core::backbone::{Avit, ModelConfig};
use ndarray::{Array2, Array4};

/// A smooth `[T, 1, n, 1]` history window.
pub fn window_1d(history: usize, n: usize) -> Array4<f32> {
    Array4::from_shape_fn((history, 1, n, 1), |(t, _, i, _)| (i as f32 * 0.1 + t as f32 * 0.05).sin())
}

/// A smooth `[n, w]` field for the solver benches.
pub fn field(n: usize, w: usize) -> Array2<f64> {
    let k = std::f64::consts::TAU / n as f64;
    Array2::from_shape_fn((n, w), |(i, j)| (k * i as f64).sin() + 0.5 * (2.0 * k * (i + j) as f64).cos())
}

pub fn micro() -> Avit<f32> {
    Avit::new(ModelConfig::micro(), 1, 0).expect("micro preset is valid")
}
