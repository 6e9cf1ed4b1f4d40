//! Multiple-physics pretraining laboratory.
//!
//! Exact PDE trajectory generation, a binary trajectory store, the shared
//! field-embedding space, an axial-attention spatiotemporal transformer with
//! hand-written reverse-mode gradients, NMSE/NRMSE objectives with rollout
//! evaluation, and a multi-system trainer.

// Kernels take their operands explicitly rather than through ad hoc structs.
#![allow(clippy::too_many_arguments, clippy::type_complexity)]

pub mod backbone;
pub mod data;
pub mod embed;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod pde;
pub mod real;
pub mod train;

pub use error::{MppError, Result};
pub use real::Real;
