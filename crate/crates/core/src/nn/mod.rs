//! Parameter storage and the differentiable primitives the model is built
//! from. Every primitive has an explicit forward that caches what its
//! backward needs.

mod ops;
mod params;

pub use ops::{gelu, gelu_backward, linear, linear_backward, InstanceNorm, NormCache};
pub use params::{Param, ParamSet};
