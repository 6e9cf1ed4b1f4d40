//! The axial vision transformer: bucketed relative positions, axial
//! attention with QK-norm, pre-norm residual blocks and the full
//! window-to-next-snapshot model with reverse-mode gradients.

mod attention;
mod block;
mod config;
mod model;
pub mod reference;
mod rpe;

pub use attention::{axial_attention, axial_attention_backward, AttnCache, AttnHandles, AxisKind, QK_EPS};
pub use block::{block_backward, block_forward, BlockCache, BlockHandles, BlockSpec};
pub use config::ModelConfig;
pub use model::{handles_from_names, Avit, ForwardCache, ModelHandles};
pub use rpe::{periodic_displacement, RpeConfig};
