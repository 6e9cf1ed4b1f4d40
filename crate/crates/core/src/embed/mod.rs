//! The shared field-embedding space: reversible instance normalisation,
//! master 1x1 embedding/reconstruction filters with channel sub-selection,
//! and hMLP patch encoding/decoding.

mod filters;
mod patch;
mod revin;

pub(crate) use filters::pixel_major;
pub use filters::{embed_backward, embed_fields, reconstruct_backward, reconstruct_fields, MasterFilters};
pub use patch::{
    patch_decode, patch_decode_backward, patch_encode, patch_encode_backward, stage_strides_for, PatchCache, StageParams,
};
pub use revin::{revin_backward, revin_denormalize, revin_normalize, NormStats, EPS_NORM};
