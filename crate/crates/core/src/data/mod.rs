//! On-disk trajectory corpora: binary shards, a JSON manifest, split
//! assignment, the global field registry, and history-window reads.

mod manifest;
mod registry;
mod shard;
mod splits;
mod window;

pub use manifest::{write_dataset, DatasetManifest, SplitConfig, TrajectoryRecord, FORMAT_VERSION, MANIFEST_FILE};
pub use registry::FieldRegistry;
pub use shard::{read_record, write_record, SHARD_MAGIC, SHARD_VERSION};
pub use splits::{assign_splits, Split};
pub use window::{read_window, Dataset, HistoryWindow, DEFAULT_HISTORY};
