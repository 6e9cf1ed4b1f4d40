use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use super::{assign_splits, write_record, FieldRegistry, Split};
use crate::error::{MppError, Result};
use crate::pde::{Coefficients, InitialConditionSpec, SystemSpec, Trajectory};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: usize,
    pub system: String,
    pub shard: String,
    pub offset: u64,
    pub seed: u64,
    pub n_steps: usize,
    pub coefficients: Coefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub systems: Vec<SystemSpec>,
    pub initial_condition: InitialConditionSpec,
    pub split_config: SplitConfig,
    pub trajectory_index: Vec<TrajectoryRecord>,
    pub splits: BTreeMap<usize, Split>,
    pub field_registry: FieldRegistry,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(MppError::format(path, format!("unsupported format version {}", manifest.format_version)));
        }
        Ok(manifest)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(root.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn system(&self, name: &str) -> Result<&SystemSpec> {
        self.systems.iter().find(|s| s.name == name).ok_or_else(|| MppError::Unknown {
            kind: "system",
            name: name.to_string(),
        })
    }

    pub fn record(&self, id: usize) -> Result<&TrajectoryRecord> {
        self.trajectory_index
            .get(id)
            .filter(|r| r.id == id)
            .or_else(|| self.trajectory_index.iter().find(|r| r.id == id))
            .ok_or_else(|| MppError::Unknown {
                kind: "trajectory id",
                name: id.to_string(),
            })
    }

    /// Ids of `system` in `split`, ascending.
    pub fn ids(&self, system: &str, split: Split) -> Vec<usize> {
        self.trajectory_index
            .iter()
            .filter(|r| r.system == system && self.splits.get(&r.id) == Some(&split))
            .map(|r| r.id)
            .collect()
    }

    pub fn split_counts(&self, system: &str) -> [usize; 3] {
        let mut c = [0; 3];
        for r in self.trajectory_index.iter().filter(|r| r.system == system) {
            if let Some(s) = self.splits.get(&r.id) {
                c[*s as usize] += 1;
            }
        }
        c
    }

    /// Appends field names to the registry; existing indices never move.
    pub fn register_fields<S: AsRef<str>>(&mut self, names: &[S]) -> Result<&FieldRegistry> {
        self.field_registry.register(names)?;
        Ok(&self.field_registry)
    }
}

fn record_shape(spec: &SystemSpec) -> Vec<usize> {
    let mut shape = vec![spec.n_steps, spec.fields.len(), spec.n];
    if spec.dims == 2 {
        shape.push(spec.n);
    }
    shape
}

/// Writes one shard per system plus `manifest.json` under `root`.
pub fn write_dataset(
    trajectories: &[Trajectory],
    systems: &[SystemSpec],
    initial_condition: &InitialConditionSpec,
    split_config: &SplitConfig,
    root: &Path,
) -> Result<DatasetManifest> {
    if trajectories.is_empty() {
        return Err(MppError::Empty("trajectory list"));
    }
    for s in systems {
        s.validate()?;
    }
    fs::create_dir_all(root)?;

    let mut registry = FieldRegistry::new();
    for s in systems {
        registry.register_missing(&s.fields);
    }

    let mut index: Vec<Option<TrajectoryRecord>> = vec![None; trajectories.len()];
    let mut per_system = Vec::with_capacity(systems.len());
    for spec in systems {
        let shard = format!("{}.bin", spec.name);
        let mut out = BufWriter::new(File::create(root.join(&shard))?);
        let mut offset = 0u64;
        let mut ids = Vec::new();
        let shape = record_shape(spec);
        for (id, traj) in trajectories.iter().enumerate().filter(|(_, t)| t.system == spec.name) {
            if !traj.is_finite() {
                return Err(MppError::NonFinite("trajectory"));
            }
            let data = traj
                .snapshots
                .mapv(|x| x as f32)
                .into_shape_with_order(IxDyn(&shape))
                .map_err(|_| {
                    MppError::shape(format!(
                        "trajectory {id} has shape {:?}, system `{}` expects {shape:?}",
                        traj.snapshots.shape(),
                        spec.name
                    ))
                })?;
            let written = write_record(&mut out, &data)?;
            index[id] = Some(TrajectoryRecord {
                id,
                system: spec.name.clone(),
                shard: shard.clone(),
                offset,
                seed: traj.seed,
                n_steps: traj.n_steps(),
                coefficients: traj.coefficients.clone(),
            });
            offset += written;
            ids.push(id);
        }
        out.flush()?;
        per_system.push(ids);
    }
    let trajectory_index = index
        .into_iter()
        .enumerate()
        .map(|(id, r)| {
            r.ok_or_else(|| MppError::Unknown {
                kind: "system of trajectory",
                name: format!("{id} ({})", trajectories[id].system),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let splits = assign_splits(
        &per_system.into_iter().filter(|ids| !ids.is_empty()).collect::<Vec<_>>(),
        split_config.fractions,
        split_config.seed,
    )?;

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        systems: systems.to_vec(),
        initial_condition: initial_condition.clone(),
        split_config: split_config.clone(),
        trajectory_index,
        splits,
        field_registry: registry,
    };
    manifest.save(root)?;
    Ok(manifest)
}
