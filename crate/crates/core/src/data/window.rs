use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4, ArrayD, Ix4};

use super::{read_record, DatasetManifest, Split};
use crate::error::{MppError, Result};
use crate::real::Real;

/// Context length used throughout.
pub const DEFAULT_HISTORY: usize = 16;

/// `T` consecutive snapshots plus the next one as target.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow<F> {
    pub system: String,
    pub trajectory: usize,
    pub t0: usize,
    /// `[T, n_fields, H, W]`; 1D systems have `W = 1`.
    pub frames: Array4<F>,
    /// `[n_fields, H, W]`.
    pub target: Array3<F>,
    pub field_indices: Vec<usize>,
    /// Periodicity of the `H` and `W` axes.
    pub periodic: [bool; 2],
    pub dt: f64,
}

impl<F: Real> HistoryWindow<F> {
    pub fn history(&self) -> usize {
        self.frames.dim().0
    }

    pub fn n_fields(&self) -> usize {
        self.frames.dim().1
    }

    pub fn spatial(&self) -> [usize; 2] {
        let (_, _, h, w) = self.frames.dim();
        [h, w]
    }

    pub fn cast<G: Real>(&self) -> HistoryWindow<G> {
        HistoryWindow {
            system: self.system.clone(),
            trajectory: self.trajectory,
            t0: self.t0,
            frames: self.frames.mapv(|x| G::c(x.f64())),
            target: self.target.mapv(|x| G::c(x.f64())),
            field_indices: self.field_indices.clone(),
            periodic: self.periodic,
            dt: self.dt,
        }
    }

    /// Window over an in-memory trajectory (full precision, no shard).
    pub fn from_trajectory(
        traj: &crate::pde::Trajectory,
        spec: &crate::pde::SystemSpec,
        id: usize,
        field_indices: Vec<usize>,
        t0: usize,
        history: usize,
    ) -> Result<Self> {
        let n_steps = traj.n_steps();
        if history == 0 || t0 + history >= n_steps {
            return Err(MppError::WindowRange {
                t0,
                t: history,
                n_steps,
            });
        }
        if field_indices.len() != traj.snapshots.dim().1 {
            return Err(MppError::shape("one registry index per field required"));
        }
        Ok(Self {
            system: traj.system.clone(),
            trajectory: id,
            t0,
            frames: traj.snapshots.slice(s![t0..t0 + history, .., .., ..]).mapv(F::c),
            target: traj.snapshots.slice(s![t0 + history, .., .., ..]).mapv(F::c),
            field_indices,
            periodic: [spec.periodic[0], spec.periodic.get(1).copied().unwrap_or(false)],
            dt: spec.dt,
        })
    }

    /// Drops the oldest frame and appends `next` as the newest; the target
    /// becomes `next_target` (or stays if `None`).
    pub fn advance(&mut self, next: &Array3<F>, next_target: Option<&Array3<F>>) {
        let t = self.history();
        let old = self.frames.slice(s![1.., .., .., ..]).to_owned();
        self.frames.slice_mut(s![..t - 1, .., .., ..]).assign(&old);
        self.frames.slice_mut(s![t - 1, .., .., ..]).assign(next);
        if let Some(tg) = next_target {
            self.target.assign(tg);
        }
        self.t0 += 1;
    }
}

fn lift(data: ArrayD<f32>) -> Result<Array4<f32>> {
    match data.ndim() {
        3 => {
            let (a, b, c) = (data.shape()[0], data.shape()[1], data.shape()[2]);
            data.into_shape_with_order((a, b, c, 1)).map_err(|e| MppError::shape(e.to_string()))
        }
        4 => data.into_dimensionality::<Ix4>().map_err(|e| MppError::shape(e.to_string())),
        n => Err(MppError::shape(format!("trajectory record has rank {n}"))),
    }
}

fn make_window<F: Real>(
    manifest: &DatasetManifest,
    id: usize,
    t0: usize,
    history: usize,
    data: &Array4<f32>,
) -> Result<HistoryWindow<F>> {
    let rec = manifest.record(id)?;
    let spec = manifest.system(&rec.system)?;
    let n_steps = data.dim().0;
    if history == 0 || t0 + history >= n_steps {
        return Err(MppError::WindowRange {
            t0,
            t: history,
            n_steps,
        });
    }
    let field_indices = manifest.field_registry.indices_of(&spec.fields)?;
    Ok(HistoryWindow {
        system: rec.system.clone(),
        trajectory: id,
        t0,
        frames: data.slice(s![t0..t0 + history, .., .., ..]).mapv(|x| F::c(x as f64)),
        target: data.slice(s![t0 + history, .., .., ..]).mapv(|x| F::c(x as f64)),
        field_indices,
        periodic: [spec.periodic[0], spec.periodic.get(1).copied().unwrap_or(false)],
        dt: spec.dt,
    })
}

/// Reads frames `[t0, t0 + history)` and target `t0 + history` of one
/// trajectory straight from its shard.
pub fn read_window<F: Real>(root: &Path, manifest: &DatasetManifest, id: usize, t0: usize, history: usize) -> Result<HistoryWindow<F>> {
    let rec = manifest.record(id)?;
    let mut file = BufReader::new(File::open(root.join(&rec.shard))?);
    file.seek(SeekFrom::Start(rec.offset))?;
    let data = lift(read_record(&mut file)?)?;
    make_window(manifest, id, t0, history, &data)
}

/// A dataset with every trajectory loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
    data: HashMap<usize, Array4<f32>>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = DatasetManifest::load(&root)?;
        let mut data = HashMap::with_capacity(manifest.trajectory_index.len());
        let mut shards: Vec<&str> = manifest.trajectory_index.iter().map(|r| r.shard.as_str()).collect();
        shards.dedup();
        for shard in shards {
            let mut file = BufReader::new(File::open(root.join(shard))?);
            for rec in manifest.trajectory_index.iter().filter(|r| r.shard == shard) {
                file.seek(SeekFrom::Start(rec.offset))?;
                let arr = lift(read_record(&mut file)?)?;
                if arr.dim().0 != rec.n_steps {
                    return Err(MppError::format(root.join(shard), format!("trajectory {} length mismatch", rec.id)));
                }
                data.insert(rec.id, arr);
            }
        }
        Ok(Self { root, manifest, data })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn trajectory(&self, id: usize) -> Result<&Array4<f32>> {
        self.data.get(&id).ok_or_else(|| MppError::Unknown {
            kind: "trajectory id",
            name: id.to_string(),
        })
    }

    pub fn window<F: Real>(&self, id: usize, t0: usize, history: usize) -> Result<HistoryWindow<F>> {
        make_window(&self.manifest, id, t0, history, self.trajectory(id)?)
    }

    pub fn ids(&self, system: &str, split: Split) -> Vec<usize> {
        self.manifest.ids(system, split)
    }

    /// Snapshot `t` of trajectory `id`, `[n_fields, H, W]`.
    pub fn snapshot<F: Real>(&self, id: usize, t: usize) -> Result<Array3<F>> {
        let traj = self.trajectory(id)?;
        if t >= traj.dim().0 {
            return Err(MppError::WindowRange {
                t0: t,
                t: 0,
                n_steps: traj.dim().0,
            });
        }
        Ok(traj.slice(s![t, .., .., ..]).mapv(|x| F::c(x as f64)))
    }
}
