use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use mpp_core::data::{write_dataset, DatasetManifest, Split, SplitConfig, MANIFEST_FILE};
use mpp_core::pde::{generate_corpus, CorpusEntry, InitialConditionSpec, SystemSpec};
use mpp_core::train::parse_checkpoint;

use super::{open_dataset, warn_unused};
use crate::report::BUILD_ID;
use crate::settings::Settings;
use crate::Validation;

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output dataset directory (default: MPP_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated system presets.
    #[arg(long)]
    pub systems: Option<String>,
    /// Trajectories per system.
    #[arg(long)]
    pub count: Option<usize>,
    /// Grid points per axis.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    /// Snapshots per trajectory.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Snapshot spacing for every system (default: per-system preset).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_wavenumber: Option<usize>,
    #[arg(long)]
    pub n_modes: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Replace an existing dataset.
    #[arg(long)]
    pub force: bool,
}

fn is_empty_dir(dir: &Path) -> Result<bool> {
    Ok(!dir.exists() || fs::read_dir(dir)?.next().is_none())
}

/// Removes the manifest and the shards it lists, nothing else.
fn remove_dataset(dir: &Path) -> Result<()> {
    if let Ok(old) = DatasetManifest::load(dir) {
        let mut shards: Vec<&str> = old.trajectory_index.iter().map(|r| r.shard.as_str()).collect();
        shards.dedup();
        for shard in shards {
            let _ = fs::remove_file(dir.join(shard));
        }
    }
    let _ = fs::remove_file(dir.join(MANIFEST_FILE));
    Ok(())
}

pub fn gen_data(config: Option<&Path>, a: GenArgs) -> Result<()> {
    let mut s = Settings::load(config)?;
    let dir = s.data_dir("data.dir", a.data)?;
    let systems: Vec<String> = s.list("data.systems", a.systems, "advection,diffusion")?;
    let count = s.get("data.count", a.count, 2000)?;
    let n = s.get("data.n", a.n, 128)?;
    let dims = s.get("data.dims", a.dims, 1)?;
    let steps = s.get("data.steps", a.steps, 21)?;
    let dt = s.opt("data.dt", a.dt)?;
    let seed = s.get("data.seed", a.seed, 0)?;
    let d = InitialConditionSpec::default();
    let ic = InitialConditionSpec {
        max_wavenumber: s.get("ic.max_wavenumber", a.max_wavenumber, d.max_wavenumber)?,
        n_modes: s.get("ic.n_modes", a.n_modes, d.n_modes)?,
        ..d
    };
    let split = SplitConfig {
        seed: s.get("data.split_seed", a.split_seed, 0)?,
        ..SplitConfig::default()
    };
    let force = s.flag("data.force", a.force)?;
    warn_unused(&s);
    if systems.is_empty() || count == 0 {
        return Err(Validation("need at least one system and a positive count".into()).into());
    }

    let specs = systems
        .iter()
        .map(|name| {
            let mut spec = SystemSpec::preset(name)?.with_resolution(n, dims);
            spec.n_steps = steps;
            if let Some(dt) = dt {
                spec.dt = dt;
            }
            spec.validate()?;
            Ok(spec)
        })
        .collect::<mpp_core::Result<Vec<_>>>()?;
    ic.validate(n)?;

    if !is_empty_dir(&dir)? {
        if !force {
            return Err(Validation(format!("{} is not empty; pass --force to replace the dataset", dir.display())).into());
        }
        remove_dataset(&dir)?;
    }
    fs::create_dir_all(&dir)?;

    let entries: Vec<CorpusEntry> = specs.iter().map(|spec| CorpusEntry { spec: spec.clone(), count }).collect();
    let trajectories = generate_corpus(&entries, &ic, seed)?;
    let manifest = write_dataset(&trajectories, &specs, &ic, &split, &dir)?;
    s.write_snapshot(&dir, "gen-data")?;
    print_manifest(&manifest, &dir);
    Ok(())
}

fn print_manifest(m: &DatasetManifest, dir: &Path) {
    println!("dataset {} ({} trajectories)", dir.display(), m.trajectory_index.len());
    println!("system,n,dims,dt,n_steps,fields,train,val,test");
    for spec in &m.systems {
        let [tr, va, te] = m.split_counts(&spec.name);
        println!(
            "{},{},{},{},{},{},{tr},{va},{te}",
            spec.name,
            spec.n,
            spec.dims,
            spec.dt,
            spec.n_steps,
            spec.fields.join("|")
        );
    }
    println!("field registry: {}", m.field_registry.names().join(", "));
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    /// Dataset directory (default: MPP_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint file.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}

pub fn info(config: Option<&Path>, a: InfoArgs) -> Result<()> {
    let mut s = Settings::load(config)?;
    println!("mpp {BUILD_ID}");
    if let Some(path) = &a.ckpt {
        let bytes = fs::read(path).map_err(|e| Validation(format!("{}: {e}", path.display())))?;
        let state = parse_checkpoint(&bytes, path)?;
        let m = &state.model.config;
        println!("checkpoint {}", path.display());
        println!(
            "model: D={} mlp={} heads={} blocks={} patch={}x{} T={} ({} parameters)",
            m.embed_dim,
            m.mlp_dim,
            m.n_heads,
            m.n_blocks,
            m.patch[0],
            m.patch[1],
            m.history,
            state.model.params.num_elements()
        );
        println!("registry: {}", state.registry.names().join(", "));
        println!("systems: {}", state.pool.systems().join(", "));
        println!("updates: {} of {}", state.update, state.config.total_updates);
        if let Some(row) = state.log.last() {
            let val: Vec<String> = row.val_nrmse.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
            println!("last epoch: update {} train_nmse {:.4e} val_nrmse {}", row.update, row.train_nmse, val.join(" "));
        }
        return Ok(());
    }
    let dir = match a.data {
        Some(d) => d,
        None => s.data_dir("data.dir", None)?,
    };
    let ds = open_dataset(&dir)?;
    print_manifest(ds.manifest(), &dir);
    for split in [Split::Train, Split::Val, Split::Test] {
        let total: usize = ds.manifest().systems.iter().map(|x| ds.ids(&x.name, split).len()).sum();
        println!("{split}: {total}");
    }
    Ok(())
}
