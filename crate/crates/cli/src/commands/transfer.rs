use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use mpp_core::metrics::RolloutReport;
use mpp_core::train::{finetune_state, test_report, train_ids, TrainConfig, TrainState};
use serde::{Deserialize, Serialize};

use super::train::train_with_progress;
use super::{load, model_config, open_dataset, train_config, warn_unused, ModelArgs, TrainArgs};
use crate::report::{num, Csv};
use crate::settings::Settings;
use crate::{ThresholdFailure, Validation};

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Dataset holding the finetuning target (default: MPP_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pretrained checkpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Pretrain first (into <out>/pretrain) instead of loading --ckpt.
    #[arg(long)]
    pub auto: bool,
    /// Pretraining dataset for --auto (default: --data).
    #[arg(long)]
    pub pretrain_data: Option<PathBuf>,
    #[arg(long)]
    pub pretrain_systems: Option<String>,
    #[arg(long)]
    pub pretrain_updates: Option<usize>,
    /// Target system.
    #[arg(long)]
    pub system: Option<String>,
    /// Comma-separated training-sample counts.
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Rollout steps of each cell's test evaluation.
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Budget of every finetuning and from-scratch cell.
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Re-emit tables from cached cells without training.
    #[arg(long)]
    pub report_only: bool,
    /// Exit with code 3 unless pretraining wins at small n and the
    /// advantage shrinks with data.
    #[arg(long)]
    pub assert: bool,
}

/// Default per-cell budget: short single-micro-batch runs.
pub fn cell_defaults() -> TrainConfig {
    TrainConfig {
        accum_steps: 1,
        epoch_updates: 100,
        val_trajectories: 16,
        ..TrainConfig::default()
    }
    .with_updates(400)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Cell {
    n: usize,
    seed: u64,
    arm: String,
    budget: TrainConfig,
    report: RolloutReport,
}

const ARMS: [&str; 2] = ["finetune", "scratch"];

fn cell_path(out: &Path, arm: &str, n: usize, seed: u64) -> PathBuf {
    out.join("cells").join(format!("{arm}_n{n}_s{seed}.json"))
}

pub fn run(config: Option<&Path>, a: TransferArgs) -> Result<()> {
    let mut s = Settings::load(config)?;
    let dir = s.data_dir("data.dir", a.data)?;
    let out = PathBuf::from(s.get("run.out", a.out.map(|p| p.display().to_string()), "runs/transfer".into())?);
    let system = s.get("transfer.system", a.system, "advection_diffusion".to_string())?;
    let grid: Vec<usize> = s.list("transfer.grid", a.grid, "16,64,256,1024")?;
    let seeds: Vec<u64> = s.list("transfer.seeds", a.seeds, "0,1,2")?;
    let k = s.get("eval.steps", a.steps, 5)?;
    let report_only = s.flag("transfer.report_only", a.report_only)?;
    let assert = s.flag("transfer.assert", a.assert)?;
    let ckpt = s.opt::<String>("transfer.ckpt", a.ckpt.map(|p| p.display().to_string()))?;
    let auto = s.flag("transfer.auto", a.auto)?;
    if grid.is_empty() || seeds.is_empty() {
        return Err(Validation("the sample grid and seed list must be non-empty".into()).into());
    }
    let budget = train_config(&mut s, &a.train, cell_defaults())?;

    let mut cells = BTreeMap::new();
    if report_only {
        warn_unused(&s);
        for &n in &grid {
            for &seed in &seeds {
                for arm in ARMS {
                    let path = cell_path(&out, arm, n, seed);
                    let text = fs::read_to_string(&path).map_err(|_| Validation(format!("no cached cell {}", path.display())))?;
                    let cell: Cell = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                    cells.insert((n, seed, arm.to_string()), cell);
                }
            }
        }
        return emit(&out, &grid, &seeds, &cells, assert);
    }

    let pre = match (ckpt, auto) {
        (Some(path), false) => load(Path::new(&path))?,
        (None, true) => {
            let pre_dir = s.opt::<String>("transfer.pretrain_data", a.pretrain_data.map(|p| p.display().to_string()))?;
            let pre_dir = pre_dir.map(PathBuf::from).unwrap_or_else(|| dir.clone());
            let systems: Vec<String> = s.list("transfer.pretrain_systems", a.pretrain_systems, "advection,diffusion")?;
            let updates = s.get("transfer.pretrain_updates", a.pretrain_updates, 3000)?;
            let model = model_config(&mut s, &a.model)?;
            let run_dir = out.join("pretrain");
            let cached = run_dir.join("final.ckpt");
            if cached.exists() {
                eprintln!("reusing {}", cached.display());
                load(&cached)?
            } else {
                let ds = open_dataset(&pre_dir)?;
                let cfg = TrainConfig {
                    seed: budget.seed,
                    ..TrainConfig::default()
                }
                .with_updates(updates);
                let ids = train_ids(&ds, &systems)?;
                let mut state = TrainState::scratch(&ds, &systems, &ids, model, cfg)?;
                train_with_progress(&mut state, &ds, &run_dir, "pretrain")?;
                state
            }
        }
        _ => return Err(Validation("pass exactly one of --ckpt or --auto".into()).into()),
    };
    warn_unused(&s);
    s.write_snapshot(&out, "transfer-experiment")?;
    let ds = open_dataset(&dir)?;
    for &n in &grid {
        for &seed in &seeds {
            for arm in ARMS {
                let path = cell_path(&out, arm, n, seed);
                let cfg = TrainConfig { seed, ..budget.clone() };
                if let Ok(text) = fs::read_to_string(&path) {
                    if let Ok(cell) = serde_json::from_str::<Cell>(&text) {
                        if cell.budget == cfg {
                            cells.insert((n, seed, arm.to_string()), cell);
                            continue;
                        }
                    }
                }
                let init = (arm == "finetune").then_some(&pre);
                let mut state = finetune_state(init, &ds, &system, n, pre.model.config.clone(), cfg.clone())?;
                let run_dir = out.join("runs").join(format!("{arm}_n{n}_s{seed}"));
                train_with_progress(&mut state, &ds, &run_dir, "transfer-experiment")?;
                let report = test_report(&state, &ds, &system, k)?;
                eprintln!("n={n} seed={seed} {arm}: T+1 {:.4e} T+5 {:.4e}", report.t1, report.mean5);
                let cell = Cell {
                    n,
                    seed,
                    arm: arm.to_string(),
                    budget: cfg,
                    report,
                };
                fs::create_dir_all(path.parent().expect("cells dir"))?;
                fs::write(&path, serde_json::to_string_pretty(&cell)?)?;
                cells.insert((n, seed, arm.to_string()), cell);
            }
        }
    }
    emit(&out, &grid, &seeds, &cells, assert)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn emit(out: &Path, grid: &[usize], seeds: &[u64], cells: &BTreeMap<(usize, u64, String), Cell>, assert: bool) -> Result<()> {
    let seed = seeds[0];
    let get = |n: usize, s: u64, arm: &str| &cells[&(n, s, arm.to_string())].report;
    let mut table = Csv::new(&["n", "seed", "arm", "t1_nrmse", "t5_nrmse"]);
    let mut plot = Csv::new(&["n", "arm", "metric", "value"]);
    let mut summary = Csv::new(&["n", "arm", "t1_mean", "t1_std", "t5_mean", "t5_std"]);
    println!("n,arm,t1_mean,t1_std,t5_mean,t5_std");
    for &n in grid {
        for arm in ARMS {
            let mut t1 = Vec::new();
            let mut t5 = Vec::new();
            for &s in seeds {
                let r = get(n, s, arm);
                table.row([n.to_string(), s.to_string(), arm.to_string(), num(r.t1), num(r.mean5)]);
                plot.row([n.to_string(), arm.to_string(), "t1".into(), num(r.t1)]);
                plot.row([n.to_string(), arm.to_string(), "t5".into(), num(r.mean5)]);
                t1.push(r.t1);
                t5.push(r.mean5);
            }
            let (m1, s1) = mean_std(&t1);
            let (m5, s5) = mean_std(&t5);
            println!("{n},{arm},{m1:.4e},{s1:.2e},{m5:.4e},{s5:.2e}");
            summary.row([n.to_string(), arm.to_string(), num(m1), num(s1), num(m5), num(s5)]);
        }
    }
    table.write(&out.join("transfer.csv"), "transfer-experiment", seed)?;
    summary.write(&out.join("summary.csv"), "transfer-experiment", seed)?;
    plot.write(&out.join("plot.csv"), "transfer-experiment", seed)?;
    if !assert {
        return Ok(());
    }

    let gap = |n: usize| seeds.iter().map(|&s| get(n, s, "scratch").t1 - get(n, s, "finetune").t1).sum::<f64>() / seeds.len() as f64;
    let mut failures = Vec::new();
    for n in [16, 64] {
        if !grid.contains(&n) {
            continue;
        }
        for &s in seeds {
            let (ft, sc) = (get(n, s, "finetune").t1, get(n, s, "scratch").t1);
            let ok = ft < sc;
            println!("check n={n} seed={s}: finetune {ft:.4e} < scratch {sc:.4e}: {}", if ok { "pass" } else { "FAIL" });
            if !ok {
                failures.push(format!("n={n} seed={s}"));
            }
        }
    }
    if grid.contains(&16) && grid.contains(&1024) {
        let (g16, g1024) = (gap(16), gap(1024));
        let ok = g16 > g1024;
        println!("check gap(16) {g16:.4e} > gap(1024) {g1024:.4e}: {}", if ok { "pass" } else { "FAIL" });
        if !ok {
            failures.push("advantage does not shrink with data".into());
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(ThresholdFailure(format!("transfer assertions failed: {}", failures.join("; "))).into())
    }
}
