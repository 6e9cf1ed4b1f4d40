use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use clap::Args;
use mpp_core::data::Dataset;
use mpp_core::metrics::RolloutReport;
use mpp_core::train::{finetune_state, save_checkpoint, test_report, train_ids, TrainConfig, TrainState};

use super::{load, model_config, open_dataset, train_config, warn_unused, ModelArgs, TrainArgs};
use crate::report::{num, Csv};
use crate::settings::Settings;
use crate::Validation;

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Dataset directory (default: MPP_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated systems to pretrain on.
    #[arg(long)]
    pub systems: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Run directory for checkpoints and logs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue a run from its checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn pretrain(config: Option<&Path>, a: PretrainArgs) -> Result<()> {
    let mut s = Settings::load(config)?;
    let dir = s.data_dir("data.dir", a.data)?;
    let out = PathBuf::from(s.get("run.out", a.out.map(|p| p.display().to_string()), "runs/pretrain".into())?);
    let resume = s.opt::<String>("run.resume", a.resume.map(|p| p.display().to_string()))?;
    let ds = open_dataset(&dir)?;
    let mut state = match resume {
        Some(path) => load(Path::new(&path))?,
        None => {
            let systems: Vec<String> = s.list("train.systems", a.systems, "advection,diffusion")?;
            let model = model_config(&mut s, &a.model)?;
            let cfg = train_config(&mut s, &a.train, TrainConfig::default())?;
            let ids = train_ids(&ds, &systems)?;
            TrainState::scratch(&ds, &systems, &ids, model, cfg)?
        }
    };
    warn_unused(&s);
    s.write_snapshot(&out, "pretrain")?;
    train_with_progress(&mut state, &ds, &out, "pretrain")?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Dataset directory (default: MPP_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pretrained checkpoint to start from.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Train a fresh model instead (the controlled baseline).
    #[arg(long)]
    pub from_scratch: bool,
    #[arg(long)]
    pub system: Option<String>,
    /// Number of training trajectories.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Rollout steps of the final test evaluation.
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn finetune(config: Option<&Path>, a: FinetuneArgs) -> Result<()> {
    let mut s = Settings::load(config)?;
    let dir = s.data_dir("data.dir", a.data)?;
    let ckpt = s.opt::<String>("finetune.ckpt", a.ckpt.map(|p| p.display().to_string()))?;
    let scratch = s.flag("finetune.from_scratch", a.from_scratch)?;
    if ckpt.is_some() == scratch {
        return Err(Validation("pass exactly one of --ckpt or --from-scratch".into()).into());
    }
    let system = s.get("finetune.system", a.system, "advection_diffusion".to_string())?;
    let samples = s.get("finetune.samples", a.samples, 16)?;
    let k = s.get("eval.steps", a.steps, 5)?;
    let out = PathBuf::from(s.get("run.out", a.out.map(|p| p.display().to_string()), "runs/finetune".into())?);
    let pre = ckpt.map(|p| load(Path::new(&p))).transpose()?;
    let model = match &pre {
        Some(p) => p.model.config.clone(),
        None => model_config(&mut s, &a.model)?,
    };
    let cfg = train_config(&mut s, &a.train, TrainConfig::default())?;
    warn_unused(&s);
    let ds = open_dataset(&dir)?;
    let mut state = finetune_state(pre.as_ref(), &ds, &system, samples, model, cfg.clone())?;
    s.write_snapshot(&out, "finetune")?;
    train_with_progress(&mut state, &ds, &out, "finetune")?;
    let report = test_report(&state, &ds, &system, k)?;
    report_csv(&report).write(&out.join("report.csv"), "finetune", cfg.seed)?;
    print_report(&report, if scratch { "scratch" } else { "finetune" });
    Ok(())
}

pub fn print_report(r: &RolloutReport, label: &str) {
    let last = r.per_step.len();
    println!(
        "{} {label}: T+1 NRMSE {:.4e}, mean over {} steps {:.4e}, T+{last} {:.4e} ({} examples, {} diverged)",
        r.system,
        r.t1,
        last.min(5),
        r.mean5,
        r.per_step[last - 1],
        r.examples,
        r.diverged
    );
}

/// One row per (step, field) plus a `mean` row per step.
pub fn report_csv(r: &RolloutReport) -> Csv {
    let mut csv = Csv::new(&["system", "step", "field", "nrmse", "examples", "diverged"]);
    push_report(&mut csv, r);
    csv
}

pub fn push_report(csv: &mut Csv, r: &RolloutReport) {
    for (step, row) in r.per_step_field.iter().enumerate() {
        for (f, v) in row.iter().enumerate() {
            csv.row([
                r.system.clone(),
                (step + 1).to_string(),
                r.fields[f].clone(),
                num(*v),
                r.examples.to_string(),
                r.diverged.to_string(),
            ]);
        }
        csv.row([
            r.system.clone(),
            (step + 1).to_string(),
            "mean".into(),
            num(r.per_step[step]),
            r.examples.to_string(),
            r.diverged.to_string(),
        ]);
    }
}

fn log_csv(state: &TrainState) -> Csv {
    let systems = state.pool.systems();
    let mut header = vec!["update".to_string(), "lr".into(), "train_nmse".into()];
    header.extend(systems.iter().map(|s| format!("val_nrmse_{s}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header);
    for row in &state.log {
        let mut cells = vec![row.update.to_string(), num(row.lr), num(row.train_nmse)];
        cells.extend(systems.iter().map(|s| row.val_nrmse.get(s).map_or("nan".into(), |v| num(*v))));
        csv.row(cells);
    }
    csv
}

/// Trains epoch by epoch, printing each log row and rewriting
/// `train_log.csv`; ends with `final.ckpt`.
pub fn train_with_progress(state: &mut TrainState, ds: &Dataset, out: &Path, command: &str) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let e = state.config.epoch_updates;
    while state.update < state.config.total_updates {
        let next = (state.update / e + 1) * e;
        state.run_until(ds, next, Some(out))?;
        if let Some(row) = state.log.last() {
            let val: Vec<String> = row.val_nrmse.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
            eprintln!(
                "[{:>7.1}s] update {:>5}/{} lr {:.2e} train_nmse {:.4e} val_nrmse {}",
                start.elapsed().as_secs_f64(),
                row.update,
                state.config.total_updates,
                row.lr,
                row.train_nmse,
                val.join(" ")
            );
        }
        log_csv(state).write(&out.join("train_log.csv"), command, state.config.seed)?;
    }
    log_csv(state).write(&out.join("train_log.csv"), command, state.config.seed)?;
    save_checkpoint(state, &out.join("final.ckpt"))?;
    Ok(())
}
