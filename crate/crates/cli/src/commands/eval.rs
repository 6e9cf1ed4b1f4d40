use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use mpp_core::data::{Dataset, HistoryWindow, Split};
use mpp_core::metrics::{evaluate_suite, nrmse_fields, rollout as run_rollout, EvalOptions, SpectralOracle};
use mpp_core::pde::generate_trajectory;
use ndarray::{s, Array3};

use super::train::{print_report, push_report};
use super::{open_dataset, warn_unused, Source, SourceArgs};
use crate::report::{num, Csv};
use crate::settings::Settings;
use crate::Validation;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory (default: MPP_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Rollout steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Comma-separated systems (default: all in the dataset).
    #[arg(long)]
    pub systems: Option<String>,
    /// Spacing of window starts within each trajectory.
    #[arg(long)]
    pub t0_stride: Option<usize>,
    #[arg(long)]
    pub max_trajectories: Option<usize>,
    /// Write eval.csv and the resolved config here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(config: Option<&Path>, a: EvalArgs) -> Result<()> {
    let mut s = Settings::load(config)?;
    let dir = s.data_dir("data.dir", a.data)?;
    let source = Source::resolve(&mut s, &a.source)?;
    let split: Split = s.get("eval.split", a.split, "test".to_string())?.parse()?;
    let d = EvalOptions::default();
    let opts = EvalOptions {
        k: s.get("eval.steps", a.steps, d.k)?,
        t0_stride: s.opt("eval.t0_stride", a.t0_stride)?.unwrap_or(d.t0_stride),
        max_trajectories: s.opt("eval.max_trajectories", a.max_trajectories)?,
        ..d
    };
    let systems: Option<Vec<String>> = match s.opt::<String>("eval.systems", a.systems)? {
        Some(raw) => Some(crate::settings::split_list(&raw).map_err(Validation)?),
        None => None,
    };
    let out = s.opt::<String>("run.out", a.out.map(|p| p.display().to_string()))?;
    warn_unused(&s);
    let ds = open_dataset(&dir)?;
    let reports = source.with(&ds, |p| Ok(evaluate_suite(p, &ds, split, systems.as_deref(), &opts)?))?;
    let mut csv = Csv::new(&["system", "step", "field", "nrmse", "examples", "diverged"]);
    for r in reports.values() {
        print_report(r, source.label());
        push_report(&mut csv, r);
    }
    match out {
        Some(out) => {
            let out = PathBuf::from(out);
            s.write_snapshot(&out, "eval")?;
            csv.write(&out.join("eval.csv"), "eval", 0)?;
        }
        None => print!("{}", csv.finish("eval", 0)),
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    /// Dataset directory (default: MPP_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub traj_id: Option<usize>,
    /// First context frame.
    #[arg(long)]
    pub t0: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Also write every predicted and true value to fields.csv.
    #[arg(long)]
    pub dump: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Window and ground truth for a rollout. The oracle path regenerates the
/// trajectory in double precision from its recorded seed, so the check is
/// not limited by single-precision storage.
fn rollout_inputs(ds: &Dataset, id: usize, t0: usize, k: usize, exact: bool) -> Result<(HistoryWindow<f64>, Vec<Array3<f64>>)> {
    let history = mpp_core::data::DEFAULT_HISTORY;
    let record = ds.manifest().record(id)?;
    if t0 + history + k > record.n_steps {
        return Err(Validation(format!(
            "t0={t0} with {k} steps needs {} snapshots, trajectory {id} has {}",
            t0 + history + k,
            record.n_steps
        ))
        .into());
    }
    if !exact {
        let window = ds.window::<f64>(id, t0, history)?;
        let truth = (0..k).map(|j| ds.snapshot::<f64>(id, t0 + history + j)).collect::<mpp_core::Result<Vec<_>>>()?;
        return Ok((window, truth));
    }
    let spec = ds.manifest().system(&record.system)?;
    let traj = generate_trajectory(spec, &ds.manifest().initial_condition, record.seed)?;
    if traj.coefficients != record.coefficients {
        return Err(Validation(format!("trajectory {id} does not regenerate from its recorded seed")).into());
    }
    let fields = ds.manifest().field_registry.indices_of(&spec.fields)?;
    let window = HistoryWindow::from_trajectory(&traj, spec, id, fields, t0, history)?;
    let truth = (0..k).map(|j| traj.snapshots.slice(s![t0 + history + j, .., .., ..]).to_owned()).collect();
    Ok((window, truth))
}

pub fn rollout(config: Option<&Path>, a: RolloutArgs) -> Result<()> {
    let mut s = Settings::load(config)?;
    let dir = s.data_dir("data.dir", a.data)?;
    let source = Source::resolve(&mut s, &a.source)?;
    let id = s
        .opt("rollout.traj_id", a.traj_id)?
        .ok_or_else(|| Validation("--traj-id is required".into()))?;
    let t0 = s.get("rollout.t0", a.t0, 0)?;
    let k = s.get("rollout.steps", a.steps, 5)?;
    let dump = s.flag("rollout.dump", a.dump)?;
    let out = s.opt::<String>("run.out", a.out.map(|p| p.display().to_string()))?;
    warn_unused(&s);
    let ds = open_dataset(&dir)?;
    let oracle = matches!(source, Source::Oracle);
    let (window, truth) = rollout_inputs(&ds, id, t0, k, oracle)?;
    let result = if oracle {
        let mut o = SpectralOracle::new();
        let record = ds.manifest().record(id)?;
        o.insert(id, ds.manifest().system(&record.system)?, &record.coefficients);
        run_rollout(&o, &window, k)?
    } else {
        source.with(&ds, |p| Ok(run_rollout(p, &window, k)?))?
    };
    let fields = ds.manifest().system(&window.system)?.fields.clone();

    let mut csv = Csv::new(&["trajectory", "step", "field", "nrmse", "max_abs_error"]);
    let mut dump_csv = Csv::new(&["step", "field", "i", "j", "prediction", "truth"]);
    println!("trajectory {id} ({}) from t0={t0}, {} model", window.system, source.label());
    for (step, u) in truth.iter().enumerate() {
        let Some(p) = result.predictions.get(step) else { break };
        let errs = if p.iter().all(|x| x.is_finite()) { nrmse_fields(p, u)? } else { vec![f64::INFINITY; fields.len()] };
        for (f, e) in errs.iter().enumerate() {
            let max_abs = p
                .slice(s![f, .., ..])
                .iter()
                .zip(u.slice(s![f, .., ..]))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            println!("  T+{} {}: nrmse {:.4e}, max abs error {:.4e}", step + 1, fields[f], e, max_abs);
            csv.row([id.to_string(), (step + 1).to_string(), fields[f].clone(), num(*e), num(max_abs)]);
            if dump {
                for ((i, j), v) in p.slice(s![f, .., ..]).indexed_iter() {
                    dump_csv.row([(step + 1).to_string(), fields[f].clone(), i.to_string(), j.to_string(), num(*v), num(u[[f, i, j]])]);
                }
            }
        }
    }
    if let Some(at) = result.diverged_at {
        println!("  diverged at step {at}");
    }
    if let Some(out) = out {
        let out = PathBuf::from(out);
        s.write_snapshot(&out, "rollout")?;
        csv.write(&out.join("rollout.csv"), "rollout", 0)?;
        if dump {
            dump_csv.write(&out.join("fields.csv"), "rollout", 0)?;
        }
    }
    Ok(())
}
