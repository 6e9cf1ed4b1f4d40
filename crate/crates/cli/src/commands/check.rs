use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use mpp_core::backbone::ModelConfig;
use mpp_core::gradcheck::{check_model_with, CheckOptions, Probe, DEFAULT_STEP, DEFAULT_TOLERANCE};

use super::warn_unused;
use crate::report::{num, Csv};
use crate::settings::Settings;

#[derive(Args, Debug)]
pub struct GradArgs {
    /// Model preset.
    #[arg(long)]
    pub model: Option<String>,
    /// Grid points per spatial axis.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub fields: Option<usize>,
    /// Central-difference step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Relative-error tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Check at most this many random entries per tensor.
    #[arg(long)]
    pub max_elements: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test hook: corrupt the analytic gradient of this tensor.
    #[arg(long, hide = true)]
    pub corrupt_grad: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn grad_check(config: Option<&Path>, a: GradArgs) -> Result<()> {
    let mut s = Settings::load(config)?;
    let preset = s.get("check.model", a.model, "tiny".to_string())?;
    let n = s.get("check.n", a.n, 8)?;
    let dims = s.get("check.dims", a.dims, 1)?;
    let fields = s.get("check.fields", a.fields, 1)?;
    let opts = CheckOptions {
        step: s.get("check.step", a.step, DEFAULT_STEP)?,
        tolerance: s.get("check.tol", a.tol, DEFAULT_TOLERANCE)?,
        max_elements: s.opt("check.max_elements", a.max_elements)?,
        corrupt: a.corrupt_grad,
        seed: s.get("check.seed", a.seed, 0)?,
    };
    let out = s.opt::<String>("run.out", a.out.map(|p| p.display().to_string()))?;
    warn_unused(&s);
    let mut config = ModelConfig::preset(&preset)?;
    config.drop_path_rate = 0.0;
    let spatial = if dims == 2 { [n, n] } else { [n, 1] };
    let probe = Probe::new(config, spatial, fields, opts.seed)?;
    let report = check_model_with(&probe, &opts)?;

    let mut csv = Csv::new(&["tensor", "elements", "rel_error", "grad_norm", "status"]);
    println!("{:<28} {:>8} {:>12} {:>12}  status", "tensor", "checked", "rel_error", "grad_norm");
    for t in &report.tensors {
        let ok = t.rel_error <= report.tolerance;
        let status = if ok { "pass" } else { "FAIL" };
        println!("{:<28} {:>8} {:>12.3e} {:>12.3e}  {status}", t.name, t.elements, t.rel_error, t.grad_norm);
        csv.row([t.name.clone(), t.elements.to_string(), num(t.rel_error), num(t.grad_norm), status.into()]);
    }
    println!("worst relative error {:.3e} (tolerance {:.1e}, step {:.1e})", report.worst(), report.tolerance, report.step);
    if let Some(out) = out {
        let out = PathBuf::from(out);
        s.write_snapshot(&out, "grad-check")?;
        csv.write(&out.join("grad_check.csv"), "grad-check", opts.seed)?;
    }
    if report.passed() {
        return Ok(());
    }
    let failed: Vec<&str> = report
        .tensors
        .iter()
        .filter(|t| t.rel_error > report.tolerance)
        .map(|t| t.name.as_str())
        .collect();
    anyhow::bail!("gradient check failed for: {}", failed.join(", "))
}
