use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpp"))
        .args(args)
        .env_remove("MPP_DATA_DIR")
        .output()
        .expect("spawn mpp")
}

fn ok(args: &[&str]) -> String {
    let o = mpp(args);
    assert!(
        o.status.success(),
        "{args:?} failed ({:?}):\n{}\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    mpp(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_data(dir: &Path, systems: &str, count: usize) {
    let count = count.to_string();
    ok(&["gen-data", "--data", s(dir), "--systems", systems, "--count", &count, "--n", "16", "--steps", "21", "--seed", "3"]);
}

/// A shrunken micro checkpoint pretrained for two updates.
fn tiny_ckpt(data: &Path, out: &Path) -> PathBuf {
    ok(&[
        "pretrain", "--data", s(data), "--embed-dim", "8", "--mlp-dim", "16", "--heads", "2", "--blocks", "1", "--updates", "2", "--micro-batch", "2", "--accum", "1",
        "--epoch-updates", "1", "--val-trajectories", "1", "--out", s(out),
    ]);
    out.join("final.ckpt")
}

fn metadata_line(csv: &str) -> &str {
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("# build="), "{last}");
    assert!(last.contains(" seed="), "{last}");
    last
}

#[test]
fn gen_data_counts_splits_and_refuses_to_overwrite() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    small_data(&dir, "advection,diffusion", 20);
    let out = ok(&["info", "--data", s(&dir)]);
    assert!(out.contains("(40 trajectories)"), "{out}");
    let adv = out.lines().find(|l| l.starts_with("advection,")).unwrap();
    assert!(adv.ends_with(",16,2,2"), "{adv}");

    assert_eq!(code(&["gen-data", "--data", s(&dir), "--systems", "advection", "--count", "10", "--n", "16"]), 1);
    fs::write(dir.join("keep.txt"), "mine").unwrap();
    ok(&["gen-data", "--data", s(&dir), "--systems", "advection", "--count", "10", "--n", "16", "--force"]);
    assert!(ok(&["info", "--data", s(&dir)]).contains("(10 trajectories)"));
    assert_eq!(fs::read_to_string(dir.join("keep.txt")).unwrap(), "mine");
    assert!(dir.join("gen-data.conf").exists());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["no-such-verb"]), 1);
    assert_eq!(code(&["eval", "--data", s(&tmp.path().join("missing")), "--baseline", "null"]), 1);
    assert_eq!(code(&["gen-data", "--data", s(&tmp.path().join("x")), "--systems", "nope", "--count", "4"]), 1);
    // A corrupt checkpoint is a runtime failure, not a usage error.
    let data = tmp.path().join("d");
    small_data(&data, "advection", 10);
    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, b"MPPCKPT1 garbage").unwrap();
    assert_eq!(code(&["eval", "--data", s(&data), "--ckpt", s(&bad)]), 2);
}

#[test]
fn grad_check_passes_names_corrupted_tensor_and_fails_at_tiny_tolerance() {
    let out = ok(&["grad-check"]);
    assert!(out.contains("PASS") || out.contains("pass"), "{out}");

    let o = mpp(&["grad-check", "--corrupt-grad", "block.0.mlp.w1", "--max-elements", "8"]);
    assert_eq!(o.status.code(), Some(2));
    let text = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    let failing: Vec<&str> = text.lines().filter(|l| l.contains("FAIL")).collect();
    assert!(failing.iter().any(|l| l.contains("block.0.mlp.w1")), "{text}");

    assert_eq!(code(&["grad-check", "--tol", "1e-9", "--max-elements", "8"]), 2);
}

#[test]
fn oracle_rollout_reproduces_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    small_data(&data, "advection_diffusion", 4);
    let out_dir = tmp.path().join("r");
    let out = ok(&[
        "rollout", "--data", s(&data), "--oracle", "--traj-id", "1", "--steps", "5", "--dump", "--out", s(&out_dir),
    ]);
    assert_eq!(out.lines().filter(|l| l.contains("T+")).count(), 5);
    let csv = fs::read_to_string(out_dir.join("rollout.csv")).unwrap();
    metadata_line(&csv);
    for line in csv.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let max_abs: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(max_abs < 1e-8, "{line}");
    }
    let fields = fs::read_to_string(out_dir.join("fields.csv")).unwrap();
    assert_eq!(fields.lines().filter(|l| !l.starts_with('#')).count(), 1 + 5 * 16);
}

#[test]
fn eval_baselines() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    small_data(&data, "diffusion", 10);
    let out_dir = tmp.path().join("e");
    ok(&["eval", "--data", s(&data), "--baseline", "null", "--split", "test", "--out", s(&out_dir)]);
    let csv = fs::read_to_string(out_dir.join("eval.csv")).unwrap();
    metadata_line(&csv);
    assert!(csv.starts_with("system,step,field,nrmse"), "{csv}");
    let t1 = csv.lines().find(|l| l.starts_with("diffusion,1,mean,")).unwrap();
    let t1: f64 = t1.split(',').nth(3).unwrap().parse().unwrap();
    assert!((t1 - 1.0).abs() < 1e-9, "{t1}");

    let out = ok(&["eval", "--data", s(&data), "--baseline", "persistence", "--split", "test"]);
    assert!(out.contains("diffusion"), "{out}");
}

#[test]
fn pretrain_finetune_and_rerun_from_snapshot() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    small_data(&data, "advection,diffusion", 10);
    let run = tmp.path().join("pre");
    let ckpt = tiny_ckpt(&data, &run);
    assert!(ckpt.exists());
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("update,lr,train_nmse"), "{log}");
    assert_eq!(metadata_line(&log).matches("seed=0").count(), 1);

    // Rerunning from the resolved snapshot reproduces the checkpoint.
    let snapshot = run.join("pretrain.conf");
    let rerun = tmp.path().join("again");
    ok(&["--config", s(&snapshot), "pretrain", "--out", s(&rerun)]);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(rerun.join("final.ckpt")).unwrap());

    let ft = tmp.path().join("ft");
    ok(&[
        "finetune", "--data", s(&data), "--ckpt", s(&ckpt), "--system", "advection", "--samples", "4", "--updates", "1",
        "--micro-batch", "2", "--accum", "1", "--val-trajectories", "1", "--out", s(&ft),
    ]);
    metadata_line(&fs::read_to_string(ft.join("report.csv")).unwrap());
    let info = ok(&["info", "--ckpt", s(&ckpt)]);
    assert!(info.contains("updates: 2 of 2"), "{info}");
}

#[test]
fn transfer_single_cell_and_report_only() {
    let tmp = TempDir::new().unwrap();
    let pre = tmp.path().join("pre");
    small_data(&pre, "advection,diffusion", 10);
    let ckpt = tiny_ckpt(&pre, &tmp.path().join("run"));
    let target = tmp.path().join("ad");
    small_data(&target, "advection_diffusion", 24);

    let out = tmp.path().join("t");
    let args = [
        "transfer-experiment", "--data", s(&target), "--ckpt", s(&ckpt), "--grid", "16", "--seeds", "0", "--updates", "2",
        "--micro-batch", "2", "--val-trajectories", "1", "--out", s(&out),
    ];
    ok(&args);
    let table = fs::read_to_string(out.join("transfer.csv")).unwrap();
    metadata_line(&table);
    let rows: Vec<&str> = table.lines().skip(1).filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert!(rows.iter().any(|r| r.contains("finetune")) && rows.iter().any(|r| r.contains("scratch")));
    let plot = fs::read_to_string(out.join("plot.csv")).unwrap();
    assert!(plot.starts_with("n,arm,metric,value"), "{plot}");

    fs::remove_file(out.join("transfer.csv")).unwrap();
    let cached = ok(&[
        "transfer-experiment", "--grid", "16", "--seeds", "0", "--report-only", "--out", s(&out), "--data", s(&target),
    ]);
    assert!(!cached.contains("training"), "{cached}");
    assert_eq!(fs::read_to_string(out.join("transfer.csv")).unwrap().lines().count(), table.lines().count());

    // A missing cell is reported rather than silently recomputed.
    assert_eq!(
        code(&["transfer-experiment", "--grid", "64", "--seeds", "0", "--report-only", "--out", s(&out), "--data", s(&target)]),
        1
    );
}
