use std::path::Path;

use mpp_core::backbone::{Avit, ModelConfig};
use mpp_core::data::{write_dataset, Dataset, HistoryWindow, Split, SplitConfig};
use mpp_core::metrics::{evaluate_suite, EvalOptions};
use mpp_core::pde::{generate_corpus, generate_trajectory, CorpusEntry, InitialConditionSpec, SystemSpec};
use mpp_core::train::{
    checkpoint_bytes, clip_global_norm, finetune, load_balance_variance, load_checkpoint, parse_checkpoint, pretrain,
    sample_gradients, sample_microbatch, save_checkpoint, train_ids, AdamW, TaskPool, TrainConfig, TrainState,
};
use mpp_core::MppError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(name: &str, n_steps: usize) -> SystemSpec {
    let mut s = SystemSpec::preset(name).unwrap().with_resolution(32, 1);
    s.n_steps = n_steps;
    s
}

fn dataset(dir: &Path, names: &[&str], count: usize) -> Dataset {
    let specs: Vec<SystemSpec> = names.iter().map(|n| small(n, 21)).collect();
    let entries: Vec<CorpusEntry> = specs.iter().map(|s| CorpusEntry { spec: s.clone(), count }).collect();
    let trajs = generate_corpus(&entries, &InitialConditionSpec::default(), 9).unwrap();
    write_dataset(&trajs, &specs, &InitialConditionSpec::default(), &SplitConfig::default(), dir).unwrap();
    Dataset::open(dir).unwrap()
}

fn quick_config(updates: usize) -> TrainConfig {
    TrainConfig {
        micro_batch_size: 2,
        accum_steps: 2,
        epoch_updates: 4,
        val_trajectories: 2,
        peak_lr: 1e-3,
        ..TrainConfig::default()
    }
    .with_updates(updates)
}

fn small_model() -> ModelConfig {
    let mut m = ModelConfig::micro();
    m.embed_dim = 16;
    m.mlp_dim = 32;
    m.n_heads = 2;
    m.n_blocks = 1;
    m
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Upper 0.99 quantile of chi-squared with 2 degrees of freedom.
const CHI2_2DF_99: f64 = 9.210_340_371_976_184;

#[test]
fn system_draws_are_uniform() {
    let sizes = [500_000usize, 40_000, 30_001];
    let entries: Vec<Vec<(usize, usize)>> = sizes.iter().enumerate().map(|(s, &n)| vec![(s, n)]).collect();
    let mut pool = TaskPool::new(names(&["a", "b", "c"]), &entries);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = [0f64; 3];
    let draws = 30_000;
    for _ in 0..draws {
        let (s, items) = sample_microbatch(&mut pool, 1, &mut rng).unwrap();
        assert_eq!(items.len(), 1);
        counts[s] += 1.0;
    }
    let expect = draws as f64 / 3.0;
    let chi2: f64 = counts.iter().map(|c| (c - expect).powi(2) / expect).sum();
    assert!(chi2 < CHI2_2DF_99, "chi2 = {chi2}, counts {counts:?}");
    let sigma = (draws as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    for c in counts {
        assert!((c - expect).abs() < 3.0 * sigma);
    }
}

#[test]
fn exhausted_systems_drop_out_until_reset() {
    let mut pool = TaskPool::new(names(&["a", "b"]), &[vec![(0, 4)], vec![(1, 40)]]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draws = Vec::new();
    while let Some((s, _)) = sample_microbatch(&mut pool, 2, &mut rng) {
        draws.push(s);
    }
    assert_eq!(draws.iter().filter(|&&s| s == 0).count(), 2);
    assert_eq!(draws.len(), 22);
}

#[test]
fn variance_reduction_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (emp, theory) = load_balance_variance(&[1.0, 2.5, 4.0, 9.0], 5, 100_000, &mut rng);
    let ratio = emp / theory;
    assert!((0.95..=1.05).contains(&ratio), "{ratio}");
}

fn tiny_windows(seed: u64, count: usize) -> Vec<HistoryWindow<f64>> {
    let spec = small("advection_diffusion", 17);
    let mut spec = spec;
    spec.n = 8;
    (0..count)
        .map(|i| {
            let traj = generate_trajectory(&spec, &InitialConditionSpec { max_wavenumber: 2, ..Default::default() }, seed + i as u64).unwrap();
            HistoryWindow::from_trajectory(&traj, &spec, i, vec![0], i % 2, 3).unwrap()
        })
        .collect()
}

#[test]
fn accumulated_gradient_equals_joint_gradient() {
    let mut model = Avit::<f64>::new(ModelConfig::tiny(), 1, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for t in model.params.tensors_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
    }
    let (b, m) = (3, 5);
    let windows = tiny_windows(100, b * m);
    let keeps = vec![None; b * m];
    let eps = 1e-7;

    let mut acc = model.params.zeros_like();
    let mut acc_loss = 0.0;
    for k in 0..m {
        let chunk = &windows[k * b..(k + 1) * b];
        let micro_mean = sample_gradients(&model, chunk, &keeps[..b], eps, 1.0 / b as f64, &mut model.params.zeros_like()).unwrap() / b as f64;
        acc_loss += micro_mean / m as f64;
        sample_gradients(&model, chunk, &keeps[..b], eps, 1.0 / (b * m) as f64, &mut acc).unwrap();
    }

    let mut joint = model.params.zeros_like();
    let joint_loss = sample_gradients(&model, &windows, &keeps, eps, 1.0 / (b * m) as f64, &mut joint).unwrap() / (b * m) as f64;
    assert!((joint_loss - acc_loss).abs() <= 1e-12 * joint_loss);
    let mut diff = acc.clone();
    diff.axpy(-1.0, &joint);
    assert!(diff.l2_norm() <= 1e-6 * joint.l2_norm());

    // Independent oracle: directional derivative of the mean loss.
    let mut dir = model.params.zeros_like();
    for t in dir.tensors_mut() {
        t.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    let analytic: f64 = acc.tensors().iter().zip(dir.tensors()).map(|(g, d)| (g * d).sum()).sum();
    let mean_loss = |p: &Avit<f64>| {
        sample_gradients(p, &windows, &keeps, eps, 0.0, &mut p.params.zeros_like()).unwrap() / (b * m) as f64
    };
    // Truncation error scales as h^2; 1e-6 keeps it near 1e-8.
    let h = 1e-6;
    let mut plus = model.clone();
    plus.params.axpy(h, &dir);
    let mut minus = model.clone();
    minus.params.axpy(-h, &dir);
    let numeric = (mean_loss(&plus) - mean_loss(&minus)) / (2.0 * h);
    assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs(), "{numeric} vs {analytic}");
}

#[test]
fn single_micro_batch_update_is_a_plain_step() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &["advection"], 12);
    let systems = names(&["advection"]);
    let ids = train_ids(&ds, &systems).unwrap();
    let mut cfg = quick_config(3);
    cfg.accum_steps = 1;
    cfg.drop_path = 0.0;
    let mut a = TrainState::scratch(&ds, &systems, &ids, small_model(), cfg.clone()).unwrap();
    let mut b = a.clone();
    a.accumulate_update(&ds).unwrap();

    let (_, items) = sample_microbatch(&mut b.pool, 2, &mut b.rng).unwrap();
    let windows: Vec<_> = items.iter().map(|&(id, t0)| ds.window::<f32>(id, t0, 16).unwrap()).collect();
    let mut g = b.model.params.zeros_like();
    sample_gradients(&b.model, &windows, &[None, None], cfg.eps_loss, 0.5, &mut g).unwrap();
    clip_global_norm(&mut g, cfg.grad_clip);
    let mut opt = AdamW::new(&b.model.params, cfg.weight_decay);
    opt.apply(&mut b.model.params, &g, cfg.lr_at(0));
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn checkpoint_round_trip_and_safety() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &["advection"], 12);
    let state = pretrain(&ds, &names(&["advection"]), small_model(), quick_config(2), None).unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(checkpoint_bytes(&loaded).unwrap(), std::fs::read(&path).unwrap());
    assert_eq!(loaded.model.params, state.model.params);
    assert_eq!(loaded.opt, state.opt);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    assert!(matches!(parse_checkpoint(&bytes, &path), Err(MppError::Checksum { .. })));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = 9;
    let n = bytes.len() - 4;
    let crc = crc32fast::hash(&bytes[..n]);
    bytes[n..].copy_from_slice(&crc.to_le_bytes());
    assert!(matches!(parse_checkpoint(&bytes, &path), Err(MppError::Format { .. })));
    assert!(parse_checkpoint(b"not a checkpoint at all", &path).is_err());
}

#[test]
fn smaller_registry_needs_explicit_extension() {
    let dir = tempfile::tempdir().unwrap();
    let pre_dir = dir.path().join("pre");
    let ds = dataset(&pre_dir, &["advection"], 12);
    let state = pretrain(&ds, &names(&["advection"]), small_model(), quick_config(0), None).unwrap();
    let burgers_dir = dir.path().join("burgers");
    let target = dataset(&burgers_dir, &["burgers"], 12);
    let bound = state.bind(&target);
    assert!(bound.indices("burgers").is_err());
    let opts = EvalOptions { k: 1, ..EvalOptions::default() };
    assert!(evaluate_suite(&bound, &target, Split::Test, None, &opts).is_err());

    let (tuned, report) = finetune(Some(&state), &target, "burgers", 4, small_model(), quick_config(1), 1, None).unwrap();
    assert_eq!(tuned.registry.names(), ["psi", "u"]);
    assert_eq!(tuned.model.n_fields(), 2);
    assert!(report.t1.is_finite());
}

#[test]
fn resumed_run_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &["advection", "diffusion"], 10);
    let systems = names(&["advection", "diffusion"]);
    let ids = train_ids(&ds, &systems).unwrap();
    let cfg = quick_config(10);
    let mut straight = TrainState::scratch(&ds, &systems, &ids, small_model(), cfg.clone()).unwrap();
    straight.run(&ds, None).unwrap();

    let mut first = TrainState::scratch(&ds, &systems, &ids, small_model(), cfg).unwrap();
    first.run_until(&ds, 6, None).unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&first, &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    resumed.run(&ds, None).unwrap();

    assert_eq!(resumed.log, straight.log);
    assert_eq!(resumed.log.len(), 3);
    assert_eq!(checkpoint_bytes(&resumed).unwrap(), checkpoint_bytes(&straight).unwrap());
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &["advection"], 10);
    let systems = names(&["advection"]);
    let a = pretrain(&ds, &systems, small_model(), quick_config(3), None).unwrap();
    let b = pretrain(&ds, &systems, small_model(), quick_config(3), None).unwrap();
    assert_eq!(checkpoint_bytes(&a).unwrap(), checkpoint_bytes(&b).unwrap());
    let mut other = quick_config(3);
    other.seed = 1;
    let c = pretrain(&ds, &systems, small_model(), other, None).unwrap();
    assert_ne!(c.model.params, a.model.params);
}

#[test]
fn zero_updates_keep_initialisation_and_zero_shot_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &["advection", "advection_diffusion"], 12);
    let out = dir.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    let state = pretrain(&ds, &names(&["advection"]), small_model(), quick_config(0), Some(&out)).unwrap();
    let mut init = Avit::<f32>::new(small_model(), 1, 0).unwrap();
    init.config.drop_path_rate = 0.1;
    assert_eq!(state.model.params, init.params);
    assert_eq!(load_checkpoint(&out.join("final.ckpt")).unwrap().model.params, init.params);

    let trained = pretrain(&ds, &names(&["advection"]), small_model(), quick_config(2), None).unwrap();
    let (_, report) = finetune(Some(&trained), &ds, "advection_diffusion", 4, small_model(), quick_config(0), 5, None).unwrap();
    let opts = EvalOptions::default();
    let zero_shot = evaluate_suite(&trained.bind(&ds), &ds, Split::Test, Some(&names(&["advection_diffusion"])), &opts).unwrap();
    assert_eq!(report, zero_shot["advection_diffusion"]);
}

#[test]
fn too_many_samples_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), &["advection"], 10);
    assert!(finetune(None, &ds, "advection", 9, small_model(), quick_config(1), 1, None).is_err());
}
