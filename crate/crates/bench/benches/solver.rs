use criterion::{criterion_group, criterion_main, Criterion};
use mpp_bench::field;
use mpp_core::pde::{burgers_step, exact_spectral_step, generate_trajectory, InitialConditionSpec, SystemSpec};
use std::hint::black_box;

fn spectral(c: &mut Criterion) {
    let line = field(128, 1);
    let plane = field(128, 128);
    let mut g = c.benchmark_group("exact_spectral_step");
    g.bench_function("1d_n128", |b| b.iter(|| exact_spectral_step(black_box(&line), &[0.7], 0.01, 0.01, 1.0).unwrap()));
    g.bench_function("2d_n128", |b| b.iter(|| exact_spectral_step(black_box(&plane), &[0.7, 0.7], 0.01, 0.01, 1.0).unwrap()));
    g.finish();
    let small = field(128, 1).mapv(|x| 0.5 * x);
    c.bench_function("burgers_step_1d_n128", |b| b.iter(|| burgers_step(black_box(&small), 0.01, 1e-3, 1.0).unwrap()));
}

fn trajectories(c: &mut Criterion) {
    let ic = InitialConditionSpec::default();
    let mut g = c.benchmark_group("generate_trajectory");
    for name in ["advection_diffusion", "burgers"] {
        let spec = SystemSpec::preset(name).unwrap();
        g.bench_function(name, |b| b.iter(|| generate_trajectory(black_box(&spec), &ic, 3).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, spectral, trajectories);
criterion_main!(benches);
