//! Spectral and evolution kernels, timed inside a one-thread rayon pool and
//! inside a pool using every available core. Built without the `parallel`
//! feature both variants take the sequential path.

use std::f64::consts::PI;
use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dqm::evolution::{evolve_classical, evolve_linear};
use dqm::functionals::kinetic_decomposition;
use dqm::operators::{apply_deformed_kinetic, quantum_potential};
use dqm::{laplacian, make_grid, normalize, to_polar, ComplexField, PhysicalParams, WaveField};
use num_complex::Complex64;
use rayon::{ThreadPool, ThreadPoolBuilder};

fn packet_2d(n: usize, l: f64, sigma: f64) -> WaveField {
    let grid = Arc::new(make_grid(&[l, l], &[n, n], &[1.0, 1.0]).unwrap());
    let psi = ComplexField::from_fn(grid.clone(), |x| {
        Complex64::from_polar(
            (-(x[0] * x[0] + x[1] * x[1]) / (4.0 * sigma * sigma)).exp(),
            2.0 * x[0] - x[1],
        )
    })
    .unwrap();
    normalize(&WaveField::new(psi, PhysicalParams::free(grid)).unwrap()).unwrap()
}

fn pools() -> Vec<(String, ThreadPool)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let backend = if dqm::par::is_parallel() { "rayon" } else { "sequential" };
    let mut counts = vec![1, all];
    counts.dedup();
    counts
        .into_iter()
        .map(|t| {
            (
                format!("{backend}-{t}t"),
                ThreadPoolBuilder::new().num_threads(t).build().unwrap(),
            )
        })
        .collect()
}

fn kernels(c: &mut Criterion) {
    let w = packet_2d(256, 12.0 * PI, 1.0);
    let polar = to_polar(&w).unwrap();
    let mut group = c.benchmark_group("kernels_256x256");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("laplacian", &label), |b| {
            b.iter(|| pool.install(|| black_box(laplacian(w.psi()))))
        });
        group.bench_function(BenchmarkId::new("quantum_potential", &label), |b| {
            b.iter(|| pool.install(|| black_box(quantum_potential(&polar, w.grid(), 1.0).unwrap())))
        });
        group.bench_function(BenchmarkId::new("deformed_kinetic", &label), |b| {
            b.iter(|| pool.install(|| black_box(apply_deformed_kinetic(&w, 0.5).unwrap())))
        });
        group.bench_function(BenchmarkId::new("kinetic_decomposition", &label), |b| {
            b.iter(|| pool.install(|| black_box(kinetic_decomposition(&w).unwrap())))
        });
    }
    group.finish();
}

fn evolution(c: &mut Criterion) {
    let w = packet_2d(128, 16.0, 1.5);
    let mut group = c.benchmark_group("evolution_128x128_10_steps");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("linear", &label), |b| {
            b.iter(|| pool.install(|| black_box(evolve_linear(&w, 1e-3, 10, 10).unwrap())))
        });
        group.bench_function(BenchmarkId::new("classical", &label), |b| {
            b.iter(|| pool.install(|| black_box(evolve_classical(&w, 1e-3, 10, 10).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels, evolution);
criterion_main!(benches);
