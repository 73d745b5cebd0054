//! Benchmarks of the hot paths: eigendata extraction, truncated-kernel
//! assembly, survival propagation, the quasi-stationary iteration, the
//! size-biased kernel, and the tilted rare-event estimator.

use criterion::{criterion_group, criterion_main, Criterion};

use mbpre_core::fixtures;
use mbpre_core::lyapunov::{estimate_y, SamplingMethod, SpectrumConfig};
use mbpre_core::oracle::{build_chain, survival_series, yaglom_exact, YAGLOM_TOL};
use mbpre_core::qprocess::build_qkernel;
use mbpre_core::spectral::perron_eig;

fn bench_perron(c: &mut Criterion) {
    let mean = fixtures::f3().annealed_mean();
    c.bench_function("perron_eig_2x2", |b| {
        b.iter(|| perron_eig(&mean, 1e-13).unwrap())
    });
}

fn bench_build_chain(c: &mut Criterion) {
    let f3 = fixtures::f3();
    c.bench_function("build_chain_trunc20", |b| {
        b.iter(|| build_chain(&f3, 20).unwrap())
    });
}

fn bench_survival_series(c: &mut Criterion) {
    let f3 = fixtures::f3();
    let chain = build_chain(&f3, 20).unwrap();
    c.bench_function("survival_series_n40", |b| {
        b.iter(|| survival_series(&chain, &[1, 0], 40).unwrap())
    });
}

fn bench_yaglom_exact(c: &mut Criterion) {
    let f3 = fixtures::f3();
    let chain = build_chain(&f3, 20).unwrap();
    c.bench_function("yaglom_exact_trunc20", |b| {
        b.iter(|| yaglom_exact(&chain, YAGLOM_TOL).unwrap())
    });
}

fn bench_build_qkernel(c: &mut Criterion) {
    let f3 = fixtures::f3();
    let chain = build_chain(&f3, 20).unwrap();
    c.bench_function("build_qkernel_trunc20", |b| {
        b.iter(|| build_qkernel(&chain).unwrap())
    });
}

fn bench_tilted_estimator(c: &mut Criterion) {
    let f3 = fixtures::f3();
    let cfg = SpectrumConfig::default();
    c.bench_function("tilted_moment_2000x10", |b| {
        b.iter(|| {
            estimate_y(&f3, &[1.0, 0.0], 10, 2000, 7, SamplingMethod::Tilted, &cfg).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_perron,
    bench_build_chain,
    bench_survival_series,
    bench_yaglom_exact,
    bench_build_qkernel,
    bench_tilted_estimator
);
criterion_main!(benches);
