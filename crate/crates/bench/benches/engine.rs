use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use sgld_bench::{dataset, logistic, quadratic, quadratic_config, SEED};
use sgld_core::certify;
use sgld_core::fokker_planck::{fp_max_dt, fp_step, DensityField, Grid1D, Potential};
use sgld_core::rng::{substream, NormalSource, Role};
use sgld_core::sgld::sgld_step;
use sgld_core::{run_chain, run_ensemble, Labels};
use std::hint::black_box;

fn bench_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("sgld_step");
    for dim in [1, 10, 100] {
        let model = quadratic(dim);
        let data = dataset(dim, 100, Labels::None);
        let batch: Vec<usize> = (0..10).collect();
        let w = vec![0.1; dim];
        let mut noise = NormalSource::new(substream(SEED, 0, Role::Noise));
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| sgld_step(black_box(&w), &model, &data, &batch, 0.01, 4.0, &mut noise).unwrap())
        });
    }
    group.finish();
}

fn bench_chain(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_chain");
    let steps = 1000;
    group.throughput(Throughput::Elements(steps as u64));
    let quad = quadratic(10);
    let data = dataset(10, 100, Labels::None);
    let cfg = quadratic_config(10, 100, steps);
    group.bench_function("quadratic_d10", |b| b.iter(|| run_chain(&cfg, &quad, &data).unwrap()));

    let logi = logistic(10);
    let labelled = dataset(10, 100, Labels::NoisySign { flip_prob: 0.1 });
    let mut cfg = quadratic_config(10, 100, steps);
    cfg.strict_mode = false;
    group.bench_function("logistic_d10", |b| b.iter(|| run_chain(&cfg, &logi, &labelled).unwrap()));
    group.finish();
}

fn bench_ensemble(c: &mut Criterion) {
    let model = quadratic(2);
    let mu = sgld_core::UniformBall::new(2, 1.0, Labels::None).unwrap();
    let cfg = quadratic_config(2, 50, 500);
    c.bench_function("run_ensemble_64x500", |b| {
        b.iter(|| run_ensemble(&cfg, &model, &mu, 64, 1).unwrap())
    });
}

fn bench_fp(c: &mut Criterion) {
    let mut group = c.benchmark_group("fp_step");
    let model = quadratic(1);
    let data = dataset(1, 50, Labels::None);
    for n_cells in [256, 1024, 4096] {
        let grid = Grid1D::symmetric(0.0, 6.0, n_cells).unwrap();
        let pot = Potential::from_loss(&grid, &model, &data).unwrap();
        let rho = DensityField::gaussian(&grid, 0.0, 0.5).unwrap();
        let dt = 0.5 * fp_max_dt(&grid, &pot, 4.0);
        group.throughput(Throughput::Elements(n_cells as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n_cells), &n_cells, |b, _| {
            b.iter(|| fp_step(&grid, black_box(&rho), &pot, 4.0, dt).unwrap())
        });
    }
    group.finish();
}

fn bench_certify(c: &mut Criterion) {
    let model = logistic(5);
    c.bench_function("certify_logistic_10k", |b| b.iter(|| certify(&model, 10_000, SEED).unwrap()));
}

criterion_group!(benches, bench_step, bench_chain, bench_ensemble, bench_fp, bench_certify);
criterion_main!(benches);
