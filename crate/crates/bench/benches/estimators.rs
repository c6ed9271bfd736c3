use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use panelctrl_bench::{factor_blocks, DESK, FULL};
use panelctrl_core::inference::{conformal_interval_blocks, jackknife_plus_blocks, ConformalConfig};
use panelctrl_core::ridge_augment::augment_weights;
use panelctrl_core::scm::solve_scm;
use panelctrl_core::selection::{default_lambda_grid, loo_cv, CvMode};
use panelctrl_core::{Estimator, EstimatorSpec, LambdaChoice, ScmConfig};

fn scales() -> [(&'static str, (usize, usize, usize)); 2] {
    [("desk", DESK), ("full", FULL)]
}

fn bench_scm(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_scm");
    for (name, (n, t, t0)) in scales() {
        let b = factor_blocks(n, t, t0);
        g.bench_with_input(BenchmarkId::from_parameter(name), &b, |bench, b| {
            bench.iter(|| solve_scm(black_box(b), &ScmConfig::default()).unwrap())
        });
    }
    g.finish();
}

fn bench_augment(c: &mut Criterion) {
    let mut g = c.benchmark_group("augment");
    for (name, (n, t, t0)) in scales() {
        let b = factor_blocks(n, t, t0);
        let scm = solve_scm(&b, &ScmConfig::default()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(name), &b, |bench, b| {
            bench.iter(|| augment_weights(&scm, black_box(b), 1.0).unwrap())
        });
    }
    g.finish();
}

fn bench_cv(c: &mut Criterion) {
    let mut g = c.benchmark_group("loo_cv");
    g.sample_size(10);
    for (name, (n, t, t0)) in scales() {
        let b = factor_blocks(n, t, t0);
        let grid = default_lambda_grid(&b);
        for mode in [CvMode::LeaveOne, CvMode::LeaveFuture] {
            let id = BenchmarkId::new(format!("{mode:?}"), name);
            g.bench_with_input(id, &b, |bench, b| bench.iter(|| loo_cv(black_box(b), &grid, mode).unwrap()));
        }
    }
    g.finish();
}

fn bench_intervals(c: &mut Criterion) {
    let mut g = c.benchmark_group("intervals");
    g.sample_size(10);
    let (n, t, t0) = DESK;
    let b = factor_blocks(n, t, t0);
    let est = Estimator::new(EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(1.0)));
    g.bench_function("conformal", |bench| {
        bench.iter(|| conformal_interval_blocks(black_box(&b), 0.05, &ConformalConfig::default(), &est, 0).unwrap())
    });
    g.bench_function("jackknife_plus", |bench| {
        bench.iter(|| jackknife_plus_blocks(black_box(&b), 0.05, &est, 0).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench_scm, bench_augment, bench_cv, bench_intervals);
criterion_main!(benches);
