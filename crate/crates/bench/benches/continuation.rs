use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qre_core::policy::{compare_procedures, utility_beta_gradient, CompareOptions};
use qre_core::{
    enumerate_qre, interpolate_path, sweep_surface, trace_branch, BetaGrid, Game, RationalityVector, SolverOptions,
    TraceOptions,
};

fn betas(b: &[f64]) -> RationalityVector {
    RationalityVector::new(b.to_vec()).unwrap()
}

fn continuation(c: &mut Criterion) {
    let g = Game::battle_of_sexes();
    let opts = SolverOptions {
        multistart_grid: 8,
        ..Default::default()
    };
    let grid = BetaGrid::square(2, 0.0, 5.0, 10).unwrap();
    let mut group = c.benchmark_group("surface");
    group.sample_size(10);
    group.bench_function("sweep bos 10x10", |bench| {
        bench.iter(|| sweep_surface(&g, black_box(&grid), &opts).unwrap())
    });
    group.finish();

    let start = enumerate_qre(&g, &betas(&[5.0, 5.0]), &opts).unwrap().pop().unwrap();
    let path = interpolate_path(&[betas(&[5.0, 5.0]), betas(&[0.0, 5.0]), betas(&[5.0, 5.0])], 0.05);
    c.bench_function("hysteresis loop bos", |bench| {
        bench.iter(|| trace_branch(&g, black_box(&path), &start, &TraceOptions::default()).unwrap())
    });

    let neg = Game::battle_of_sexes_negated();
    let mid = enumerate_qre(&neg, &betas(&[4.0, 4.0]), &opts).unwrap().remove(1);
    c.bench_function("utility_beta_gradient", |bench| {
        bench.iter(|| utility_beta_gradient(&neg, black_box(&mid)).unwrap())
    });
    let gammas: Vec<f64> = (0..50).map(|k| 0.01 + k as f64 * 0.04).collect();
    c.bench_function("compare_procedures negated (4,4)", |bench| {
        bench.iter(|| compare_procedures(&neg, black_box(&mid), 0.05, &gammas, &CompareOptions::default()).unwrap())
    });
}

criterion_group!(benches, continuation);
criterion_main!(benches);
