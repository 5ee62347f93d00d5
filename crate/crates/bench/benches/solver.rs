use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sticky_mfg::equilibrium::{apply_l, LOptions, SampledPath};
use sticky_mfg::{solve_mfg, PathGrid};
use sticky_mfg_bench::{firm, market};

fn solve(c: &mut Criterion) {
    let (m, th) = (market(), firm());
    c.bench_function("solve_mfg", |b| b.iter(|| solve_mfg(black_box(&m), black_box(&th)).unwrap()));
    let eq = solve_mfg(&m, &th).unwrap();
    c.bench_function("residuals", |b| b.iter(|| black_box(&eq).residuals().unwrap()));
}

fn operator(c: &mut Criterion) {
    let (m, th) = (market(), firm());
    let eq = solve_mfg(&m, &th).unwrap();
    let mut group = c.benchmark_group("apply_l");
    for dt in [0.01, 0.0025] {
        let grid = PathGrid::covering(dt, 60.0);
        let input = SampledPath::from_fn(&grid, |t| eq.m_x.eval(t));
        group.bench_with_input(BenchmarkId::from_parameter(dt), &input, |b, input| {
            b.iter(|| apply_l(input, &m, &th, &LOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solve, operator);
criterion_main!(benches);
