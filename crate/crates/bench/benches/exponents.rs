use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use swexp_bench::{binary, example, rate_grid};
use swexp_core::dual::{self, DEFAULT_RHO_CAP};
use swexp_core::primal::{ck_rc_primal_with, PrimalConfig};
use swexp_core::rates::rate_report;
use swexp_core::sim::{self, BlockModel};
use swexp_core::{CostFunction, Ensemble};

fn objectives(c: &mut Criterion) {
    let (p, q) = example();
    let a = CostFunction::new(&[0.1, -0.1, 0.0]);
    c.bench_function("tt_rc_objective", |b| {
        b.iter(|| dual::tt_rc_objective(&p, &q, black_box(0.5), black_box(0.8), &a).unwrap())
    });
    c.bench_function("tt_ex_objective", |b| {
        b.iter(|| dual::tt_ex_objective(&p, &q, black_box(4.0), black_box(0.8), &a).unwrap())
    });
}

fn exponents(c: &mut Criterion) {
    let (p, q) = example();
    c.bench_function("exponent_std_rc", |b| {
        b.iter(|| dual::exponent_std_rc(&p, &q, black_box(0.8)).unwrap())
    });
    c.bench_function("exponent_tt_ex", |b| {
        b.iter(|| dual::exponent_tt_ex(&p, &q, black_box(0.8), DEFAULT_RHO_CAP).unwrap())
    });
    let grid = rate_grid(0.4, 1.05, 40);
    let mut g = c.benchmark_group("table");
    g.sample_size(10);
    g.bench_function("exponent_table_40", |b| {
        b.iter(|| dual::exponent_table(&p, &q, &grid, DEFAULT_RHO_CAP).unwrap())
    });
    g.finish();
    c.bench_function("rate_report", |b| b.iter(|| rate_report(&p, &q).unwrap()));
}

fn oracle(c: &mut Criterion) {
    let (p, q) = example();
    let cfg = PrimalConfig::new(4, 1);
    let mut g = c.benchmark_group("primal");
    g.sample_size(10);
    g.bench_function("ck_rc_primal", |b| {
        b.iter(|| ck_rc_primal_with(&p, &q, black_box(0.8), &cfg).unwrap())
    });
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let (p, q) = binary();
    let model = BlockModel::new(&p, &q, 10).unwrap();
    c.bench_function("exact_ensemble_average_n10", |b| {
        b.iter(|| sim::exact_ensemble_average(&model, black_box(64), Ensemble::Standard))
    });
    c.bench_function("expurgate_n4", |b| {
        b.iter(|| sim::expurgate(&p, &q, 4, 8, Ensemble::Standard, 1.0, black_box(1)).unwrap())
    });
}

criterion_group!(benches, objectives, exponents, oracle, simulation);
criterion_main!(benches);
