//! Seed-sweep throughput: the default (parallel when built with the
//! `parallel` feature) batch runner against the forced-sequential one on
//! the same sweep.

use criterion::{criterion_group, criterion_main, Criterion};

use arbor::batch::{run_batch, run_batch_sequential};
use arbor::harness::Scenario;

fn seed_sweep(c: &mut Criterion) {
    let scn = Scenario::parse(
        "nodes 6\nlane robust\nduration 15\ngraph chain\nlink full 0.9\n",
    )
    .unwrap();
    let seeds: Vec<u64> = (0..16).collect();
    let mut g = c.benchmark_group("seed_sweep_16x6");
    g.sample_size(10);
    g.bench_function("default", |b| {
        b.iter(|| run_batch(&scn, &seeds).unwrap());
    });
    g.bench_function("sequential", |b| {
        b.iter(|| run_batch_sequential(&scn, &seeds).unwrap());
    });
    g.finish();
}

criterion_group!(benches, seed_sweep);
criterion_main!(benches);
