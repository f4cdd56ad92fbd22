use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sdwsn_bench::{example1_pack, masked_pack, random_matrix};
use sdwsn_core::covmodel::reduce;
use sdwsn_core::matalg;
use sdwsn_core::mbi::{mbi_fit, FitConfig};

fn svd(c: &mut Criterion) {
    let mut g = c.benchmark_group("svd");
    for n in [8, 32, 128] {
        let a = random_matrix(1, n, n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| matalg::svd(black_box(a)).unwrap()));
    }
    g.finish();
}

fn rank_constrained_solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("rank_constrained_solve");
    for n in [8, 32, 128] {
        let q = random_matrix(2, n, n);
        let gm = random_matrix(3, n, n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &(q, gm), |b, (q, gm)| {
            b.iter(|| matalg::rank_constrained_solve(black_box(q), black_box(gm), n / 2).unwrap())
        });
    }
    g.finish();
}

fn fit(c: &mut Criterion) {
    let mut g = c.benchmark_group("mbi_fit");
    g.sample_size(10);
    let cfg = FitConfig {
        epsilon: 0.0,
        max_iterations: 20,
        ..FitConfig::default()
    };
    for (name, pack) in [("example1", example1_pack()), ("masked16", masked_pack(16, 64)), ("masked32", masked_pack(32, 128))] {
        let red = reduce(&pack).unwrap();
        g.bench_function(name, |b| b.iter(|| mbi_fit(black_box(&red), &pack, &cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, svd, rank_constrained_solve, fit);
criterion_main!(benches);
