//! Sequential vs parallel execution of the two heaviest stages.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rankdehaze::dehaze::transmission_map;
use rankdehaze::forest::{fit_forest, ForestConfig};
use rankdehaze::net::{build_network, Placement, FEATURE_DIM};
use rankdehaze::par::Exec;
use rankdehaze::procedural;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench(c: &mut Criterion) {
    let mut net = build_network(Placement::AfterPool1, 0);
    net.assume_trained();
    let n = 2000;
    let features: Vec<f32> = (0..n * FEATURE_DIM).map(|i| ((i * 2654435761) % 1000) as f32 / 1000.0).collect();
    let targets: Vec<f64> = (0..n).map(|i| features[i * FEATURE_DIM] as f64 * 0.5 + 0.25).collect();
    let cfg = ForestConfig { n_trees: 24, ..Default::default() };
    let forest = fit_forest(&features, FEATURE_DIM, &targets, &cfg, Exec::Parallel).unwrap();
    let image = procedural::corpus(1, 64, 64, 0).remove(0);

    let mut g = c.benchmark_group("fit_forest");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_forest(&features, FEATURE_DIM, &targets, &cfg, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("transmission_map");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| transmission_map(&image, &net, &forest, 2, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
