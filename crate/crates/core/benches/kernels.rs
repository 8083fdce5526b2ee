//! Row-parallel kernels on a one-thread pool versus the full pool, plus a
//! seed sweep run serially versus across seeds.
//!
//! `cargo bench -p normlab --no-default-features` measures the plain
//! sequential build.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::prelude::*;
use rayon::ThreadPoolBuilder;

use normlab::data::{make_blobs, BlobSpec};
use normlab::geomsim::{iterate, random_start, CenterConfig, SimNorm};
use normlab::model::{train, ModelConfig, TrainConfig};
use normlab::norm::forward;
use normlab::{NormKind, NormSpec, NormState, Rng, Tensor};

fn pools() -> Vec<(usize, rayon::ThreadPool)> {
    let all = rayon::current_num_threads();
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes
        .into_iter()
        .map(|n| (n, ThreadPoolBuilder::new().num_threads(n).build().unwrap()))
        .collect()
}

fn matmul(c: &mut Criterion) {
    let mut rng = Rng::new(0);
    let a = Tensor::randn(&mut rng, &[512, 256], 0.0, 1.0).unwrap();
    let b = Tensor::randn(&mut rng, &[256, 256], 0.0, 1.0).unwrap();
    let mut g = c.benchmark_group("matmul_512x256x256");
    for (n, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("threads", n), &n, |bch, _| {
            pool.install(|| bch.iter(|| a.matmul(&b).unwrap()))
        });
    }
    g.finish();
}

fn norm_forward(c: &mut Criterion) {
    let x = Tensor::randn(&mut Rng::new(1), &[256, 64, 8, 8], 0.0, 1.0).unwrap();
    let mut g = c.benchmark_group("norm_forward_256x64x8x8");
    for kind in [NormKind::Bn, NormKind::L2Bn, NormKind::Gn { channels_per_group: 8 }] {
        let spec = NormSpec::new(kind);
        for (n, pool) in pools() {
            g.bench_with_input(BenchmarkId::new(kind.to_string(), n), &n, |bch, _| {
                let mut state = NormState::new(&spec, 64).unwrap();
                pool.install(|| bch.iter(|| forward(&x, &spec, &mut state).unwrap()))
            });
        }
    }
    g.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let data = make_blobs(&BlobSpec {
        samples_per_class: 50,
        test_per_class: 10,
        ..BlobSpec::default()
    })
    .unwrap();
    let cfg = |seed| TrainConfig {
        seed,
        epochs: 2,
        model: ModelConfig::Mlp { hidden: vec![64, 64] },
        norm: NormSpec::new(NormKind::L2Bn),
        ..TrainConfig::default()
    };
    let seeds: Vec<u64> = (0..8).collect();
    let mut g = c.benchmark_group("seed_sweep_8_runs");
    g.sample_size(10);
    g.bench_function("serial", |b| {
        b.iter(|| seeds.iter().map(|&s| train(&cfg(s), &data).unwrap().records.len()).sum::<usize>())
    });
    g.bench_function("parallel", |b| {
        b.iter(|| seeds.par_iter().map(|&s| train(&cfg(s), &data).unwrap().records.len()).sum::<usize>())
    });
    g.finish();

    let starts: Vec<_> = (0..64).map(|s| random_start(&mut Rng::new(s), 3, 2).unwrap()).collect();
    let run = |x: &Tensor| iterate(&CenterConfig::new(x.clone(), SimNorm::L2Bn)).unwrap().final_min_angle();
    let mut g = c.benchmark_group("sim_64_starts");
    g.bench_function("serial", |b| b.iter(|| starts.iter().map(run).sum::<f64>()));
    g.bench_function("parallel", |b| b.iter(|| starts.par_iter().map(run).sum::<f64>()));
    g.finish();
}

criterion_group!(benches, matmul, norm_forward, seed_sweep);
criterion_main!(benches);
