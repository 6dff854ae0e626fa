use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use costa_bench::{gaussian, synthetic_graph};
use costa_core::contrast::{contrastive_loss_grad, CostaObjective, LossConfig};
use costa_core::encoder::ModelParams;
use costa_core::graph::normalize_adjacency;
use costa_core::train::{RunMode, TrainConfig};
use costa_core::SeededRng;

fn loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("contrastive_loss_grad");
    for k in [128, 512] {
        let u = gaussian(k, 64, 1);
        let v = gaussian(k, 64, 2);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| black_box(contrastive_loss_grad(&u, &v, &LossConfig::default()).unwrap()))
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let g = synthetic_graph(2000, 64, 3);
    let s = normalize_adjacency(&g);
    let mut group = c.benchmark_group("training_step_n2000");
    group.sample_size(10);
    for mode in RunMode::ALL {
        let mut cfg = TrainConfig { hidden: 64, ..TrainConfig::default() };
        mode.apply(&mut cfg);
        let params = ModelParams::init(64, 64, 1, &mut SeededRng::new(4)).unwrap();
        let mut obj = CostaObjective::new(cfg.loss.clone(), cfg.dropout).unwrap();
        group.bench_function(mode.name(), |b| {
            let mut rng = SeededRng::new(5);
            b.iter(|| black_box(obj.step(&params.weights, &g, &s, &mut rng).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, loss, step);
criterion_main!(benches);
