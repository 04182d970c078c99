//! Sequential vs data-parallel execution of the per-sample work.
//!
//! Build with `--no-default-features` to compare against a binary that has no
//! rayon at all; in that build both rows run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use masa_autograd::Graph;
use masa_core::exec::{map_collect, Execution};
use masa_core::model::{network_input, Masa, ModelConfig};
use masa_core::posedata::gen_synthetic;
use masa_core::training::{evaluate, pretrain, PretrainConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn forward_passes(c: &mut Criterion) {
    let data = gen_synthetic(4, 4, 32, 0).unwrap();
    let model = Masa::new(ModelConfig::default()).unwrap();
    let params = model.init_params(0).unwrap();
    let frames: Vec<usize> = (0..32).collect();
    let mut group = c.benchmark_group("encode_16_sequences");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                map_collect(mode, &data.sequences, |_, seq| {
                    let mut g = Graph::no_grad();
                    let enc = model.encode_frames(&mut g, &params, &network_input(seq), &frames).unwrap();
                    g.value(enc).data()[0]
                })
            })
        });
    }
    group.finish();
}

fn pretrain_epoch(c: &mut Criterion) {
    let data = gen_synthetic(4, 4, 24, 1).unwrap();
    let cfg = PretrainConfig {
        epochs: 1,
        warmup_epochs: 0,
        batch_size: 8,
        bank_k: 16,
        ..PretrainConfig::default()
    };
    let mut group = c.benchmark_group("pretrain_epoch");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pretrain(black_box(&cfg), &data, mode).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let data = gen_synthetic(8, 4, 32, 2).unwrap();
    let model = Masa::new(ModelConfig {
        num_classes: Some(8),
        ..ModelConfig::default()
    })
    .unwrap();
    let mut params = model.init_params(0).unwrap();
    model.init_classifier(&mut params, 0).unwrap();
    let mut group = c.benchmark_group("evaluate_32_sequences");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&model, &params, &data, 16, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward_passes, pretrain_epoch, evaluation);
criterion_main!(benches);
