use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use phaserec::annotations::{synth_generate, SynthSpec};
use phaserec::model::{Model, ModelConfig, PhaseTaxonomy};
use phaserec::parallel::Execution;
use phaserec::training::{batch_gradient, evaluate, LabeledVideo, LossConfig, Sample};

fn corpus() -> Vec<LabeledVideo> {
    let spec = SynthSpec {
        taxonomy: PhaseTaxonomy::acl27(),
        mean_durations: vec![16.0, 50.0, 61.0, 51.0, 20.0],
        duration_jitter: 0.2,
        missing_probs: vec![0.0; 5],
        videos: 4,
        feature_dim: 64,
        separation: 10.0,
        noise: 1.0,
        drift: 30.0,
        ambiguous_pair: None,
        seed: 0,
    };
    synth_generate(&spec)
        .unwrap()
        .into_iter()
        .map(|v| LabeledVideo::new(v.features, &v.track, None).unwrap())
        .collect()
}

fn model() -> Model {
    let cfg = ModelConfig {
        input_dim: 64,
        d_model: 32,
        heads: 2,
        branch_lengths: vec![16, 32],
        spi_head: false,
        ..ModelConfig::default()
    };
    Model::build(cfg, 0).unwrap()
}

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn gradient(c: &mut Criterion) {
    let videos = corpus();
    let model = model();
    let loss = LossConfig {
        lambda: 1.0,
        spi_enabled: false,
    };
    let samples: Vec<Sample> = (0..32)
        .map(|i| Sample {
            video: i % 4,
            t: 5 * i,
        })
        .collect();
    let mut group = c.benchmark_group("batch_gradient");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| batch_gradient(&model, &videos, black_box(&samples), &loss, exec).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let videos = corpus();
    let model = model();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(&model, black_box(&videos), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gradient, inference);
criterion_main!(benches);
