use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use trader_core::data::MINUTE_MS;
use trader_core::direction::{batch_gradients, AttentionContext, DirectionModel, DirectionModelConfig, DirectionSample};
use trader_core::features::{default_normalization, FeatureConfig, FeatureFrame, FrameAssembler};
use trader_core::par::Parallelism;
use trader_core::synth::{generate, SynthConfig};

const MODES: [Parallelism; 2] = [Parallelism::Sequential, Parallelism::Rayon];

fn gradients(c: &mut Criterion) {
    let cfg = FeatureConfig::default();
    let model = DirectionModel::new(DirectionModelConfig::desk(&cfg), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples: Vec<DirectionSample> = (0..64)
        .map(|i| {
            let mut frame = FeatureFrame::zeros(0, &cfg);
            for v in frame.minute.values_mut().iter_mut().chain(frame.hour.values_mut()).chain(frame.day.values_mut()) {
                *v = StandardNormal.sample(&mut rng);
            }
            DirectionSample {
                frame,
                ctx: AttentionContext::new(0.0, 1.0),
                label: i % 3,
            }
        })
        .collect();
    let batch: Vec<&DirectionSample> = samples.iter().collect();
    let mut group = c.benchmark_group("batch_gradients");
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(mode.as_str()), &mode, |b, &mode| {
            b.iter(|| batch_gradients(&model, &batch, mode).unwrap())
        });
    }
    group.finish();
}

fn frames(c: &mut Criterion) {
    let data = generate(&SynthConfig { days: 52, ..Default::default() }).unwrap();
    let asm = FrameAssembler::new(FeatureConfig::default(), default_normalization()).unwrap();
    let last = data.minute.last().unwrap().ts;
    let ticks: Vec<i64> = (0..256).map(|i| last - i * 7 * MINUTE_MS).collect();
    let mut group = c.benchmark_group("assemble_frames");
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(mode.as_str()), &mode, |b, &mode| {
            b.iter(|| mode.map(&ticks, |ts| asm.assemble(&data, *ts).is_ok()))
        });
    }
    group.finish();
}

criterion_group!(benches, gradients, frames);
criterion_main!(benches);
