//! Hot-path microbenchmarks: the dilated convolution (forward and
//! backward through the tape), a full encoder forward, geodesy, the
//! correlation analytics, and trace synthesis.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use epd_core::data::{generate, SyntheticSpec};
use epd_core::experiments::correlation;
use epd_core::geo::{haversine_km, GeoPoint};
use epd_core::nn::{build_model, Arch, Mode, Model, ModelConfig, SEQ_LEN};
use epd_core::tensor::{conv1d_padded, global_avg_pool, l1_loss, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn conv_hot_shape(c: &mut Criterion) {
    // The dominant op in training: 32->32 channels, kernel 3, causal
    // dilation over the 6000-sample window.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dilation = 64usize;
    let x = Tensor::from_vec(
        vec![1, 32, SEQ_LEN],
        (0..32 * SEQ_LEN).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap();
    let mut w = Tensor::from_vec(
        vec![32, 32, 3],
        (0..32 * 32 * 3).map(|_| rng.random_range(-0.1f32..0.1)).collect(),
    )
    .unwrap();
    w.set_requires_grad(true);

    c.bench_function("conv1d_forward_32x32x6000", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            black_box(
                conv1d_padded(&mut tape, &x, &w, None, 1, dilation, 2 * dilation, 0).unwrap(),
            )
        })
    });

    c.bench_function("conv1d_train_step_32x32x6000", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let mut w = w.clone();
            tape.leaf(&mut w);
            let y = conv1d_padded(&mut tape, &x, &w, None, 1, dilation, 2 * dilation, 0).unwrap();
            let pooled = global_avg_pool(&mut tape, &y).unwrap();
            let target = Tensor::zeros(vec![1, 32]);
            let loss = l1_loss(&mut tape, &pooled, &target).unwrap();
            black_box(tape.backward(&loss).unwrap())
        })
    });
}

fn encoder_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("model_forward_eval");
    group.sample_size(10);
    for arch in [Arch::ResNet1D, Arch::Tcn] {
        let cfg = ModelConfig {
            arch,
            dense_size: 64,
            in_channels: 4,
            seed: 2,
            allow_nonstandard: false,
        };
        let mut model: Model<f32> = build_model(&cfg).unwrap();
        let x = Tensor::filled(vec![1, 4, SEQ_LEN], 0.25f32);
        group.bench_function(BenchmarkId::from_parameter(arch.as_str()), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                black_box(model.forward(&mut tape, &x, Mode::Eval).unwrap())
            })
        });
    }
    group.finish();
}

fn geodesy(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<(GeoPoint, GeoPoint)> = (0..1024)
        .map(|_| {
            (
                GeoPoint::new(rng.random_range(-80.0..80.0), rng.random_range(-179.0..179.0))
                    .unwrap(),
                GeoPoint::new(rng.random_range(-80.0..80.0), rng.random_range(-179.0..179.0))
                    .unwrap(),
            )
        })
        .collect();
    c.bench_function("haversine_1024_pairs", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for &(p, q) in &points {
                acc += haversine_km(p, q);
            }
            black_box(acc)
        })
    });
}

fn analytics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pairs: Vec<(f64, f64)> = (0..10_000)
        .map(|_| {
            let d = rng.random_range(5.0..110.0);
            (d * 0.119 + rng.random_range(-0.05..0.05), d)
        })
        .collect();
    c.bench_function("correlation_10k_pairs", |b| {
        b.iter(|| black_box(correlation(&pairs).unwrap()))
    });
}

fn synthesis(c: &mut Criterion) {
    let spec = SyntheticSpec {
        n: 16,
        seed: 5,
        ..SyntheticSpec::default()
    };
    let mut group = c.benchmark_group("synth");
    group.sample_size(10);
    group.bench_function("generate_16_traces", |b| {
        b.iter(|| black_box(generate(&spec).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, conv_hot_shape, encoder_forward, geodesy, analytics, synthesis);
criterion_main!(benches);
