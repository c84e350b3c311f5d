//! Criterion benchmarks for the hot kernels at realistic experiment
//! shapes: scalar quantization, reduced-precision matmul, the mel front
//! end plus recurrent forward pass, CTC loss, and the psychoacoustic
//! masking threshold.

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use quaver_core::model::{self, FrontEndConfig, ModelParams};
use quaver_core::rng::Rng;
use quaver_core::{psychoacoustics, quantize_buffer, PrecisionMode, Tape, Tensor};

/// One second of deterministic chord-like audio at 16 kHz.
fn test_audio(samples: usize) -> Vec<f32> {
    let mut rng = Rng::new(7);
    (0..samples)
        .map(|i| {
            let t = i as f32 / 16_000.0;
            let tone = 0.25 * (2.0 * std::f32::consts::PI * 440.0 * t).sin()
                + 0.2 * (2.0 * std::f32::consts::PI * 1370.0 * t).sin();
            tone + 0.01 * rng.gaussian() as f32
        })
        .collect()
}

fn bench_quantize(c: &mut Criterion) {
    let mut group = c.benchmark_group("quantize_buffer");
    let src = test_audio(16_000);
    group.throughput(Throughput::Elements(src.len() as u64));
    for mode in [PrecisionMode::Fp16, PrecisionMode::Bf16] {
        group.bench_function(mode.to_string(), |b| {
            b.iter(|| {
                let mut buf = src.clone();
                quantize_buffer(&mut buf, mode);
                buf
            })
        });
    }
    group.finish();
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_64x64");
    let mut rng = Rng::new(11);
    let n = 64;
    let a: Vec<f32> = (0..n * n).map(|_| rng.gaussian() as f32 * 0.1).collect();
    let b_data: Vec<f32> = (0..n * n).map(|_| rng.gaussian() as f32 * 0.1).collect();
    group.throughput(Throughput::Elements((n * n * n) as u64));
    for mode in PrecisionMode::ALL {
        group.bench_function(mode.to_string(), |bch| {
            bch.iter(|| {
                let mut tape = Tape::new();
                let a = tape.constant(Tensor::fp32(vec![n, n], a.clone()));
                let b = tape.constant(Tensor::fp32(vec![n, n], b_data.clone()));
                let m = tape.matmul(a, b, mode).unwrap();
                tape.value(m).data()[0]
            })
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_1s");
    let x = test_audio(16_000);
    let fe = FrontEndConfig::default();
    let params = ModelParams::init(3, fe.num_filters, 48, 10);
    group.sample_size(20);
    for mode in PrecisionMode::ALL {
        group.bench_function(mode.to_string(), |b| {
            b.iter(|| model::forward(&params, &x, &fe, mode).unwrap())
        });
    }
    group.finish();
}

fn bench_ctc(c: &mut Criterion) {
    // A 60-frame, 11-class grid matches one second of audio through the
    // default front end; the target is a typical three-token sequence.
    let (frames, classes) = (60, 11);
    let mut rng = Rng::new(13);
    let logits: Vec<f32> = (0..frames * classes)
        .map(|_| rng.gaussian() as f32)
        .collect();
    c.bench_function("ctc_loss_60x11", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let z = tape.variable(Tensor::fp32(vec![frames, classes], logits.clone()));
            let lp = tape.log_softmax(z, PrecisionMode::Fp32).unwrap();
            let loss = tape.ctc_loss(lp, &[3, 1, 4], classes - 1).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss).item(), grads.get(z).is_some())
        })
    });
}

fn bench_masking(c: &mut Criterion) {
    let x = test_audio(16_000);
    c.bench_function("masking_threshold_1s", |b| {
        b.iter(|| psychoacoustics::masking_threshold(&x).unwrap())
    });
}

criterion_group!(
    kernels,
    bench_quantize,
    bench_matmul,
    bench_forward,
    bench_ctc,
    bench_masking
);
criterion_main!(kernels);
