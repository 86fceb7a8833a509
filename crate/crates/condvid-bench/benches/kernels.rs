//! Microbenchmarks for the hot kernels: 3-D convolution, spectral
//! normalization, the recurrent motion path, the Fréchet distance, and
//! synthetic corpus generation.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::{Array1, Array2, Array5};

use condvid::config::DatasetProfile;
use condvid::datasets::generate_synthetic;
use condvid::evaluation::{frechet_distance, GaussianStats};
use condvid::latent_dynamics::MotionPathGenerator;
use condvid::nn::conv3d::{Conv3d, Conv3dCfg};
use condvid::nn::spectral::{power_iterate, SpectralState};
use condvid::rng::seed_stream;

fn bench_conv3d_forward(c: &mut Criterion) {
    let mut rng = seed_stream(1, "bench/conv3d");
    let cfg = Conv3dCfg {
        cin: 3,
        cout: 16,
        k: (4, 4, 4),
        stride: (2, 2, 2),
        pad: (1, 1, 1),
    };
    let conv = Conv3d::new(cfg, &mut rng, 0.05);
    let x = Array5::<f32>::from_elem((4, 3, 16, 32, 32), 0.1);
    c.bench_function("conv3d_forward_4x3x16x32x32", |b| {
        b.iter(|| black_box(conv.forward(black_box(&x))))
    });
}

fn bench_power_iteration(c: &mut Criterion) {
    let mut rng = seed_stream(2, "bench/spectral");
    let (rows, cols) = (128, 512);
    let mut w = vec![0.0f32; rows * cols];
    let mut seed = 0x9e3779b97f4a7c15u64;
    for v in &mut w {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        *v = ((seed >> 40) as f32 / (1 << 24) as f32) - 0.5;
    }
    let mut state = SpectralState::new(rows, cols, &mut rng);
    c.bench_function("power_iteration_128x512", |b| {
        b.iter(|| black_box(power_iterate(&w, rows, cols, &mut state, 1)))
    });
}

fn bench_motion_unroll(c: &mut Criterion) {
    let mut rng = seed_stream(3, "bench/gru");
    let (d_m, n_motion, frames) = (30, 4, 16);
    let gen = MotionPathGenerator::new(d_m, n_motion, &mut rng);
    let eps = Array2::<f32>::from_elem((frames, d_m), 0.05);
    let y_m = {
        let mut v = vec![0.0f32; n_motion];
        v[1] = 1.0;
        v
    };
    c.bench_function("motion_unroll_16x30", |b| {
        b.iter(|| black_box(gen.unroll(eps.view(), black_box(&y_m)).unwrap()))
    });
}

fn bench_frechet(c: &mut Criterion) {
    let d = 64;
    let mut seed = 0x2545f4914f6cdd1du64;
    let mut unit = move || {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        ((seed >> 40) as f64 / (1u64 << 24) as f64) - 0.5
    };
    let mut make = |shift: f64| {
        let mut m = Array2::<f64>::zeros((d, d));
        for v in m.iter_mut() {
            *v = unit();
        }
        let cov = m.t().dot(&m) / d as f64 + Array2::<f64>::eye(d) * 0.01;
        let mean = Array1::from_iter((0..d).map(|i| shift + i as f64 * 0.01));
        GaussianStats { mean, cov }
    };
    let a = make(0.0);
    let b = make(0.5);
    c.bench_function("frechet_distance_64d", |bch| {
        bch.iter(|| black_box(frechet_distance(black_box(&a), black_box(&b)).unwrap()))
    });
}

fn bench_synthetic_corpus(c: &mut Criterion) {
    let profile = DatasetProfile::synthetic();
    c.bench_function("synthetic_corpus_16clips", |b| {
        b.iter(|| black_box(generate_synthetic(&profile, 16, 1, 7).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_conv3d_forward,
    bench_power_iteration,
    bench_motion_unroll,
    bench_frechet,
    bench_synthetic_corpus
);
criterion_main!(benches);
