//! Compares the data-parallel code paths against sequential execution. The
//! kernel-matrix group pits the feature-gated builder against its always
//! sequential twin inside a single run; the likelihood and readout groups
//! keep the same bench ids under both feature settings, so
//! `cargo bench -p spikeopt` and `cargo bench -p spikeopt --no-default-features`
//! produce directly comparable criterion baselines.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikeopt::gp::{
    kernel_matrix, kernel_matrix_seq, log_marginal_likelihood_grad, KernelParams,
};
use spikeopt::snn::{
    evaluate, fit_readout, train, DatasetSource, Decoder, NetworkSpec, NeuronParams,
    SyntheticSpec,
};
use spikeopt::space::UnitPoint;

const DIM: usize = 18;

fn cloud(n: usize, seed: u64) -> (Vec<UnitPoint>, Vec<f64>, KernelParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<UnitPoint> =
        (0..n).map(|_| UnitPoint((0..DIM).map(|_| rng.gen()).collect())).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k = KernelParams::new(
        (0..DIM).map(|_| rng.gen_range(0.2..0.8)).collect(),
        1.0,
        1e-4,
    )
    .unwrap();
    (x, y, k)
}

fn bench_kernel_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_matrix");
    for n in [96usize, 256] {
        let (x, _, k) = cloud(n, 11);
        group.bench_with_input(BenchmarkId::new("gated", n), &n, |b, _| {
            b.iter(|| kernel_matrix(black_box(&x), black_box(&k)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
            b.iter(|| kernel_matrix_seq(black_box(&x), black_box(&k)))
        });
    }
    group.finish();
}

fn bench_likelihood_grad(c: &mut Criterion) {
    let mut group = c.benchmark_group("likelihood_grad");
    group.sample_size(30);
    for n in [64usize, 160] {
        let (x, y, k) = cloud(n, 23);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| log_marginal_likelihood_grad(black_box(&x), black_box(&y), black_box(&k)))
        });
    }
    group.finish();
}

fn bench_readout(c: &mut Criterion) {
    // One small training run up front; the benches time only the frozen
    // passes, which fan out per sample.
    let spec = NetworkSpec {
        n_inputs: 64,
        map_size: 50,
        frames: 100,
        r_max: 0.25,
        w_max: 1.0,
        weight_norm: 20.0,
        lambda_plus: 0.008,
        lambda_minus: 0.0005,
        tau_trace_pre: 20.0,
        tau_trace_post: 20.0,
        exc: NeuronParams {
            v_th: -55.0,
            v_rest: -65.0,
            v_reset: -60.0,
            tau: 100.0,
            t_ref: 5,
            theta_plus: 0.05,
            tau_theta: 1e7,
        },
        inh: NeuronParams {
            v_th: -40.0,
            v_rest: -60.0,
            v_reset: -45.0,
            tau: 10.0,
            t_ref: 2,
            theta_plus: 0.0,
            tau_theta: 1e7,
        },
        exc_strength: 22.5,
        inh_strength: 1.0,
        epochs: 1,
        decoder: Decoder::Max,
        stop_check_interval: 1,
    };
    let source = DatasetSource::Synthetic(SyntheticSpec {
        classes: 3,
        side: 8,
        train: 120,
        valid: 60,
        test: 10,
    });
    let (train_data, valid_data) = source.load(99).unwrap();
    let (net, _) = train(&spec, &train_data, &[], 7).unwrap();
    let readout = fit_readout(&net, &train_data, 8).unwrap();

    let mut group = c.benchmark_group("readout");
    group.sample_size(10).measurement_time(Duration::from_secs(8));
    group.bench_function("fit_readout/120", |b| {
        b.iter(|| fit_readout(black_box(&net), black_box(&train_data), black_box(8)))
    });
    group.bench_function("evaluate/60", |b| {
        b.iter(|| evaluate(black_box(&net), black_box(&readout), black_box(&valid_data), black_box(9)))
    });
    group.finish();
}

criterion_group!(benches, bench_kernel_matrix, bench_likelihood_grad, bench_readout);
criterion_main!(benches);
