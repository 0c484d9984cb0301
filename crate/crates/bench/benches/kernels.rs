use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array1;

use onebit_bench::{default_generator, latent, problem};
use onebit_core::memorizer::{build_indexed_memorizer, BitSample};
use onebit_core::theory::{check_srec, srec_gamma};
use onebit_core::{biht_decode, ls_decode, sample_ensemble, CovarianceSpec, LsDecoderConfig};

fn generator(c: &mut Criterion) {
    let net = default_generator();
    let z = latent(5);
    let v = Array1::ones(100);
    c.bench_function("forward 5-50-100", |b| b.iter(|| net.forward(black_box(z.view())).unwrap()));
    c.bench_function("latent vjp 5-50-100", |b| b.iter(|| net.latent_vjp(black_box(z.view()), v.view()).unwrap()));
}

fn measurement(c: &mut Criterion) {
    c.bench_function("toeplitz ensemble m=1000 n=100", |b| {
        b.iter(|| sample_ensemble(1000, CovarianceSpec::toeplitz(100, 0.3), 0.1, 0.97, black_box(3)).unwrap())
    });
}

fn decoders(c: &mut Criterion) {
    let net = default_generator();
    let (ens, obs) = problem(&net, 500);
    let cfg = LsDecoderConfig { restarts: 1, steps_per_restart: 200, ..LsDecoderConfig::default() };
    c.bench_function("ls 1x200 steps m=500", |b| b.iter(|| ls_decode(&obs, &ens, &net, black_box(&cfg)).unwrap()));
    c.bench_function("biht 300 iters m=500", |b| b.iter(|| biht_decode(&obs, &ens, 100, black_box(300), 1.0).unwrap()));
}

fn certificates(c: &mut Criterion) {
    let net = default_generator();
    let (ens, _) = problem(&net, 172);
    let gamma = srec_gamma(&ens);
    let mut group = c.benchmark_group("certificates");
    group.sample_size(10);
    group.bench_function("s-rec 10k pairs", |b| b.iter(|| check_srec(&ens, &net, 1.0, gamma, 0.01, 10_000, black_box(0)).unwrap()));
    group.finish();
}

fn memorizer(c: &mut Criterion) {
    let (w, ell) = (3, 8);
    let table: Vec<BitSample> = (0..w * w * ell)
        .map(|i| BitSample::new(Array1::from(vec![i as f64 / 100.0, 0.5]), (0..ell).map(|j| ((i >> (j % 7)) & 1) as u8).collect()))
        .collect();
    c.bench_function("indexed memorizer W=3 l=8", |b| b.iter(|| build_indexed_memorizer(black_box(&table), w, ell).unwrap()));
}

criterion_group!(benches, generator, measurement, decoders, certificates, memorizer);
criterion_main!(benches);
