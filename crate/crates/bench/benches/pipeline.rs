use std::time::Duration;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dss_bench::{conversation, model};
use dss_core::audio::{overlap_add, plan_chunks, segment};
use dss_core::discovery::{discover, DiscoveryConfig};
use dss_core::embedder::{embed_frames, EmbedderConfig};
use dss_core::stitcher::{simulate_error_propagation, stitch};
use dss_core::training::{hungarian_assign, pit_loss, si_sdr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn metrics(c: &mut Criterion) {
    let mix = conversation(8.0);
    let (est, refs) = (mix.mixture.clone(), mix.sources.clone());
    c.bench_function("si_sdr/8s", |b| b.iter(|| si_sdr(black_box(est.samples()), refs[0].samples())));
    let ests = vec![est.clone(), est];
    c.bench_function("pit_loss/8s_n2", |b| b.iter(|| pit_loss(black_box(&ests), &refs)));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("hungarian");
    for n in [4usize, 8, 32] {
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| hungarian_assign(black_box(cost)))
        });
    }
    group.finish();
}

fn audio(c: &mut Criterion) {
    let mix = conversation(8.0);
    c.bench_function("segment_overlap_add/8s", |b| {
        b.iter(|| {
            let s = segment(black_box(&mix.mixture), 16, 8).unwrap();
            overlap_add(&s, true, 8000)
        })
    });
}

fn discovery(c: &mut Criterion) {
    let emb = EmbedderConfig::default();
    let mut group = c.benchmark_group("discovery");
    group.sample_size(10);
    for secs in [20.0, 60.0] {
        let mix = conversation(secs);
        group.bench_with_input(BenchmarkId::new("embed", secs), &mix, |b, m| {
            b.iter(|| embed_frames(black_box(&m.mixture), &emb))
        });
        group.bench_with_input(BenchmarkId::new("discover", secs), &mix, |b, m| {
            b.iter(|| discover(black_box(&m.mixture), &emb, 2, &DiscoveryConfig::default(), 0))
        });
    }
    group.finish();
}

fn separation(c: &mut Criterion) {
    let mix = conversation(24.0);
    let emb = EmbedderConfig::default();
    let dss = model(true);
    let uss = model(false);
    let mut group = c.benchmark_group("separation");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    let chunk = mix.mixture.slice(0, 8 * 8000);
    group.bench_function("uss_chunk/8s", |b| b.iter(|| uss.forward_chunk(black_box(&chunk), None)));
    let plan = plan_chunks(&mix.mixture, 8.0, 0.0).unwrap();
    group.bench_function("dss_recording/24s", |b| {
        b.iter(|| dss.separate_recording(black_box(&mix.mixture), &emb, &DiscoveryConfig::default(), &plan, 0))
    });
    let plan = plan_chunks(&mix.mixture, 8.0, 4.0).unwrap();
    let chunks: Vec<_> = plan
        .boundaries
        .iter()
        .map(|&(s, e)| uss.forward_chunk(&mix.mixture.slice(s, e), None).unwrap())
        .collect();
    group.bench_function("stitch/24s", |b| b.iter(|| stitch(black_box(&chunks), &plan)));
    group.finish();
}

fn stitch_sim(c: &mut Criterion) {
    c.bench_function("stitch_sim/60x10k", |b| b.iter(|| simulate_error_propagation(60, 0.05, 10_000, 0)));
}

criterion_group!(benches, metrics, audio, discovery, separation, stitch_sim);
criterion_main!(benches);
