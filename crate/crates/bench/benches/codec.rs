use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nlic::train::{synth_image, SynthKind};
use nlic::{compress, decompress, ModelConfig, ModelWeights};

fn bench_codec(c: &mut Criterion) {
    let cfg = ModelConfig {
        filters_n: 8,
        ..ModelConfig::default()
    };
    let weights = ModelWeights::init(&cfg, 0).unwrap();
    let img = synth_image(SynthKind::Texture, 32, 32, &mut ChaCha8Rng::seed_from_u64(0));
    let (stream, _) = compress(&img, &weights).unwrap();

    let mut group = c.benchmark_group("codec_n8_32x32");
    group.sample_size(10);
    group.throughput(Throughput::Elements(3 * 32 * 32));
    group.bench_function("compress", |b| b.iter(|| compress(&img, &weights).unwrap()));
    group.bench_function("decompress", |b| b.iter(|| decompress(&stream, &weights).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_codec);
criterion_main!(benches);
