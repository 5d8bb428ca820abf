use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlic::{Graph, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[1, 16, 32, 32], &mut rng);
    let w3 = random(&[16, 16, 3, 3], &mut rng);
    let w7 = random(&[16, 3, 7, 7], &mut rng);
    let px = random(&[1, 3, 32, 32], &mut rng);

    c.bench_function("conv2d/16x32x32_k3/forward", |b| {
        b.iter(|| {
            let g = Graph::new();
            g.constant(x.clone())
                .conv2d(&g.constant(w3.clone()), None, 1, 1)
                .unwrap()
                .value()
                .numel()
        })
    });
    c.bench_function("conv2d/16x32x32_k3/forward_backward", |b| {
        b.iter(|| {
            let g = Graph::new();
            let w = g.param(w3.clone());
            let y = g.constant(x.clone()).conv2d(&w, None, 1, 1).unwrap().square().sum();
            g.backward(y).unwrap();
            g.grad(w)
        })
    });
    c.bench_function("masked_conv2d/3x32x32_k7/forward", |b| {
        b.iter(|| {
            let g = Graph::new();
            g.constant(px.clone())
                .masked_conv2d(&g.constant(w7.clone()), None, 7)
                .unwrap()
                .value()
                .numel()
        })
    });
}

criterion_group!(benches, bench_conv);
criterion_main!(benches);
