use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hashcc::autodiff::{backward, ops};
use hashcc::render::volume_render;
use hashcc::trainer::{batch_forward, DetachMode};
use hashcc_bench::{composite_inputs, field, hash_grid, samples, training_batch, unit_points};

fn field_forward(c: &mut Criterion) {
    let f = field(0);
    let (pts, dirs) = samples(4096, 1);
    c.bench_function("field_forward_4096", |b| b.iter(|| f.forward(&pts, &dirs).unwrap()));
    c.bench_function("field_forward_backward_4096", |b| {
        b.iter(|| {
            let out = f.forward(&pts, &dirs).unwrap();
            let s = ops::add(&ops::sum(&out.corrected), &ops::sum(&out.sigma)).unwrap();
            backward(&s).unwrap();
        })
    });
}

fn hash_encode(c: &mut Criterion) {
    let grid = hash_grid(0);
    let pts = unit_points(4096, 2);
    c.bench_function("hash_encode_4096", |b| b.iter(|| grid.encode(&pts).unwrap()));
}

fn composite(c: &mut Criterion) {
    let (colors, sigma, deltas) = composite_inputs(1024, 128, 3);
    c.bench_function("volume_render_1024x128", |b| {
        b.iter(|| volume_render(&colors, &sigma, &deltas).unwrap())
    });
}

fn train_batch(c: &mut Criterion) {
    let f = field(0);
    c.bench_function("train_batch_8x8x16", |b| {
        b.iter_batched(
            || training_batch(64, 8, 16, 4),
            |(cams, batch)| {
                let fwd = batch_forward(&f, &cams, &batch, DetachMode::HeInput).unwrap();
                backward(&fwd.loss.total).unwrap();
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = field_forward, hash_encode, composite, train_batch
}
criterion_main!(benches);
