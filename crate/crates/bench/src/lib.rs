//! Shared fixtures for the benchmarks.

use hashcc::encodings::{HashGrid, HashGridConfig};
use hashcc::trainer::{make_batch, RayBatch};
use hashcc::{Cameras, Field, FieldConfig, Image, Tensor, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Field at the default architecture.
pub fn field(seed: u64) -> Field {
    Field::new(FieldConfig::default(), &mut rng(seed)).expect("default config is valid")
}

pub fn hash_grid(seed: u64) -> HashGrid {
    HashGrid::new(HashGridConfig::default(), &mut rng(seed)).expect("default config is valid")
}

/// `n` points in the NDC cube and `n` unit directions.
pub fn samples(n: usize, seed: u64) -> (Value, Value) {
    let mut r = rng(seed);
    let pts: Vec<f64> = (0..3 * n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut dirs = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let d = [r.gen_range(-0.3..0.3), r.gen_range(-0.3..0.3), -1.0f64];
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        dirs.extend(d.iter().map(|v| v / norm));
    }
    (
        Value::constant(Tensor::from_vec(n, 3, pts)),
        Value::constant(Tensor::from_vec(n, 3, dirs)),
    )
}

/// `n` points in the unit cube.
pub fn unit_points(n: usize, seed: u64) -> Value {
    let mut r = rng(seed);
    Value::constant(Tensor::from_vec(n, 3, (0..3 * n).map(|_| r.gen_range(0.0..1.0)).collect()))
}

/// Densities and colors for `rays × n` samples, plus their spacings.
pub fn composite_inputs(rays: usize, n: usize, seed: u64) -> (Value, Value, Tensor) {
    let mut r = rng(seed);
    let m = rays * n;
    let colors = Tensor::from_vec(m, 3, (0..3 * m).map(|_| r.gen_range(0.0..1.0)).collect());
    let sigma = Tensor::from_vec(m, 1, (0..m).map(|_| r.gen_range(0.0..20.0)).collect());
    let deltas = Tensor::from_vec(rays, n, (0..m).map(|_| r.gen_range(0.0..0.02)).collect());
    (Value::param(colors), Value::param(sigma), deltas)
}

/// One training batch with cameras at the origin on a noise image.
pub fn training_batch(size: usize, rows: usize, samples: usize, seed: u64) -> (Cameras, RayBatch) {
    let mut r = rng(seed);
    let image = Image::from_vec(size, size, (0..size * size * 3).map(|_| r.gen_range(0.0..1.0)).collect())
        .expect("matching length");
    let cams = Cameras::at_origin(1, size, size, false);
    let batch = make_batch(&[image], 0, rows, rows, samples, &mut r).expect("batch fits the image");
    (cams, batch)
}
