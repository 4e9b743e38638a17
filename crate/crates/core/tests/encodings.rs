use hashcc::encodings::{
    fourier, fourier_encode, fourier_width, hash_index, sh_encode, HashGrid, HashGridConfig,
    SH_WIDTH,
};
use hashcc::{Tensor, Value};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[test]
fn position_embedding_has_sixty_components() {
    assert_eq!(fourier_width(3, 10), 60);
    assert_eq!(fourier_encode(&[0.1, 0.2, 0.3], 10).len(), 60);
    let x = Value::constant(Tensor::from_vec(2, 3, vec![0.0; 6]));
    assert_eq!(fourier(&x, 10).shape(), (2, 60));
}

#[test]
fn fourier_exact_values() {
    let zero = fourier_encode(&[0.0, 0.0, 0.0], 10);
    for pair in zero.chunks(2) {
        assert_eq!(pair, &[0.0, 1.0]);
    }
    let pi = fourier_encode(&[PI], 2);
    let expect = [0.0, -1.0, 0.0, 1.0];
    for (a, b) in pi.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn fourier_components_are_bounded(x in proptest::array::uniform3(-1e3f64..1e3)) {
        prop_assert!(fourier_encode(&x, 10).iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn sh_band_zero_is_rotation_invariant(d in proptest::array::uniform3(-1.0f64..1.0)) {
        prop_assume!(d.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let y = sh_encode(d).unwrap();
        prop_assert!((y[0] - 0.5 / PI.sqrt()).abs() <= 1e-15);
    }
}

/// Uniform directions by Archimedes' theorem: uniform height and azimuth.
fn sphere_sample(rng: &mut impl Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

#[test]
fn sh_gram_matrix_is_identity() {
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut gram = [[0.0f64; SH_WIDTH]; SH_WIDTH];
    for _ in 0..n {
        let y = sh_encode(sphere_sample(&mut rng)).unwrap();
        for i in 0..SH_WIDTH {
            for j in i..SH_WIDTH {
                gram[i][j] += y[i] * y[j];
            }
        }
    }
    let scale = 4.0 * PI / n as f64;
    for i in 0..SH_WIDTH {
        for j in i..SH_WIDTH {
            let v = gram[i][j] * scale;
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 0.01, "G[{i}][{j}] = {v}");
        }
    }
}

#[test]
fn sh_on_the_pole_keeps_only_zonal_terms() {
    let y = sh_encode([0.0, 0.0, 1.0]).unwrap();
    // Order ℓ ascending, m from −ℓ to ℓ: m = 0 sits at ℓ² + ℓ.
    for l in 0..4usize {
        for m in 0..(2 * l + 1) {
            let idx = l * l + m;
            if m != l {
                assert_eq!(y[idx], 0.0, "ℓ={l} index {idx}");
            } else {
                assert!(y[idx] > 0.0);
            }
        }
    }
    assert!(sh_encode([0.0; 3]).is_err());
    // Non-unit input is normalized.
    let a = sh_encode([0.0, 3.0, 4.0]).unwrap();
    let b = sh_encode([0.0, 0.6, 0.8]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-15);
    }
}

fn random_grid(seed: u64) -> HashGrid {
    let cfg = HashGridConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = cfg.levels * cfg.table_size;
    let data = (0..rows * cfg.features_per_level).map(|_| rng.gen_range(-1.0..1.0)).collect();
    HashGrid::from_table(cfg, Tensor::from_vec(rows, cfg.features_per_level, data)).unwrap()
}

fn encode_point(grid: &HashGrid, p: [f64; 3]) -> Vec<f64> {
    let v = grid.encode(&Value::constant(Tensor::row(&p))).unwrap();
    let out = v.data().as_slice().to_vec();
    out
}

fn feature(grid: &HashGrid, level: usize, vertex: [u32; 3]) -> [f64; 2] {
    let t = grid.config().table_size;
    let row = level * t + hash_index(vertex, grid.resolutions()[level], t);
    let table = grid.table().data();
    [table.get(row, 0), table.get(row, 1)]
}

#[test]
fn paper_grid_layout() {
    let cfg = HashGridConfig::default();
    assert_eq!(cfg.output_width(), 32);
    let grid = random_grid(0);
    assert_eq!(grid.resolutions().first(), Some(&16));
    assert_eq!(grid.resolutions().last(), Some(&512));
    assert!(grid.resolutions().windows(2).all(|w| w[0] <= w[1]));
    let b = cfg.growth_factor();
    assert!((b - ((512f64 / 16.0).ln() / 15.0).exp()).abs() < 1e-15);
    assert_eq!(encode_point(&grid, [0.3, 0.6, 0.9]).len(), 32);
}

#[test]
fn hash_index_examples() {
    for res in [1, 2, 7, 16, 100, 512] {
        assert_eq!(hash_index([0, 0, 0], res, 512), 0);
    }
    // Dense: 3³ = 27 vertices fit in the table.
    assert_eq!(hash_index([1, 0, 0], 2, 512), 1);
    assert_eq!(hash_index([0, 1, 0], 2, 512), 3);
    assert_eq!(hash_index([0, 0, 1], 2, 512), 9);
    assert_eq!(hash_index([1, 1, 1], 16, 512), (1u64 ^ 2_654_435_761 ^ 805_459_861) as usize % 512);
}

#[test]
fn hashed_buckets_are_balanced() {
    let t = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut load = vec![0usize; t];
    let n = 100_000;
    for _ in 0..n {
        let v = [rng.gen_range(0..=512), rng.gen_range(0..=512), rng.gen_range(0..=512)];
        let i = hash_index(v, 512, t);
        assert!(i < t);
        load[i] += 1;
    }
    let mean = n as f64 / t as f64;
    let max = *load.iter().max().unwrap() as f64;
    assert!(max < 3.0 * mean, "max bucket {max}, mean {mean}");
}

#[test]
fn vertices_return_their_stored_features() {
    let grid = random_grid(1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for level in 0..16 {
        let res = grid.resolutions()[level];
        for _ in 0..20 {
            let v = [0; 3].map(|_: u32| rng.gen_range(0..=res));
            let p = v.map(|i| i as f64 / res as f64);
            let out = encode_point(&grid, p);
            let want = feature(&grid, level, v);
            for f in 0..2 {
                assert!((out[2 * level + f] - want[f]).abs() <= 1e-12, "level {level} vertex {v:?}");
            }
        }
    }
}

#[test]
fn voxel_centers_average_the_corners() {
    let grid = random_grid(2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for level in 0..16 {
        let res = grid.resolutions()[level];
        for _ in 0..20 {
            let base = [0; 3].map(|_: u32| rng.gen_range(0..res));
            let p = base.map(|i| (i as f64 + 0.5) / res as f64);
            let out = encode_point(&grid, p);
            let mut mean = [0.0; 2];
            for c in 0..8u32 {
                let v = [base[0] + (c & 1), base[1] + ((c >> 1) & 1), base[2] + ((c >> 2) & 1)];
                let f = feature(&grid, level, v);
                mean[0] += f[0] / 8.0;
                mean[1] += f[1] / 8.0;
            }
            for f in 0..2 {
                assert!((out[2 * level + f] - mean[f]).abs() <= 1e-12, "level {level} voxel {base:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn hash_encoding_is_lipschitz(
        p in proptest::array::uniform3(0.0f64..1.0),
        dp in proptest::array::uniform3(-1e-4f64..1e-4),
    ) {
        let grid = random_grid(3);
        let q = [0, 1, 2].map(|a| (p[a] + dp[a]).clamp(0.0, 1.0));
        let (a, b) = (encode_point(&grid, p), encode_point(&grid, q));
        let step: f64 = (0..3).map(|i| (p[i] - q[i]).abs()).sum();
        for level in 0..16 {
            // Trilinear slope per axis is at most N·max|f_i − f_j| ≤ 2N with |f| ≤ 1.
            let bound = 2.0 * grid.resolutions()[level] as f64 * step + 1e-12;
            for f in 0..2 {
                prop_assert!((a[2 * level + f] - b[2 * level + f]).abs() <= bound);
            }
        }
    }
}
