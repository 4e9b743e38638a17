use rand::Rng;

use crate::autodiff::{Tensor, Value};
use crate::error::{Error, Result};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    /// Feature vectors per level, `T`.
    pub table_size: usize,
    pub min_resolution: u32,
    pub max_resolution: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            features_per_level: 2,
            table_size: 512,
            min_resolution: 16,
            max_resolution: 512,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features_per_level == 0 || self.table_size == 0 {
            return Err(Error::Config(format!(
                "hash grid needs positive levels/features/table size, got {self:?}"
            )));
        }
        if self.min_resolution == 0 || self.max_resolution < self.min_resolution {
            return Err(Error::Config(format!(
                "hash grid resolutions must satisfy 0 < min <= max, got {}..{}",
                self.min_resolution, self.max_resolution
            )));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Per-level growth factor `b = exp((ln N_max − ln N_min)/(L − 1))`.
    pub fn growth_factor(&self) -> f64 {
        if self.levels <= 1 {
            return 1.0;
        }
        let (lo, hi) = (self.min_resolution as f64, self.max_resolution as f64);
        ((hi.ln() - lo.ln()) / (self.levels - 1) as f64).exp()
    }

    /// Cells per axis at `level`.
    pub fn resolution(&self, level: usize) -> u32 {
        let r = self.min_resolution as f64 * self.growth_factor().powi(level as i32);
        // Guard against 511.999… at the top level.
        ((r + 1e-9).floor() as u32).clamp(self.min_resolution, self.max_resolution)
    }

    /// Whether `level` stores one feature per vertex without hashing.
    pub fn is_dense(&self, level: usize) -> bool {
        let v = self.resolution(level) as u64 + 1;
        v * v * v <= self.table_size as u64
    }
}

/// Table slot of a grid vertex at a level with `resolution` cells per axis.
///
/// Levels whose `(N+1)³` vertices fit in the table use a row-major index with
/// x fastest; finer levels XOR the coordinate-wise products with
/// `{1, 2654435761, 805459861}` (32-bit wrapping) and reduce modulo `T`.
pub fn hash_index(vertex: [u32; 3], resolution: u32, table_size: usize) -> usize {
    let side = resolution as u64 + 1;
    if side * side * side <= table_size as u64 {
        let [x, y, z] = vertex.map(u64::from);
        return (x + side * (y + side * z)) as usize;
    }
    let h = vertex[0].wrapping_mul(PRIMES[0])
        ^ vertex[1].wrapping_mul(PRIMES[1])
        ^ vertex[2].wrapping_mul(PRIMES[2]);
    h as usize % table_size
}

/// Multi-resolution hash encoding with a trainable feature table.
///
/// The table is a single `levels·T × F` parameter; level `l` owns rows
/// `l·T .. (l+1)·T`.
#[derive(Debug, Clone)]
pub struct HashGrid {
    config: HashGridConfig,
    resolutions: Vec<u32>,
    table: Value,
}

/// Corner table rows and trilinear weights of one point at one level.
struct Cell {
    rows: [usize; 8],
    weights: [f64; 8],
    frac: [f64; 3],
}

impl HashGrid {
    /// Features drawn uniformly from `[-1e-4, 1e-4]`.
    pub fn new(config: HashGridConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let rows = config.levels * config.table_size;
        let data = (0..rows * config.features_per_level)
            .map(|_| rng.gen_range(-1e-4..=1e-4))
            .collect();
        Self::from_table(config, Tensor::from_vec(rows, config.features_per_level, data))
    }

    pub fn from_table(config: HashGridConfig, table: Tensor) -> Result<Self> {
        config.validate()?;
        let expected = (config.levels * config.table_size, config.features_per_level);
        if table.shape() != expected {
            return Err(Error::shape(
                "hash_grid",
                format!("table {:?}, expected {:?}", table.shape(), expected),
            ));
        }
        let resolutions = (0..config.levels).map(|l| config.resolution(l)).collect();
        Ok(Self {
            config,
            resolutions,
            table: Value::param(table),
        })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn table(&self) -> &Value {
        &self.table
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    fn cell(&self, level: usize, p: [f64; 3]) -> Cell {
        let res = self.resolutions[level];
        let t = self.config.table_size;
        let mut base = [0u32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = p[a] * res as f64;
            let i = (s.floor() as i64).clamp(0, res as i64 - 1);
            base[a] = i as u32;
            frac[a] = s - i as f64;
        }
        let mut rows = [0usize; 8];
        let mut weights = [0.0; 8];
        for c in 0..8 {
            let bit = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let vertex = [
                base[0] + bit[0] as u32,
                base[1] + bit[1] as u32,
                base[2] + bit[2] as u32,
            ];
            rows[c] = level * t + hash_index(vertex, res, t);
            let mut w = 1.0;
            for a in 0..3 {
                w *= if bit[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            weights[c] = w;
        }
        Cell { rows, weights, frac }
    }

    /// Encodes `n×3` points in `[0,1]³` to `n × (levels·F)`.
    ///
    /// Coordinates outside the unit cube are clamped and receive no gradient.
    /// Gradients flow into the table and, when `points` requires one, into the
    /// points through the trilinear weights of each enclosing voxel.
    pub fn encode(&self, points: &Value) -> Result<Value> {
        let (n, c) = points.shape();
        if c != 3 {
            return Err(Error::shape("hash_encode", format!("expected n×3, got {n}×{c}")));
        }
        let levels = self.config.levels;
        let f = self.config.features_per_level;
        let width = levels * f;
        let mut out = Tensor::zeros(n, width);
        {
            let pts = points.data();
            let table = self.table.data();
            for r in 0..n {
                let p = clamp_unit(pts.row_slice(r));
                let row = out.row_slice_mut(r);
                for level in 0..levels {
                    let cell = self.cell(level, p);
                    let dst = &mut row[level * f..(level + 1) * f];
                    for (k, &tr) in cell.rows.iter().enumerate() {
                        let w = cell.weights[k];
                        for (o, &v) in dst.iter_mut().zip(table.row_slice(tr)) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
        let grid = self.clone_structure();
        Ok(Value::from_op(
            "hash_encode",
            out,
            vec![points.clone(), self.table.clone()],
            Box::new(move |g, p| {
                let pts = p[0].data();
                let want_points = p[0].requires_grad();
                let want_table = p[1].requires_grad();
                let mut dtable = want_table.then(|| {
                    let (tr, tc) = p[1].shape();
                    Tensor::zeros(tr, tc)
                });
                let mut dpoints = want_points.then(|| Tensor::zeros(n, 3));
                let table = p[1].data();
                for r in 0..n {
                    let raw = pts.row_slice(r);
                    let pt = clamp_unit(raw);
                    let gr = g.row_slice(r);
                    for level in 0..levels {
                        let cell = grid.cell(level, pt);
                        let gl = &gr[level * f..(level + 1) * f];
                        if let Some(dt) = dtable.as_mut() {
                            for (k, &tr) in cell.rows.iter().enumerate() {
                                let w = cell.weights[k];
                                for (d, &gv) in dt.row_slice_mut(tr).iter_mut().zip(gl) {
                                    *d += w * gv;
                                }
                            }
                        }
                        if let Some(dp) = dpoints.as_mut() {
                            let res = grid.resolutions[level] as f64;
                            for a in 0..3 {
                                if !(0.0..=1.0).contains(&raw[a]) {
                                    continue;
                                }
                                let mut acc = 0.0;
                                for (k, &tr) in cell.rows.iter().enumerate() {
                                    let mut dw = 1.0;
                                    for b in 0..3 {
                                        let bit = (k >> b) & 1 == 1;
                                        dw *= if b == a {
                                            if bit { 1.0 } else { -1.0 }
                                        } else if bit {
                                            cell.frac[b]
                                        } else {
                                            1.0 - cell.frac[b]
                                        };
                                    }
                                    let feat = table.row_slice(tr);
                                    let dot: f64 = feat.iter().zip(gl).map(|(x, y)| x * y).sum();
                                    acc += dw * dot;
                                }
                                dp.row_slice_mut(r)[a] += acc * res;
                            }
                        }
                    }
                }
                vec![dpoints, dtable]
            }),
        ))
    }

    /// Same lookup with a constant copy of the table.
    pub fn frozen(&self) -> HashGrid {
        HashGrid {
            config: self.config,
            resolutions: self.resolutions.clone(),
            table: crate::autodiff::detach(&self.table),
        }
    }

    /// Copy of the lookup structure sharing the same table node, for use
    /// inside backward closures.
    fn clone_structure(&self) -> HashGrid {
        HashGrid {
            config: self.config,
            resolutions: self.resolutions.clone(),
            table: self.table.clone(),
        }
    }
}

fn clamp_unit(p: &[f64]) -> [f64; 3] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0), p[2].clamp(0.0, 1.0)]
}
