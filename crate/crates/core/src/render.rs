//! Stratified sampling along NDC rays and emission–absorption compositing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ops, Tensor, Value};
use crate::camera::{camera_direction, to_ndc, Pose};
use crate::error::{Error, Result};
use crate::field::{Field, FieldOutput};
use crate::image::Image;

/// Spacing assigned to the last sample so it absorbs what light remains.
pub const LAST_DELTA: f64 = 1e10;
/// Field samples evaluated per chunk when rendering full frames.
pub const DEFAULT_CHUNK: usize = 8192;
/// Chunks beyond this many samples would need several GB of activations.
pub const MAX_CHUNK: usize = 1 << 20;

/// Anything that maps NDC points and unit view directions to colors and
/// densities.
pub trait RadianceField {
    fn query(&self, points: &Value, dirs: &Value) -> Result<FieldOutput>;
}

impl RadianceField for Field {
    fn query(&self, points: &Value, dirs: &Value) -> Result<FieldOutput> {
        self.forward(points, dirs)
    }
}

fn depths_with(rays: usize, n: usize, mut offset: impl FnMut() -> f64) -> Result<Tensor> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples per ray, got {n}"
        )));
    }
    let bin = 1.0 / n as f64;
    let mut t = Tensor::zeros(rays, n);
    for r in 0..rays {
        for (i, v) in t.row_slice_mut(r).iter_mut().enumerate() {
            *v = (i as f64 + offset()) * bin;
        }
    }
    Ok(t)
}

/// One uniform depth per bin of `[0,1]` split into `n` equal bins: `rays×n`.
/// Draws are taken ray by ray, so a prefix of rays never depends on how
/// many follow.
pub fn stratified_depths(rays: usize, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
    depths_with(rays, n, || rng.gen::<f64>())
}

/// Bin midpoints, the deterministic limit of [`stratified_depths`].
pub fn midpoint_depths(rays: usize, n: usize) -> Result<Tensor> {
    depths_with(rays, n, || 0.5)
}

/// `δ_i = t_{i+1} − t_i`, last `δ` = [`LAST_DELTA`].
pub fn deltas(depths: &Tensor) -> Tensor {
    let (rays, n) = depths.shape();
    let mut d = Tensor::zeros(rays, n);
    for r in 0..rays {
        let t = depths.row_slice(r);
        let out = d.row_slice_mut(r);
        for i in 0..n - 1 {
            out[i] = t[i + 1] - t[i];
        }
        out[n - 1] = LAST_DELTA;
    }
    d
}

/// Sample positions `o + t·d` for `m×6` rays (origin, direction) and `m×N`
/// depths, ray-major: `(m·N)×3`. Differentiable in the rays.
pub fn ray_points(rays: &Value, depths: &Tensor) -> Result<Value> {
    let (m, c) = rays.shape();
    let n = depths.cols();
    if c != 6 || depths.rows() != m {
        return Err(Error::shape(
            "ray_points",
            format!("rays {:?}, depths {:?}", rays.shape(), depths.shape()),
        ));
    }
    let mut out = Tensor::zeros(m * n, 3);
    {
        let rd = rays.data();
        for r in 0..m {
            let ray = rd.row_slice(r);
            for (i, &t) in depths.row_slice(r).iter().enumerate() {
                let p = out.row_slice_mut(r * n + i);
                for a in 0..3 {
                    p[a] = ray[a] + t * ray[3 + a];
                }
            }
        }
    }
    let depths = depths.clone();
    Ok(Value::from_op(
        "ray_points",
        out,
        vec![rays.clone()],
        Box::new(move |g, _| {
            let mut d = Tensor::zeros(m, 6);
            for r in 0..m {
                let dr = d.row_slice_mut(r);
                for (i, &t) in depths.row_slice(r).iter().enumerate() {
                    let gi = g.row_slice(r * n + i);
                    for a in 0..3 {
                        dr[a] += gi[a];
                        dr[3 + a] += t * gi[a];
                    }
                }
            }
            vec![Some(d)]
        }),
    ))
}

/// Result of compositing `m` rays of `N` samples.
#[derive(Debug, Clone)]
pub struct Composite {
    /// `m×3` pixel colors against a black background.
    pub rgb: Value,
    /// `m×N` weights `w_i = T_i·α_i`.
    pub weights: Tensor,
    /// `Σ_i w_i` per ray.
    pub opacity: Vec<f64>,
}

/// Composites per-sample colors `(m·N)×3` and densities `(m·N)×1` along rays
/// with spacings `m×N`:
/// `α_i = 1 − exp(−σ_i δ_i)`, `T_i = Π_{j<i}(1 − α_j)`, `C = Σ T_i α_i c_i`.
///
/// Differentiable in colors and densities. The spacings are fixed sample
/// geometry.
pub fn volume_render(colors: &Value, sigma: &Value, deltas: &Tensor) -> Result<Composite> {
    let (m, n) = deltas.shape();
    if colors.shape() != (m * n, 3) || sigma.shape() != (m * n, 1) {
        return Err(Error::shape(
            "volume_render",
            format!(
                "colors {:?}, sigma {:?}, deltas {:?}",
                colors.shape(),
                sigma.shape(),
                deltas.shape()
            ),
        ));
    }
    if let Some(d) = deltas.as_slice().iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidArgument(format!("volume_render: delta {d}")));
    }
    let s = sigma.data();
    if let Some(v) = s.as_slice().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("volume_render: density {v}")));
    }
    // trans[r, i] = T_i for i in 0..=N; T_{N} is what leaks through.
    let mut trans = Tensor::zeros(m, n + 1);
    let mut weights = Tensor::zeros(m, n);
    for r in 0..m {
        let tr = trans.row_slice_mut(r);
        tr[0] = 1.0;
        let wr = weights.row_slice_mut(r);
        for i in 0..n {
            let x = s.as_slice()[r * n + i] * deltas.get(r, i);
            let alpha = -(-x).exp_m1();
            wr[i] = tr[i] * alpha;
            tr[i + 1] = tr[i] * (-x).exp();
        }
    }
    drop(s);
    let mut rgb = Tensor::zeros(m, 3);
    {
        let c = colors.data();
        for r in 0..m {
            let out = rgb.row_slice_mut(r);
            for (i, &w) in weights.row_slice(r).iter().enumerate() {
                let ci = c.row_slice(r * n + i);
                for a in 0..3 {
                    out[a] += w * ci[a];
                }
            }
        }
    }
    let opacity = (0..m).map(|r| weights.row_slice(r).iter().sum()).collect();
    let w = weights.clone();
    let deltas = deltas.clone();
    let value = Value::from_op(
        "volume_render",
        rgb,
        vec![colors.clone(), sigma.clone()],
        Box::new(move |g, p| {
            let c = p[0].data();
            let mut dc = Tensor::zeros(m * n, 3);
            let mut ds = Tensor::zeros(m * n, 1);
            for r in 0..m {
                let gr = g.row_slice(r);
                let wr = w.row_slice(r);
                let tr = trans.row_slice(r);
                // suffix = Σ_{i>k} w_i ⟨g, c_i⟩
                let mut suffix = 0.0;
                for k in (0..n).rev() {
                    let ck = c.row_slice(r * n + k);
                    let gc = gr[0] * ck[0] + gr[1] * ck[1] + gr[2] * ck[2];
                    let dck = dc.row_slice_mut(r * n + k);
                    for a in 0..3 {
                        dck[a] = wr[k] * gr[a];
                    }
                    let dx = tr[k + 1] * gc - suffix;
                    ds.as_mut_slice()[r * n + k] = dx * deltas.get(r, k);
                    suffix += wr[k] * gc;
                }
            }
            vec![Some(dc), Some(ds)]
        }),
    );
    Ok(Composite {
        rgb: value,
        weights,
        opacity,
    })
}

/// Main and corrected pixel colors of a batch of rays.
#[derive(Debug, Clone)]
pub struct RayRender {
    pub main: Composite,
    pub corrected: Composite,
    pub samples: FieldOutput,
}

/// Samples `field` along `m×6` NDC rays at `depths` and composites both the
/// main and the corrected colors with the same density node. `view_dirs`
/// are `m×3` unit directions.
pub fn render_rays(
    field: &dyn RadianceField,
    rays: &Value,
    view_dirs: &Value,
    depths: &Tensor,
) -> Result<RayRender> {
    let n = depths.cols();
    let points = ray_points(rays, depths)?;
    let dirs = ops::repeat_rows(view_dirs, n)?;
    let samples = field.query(&points, &dirs)?;
    let d = deltas(depths);
    let main = volume_render(&samples.color, &samples.sigma, &d)?;
    let corrected = if samples.corrected.ptr_eq(&samples.color) {
        main.clone()
    } else {
        volume_render(&samples.corrected, &samples.sigma, &d)?
    };
    Ok(RayRender {
        main,
        corrected,
        samples,
    })
}

/// How depths are placed when rendering full frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Midpoint,
    /// Stratified draws from a ChaCha8 stream with this seed.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub samples: usize,
    /// Field samples per chunk.
    pub chunk: usize,
    pub near: f64,
    pub sampling: Sampling,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples: 128,
            chunk: DEFAULT_CHUNK,
            near: crate::camera::NDC_NEAR,
            sampling: Sampling::Midpoint,
        }
    }
}

/// NDC rays (`[origin, direction]`) and unit world view directions for every
/// pixel of a camera, row-major.
pub fn frame_rays(
    pose: &Pose,
    focal: (f64, f64),
    width: usize,
    height: usize,
    near: f64,
) -> Result<(Vec<[f64; 6]>, Vec<[f64; 3]>)> {
    let mut ndc = Vec::with_capacity(width * height);
    let mut view = Vec::with_capacity(width * height);
    let origin: [f64; 3] = pose.translation.into();
    for row in 0..height {
        for col in 0..width {
            let d = camera_direction((row, col), focal, width, height);
            let w = pose.rotation * nalgebra::Vector3::from(d);
            let (o, nd) = to_ndc(origin, w.into(), focal, width, height, near)?;
            ndc.push([o[0], o[1], o[2], nd[0], nd[1], nd[2]]);
            view.push(w.normalize().into());
        }
    }
    Ok((ndc, view))
}

/// Renders the main and corrected images of one camera.
///
/// The field is only evaluated, never differentiated; pass a
/// [`Field::frozen`] copy to avoid building gradient closures. Output does
/// not depend on `chunk`.
pub fn render_image(
    field: &dyn RadianceField,
    pose: &Pose,
    focal: (f64, f64),
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> Result<(Image, Image)> {
    if opts.chunk == 0 || opts.chunk > MAX_CHUNK {
        return Err(Error::InvalidArgument(format!(
            "chunk of {} samples is outside 1..={MAX_CHUNK}; use a smaller chunk \
             (rendering memory grows linearly with it)",
            opts.chunk
        )));
    }
    let (ndc, view) = frame_rays(pose, focal, width, height, opts.near)?;
    let total = ndc.len();
    let depths = match opts.sampling {
        Sampling::Midpoint => midpoint_depths(total, opts.samples)?,
        Sampling::Random(seed) => {
            stratified_depths(total, opts.samples, &mut ChaCha8Rng::seed_from_u64(seed))?
        }
    };
    let per_chunk = (opts.chunk / opts.samples).max(1);
    let mut main = Image::new(width, height);
    let mut corrected = Image::new(width, height);
    let mut start = 0;
    while start < total {
        let end = (start + per_chunk).min(total);
        let k = end - start;
        let rays = Value::constant(Tensor::from_vec(
            k,
            6,
            ndc[start..end].iter().flatten().copied().collect(),
        ));
        let dirs = Value::constant(Tensor::from_vec(
            k,
            3,
            view[start..end].iter().flatten().copied().collect(),
        ));
        let t = Tensor::from_vec(
            k,
            opts.samples,
            depths.as_slice()[start * opts.samples..end * opts.samples].to_vec(),
        );
        let out = render_rays(field, &rays, &dirs, &t)?;
        main.as_mut_slice()[start * 3..end * 3].copy_from_slice(out.main.rgb.data().as_slice());
        corrected.as_mut_slice()[start * 3..end * 3]
            .copy_from_slice(out.corrected.rgb.data().as_slice());
        start = end;
    }
    Ok((main, corrected))
}
