//! Central finite-difference checks of analytic gradients.
//!
//! The checker only ever evaluates the forward pass on perturbed copies of
//! parameter data; it shares nothing with the backward closures it audits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, Value};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference half step.
    pub eps: f64,
    /// Number of randomly chosen coordinates to probe; all coordinates are
    /// probed when there are fewer.
    pub coords: usize,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor so that vanishing gradients compare in absolute terms.
    pub floor: f64,
    /// Retry a failing coordinate at `eps/10` and `10·eps`, keeping the
    /// closest agreement.
    pub retry_steps: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            coords: 100,
            tolerance: 1e-4,
            floor: 1e-6,
            retry_steps: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    /// Number of parameter tensors probed.
    pub params: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// (parameter index, element index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    /// One report over the coordinates of both; parameter indices of
    /// `other` are offset past those of `self`.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let offset = self.params;
        let other_worst = other.worst.map(|(p, e, a, n)| (p + offset, e, a, n));
        let (max_rel_error, worst) = if other.max_rel_error > self.max_rel_error {
            (other.max_rel_error, other_worst)
        } else {
            (self.max_rel_error, self.worst)
        };
        GradCheckReport {
            name: self.name,
            params: offset + other.params,
            coords_checked: self.coords_checked + other.coords_checked,
            max_rel_error,
            worst,
            tolerance: self.tolerance.min(other.tolerance),
        }
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {:>5} coords  max rel err {:.3e}  [{}]",
            self.name,
            self.coords_checked,
            self.max_rel_error,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `d loss / d params` from [`backward`] with central differences.
///
/// `loss` must rebuild the graph from the current parameter data on every
/// call. Parameter gradients are cleared before and after.
pub fn check_gradients(
    name: &str,
    params: &[Value],
    mut loss: impl FnMut() -> Result<Value>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    params.iter().for_each(Value::zero_grad);
    let l = loss()?;
    backward(&l)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| match p.grad() {
            Some(g) => g.into_vec(),
            None => vec![0.0; p.data().len()],
        })
        .collect();
    params.iter().for_each(Value::zero_grad);
    drop(l);

    let total: usize = analytic.iter().map(Vec::len).sum();
    let mut coords: Vec<(usize, usize)> = Vec::new();
    if total <= opts.coords {
        for (pi, a) in analytic.iter().enumerate() {
            coords.extend((0..a.len()).map(|e| (pi, e)));
        }
    } else {
        // Round-robin over parameters so small tensors are always covered.
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let nonempty: Vec<usize> = (0..params.len()).filter(|&i| !analytic[i].is_empty()).collect();
        for k in 0..opts.coords {
            let pi = nonempty[k % nonempty.len()];
            coords.push((pi, rng.gen_range(0..analytic[pi].len())));
        }
    }

    let mut report = GradCheckReport {
        name: name.to_string(),
        params: params.len(),
        coords_checked: coords.len(),
        max_rel_error: 0.0,
        worst: None,
        tolerance: opts.tolerance,
    };
    for (pi, e) in coords {
        let a = analytic[pi][e];
        let mut central = |eps: f64| -> Result<f64> {
            let original = params[pi].data().as_slice()[e];
            params[pi].data_mut().as_mut_slice()[e] = original + eps;
            let plus = loss()?.item();
            params[pi].data_mut().as_mut_slice()[e] = original - eps;
            let minus = loss()?.item();
            params[pi].data_mut().as_mut_slice()[e] = original;
            Ok((plus - minus) / (2.0 * eps))
        };
        let mut numeric = central(opts.eps)?;
        let mut err = relative_error(a, numeric, opts.floor);
        // A step that straddles a ReLU kink, or one lost in round-off, spoils
        // a single difference; a wrong derivative disagrees at every step.
        if opts.retry_steps && err >= opts.tolerance {
            for eps in [opts.eps * 0.1, opts.eps * 10.0] {
                let n = central(eps)?;
                let e2 = relative_error(a, n, opts.floor);
                if e2 < err {
                    (numeric, err) = (n, e2);
                }
            }
        }
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((pi, e, a, numeric));
        }
    }
    Ok(report)
}

/// A named gradient check over one differentiable component.
pub struct Suite {
    pub name: &'static str,
    run: fn(u64) -> Result<GradCheckReport>,
}

impl Suite {
    pub fn run(&self, seed: u64) -> Result<GradCheckReport> {
        (self.run)(seed)
    }
}

/// Every differentiable component with a hand-written backward pass.
pub fn suites() -> Vec<Suite> {
    macro_rules! suite {
        ($name:literal, $f:path) => {
            Suite { name: $name, run: $f }
        };
    }
    vec![
        suite!("ops.pointwise", suites::pointwise),
        suite!("ops.binary", suites::binary),
        suite!("ops.affine", suites::affine),
        suite!("ops.structural", suites::structural),
        suite!("ops.normalize_rows", suites::normalize),
        suite!("ops.reductions", suites::reductions),
        suite!("encoding.fourier", suites::fourier_enc),
        suite!("encoding.sh", suites::sh_enc),
        suite!("encoding.hash_table", suites::hash_table),
        suite!("encoding.hash_points", suites::hash_points),
        suite!("field.main", suites::field_main),
        suite!("field.correction", suites::field_correction),
        suite!("camera.rodrigues", suites::rodrigues),
        suite!("camera.pinhole", suites::pinhole),
        suite!("camera.ndc_rays", suites::ndc),
        suite!("render.ray_points", suites::points),
        suite!("render.volume", suites::volume),
        suite!("loss.combined", suites::loss),
        suite!("train.batch_forward", suites::batch),
    ]
}

/// Runs [`suites`] in order.
pub fn run_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    suites().iter().map(|s| s.run(seed)).collect()
}

mod suites {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{check_gradients, GradCheckOptions, GradCheckReport};
    use crate::autodiff::{ops, Tensor, Value};
    use crate::camera::{
        ndc_rays, pinhole_directions, rodrigues as axis_angle_matrix, rotation_from_axis_angle, Cameras,
        Pose,
    };
    use crate::encodings::{fourier, spherical_harmonics, HashGrid, HashGridConfig};
    use crate::error::Result;
    use crate::field::{Field, FieldConfig};
    use crate::render::{deltas, ray_points, stratified_depths, volume_render};
    use crate::trainer::{batch_forward, combined_loss, make_batch, DetachMode};

    // Step small enough for the highest Fourier frequency, large enough
    // that round-off stays far below the tolerance.
    fn opts(seed: u64) -> GradCheckOptions {
        GradCheckOptions {
            eps: 1e-6,
            seed,
            ..GradCheckOptions::default()
        }
    }

    // Network weights see no frequency amplification; a wider step keeps
    // round-off clear of small gradients.
    fn weight_opts(seed: u64) -> GradCheckOptions {
        GradCheckOptions {
            eps: 1e-5,
            ..opts(seed)
        }
    }

    fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
    }

    fn param(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Value {
        Value::param(uniform(rng, rows, cols, lo, hi))
    }

    /// `Σ wᵢ·outᵢ` with fixed random weights, so every output element matters.
    fn probe(out: &Value, seed: u64) -> Result<Value> {
        let (r, c) = out.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Value::constant(uniform(&mut rng, r, c, -1.0, 1.0));
        Ok(ops::sum(&ops::mul(out, &w)?))
    }

    fn unit_dirs(rng: &mut impl Rng, n: usize) -> Tensor {
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            let d = [rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), -1.0];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64;
            data.extend(d.map(|v: f64| v / norm.sqrt()));
        }
        Tensor::from_vec(n, 3, data)
    }

    pub fn pointwise(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 1);
        // Magnitudes keep relu and clamp inputs away from their kinks.
        let mut data = uniform(&mut r, 12, 10, 0.05, 1.5);
        for (i, v) in data.as_mut_slice().iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        let x = Value::param(data);
        check_gradients(
            "ops.pointwise",
            &[x.clone()],
            || {
                let a = ops::relu(&x);
                let b = ops::sigmoid(&x);
                let c = ops::exp(&ops::scale(&x, 0.7));
                let d = ops::clamp(&ops::scale(&x, 0.5), -0.3, 0.4);
                let s = ops::add(&ops::add(&a, &b)?, &ops::add(&c, &d)?)?;
                probe(&s, 11)
            },
            opts(seed),
        )
    }

    pub fn binary(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 2);
        let a = param(&mut r, 10, 5, -1.0, 1.0);
        let b = param(&mut r, 10, 5, -1.0, 1.0);
        // A shared row, tiled to the batch.
        let c = param(&mut r, 1, 5, -1.0, 1.0);
        check_gradients(
            "ops.binary",
            &[a.clone(), b.clone(), c.clone()],
            || {
                let ab = ops::mul(&a, &b)?;
                let tiled = ops::repeat_rows(&c, 10)?;
                let s = ops::sub(&ops::add(&ab, &tiled)?, &ops::mul(&b, &tiled)?)?;
                probe(&ops::sub(&s, &a)?, 12)
            },
            opts(seed),
        )
    }

    pub fn affine(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 3);
        let x = param(&mut r, 12, 9, -1.0, 1.0);
        let w = param(&mut r, 6, 9, -1.0, 1.0);
        let b = param(&mut r, 1, 6, -1.0, 1.0);
        check_gradients(
            "ops.affine",
            &[x.clone(), w.clone(), b.clone()],
            || probe(&ops::affine(&x, &w, &b)?, 13),
            opts(seed),
        )
    }

    pub fn structural(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 4);
        let a = param(&mut r, 20, 6, -1.0, 1.0);
        let b = param(&mut r, 20, 4, -1.0, 1.0);
        let table = param(&mut r, 5, 4, -1.0, 1.0);
        check_gradients(
            "ops.structural",
            &[a.clone(), b.clone(), table.clone()],
            || {
                let cat = ops::concat_cols(&[&a, &b])?;
                let mid = ops::slice_cols(&cat, 1, 9)?;
                let rep = ops::repeat_rows(&mid, 3)?;
                let row = ops::repeat_rows(&ops::select_row(&table, 2)?, 60)?;
                let tail = ops::slice_cols(&rep, 2, 6)?;
                probe(&ops::mul(&tail, &row)?, 14)
            },
            opts(seed),
        )
    }

    pub fn normalize(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 5);
        let x = param(&mut r, 40, 3, 0.2, 1.0);
        check_gradients(
            "ops.normalize_rows",
            &[x.clone()],
            || probe(&ops::normalize_rows(&x)?, 15),
            opts(seed),
        )
    }

    pub fn reductions(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 6);
        let x = param(&mut r, 12, 10, -1.0, 1.0);
        check_gradients(
            "ops.reductions",
            &[x.clone()],
            || {
                let a = ops::add(&ops::sum(&x), &ops::scale(&ops::mean(&x), 3.0))?;
                let b = ops::add(&ops::sum_squares(&x), &ops::scale(&ops::mean_squares(&x), 5.0))?;
                ops::add(&a, &b)
            },
            opts(seed),
        )
    }

    pub fn fourier_enc(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 7);
        let x = param(&mut r, 40, 3, -1.0, 1.0);
        check_gradients(
            "encoding.fourier",
            &[x.clone()],
            || probe(&fourier(&x, 10), 16),
            opts(seed),
        )
    }

    pub fn sh_enc(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 8);
        let x = Value::param(unit_dirs(&mut r, 40));
        check_gradients(
            "encoding.sh",
            &[x.clone()],
            || probe(&spherical_harmonics(&x)?, 17),
            opts(seed),
        )
    }

    pub fn hash_table(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 9);
        let grid = HashGrid::new(HashGridConfig::default(), &mut r)?;
        let pts = Value::constant(uniform(&mut r, 16, 3, 0.05, 0.95));
        let table = grid.table().clone();
        check_gradients(
            "encoding.hash_table",
            &[table],
            || probe(&grid.encode(&pts)?, 18),
            opts(seed),
        )
    }

    pub fn hash_points(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 10);
        // Coarse levels keep probes from crossing voxel faces, where the
        // trilinear interpolant is only piecewise smooth.
        let cfg = HashGridConfig {
            levels: 4,
            features_per_level: 2,
            table_size: 256,
            min_resolution: 2,
            max_resolution: 16,
        };
        let grid = HashGrid::new(cfg, &mut r)?;
        let pts = param(&mut r, 40, 3, 0.05, 0.95);
        check_gradients(
            "encoding.hash_points",
            &[pts.clone()],
            || probe(&grid.encode(&pts)?, 19),
            opts(seed),
        )
    }

    fn field_inputs(r: &mut impl Rng, n: usize) -> (Value, Value) {
        let pts = Value::constant(uniform(r, n, 3, -0.9, 0.9));
        let dirs = Value::constant(unit_dirs(r, n));
        (pts, dirs)
    }

    /// At initialization the output layer is zero and the tiny table puts
    /// every hidden pre-activation next to the ReLU kink. Moves the branch
    /// to a generic point so all its parameters are reachable and smooth.
    fn perturb_correction(field: &Field, r: &mut impl Rng) {
        let Some(cc) = &field.correction else { return };
        for (v, bound) in [
            (cc.grid.table(), 1.0),
            (&cc.hidden.bias, 0.5),
            (&cc.output.weight, 0.1),
        ] {
            let mut d = v.data_mut();
            let (rows, cols) = d.shape();
            *d = uniform(r, rows, cols, -bound, bound);
        }
    }

    pub fn field_main(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 11);
        let field = Field::new(FieldConfig::default(), &mut r)?;
        let (pts, dirs) = field_inputs(&mut r, 4);
        check_gradients(
            "field.main",
            &field.main_parameters(),
            || {
                let out = field.forward(&pts, &dirs)?;
                let s = ops::concat_cols(&[&out.color, &out.sigma])?;
                probe(&s, 20)
            },
            weight_opts(seed),
        )
    }

    pub fn field_correction(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 12);
        let field = Field::new(FieldConfig::default(), &mut r)?;
        perturb_correction(&field, &mut r);
        let (pts, dirs) = field_inputs(&mut r, 6);
        check_gradients(
            "field.correction",
            &field.correction_parameters(),
            || probe(&field.forward(&pts, &dirs)?.corrected, 21),
            weight_opts(seed),
        )
    }

    pub fn rodrigues(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 13);
        let big = param(&mut r, 30, 3, -1.0, 1.0);
        // Inside the small-angle branch.
        let small = param(&mut r, 10, 3, -2e-3, 2e-3);
        check_gradients(
            "camera.rodrigues",
            &[big.clone(), small.clone()],
            || {
                let mut total = Value::constant(Tensor::scalar(0.0));
                for (k, v) in [&big, &small].into_iter().enumerate() {
                    for i in 0..v.shape().0 {
                        let m = rotation_from_axis_angle(&ops::select_row(v, i)?)?;
                        total = ops::add(&total, &probe(&m, 22 + (k * 100 + i) as u64)?)?;
                    }
                }
                Ok(total)
            },
            opts(seed),
        )
    }

    pub fn pinhole(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 14);
        // Twenty independent cameras, five parameters each.
        let rv = param(&mut r, 20, 3, -0.3, 0.3);
        let scale = param(&mut r, 20, 2, 0.8, 1.2);
        let pixels: Vec<(usize, usize)> =
            (0..6).map(|_| (r.gen_range(0..48), r.gen_range(0..64))).collect();
        check_gradients(
            "camera.pinhole",
            &[rv.clone(), scale.clone()],
            || {
                let mut total = Value::constant(Tensor::scalar(0.0));
                for i in 0..20 {
                    let rot = rotation_from_axis_angle(&ops::select_row(&rv, i)?)?;
                    let s = ops::select_row(&scale, i)?;
                    let d = pinhole_directions(&rot, &s, &pixels, 64, 48)?;
                    total = ops::add(&total, &probe(&d, 24 + i as u64)?)?;
                }
                Ok(total)
            },
            opts(seed),
        )
    }

    pub fn ndc(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 15);
        let origins = param(&mut r, 30, 3, -0.2, 0.2);
        let dirs = Value::param(unit_dirs(&mut r, 30));
        let scale = param(&mut r, 1, 2, 0.8, 1.2);
        check_gradients(
            "camera.ndc_rays",
            &[origins.clone(), dirs.clone(), scale.clone()],
            || probe(&ndc_rays(&origins, &dirs, &scale, 1.0)?, 25),
            opts(seed),
        )
    }

    pub fn points(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 16);
        let rays = param(&mut r, 20, 6, -1.0, 1.0);
        let depths = stratified_depths(20, 5, &mut r)?;
        check_gradients(
            "render.ray_points",
            &[rays.clone()],
            || probe(&ray_points(&rays, &depths)?, 26),
            opts(seed),
        )
    }

    pub fn volume(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 17);
        let (m, n) = (5, 8);
        let colors = param(&mut r, m * n, 3, 0.0, 1.0);
        let sigma = param(&mut r, m * n, 1, 0.5, 4.0);
        let d = deltas(&stratified_depths(m, n, &mut r)?);
        check_gradients(
            "render.volume",
            &[colors.clone(), sigma.clone()],
            || probe(&volume_render(&colors, &sigma, &d)?.rgb, 27),
            opts(seed),
        )
    }

    pub fn loss(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 18);
        let target = uniform(&mut r, 20, 3, 0.0, 1.0);
        let a = param(&mut r, 20, 3, 0.0, 1.0);
        let b = param(&mut r, 20, 3, 0.0, 1.0);
        check_gradients(
            "loss.combined",
            &[a.clone(), b.clone()],
            || Ok(combined_loss(&target, &a, &b)?.total),
            opts(seed),
        )
    }

    pub fn batch(seed: u64) -> Result<GradCheckReport> {
        let mut r = rng(seed, 19);
        // Δc ≡ 0 at initialization, so the detached hash-grid input is the
        // only path the analytic gradient omits and it contributes nothing.
        // A narrow trunk keeps the number of ReLU kinks in reach small.
        let cfg = FieldConfig {
            hidden_width: 32,
            hidden_layers: 4,
            skip_layer: 2,
            view_width: 16,
            ..FieldConfig::default()
        };
        let field = Field::new(cfg, &mut r)?;
        let (w, h) = (16, 12);
        let pose = Pose {
            rotation: axis_angle_matrix([0.05, -0.08, 0.02]),
            translation: nalgebra::Vector3::new(0.1, -0.05, 0.2),
        };
        let cams = Cameras::from_poses(&[pose], (w as f64, h as f64), w, h);
        let image = crate::image::Image::new(w, h);
        let batch = make_batch(std::slice::from_ref(&image), 0, 3, 3, 6, &mut r)?;
        let loss = || Ok(batch_forward(&field, &cams, &batch, DetachMode::HeInput)?.loss.total);
        let mut net = field.main_parameters();
        net.extend(field.correction_parameters());
        let net = check_gradients("train.batch_forward", &net, loss, weight_opts(seed))?;
        // Moving a camera moves every sample through thousands of ReLUs at
        // once, so its step must be small enough to cross none of them.
        let cam_opts = GradCheckOptions {
            eps: 1e-8,
            ..opts(seed)
        };
        let cam = check_gradients("train.batch_forward", &cams.parameters(), loss, cam_opts)?;
        Ok(net.merge(cam))    }
}
