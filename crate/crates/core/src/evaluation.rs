//! Trajectory alignment, test-camera refinement and quality metrics.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::autodiff::{adam_step, backward, AdamState};
use crate::camera::{Cameras, Pose};
use crate::encodings::DirectionEncoding;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::image::Image;
use crate::render::{midpoint_depths, render_image, RenderOptions, Sampling};
use crate::scene::Scene;
use crate::trainer::{
    batch_forward, lr_schedule, DetachMode, RayBatch, TrainConfig,
};

/// `x ↦ s·R·x + u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let rt = self.rotation.transpose();
        Sim3 {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    /// Moves a camera: its center by the full similarity, its orientation by
    /// the rotation.
    pub fn transform_pose(&self, pose: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * pose.rotation,
            translation: self.apply(&pose.translation),
        }
    }
}

/// Least-squares similarity taking `src` onto `dst`, minimizing
/// `Σ|s·R·x_i + u − y_i|²`, with reflections excluded.
pub fn umeyama_sim3(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Sim3> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::InvalidArgument(format!(
            "{n} source points for {} targets",
            dst.len()
        )));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "{n} point pairs; at least 3 are needed"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mx = src.iter().sum::<Vector3<f64>>() * inv_n;
    let my = dst.iter().sum::<Vector3<f64>>() * inv_n;
    let var_x = src.iter().map(|x| (x - mx).norm_squared()).sum::<f64>() * inv_n;
    let mut cov = Matrix3::zeros();
    for (x, y) in src.iter().zip(dst) {
        cov += (y - my) * (x - mx).transpose();
    }
    cov *= inv_n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = svd.singular_values;
    // nalgebra sorts singular values in descending order.
    let condition = if d[0] > 0.0 { d[1] / d[0] } else { 0.0 };
    if !(var_x > 1e-24) || condition < 1e-10 {
        return Err(Error::Degenerate(format!(
            "point sets are collinear or coincident (σ₂/σ₁ = {condition:.3e}, source variance {var_x:.3e})"
        )));
    }
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x;
    Ok(Sim3 {
        scale,
        rotation,
        translation: my - rotation * mx * scale,
    })
}

/// Reference poses mapped into the frame of `sim3`'s target.
pub fn align_and_transfer(poses: &[Pose], sim3: &Sim3) -> Vec<Pose> {
    poses.iter().map(|p| sim3.transform_pose(p)).collect()
}

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_error_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseErrors {
    pub rotation_deg: Vec<f64>,
    pub translation: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl PoseErrors {
    pub fn rotation_mean(&self) -> f64 {
        mean(&self.rotation_deg)
    }

    pub fn translation_mean(&self) -> f64 {
        mean(&self.translation)
    }

    pub fn translation_rmse(&self) -> f64 {
        let sq: Vec<f64> = self.translation.iter().map(|t| t * t).collect();
        mean(&sq).sqrt()
    }
}

/// Per-pose rotation angle and camera-center distance.
pub fn pose_errors(est: &[Pose], reference: &[Pose]) -> Result<PoseErrors> {
    if est.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "{} estimated poses for {} references",
            est.len(),
            reference.len()
        )));
    }
    Ok(PoseErrors {
        rotation_deg: est
            .iter()
            .zip(reference)
            .map(|(e, r)| rotation_error_deg(&e.rotation, &r.rotation))
            .collect(),
        translation: est
            .iter()
            .zip(reference)
            .map(|(e, r)| (e.translation - r.translation).norm())
            .collect(),
    })
}

/// Largest distance between two camera centers.
pub fn trajectory_diameter(poses: &[Pose]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in poses.iter().enumerate() {
        for b in &poses[i + 1..] {
            d = d.max((a.translation - b.translation).norm());
        }
    }
    d
}

pub const PSNR_CAP: f64 = 99.0;

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP)
}

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::InvalidArgument(format!(
            "image {}×{} vs reference {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(img: &Image, reference: &Image) -> Result<f64> {
    same_shape(img, reference)?;
    let a = img.as_slice();
    let b = reference.as_slice();
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10·log₁₀(1/MSE)` for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(img, reference)?, 1.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// averaged over the three channels.
pub fn ssim(img: &Image, reference: &Image) -> Result<f64> {
    same_shape(img, reference)?;
    let (w, h) = (img.width(), img.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {w}×{h}"
        )));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = img.as_slice().iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = reference.as_slice().iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h, &k));
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / 3.0)
}

/// Test-camera refinement against a frozen field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub steps: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub batch_rows: usize,
    pub batch_cols: usize,
    pub samples_per_ray: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            lr_init: 1e-3,
            lr_final: 1e-5,
            batch_rows: 32,
            batch_cols: 32,
            samples_per_ray: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub pose: Pose,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub diverged: bool,
}

/// Evenly spaced rows/columns with midpoint depths. Refinement descends on
/// this one batch, so the pose settles instead of random-walking around the
/// optimum.
fn evaluation_batch(image: &Image, cfg: &RefineConfig) -> Result<RayBatch> {
    let pick = |n: usize, k: usize| -> Vec<usize> {
        let k = k.min(n);
        (0..k).map(|i| (2 * i + 1) * n / (2 * k)).collect()
    };
    let rows = pick(image.height(), cfg.batch_rows);
    let cols = pick(image.width(), cfg.batch_cols);
    let pixels: Vec<_> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    let mut targets = crate::autodiff::Tensor::zeros(pixels.len(), 3);
    for (i, &(r, c)) in pixels.iter().enumerate() {
        targets.row_slice_mut(i).copy_from_slice(&image.pixel(r, c));
    }
    Ok(RayBatch {
        image: 0,
        depths: midpoint_depths(pixels.len(), cfg.samples_per_ray)?,
        pixels,
        targets,
    })
}

/// Optimizes the rotation and translation of one camera by Adam on the
/// photometric loss against `image`, with every field parameter frozen.
/// Fully deterministic: the batch is a fixed pixel grid at midpoint depths.
///
/// Returns the initial pose, flagged as diverged, when the loss on a fixed
/// evaluation grid ends more than 10× above where it started.
pub fn refine_test_camera(
    field: &Field,
    image: &Image,
    init: &Pose,
    focal: (f64, f64),
    cfg: &RefineConfig,
) -> Result<Refinement> {
    let frozen = field.frozen()?;
    let cams = Cameras::from_poses(&[*init], focal, image.width(), image.height());
    let params = cams.pose_parameters();
    let eval = evaluation_batch(image, cfg)?;
    let eval_loss = |c: &Cameras| -> Result<f64> {
        Ok(batch_forward(&frozen, c, &eval, DetachMode::HeInput)?
            .loss
            .total
            .item())
    };
    let initial_loss = eval_loss(&cams)?;
    let mut adam = AdamState::new(&params);
    for step in 0..cfg.steps {
        let fwd = batch_forward(&frozen, &cams, &eval, DetachMode::HeInput)?;
        if !fwd.loss.total.item().is_finite() {
            break;
        }
        backward(&fwd.loss.total)?;
        let lr = lr_schedule(step as u64, cfg.steps as u64, cfg.lr_init, cfg.lr_final);
        adam_step(&params, &mut adam, lr)?;
        cams.focal_scales.zero_grad();
    }
    let final_loss = eval_loss(&cams)?;
    if !(final_loss <= 10.0 * initial_loss) {
        log::warn!(
            "test-camera refinement diverged (loss {initial_loss:.4e} → {final_loss:.4e}); keeping the initial pose"
        );
        return Ok(Refinement {
            pose: *init,
            initial_loss,
            final_loss,
            diverged: true,
        });
    }
    Ok(Refinement {
        pose: cams.pose(0),
        initial_loss,
        final_loss,
        diverged: false,
    })
}

/// Metrics of one held-out image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr_main: f64,
    pub psnr_corrected: f64,
    pub ssim_main: f64,
    pub ssim_corrected: f64,
    pub refine_initial_loss: f64,
    pub refine_final_loss: f64,
}

/// Per-scene evaluation of one trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `fe`, `sh` or `ours` (spherical harmonics with color correction).
    pub label: String,
    pub images: Vec<ImageMetrics>,
    pub pose: PoseErrors,
    pub trajectory_diameter: f64,
}

impl MetricsReport {
    fn mean_of(&self, f: impl Fn(&ImageMetrics) -> f64) -> f64 {
        mean(&self.images.iter().map(f).collect::<Vec<_>>())
    }

    pub fn psnr_main(&self) -> f64 {
        self.mean_of(|m| m.psnr_main)
    }

    pub fn psnr_corrected(&self) -> f64 {
        self.mean_of(|m| m.psnr_corrected)
    }

    pub fn ssim_main(&self) -> f64 {
        self.mean_of(|m| m.ssim_main)
    }

    pub fn ssim_corrected(&self) -> f64 {
        self.mean_of(|m| m.ssim_corrected)
    }

    /// The model's own output: corrected colors when it has the branch.
    pub fn psnr(&self) -> f64 {
        self.psnr_corrected()
    }

    pub const CSV_HEADER: &'static str = "image,psnr_main,psnr_corrected,ssim_main,ssim_corrected,\
refine_loss_initial,refine_loss_final,rotation_error_deg_mean,translation_error_mean,translation_error_rmse";

    /// One row per held-out image, then a `scene_mean` row carrying the pose
    /// errors of the training trajectory.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for m in &self.images {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6e},{:.6e},,,",
                m.name,
                m.psnr_main,
                m.psnr_corrected,
                m.ssim_main,
                m.ssim_corrected,
                m.refine_initial_loss,
                m.refine_final_loss
            );
        }
        let _ = writeln!(
            s,
            "scene_mean,{:.6},{:.6},{:.6},{:.6},{:.6e},{:.6e},{:.6},{:.6},{:.6}",
            self.psnr_main(),
            self.psnr_corrected(),
            self.ssim_main(),
            self.ssim_corrected(),
            self.mean_of(|m| m.refine_initial_loss),
            self.mean_of(|m| m.refine_final_loss),
            self.pose.rotation_mean(),
            self.pose.translation_mean(),
            self.pose.translation_rmse()
        );
        s
    }

    pub fn to_table(&self, scene: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>8} {:>8} {:>9}   ({})",
            "Scene", "PSNR", "SSIM", "ΔR°", "ΔT", self.label
        );
        let _ = writeln!(
            s,
            "{:<12} {:>8.2} {:>8.3} {:>8.3} {:>9.4}",
            scene,
            self.psnr(),
            self.ssim_corrected(),
            self.pose.rotation_mean(),
            self.pose.translation_mean()
        );
        let _ = writeln!(
            s,
            "ΔT is the mean camera-center distance after similarity alignment, in reference units \
             (RMSE {:.4}; trajectory diameter {:.4}).",
            self.pose.translation_rmse(),
            self.trajectory_diameter
        );
        s
    }
}

/// Column label of a model in the ablation table.
pub fn model_label(encoding: DirectionEncoding, color_correction: bool) -> String {
    match (encoding, color_correction) {
        (DirectionEncoding::Fourier, false) => "fe".into(),
        (DirectionEncoding::SphericalHarmonics, false) => "sh".into(),
        (DirectionEncoding::SphericalHarmonics, true) => "ours".into(),
        (DirectionEncoding::Fourier, true) => "fe+cc".into(),
    }
}

/// PSNR | ΔR° | ΔT, each with one column per model, in FE, SH, ours order.
pub fn ablation_table(scene: &str, reports: &[MetricsReport]) -> String {
    let order = ["fe", "sh", "ours", "fe+cc"];
    let mut cols: Vec<&MetricsReport> = reports.iter().collect();
    cols.sort_by_key(|r| order.iter().position(|o| *o == r.label).unwrap_or(order.len()));
    let labels: Vec<String> = cols.iter().map(|r| r.label.to_uppercase().replace("OURS", "ours")).collect();
    let group = |name: &str| format!("{name:^w$}", w = 9 * cols.len());
    let mut s = String::new();
    let _ = writeln!(s, "{:<12}|{}|{}|{}", "", group("PSNR ↑"), group("ΔR° ↓"), group("ΔT ↓"));
    let header: String = labels.iter().map(|l| format!("{l:>9}")).collect();
    let _ = writeln!(s, "{:<12}|{header}|{header}|{header}", "Scene");
    let cells = |f: &dyn Fn(&MetricsReport) -> String| -> String {
        cols.iter().map(|r| format!("{:>9}", f(r))).collect()
    };
    let _ = writeln!(
        s,
        "{:<12}|{}|{}|{}",
        scene,
        cells(&|r| format!("{:.2}", r.psnr())),
        cells(&|r| format!("{:.3}", r.pose.rotation_mean())),
        cells(&|r| format!("{:.4}", r.pose.translation_mean()))
    );
    s
}

/// Rendered held-out views.
#[derive(Debug, Clone)]
pub struct TestRender {
    pub name: String,
    pub main: Image,
    pub corrected: Image,
}

/// Everything evaluation needs besides the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub refine: RefineConfig,
    pub render: RenderOptions,
}

impl EvalOptions {
    /// Refinement and rendering at the training batch shape and sample count.
    pub fn matching(train: &TrainConfig) -> Self {
        Self {
            refine: RefineConfig {
                batch_rows: train.batch_rows,
                batch_cols: train.batch_cols,
                samples_per_ray: train.samples_per_ray,
                ..Default::default()
            },
            render: RenderOptions {
                samples: train.samples_per_ray,
                sampling: Sampling::Midpoint,
                ..Default::default()
            },
        }
    }
}

/// Aligns the learned trajectory to the reference one, scores the training
/// poses, then transfers, refines and renders every held-out camera.
pub fn evaluate_model(
    field: &Field,
    cameras: &Cameras,
    scene: &Scene,
    opts: &EvalOptions,
) -> Result<(MetricsReport, Vec<TestRender>)> {
    let reference = scene.reference.as_ref().ok_or_else(|| Error::Scene {
        path: Default::default(),
        reason: "evaluation needs reference poses (poses.jsonl)".into(),
    })?;
    let est = cameras.poses();
    let ref_train: Vec<Pose> = scene.train.iter().map(|&i| reference[i].pose).collect();
    let to_ref = umeyama_sim3(
        &est.iter().map(|p| p.translation).collect::<Vec<_>>(),
        &ref_train.iter().map(|p| p.translation).collect::<Vec<_>>(),
    )?;
    let aligned = align_and_transfer(&est, &to_ref);
    let pose = pose_errors(&aligned, &ref_train)?;
    let to_learned = to_ref.inverse();
    let focal = {
        let n = cameras.len();
        let sum = (0..n).fold((0.0, 0.0), |a, i| {
            let f = cameras.focal(i);
            (a.0 + f.0, a.1 + f.1)
        });
        (sum.0 / n as f64, sum.1 / n as f64)
    };
    let frozen = field.frozen()?;
    let mut images = Vec::new();
    let mut renders = Vec::new();
    for &i in &scene.test {
        let init = to_learned.transform_pose(&reference[i].pose);
        let target = &scene.images[i];
        let refined = refine_test_camera(&frozen, target, &init, focal, &opts.refine)?;
        let (main, corrected) = render_image(
            &frozen,
            &refined.pose,
            focal,
            target.width(),
            target.height(),
            &opts.render,
        )?;
        images.push(ImageMetrics {
            name: scene.names[i].clone(),
            psnr_main: psnr(&main, target)?,
            psnr_corrected: psnr(&corrected, target)?,
            ssim_main: ssim(&main, target)?,
            ssim_corrected: ssim(&corrected, target)?,
            refine_initial_loss: refined.initial_loss,
            refine_final_loss: refined.final_loss,
        });
        renders.push(TestRender {
            name: scene.names[i].clone(),
            main,
            corrected,
        });
    }
    let config = field.config();
    Ok((
        MetricsReport {
            label: model_label(config.direction, config.color_correction),
            images,
            pose,
            trajectory_diameter: trajectory_diameter(&ref_train),
        },
        renders,
    ))
}
