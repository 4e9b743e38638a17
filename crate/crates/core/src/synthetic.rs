//! Analytic scenes of Gaussian density blobs, with ground-truth images from
//! fine quadrature.
//!
//! Blobs live in world space. Rendering follows the same NDC parameterization
//! as the learned field: density is integrated over NDC ray depth, so the
//! analytic field is a valid target for the model.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tensor, Value};
use crate::camera::{camera_direction, ndc_to_world, to_ndc, Pose, NDC_NEAR};
use crate::error::{Error, Result};
use crate::field::FieldOutput;
use crate::image::Image;
use crate::render::{RadianceField, LAST_DELTA};
use crate::scene::{ReferenceCamera, Scene};

/// An isotropic Gaussian density with a constant color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub center: [f64; 3],
    /// Standard deviation in world units.
    pub radius: f64,
    /// Density at the center, per unit NDC depth.
    pub peak: f64,
    pub color: [f64; 3],
}

/// Cameras on a spherical cap, looking ahead.
///
/// Camera `k` sits at yaw/pitch `ρ_k·(cos θ_k, sin θ_k)` on a sphere whose
/// center is `radius` in front of the origin, with `ρ_k ∝ √((k+½)/n)` and
/// golden-angle `θ_k`. The centers fill a disc rather than a line, so the
/// similarity alignment is well conditioned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub count: usize,
    pub radius: f64,
    /// Apex angle of the cap, in degrees.
    pub arc_degrees: f64,
    /// Uniform positional jitter amplitude.
    pub jitter: f64,
    /// Cameras look at `(0, 0, −look_depth)`; infinite keeps every view
    /// along −z.
    pub look_depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub blobs: Vec<Blob>,
    pub trajectory: Trajectory,
    pub width: usize,
    pub height: usize,
    /// `f = focal_scale·(W, H)`.
    pub focal_scale: f64,
    pub samples_per_ray: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Five blobs (four objects and a dim backdrop), 16 cameras at 64×64.
    fn default() -> Self {
        let blob = |center, radius, peak, color| Blob {
            center,
            radius,
            peak,
            color,
        };
        Self {
            blobs: vec![
                blob([0.0, 0.0, -3.0], 0.35, 50.0, [0.9, 0.3, 0.2]),
                blob([-0.32, 0.2, -2.4], 0.22, 80.0, [0.2, 0.75, 0.3]),
                blob([0.32, -0.18, -2.5], 0.22, 80.0, [0.25, 0.4, 0.95]),
                blob([0.15, 0.35, -3.6], 0.3, 50.0, [0.95, 0.85, 0.3]),
                blob([0.0, 0.0, -6.0], 2.2, 10.0, [0.35, 0.35, 0.45]),
            ],
            trajectory: Trajectory {
                count: 16,
                radius: 1.75,
                arc_degrees: 40.0,
                jitter: 0.01,
                look_depth: f64::INFINITY,
            },
            width: 64,
            height: 64,
            focal_scale: 1.0,
            samples_per_ray: 4096,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let t = &self.trajectory;
        if t.count == 0 || self.width == 0 || self.height == 0 || self.samples_per_ray < 2 {
            return Err(Error::InvalidArgument(
                "synthetic scene needs cameras, pixels and at least 2 samples per ray".into(),
            ));
        }
        if let Some(b) = self
            .blobs
            .iter()
            .find(|b| !(b.radius > 0.0 && b.peak >= 0.0 && b.center[2] < -NDC_NEAR))
        {
            return Err(Error::InvalidArgument(format!(
                "blob {b:?} needs positive radius, non-negative peak and depth beyond the near plane"
            )));
        }
        let (fx, fy) = self.focal();
        for (k, pose) in trajectory_poses(t, self.seed).iter().enumerate() {
            let rows = pose.rotation.transpose();
            for b in &self.blobs {
                let q = rows * (Vector3::from(b.center) - pose.translation);
                let inside = q.z < -NDC_NEAR
                    && (fx * q.x / -q.z).abs() < self.width as f64 / 2.0
                    && (fy * q.y / -q.z).abs() < self.height as f64 / 2.0;
                if !inside {
                    return Err(Error::InvalidArgument(format!(
                        "blob at {:?} is outside the view of camera {k}",
                        b.center
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn focal(&self) -> (f64, f64) {
        (
            self.focal_scale * self.width as f64,
            self.focal_scale * self.height as f64,
        )
    }
}

/// Camera-to-world rotation looking from `eye` at `target` with +y up.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Matrix3<f64> {
    let back = (eye - target).normalize();
    let right = Vector3::y().cross(&back).normalize();
    let up = back.cross(&right);
    Matrix3::from_columns(&[right, up, back])
}

/// Reference poses of the trajectory, deterministic in `seed`.
pub fn trajectory_poses(t: &Trajectory, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = t.arc_degrees.to_radians() / 2.0;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let pivot = Vector3::new(0.0, 0.0, -t.radius);
    let target = Vector3::new(0.0, 0.0, -t.look_depth);
    (0..t.count)
        .map(|k| {
            let rho = half * ((k as f64 + 0.5) / t.count as f64).sqrt();
            let theta = golden * k as f64;
            let (yaw, pitch) = (rho * theta.cos(), rho * theta.sin());
            let mut eye = pivot
                + t.radius
                    * Vector3::new(yaw.sin() * pitch.cos(), pitch.sin(), yaw.cos() * pitch.cos());
            for a in 0..3 {
                eye[a] += t.jitter * rng.gen_range(-1.0..1.0);
            }
            let rotation = if t.look_depth.is_finite() {
                look_at(eye, target)
            } else {
                Matrix3::identity()
            };
            Pose {
                rotation,
                translation: eye,
            }
        })
        .collect()
}

fn density_and_color(blobs: &[Blob], p: [f64; 3]) -> (f64, [f64; 3]) {
    let mut sigma = 0.0;
    let mut rgb = [0.0; 3];
    for b in blobs {
        let d2: f64 = (0..3).map(|k| (p[k] - b.center[k]).powi(2)).sum();
        let s = b.peak * (-d2 / (2.0 * b.radius * b.radius)).exp();
        sigma += s;
        for k in 0..3 {
            rgb[k] += s * b.color[k];
        }
    }
    if sigma > 0.0 {
        (sigma, rgb.map(|c| c / sigma))
    } else {
        (0.0, [0.0; 3])
    }
}

/// The blobs as a [`RadianceField`] over NDC points for one focal length.
#[derive(Debug, Clone)]
pub struct AnalyticField {
    pub blobs: Vec<Blob>,
    pub focal: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl AnalyticField {
    pub fn new(spec: &SyntheticSpec) -> Self {
        Self {
            blobs: spec.blobs.clone(),
            focal: spec.focal(),
            width: spec.width,
            height: spec.height,
        }
    }

    /// Density and color at an NDC point.
    pub fn at_ndc(&self, q: [f64; 3]) -> (f64, [f64; 3]) {
        if q[2] >= 1.0 {
            return (0.0, [0.0; 3]);
        }
        let p = ndc_to_world(q, self.focal, self.width, self.height, NDC_NEAR);
        density_and_color(&self.blobs, p)
    }
}

impl RadianceField for AnalyticField {
    fn query(&self, points: &Value, _dirs: &Value) -> Result<FieldOutput> {
        let pts = points.data();
        let n = pts.rows();
        let mut sigma = Tensor::zeros(n, 1);
        let mut color = Tensor::zeros(n, 3);
        for i in 0..n {
            let q = pts.row_slice(i);
            let (s, c) = self.at_ndc([q[0], q[1], q[2]]);
            sigma.set(i, 0, s);
            color.row_slice_mut(i).copy_from_slice(&c);
        }
        let color = Value::constant(color);
        Ok(FieldOutput {
            corrected: color.clone(),
            color,
            sigma: Value::constant(sigma),
            delta: None,
        })
    }
}

/// Midpoint quadrature of one NDC ray with `n` samples, composited
/// front to back against black.
pub fn quadrature(field: &AnalyticField, origin: [f64; 3], dir: [f64; 3], n: usize) -> [f64; 3] {
    let dt = 1.0 / n as f64;
    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    for i in 0..n {
        let t = (i as f64 + 0.5) * dt;
        let q = [0, 1, 2].map(|k| origin[k] + t * dir[k]);
        let (s, c) = field.at_ndc(q);
        let delta = if i + 1 < n { dt } else { LAST_DELTA };
        let a = 1.0 - (-s * delta).exp();
        for k in 0..3 {
            rgb[k] += trans * a * c[k];
        }
        trans *= 1.0 - a;
    }
    rgb
}

/// Ground-truth image of a camera by [`quadrature`] on every pixel.
pub fn render_reference(field: &AnalyticField, pose: &Pose, samples: usize) -> Result<Image> {
    let (w, h) = (field.width, field.height);
    let mut img = Image::new(w, h);
    let origin: [f64; 3] = pose.translation.into();
    for row in 0..h {
        for col in 0..w {
            let d = pose.rotation * Vector3::from(camera_direction((row, col), field.focal, w, h));
            let (o, nd) = to_ndc(origin, d.into(), field.focal, w, h, NDC_NEAR)?;
            img.set_pixel(row, col, quadrature(field, o, nd, samples));
        }
    }
    Ok(img)
}

/// Renders every camera of the trajectory and returns the scene with its
/// reference cameras. Bit-identical for equal specs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Scene> {
    spec.validate()?;
    let field = AnalyticField::new(spec);
    let poses = trajectory_poses(&spec.trajectory, spec.seed);
    let images = poses
        .iter()
        .map(|p| render_reference(&field, p, spec.samples_per_ray))
        .collect::<Result<Vec<_>>>()?;
    let names = (0..poses.len()).map(|i| format!("{i:03}.png")).collect();
    let reference = poses
        .iter()
        .map(|&pose| ReferenceCamera {
            pose,
            focal: spec.focal(),
        })
        .collect();
    Scene::new(names, images, Some(reference))
}
