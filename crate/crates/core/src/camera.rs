//! Learnable pinhole cameras, ray generation and the NDC warp.
//!
//! Conventions: poses are camera-to-world, the camera looks along its local
//! −z with +y up, and pixel `(row, col)` is sampled at its center
//! `(row + 0.5, col + 0.5)` with rows growing downwards. Focal lengths are
//! `f_x = s_x²·W`, `f_y = s_y²·H`.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::autodiff::{ops, Tensor, Value};
use crate::error::{Error, Result};

/// Near plane used by the NDC warp.
pub const NDC_NEAR: f64 = 1.0;

/// Below this angle the Rodrigues coefficients use their Taylor series.
const SMALL_ANGLE: f64 = 1e-2;

fn skew(v: [f64; 3]) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// `(sinθ/θ, (1−cosθ)/θ², a′(θ)/θ, b′(θ)/θ)` for `θ = |r|`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SMALL_ANGLE {
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + t2 / 30.0,
            -1.0 / 12.0 + t2 / 180.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let half = (0.5 * theta).sin();
        let one_minus_cos = 2.0 * half * half;
        (
            s / theta,
            one_minus_cos / t2,
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * one_minus_cos) / (t2 * t2),
        )
    }
}

/// Rotation matrix of an axis-angle vector:
/// `R = I + sinθ·K + (1−cosθ)·K²` with `K` the unit-axis cross-product matrix.
pub fn rodrigues(r: [f64; 3]) -> Matrix3<f64> {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let (a, b, _, _) = rodrigues_coefficients(theta);
    let k = skew(r);
    Matrix3::identity() + k * a + k * k * b
}

/// `∂R/∂r_k` for `k = 0, 1, 2`.
fn rodrigues_jacobian(r: [f64; 3]) -> [Matrix3<f64>; 3] {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let (a, b, da, db) = rodrigues_coefficients(theta);
    let k = skew(r);
    let k2 = k * k;
    std::array::from_fn(|i| {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let ek = skew(e);
        k * (da * r[i]) + ek * a + k2 * (db * r[i]) + (ek * k + k * ek) * b
    })
}

/// Axis-angle vector of a rotation matrix (inverse of [`rodrigues`]).
pub fn axis_angle(rotation: &Matrix3<f64>) -> [f64; 3] {
    let v = Rotation3::from_matrix(rotation).scaled_axis();
    [v.x, v.y, v.z]
}

/// Differentiable [`rodrigues`]: `1×3 → 3×3`.
pub fn rotation_from_axis_angle(r: &Value) -> Result<Value> {
    if r.shape() != (1, 3) {
        return Err(Error::shape("rodrigues", format!("expected 1×3, got {:?}", r.shape())));
    }
    let rv: [f64; 3] = r.data().as_slice().try_into().expect("1×3");
    let m = rodrigues(rv);
    let out = Tensor::from_vec(3, 3, (0..9).map(|i| m[(i / 3, i % 3)]).collect());
    Ok(Value::from_op(
        "rodrigues",
        out,
        vec![r.clone()],
        Box::new(move |g, _| {
            let jac = rodrigues_jacobian(rv);
            let grad = jac.map(|dm| (0..9).map(|i| dm[(i / 3, i % 3)] * g.as_slice()[i]).sum());
            vec![Some(Tensor::row(&grad))]
        }),
    ))
}

/// A plain camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Row-major `[R | t]`.
    pub fn to_rows(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_rows(rows: &[f64; 12]) -> Self {
        Self {
            rotation: Matrix3::new(
                rows[0], rows[1], rows[2], rows[4], rows[5], rows[6], rows[8], rows[9], rows[10],
            ),
            translation: Vector3::new(rows[3], rows[7], rows[11]),
        }
    }
}

/// Pixel coordinates `(row, col)`.
pub type Pixel = (usize, usize);

/// Rays of one camera; `origins` and `directions` are `m×3` world vectors.
#[derive(Debug, Clone)]
pub struct Rays {
    pub origins: Value,
    pub directions: Value,
}

/// Learnable pinhole cameras sharing one image size.
///
/// Rotations and translations are stacked `n×3` parameters so every camera
/// lives in one optimizer slot. Focal scales are `1×2` (shared by the scene)
/// or `n×2` (per camera).
#[derive(Debug, Clone)]
pub struct Cameras {
    pub rotations: Value,
    pub translations: Value,
    pub focal_scales: Value,
    width: usize,
    height: usize,
}

impl Cameras {
    /// `count` cameras at the origin looking along −z with `f = (W, H)`.
    pub fn at_origin(count: usize, width: usize, height: usize, per_camera_focal: bool) -> Self {
        let focal_rows = if per_camera_focal { count } else { 1 };
        Self {
            rotations: Value::param(Tensor::zeros(count, 3)),
            translations: Value::param(Tensor::zeros(count, 3)),
            focal_scales: Value::param(Tensor::full(focal_rows, 2, 1.0)),
            width,
            height,
        }
    }

    /// Cameras initialized at the given poses and shared focal lengths.
    pub fn from_poses(poses: &[Pose], focal: (f64, f64), width: usize, height: usize) -> Self {
        let mut rot = Tensor::zeros(poses.len(), 3);
        let mut trans = Tensor::zeros(poses.len(), 3);
        for (i, p) in poses.iter().enumerate() {
            rot.row_slice_mut(i).copy_from_slice(&axis_angle(&p.rotation));
            trans.row_slice_mut(i).copy_from_slice(p.translation.as_slice());
        }
        let scales = [
            (focal.0 / width as f64).sqrt(),
            (focal.1 / height as f64).sqrt(),
        ];
        Self {
            rotations: Value::param(rot),
            translations: Value::param(trans),
            focal_scales: Value::param(Tensor::row(&scales)),
            width,
            height,
        }
    }

    pub fn from_parts(
        rotations: Tensor,
        translations: Tensor,
        focal_scales: Tensor,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let n = rotations.rows();
        if rotations.cols() != 3
            || translations.shape() != (n, 3)
            || focal_scales.cols() != 2
            || !(focal_scales.rows() == 1 || focal_scales.rows() == n)
        {
            return Err(Error::shape(
                "cameras",
                format!(
                    "rotations {:?}, translations {:?}, focal scales {:?}",
                    rotations.shape(),
                    translations.shape(),
                    focal_scales.shape()
                ),
            ));
        }
        Ok(Self {
            rotations: Value::param(rotations),
            translations: Value::param(translations),
            focal_scales: Value::param(focal_scales),
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.rotations.shape().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn per_camera_focal(&self) -> bool {
        self.focal_scales.shape().0 > 1
    }

    /// Rotation, translation and focal-scale parameters.
    pub fn parameters(&self) -> Vec<Value> {
        vec![
            self.rotations.clone(),
            self.translations.clone(),
            self.focal_scales.clone(),
        ]
    }

    /// Rotation and translation only.
    pub fn pose_parameters(&self) -> Vec<Value> {
        vec![self.rotations.clone(), self.translations.clone()]
    }

    fn focal_row(&self, index: usize) -> usize {
        if self.per_camera_focal() {
            index
        } else {
            0
        }
    }

    /// `(f_x, f_y)` in pixels.
    pub fn focal(&self, index: usize) -> (f64, f64) {
        let s = self.focal_scales.data();
        let row = s.row_slice(self.focal_row(index));
        (
            row[0] * row[0] * self.width as f64,
            row[1] * row[1] * self.height as f64,
        )
    }

    pub fn pose(&self, index: usize) -> Pose {
        let r: [f64; 3] = self.rotations.data().row_slice(index).try_into().expect("n×3");
        let t = self.translations.data().row_slice(index).to_vec();
        Pose {
            rotation: rodrigues(r),
            translation: Vector3::new(t[0], t[1], t[2]),
        }
    }

    pub fn poses(&self) -> Vec<Pose> {
        (0..self.len()).map(|i| self.pose(i)).collect()
    }

    /// Focal-scale row of camera `index` as a graph value.
    pub fn focal_scale_value(&self, index: usize) -> Result<Value> {
        ops::select_row(&self.focal_scales, self.focal_row(index))
    }

    /// World-space rays through `pixels` of camera `index`, differentiable in
    /// the camera's rotation, translation and focal scales.
    pub fn rays(&self, index: usize, pixels: &[Pixel]) -> Result<Rays> {
        if pixels.is_empty() {
            return Err(Error::InvalidArgument("no pixels requested".into()));
        }
        if index >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "camera {index} of {}",
                self.len()
            )));
        }
        if let Some(&(r, c)) = pixels
            .iter()
            .find(|&&(r, c)| r >= self.height || c >= self.width)
        {
            return Err(Error::InvalidArgument(format!(
                "pixel ({r}, {c}) outside {}×{} image",
                self.height, self.width
            )));
        }
        let rotation = rotation_from_axis_angle(&ops::select_row(&self.rotations, index)?)?;
        let scale = self.focal_scale_value(index)?;
        let directions = pinhole_directions(&rotation, &scale, pixels, self.width, self.height)?;
        let origin = ops::select_row(&self.translations, index)?;
        let origins = ops::repeat_rows(&origin, pixels.len())?;
        Ok(Rays {
            origins,
            directions,
        })
    }
}

/// Camera-space direction of a pixel center for focal `(f_x, f_y)`.
pub fn camera_direction(pixel: Pixel, focal: (f64, f64), width: usize, height: usize) -> [f64; 3] {
    let (row, col) = pixel;
    [
        (col as f64 + 0.5 - width as f64 / 2.0) / focal.0,
        -(row as f64 + 0.5 - height as f64 / 2.0) / focal.1,
        -1.0,
    ]
}

/// `R · d_cam(pixel)` for every pixel: `m×3`, differentiable in the `3×3`
/// rotation and the `1×2` focal scales.
pub fn pinhole_directions(
    rotation: &Value,
    focal_scale: &Value,
    pixels: &[Pixel],
    width: usize,
    height: usize,
) -> Result<Value> {
    if rotation.shape() != (3, 3) || focal_scale.shape() != (1, 2) {
        return Err(Error::shape(
            "pinhole_directions",
            format!("rotation {:?}, focal scale {:?}", rotation.shape(), focal_scale.shape()),
        ));
    }
    let (w, h) = (width as f64, height as f64);
    let s = focal_scale.data().as_slice().to_vec();
    let offsets: Vec<(f64, f64)> = pixels
        .iter()
        .map(|&(r, c)| (c as f64 + 0.5 - w / 2.0, r as f64 + 0.5 - h / 2.0))
        .collect();
    let cam_dirs = |sx: f64, sy: f64| -> Vec<[f64; 3]> {
        offsets
            .iter()
            .map(|&(u, v)| [u / (sx * sx * w), -v / (sy * sy * h), -1.0])
            .collect()
    };
    let local = cam_dirs(s[0], s[1]);
    let m = pixels.len();
    let mut out = Tensor::zeros(m, 3);
    {
        let rd = rotation.data();
        let rm = rd.as_slice();
        for (i, d) in local.iter().enumerate() {
            let row = out.row_slice_mut(i);
            for a in 0..3 {
                row[a] = rm[a * 3] * d[0] + rm[a * 3 + 1] * d[1] + rm[a * 3 + 2] * d[2];
            }
        }
    }
    Ok(Value::from_op(
        "pinhole_directions",
        out,
        vec![rotation.clone(), focal_scale.clone()],
        Box::new(move |g, p| {
            let rd = p[0].data();
            let rm = rd.as_slice();
            let mut d_rot = Tensor::zeros(3, 3);
            let (mut dsx, mut dsy) = (0.0, 0.0);
            for (i, d) in local.iter().enumerate() {
                let gi = g.row_slice(i);
                for a in 0..3 {
                    for b in 0..3 {
                        d_rot.as_mut_slice()[a * 3 + b] += gi[a] * d[b];
                    }
                }
                // d_cam gradient = Rᵀ g
                let dcx = rm[0] * gi[0] + rm[3] * gi[1] + rm[6] * gi[2];
                let dcy = rm[1] * gi[0] + rm[4] * gi[1] + rm[7] * gi[2];
                let (u, v) = offsets[i];
                dsx += dcx * (-2.0 * u / (s[0].powi(3) * w));
                dsy += dcy * (2.0 * v / (s[1].powi(3) * h));
            }
            vec![Some(d_rot), Some(Tensor::row(&[dsx, dsy]))]
        }),
    ))
}

/// Rays warped into normalized device coordinates.
///
/// Origins are first moved onto the plane `z = −near`; the warp then maps the
/// frustum to `[−1,1]³` with the near plane at `z = −1` and infinite depth at
/// `z = +1`. Returns `(origin, direction)` such that NDC depth `t ∈ [0,1]`
/// spans near plane to infinity.
pub fn to_ndc(
    origin: [f64; 3],
    direction: [f64; 3],
    focal: (f64, f64),
    width: usize,
    height: usize,
    near: f64,
) -> Result<([f64; 3], [f64; 3])> {
    let [ox, oy, oz] = origin;
    let [dx, dy, dz] = direction;
    if dz.abs() < 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "ray direction {direction:?} is parallel to the image plane"
        )));
    }
    let tn = -(near + oz) / dz;
    let (u, v) = (ox + tn * dx, oy + tn * dy);
    let bx = 2.0 * focal.0 / width as f64;
    let by = 2.0 * focal.1 / height as f64;
    Ok((
        [bx * u / near, by * v / near, -1.0],
        [-bx * (dx / dz + u / near), -by * (dy / dz + v / near), 2.0],
    ))
}

/// NDC image of a world point with `z < 0`.
pub fn world_to_ndc(p: [f64; 3], focal: (f64, f64), width: usize, height: usize, near: f64) -> [f64; 3] {
    let bx = 2.0 * focal.0 / width as f64;
    let by = 2.0 * focal.1 / height as f64;
    [-bx * p[0] / p[2], -by * p[1] / p[2], 1.0 + 2.0 * near / p[2]]
}

/// Inverse of [`world_to_ndc`] for NDC `z < 1`.
pub fn ndc_to_world(q: [f64; 3], focal: (f64, f64), width: usize, height: usize, near: f64) -> [f64; 3] {
    let bx = 2.0 * focal.0 / width as f64;
    let by = 2.0 * focal.1 / height as f64;
    let z = 2.0 * near / (q[2] - 1.0);
    [-q[0] * z / bx, -q[1] * z / by, z]
}

/// Differentiable [`to_ndc`] over `m×3` origins and directions with focal
/// lengths from the `1×2` focal scales. Output is `m×6`: NDC origin then NDC
/// direction.
pub fn ndc_rays(origins: &Value, directions: &Value, focal_scale: &Value, near: f64) -> Result<Value> {
    let (m, c) = origins.shape();
    if c != 3 || directions.shape() != (m, 3) || focal_scale.shape() != (1, 2) {
        return Err(Error::shape(
            "ndc_rays",
            format!(
                "origins {:?}, directions {:?}, focal scale {:?}",
                origins.shape(),
                directions.shape(),
                focal_scale.shape()
            ),
        ));
    }
    let s = focal_scale.data().as_slice().to_vec();
    // f = s²·W, so the warp's 2f/W factors reduce to 2s².
    let (bx, by) = (2.0 * s[0] * s[0], 2.0 * s[1] * s[1]);
    let mut out = Tensor::zeros(m, 6);
    {
        let o = origins.data();
        let d = directions.data();
        for i in 0..m {
            let (oi, di) = (o.row_slice(i), d.row_slice(i));
            if di[2].abs() < 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "ray {i} direction {di:?} is parallel to the image plane"
                )));
            }
            let tn = -(near + oi[2]) / di[2];
            let (u, v) = (oi[0] + tn * di[0], oi[1] + tn * di[1]);
            out.row_slice_mut(i).copy_from_slice(&[
                bx * u / near,
                by * v / near,
                -1.0,
                -bx * (di[0] / di[2] + u / near),
                -by * (di[1] / di[2] + v / near),
                2.0,
            ]);
        }
    }
    Ok(Value::from_op(
        "ndc_rays",
        out,
        vec![origins.clone(), directions.clone(), focal_scale.clone()],
        Box::new(move |g, p| {
            let o = p[0].data();
            let d = p[1].data();
            let mut go = Tensor::zeros(m, 3);
            let mut gd = Tensor::zeros(m, 3);
            let (mut gsx, mut gsy) = (0.0, 0.0);
            for i in 0..m {
                let (oi, di, gi) = (o.row_slice(i), d.row_slice(i), g.row_slice(i));
                let (ox, oy, oz) = (oi[0], oi[1], oi[2]);
                let (dx, dy, dz) = (di[0], di[1], di[2]);
                let tn = -(near + oz) / dz;
                let (u, v) = (ox + tn * dx, oy + tn * dy);
                let (g_ox, g_oy, g_dx, g_dy) = (gi[0], gi[1], gi[3], gi[4]);
                let gu = bx / near * g_ox - bx / near * g_dx;
                let gv = by / near * g_oy - by / near * g_dy;
                let k = near + oz;
                go.row_slice_mut(i)
                    .copy_from_slice(&[gu, gv, -gu * dx / dz - gv * dy / dz]);
                gd.row_slice_mut(i).copy_from_slice(&[
                    gu * tn - g_dx * bx / dz,
                    gv * tn - g_dy * by / dz,
                    (gu * dx + gv * dy) * k / (dz * dz)
                        + (g_dx * bx * dx + g_dy * by * dy) / (dz * dz),
                ]);
                gsx += 4.0 * s[0] * (g_ox * u / near - g_dx * (dx / dz + u / near));
                gsy += 4.0 * s[1] * (g_oy * v / near - g_dy * (dy / dz + v / near));
            }
            vec![Some(go), Some(gd), Some(Tensor::row(&[gsx, gsy]))]
        }),
    ))
}
