use crate::autodiff::{Tensor, Value};
use crate::error::{Error, Result};

/// Number of basis functions for bands `ℓ = 0..=3`.
pub const SH_WIDTH: usize = 16;

// Real spherical-harmonic normalizations, Condon–Shortley phase omitted.
const C0: f64 = 0.282_094_791_773_878_14; // 1/(2√π)
const C1: f64 = 0.488_602_511_902_919_9; // √(3/4π)
const C2A: f64 = 1.092_548_430_592_079_2; // ½√(15/π)
const C2B: f64 = 0.315_391_565_252_520_05; // ¼√(5/π)
const C2C: f64 = 0.546_274_215_296_039_6; // ¼√(15/π)
const C3A: f64 = 0.590_043_589_926_643_5; // ¼√(35/2π)
const C3B: f64 = 2.890_611_442_640_554; // ½√(105/π)
const C3C: f64 = 0.457_045_799_464_465_8; // ¼√(21/2π)
const C3D: f64 = 0.373_176_332_590_115_4; // ¼√(7/π)
const C3E: f64 = 1.445_305_721_320_277; // ¼√(105/π)

/// Basis polynomials evaluated at `(x, y, z)` as given (no normalization).
///
/// Order: `ℓ` ascending, and within a band `m = -ℓ..=ℓ`.
pub fn sh_polynomials(x: f64, y: f64, z: f64) -> [f64; SH_WIDTH] {
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2A * x * y,
        C2A * y * z,
        C2B * (3.0 * zz - 1.0),
        C2A * x * z,
        C2C * (xx - yy),
        C3A * y * (3.0 * xx - yy),
        C3B * x * y * z,
        C3C * y * (5.0 * zz - 1.0),
        C3D * z * (5.0 * zz - 3.0),
        C3C * x * (5.0 * zz - 1.0),
        C3E * z * (xx - yy),
        C3A * x * (xx - 3.0 * yy),
    ]
}

/// Partial derivatives of [`sh_polynomials`] with respect to `(x, y, z)`.
fn sh_jacobian(x: f64, y: f64, z: f64) -> [[f64; 3]; SH_WIDTH] {
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        [0.0, 0.0, 0.0],
        [0.0, C1, 0.0],
        [0.0, 0.0, C1],
        [C1, 0.0, 0.0],
        [C2A * y, C2A * x, 0.0],
        [0.0, C2A * z, C2A * y],
        [0.0, 0.0, C2B * 6.0 * z],
        [C2A * z, 0.0, C2A * x],
        [C2C * 2.0 * x, -C2C * 2.0 * y, 0.0],
        [C3A * 6.0 * x * y, C3A * 3.0 * (xx - yy), 0.0],
        [C3B * y * z, C3B * x * z, C3B * x * y],
        [0.0, C3C * (5.0 * zz - 1.0), C3C * 10.0 * y * z],
        [0.0, 0.0, C3D * (15.0 * zz - 3.0)],
        [C3C * (5.0 * zz - 1.0), 0.0, C3C * 10.0 * x * z],
        [C3E * 2.0 * x * z, -C3E * 2.0 * y * z, C3E * (xx - yy)],
        [C3A * 3.0 * (xx - yy), -C3A * 6.0 * x * y, 0.0],
    ]
}

/// Real SH basis of a direction; non-unit directions are normalized first.
pub fn sh_encode(dir: [f64; 3]) -> Result<[f64; SH_WIDTH]> {
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sh_encode: direction {dir:?} has no orientation"
        )));
    }
    let [x, y, z] = if (norm - 1.0).abs() <= 1e-6 {
        dir
    } else {
        [dir[0] / norm, dir[1] / norm, dir[2] / norm]
    };
    Ok(sh_polynomials(x, y, z))
}

/// Row-wise SH basis as a differentiable operation: `n×3 → n×16`.
///
/// Rows are expected to be unit directions already (see
/// [`crate::autodiff::ops::normalize_rows`]); the polynomials are evaluated
/// as given so the Jacobian is exact for any input.
pub fn spherical_harmonics(dirs: &Value) -> Result<Value> {
    let (n, c) = dirs.shape();
    if c != 3 {
        return Err(Error::shape("spherical_harmonics", format!("expected n×3, got {n}×{c}")));
    }
    let mut out = Tensor::zeros(n, SH_WIDTH);
    {
        let d = dirs.data();
        for r in 0..n {
            let v = d.row_slice(r);
            out.row_slice_mut(r)
                .copy_from_slice(&sh_polynomials(v[0], v[1], v[2]));
        }
    }
    Ok(Value::from_op(
        "spherical_harmonics",
        out,
        vec![dirs.clone()],
        Box::new(move |g, p| {
            let d = p[0].data();
            let mut dx = Tensor::zeros(n, 3);
            for r in 0..n {
                let v = d.row_slice(r);
                let jac = sh_jacobian(v[0], v[1], v[2]);
                let gr = g.row_slice(r);
                let out = dx.row_slice_mut(r);
                for (k, row) in jac.iter().enumerate() {
                    for a in 0..3 {
                        out[a] += gr[k] * row[a];
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}
