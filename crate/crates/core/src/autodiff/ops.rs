//! Differentiable primitives.
//!
//! Shapes are checked eagerly; a mismatch names the primitive and both
//! shapes. Elementwise binaries require identical shapes (no broadcasting).

use super::tensor::{gemm, Tensor};
use super::value::Value;
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Value, b: &Value) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn unary(
    op: &'static str,
    x: &Value,
    f: impl Fn(f64) -> f64,
    df: fn(f64, f64) -> f64,
) -> Value {
    let out = x.data().map(f);
    let y = out.clone();
    Value::from_op(
        op,
        out,
        vec![x.clone()],
        Box::new(move |g, p| {
            let xd = p[0].data();
            let mut dx = g.clone();
            for ((d, &xi), &yi) in dx
                .as_mut_slice()
                .iter_mut()
                .zip(xd.as_slice())
                .zip(y.as_slice())
            {
                *d *= df(xi, yi);
            }
            vec![Some(dx)]
        }),
    )
}

pub fn relu(x: &Value) -> Value {
    unary("relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
}

/// Logistic function, evaluated in the branch that never exponentiates a
/// positive argument.
#[inline]
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Value) -> Value {
    unary("sigmoid", x, stable_sigmoid, |_, y| y * (1.0 - y))
}

pub fn exp(x: &Value) -> Value {
    unary("exp", x, f64::exp, |_, y| y)
}

/// Elementwise clamp into `[lo, hi]`; the gradient is passed through only
/// strictly inside the interval.
pub fn clamp(x: &Value, lo: f64, hi: f64) -> Value {
    let out = x.data().map(|v| v.clamp(lo, hi));
    Value::from_op(
        "clamp",
        out,
        vec![x.clone()],
        Box::new(move |g, p| {
            let xd = p[0].data();
            let mut dx = g.clone();
            for (d, &xi) in dx.as_mut_slice().iter_mut().zip(xd.as_slice()) {
                if !(xi > lo && xi < hi) {
                    *d = 0.0;
                }
            }
            vec![Some(dx)]
        }),
    )
}

pub fn scale(x: &Value, k: f64) -> Value {
    let out = x.data().map(|v| v * k);
    Value::from_op(
        "scale",
        out,
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(g.map(|v| v * k))]),
    )
}

pub fn add(a: &Value, b: &Value) -> Result<Value> {
    same_shape("add", a, b)?;
    let mut out = a.data().clone();
    out.add_assign(&b.data());
    Ok(Value::from_op(
        "add",
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, p| {
            vec![
                p[0].requires_grad().then(|| g.clone()),
                p[1].requires_grad().then(|| g.clone()),
            ]
        }),
    ))
}

pub fn sub(a: &Value, b: &Value) -> Result<Value> {
    same_shape("sub", a, b)?;
    let mut out = a.data().clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.data().as_slice()) {
        *o -= v;
    }
    Ok(Value::from_op(
        "sub",
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, p| {
            vec![
                p[0].requires_grad().then(|| g.clone()),
                p[1].requires_grad().then(|| g.map(|v| -v)),
            ]
        }),
    ))
}

pub fn mul(a: &Value, b: &Value) -> Result<Value> {
    same_shape("mul", a, b)?;
    let mut out = a.data().clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.data().as_slice()) {
        *o *= v;
    }
    Ok(Value::from_op(
        "mul",
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, p| {
            let prod = |other: &Value| {
                let mut d = g.clone();
                for (x, &o) in d.as_mut_slice().iter_mut().zip(other.data().as_slice()) {
                    *x *= o;
                }
                d
            };
            vec![
                p[0].requires_grad().then(|| prod(&p[1])),
                p[1].requires_grad().then(|| prod(&p[0])),
            ]
        }),
    ))
}

/// `x · wᵀ + b` for `x: n×in`, `w: out×in`, `b: 1×out`.
pub fn affine(x: &Value, w: &Value, b: &Value) -> Result<Value> {
    let (n, din) = x.shape();
    let (dout, win) = w.shape();
    if win != din || b.shape() != (1, dout) {
        return Err(Error::shape(
            "affine",
            format!(
                "x {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ),
        ));
    }
    let mut out = Tensor::zeros(n, dout);
    {
        let bd = b.data();
        for r in 0..n {
            out.row_slice_mut(r).copy_from_slice(bd.as_slice());
        }
        gemm(
            n,
            din,
            dout,
            x.data().as_slice(),
            (din as isize, 1),
            w.data().as_slice(),
            (1, din as isize),
            1.0,
            out.as_mut_slice(),
        );
    }
    Ok(Value::from_op(
        "affine",
        out,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g, p| {
            let dx = p[0].requires_grad().then(|| {
                let mut dx = Tensor::zeros(n, din);
                gemm(
                    n,
                    dout,
                    din,
                    g.as_slice(),
                    (dout as isize, 1),
                    p[1].data().as_slice(),
                    (din as isize, 1),
                    0.0,
                    dx.as_mut_slice(),
                );
                dx
            });
            let dw = p[1].requires_grad().then(|| {
                let mut dw = Tensor::zeros(dout, din);
                gemm(
                    dout,
                    n,
                    din,
                    g.as_slice(),
                    (1, dout as isize),
                    p[0].data().as_slice(),
                    (din as isize, 1),
                    0.0,
                    dw.as_mut_slice(),
                );
                dw
            });
            let db = p[2].requires_grad().then(|| {
                let mut db = Tensor::zeros(1, dout);
                for r in 0..n {
                    for (d, &v) in db.as_mut_slice().iter_mut().zip(g.row_slice(r)) {
                        *d += v;
                    }
                }
                db
            });
            vec![dx, dw, db]
        }),
    ))
}

/// Concatenates along the feature (column) axis.
pub fn concat_cols(parts: &[&Value]) -> Result<Value> {
    let Some(first) = parts.first() else {
        return Err(Error::shape("concat_cols", "no inputs"));
    };
    let n = first.shape().0;
    if let Some(bad) = parts.iter().find(|p| p.shape().0 != n) {
        return Err(Error::shape(
            "concat_cols",
            format!("row counts {} vs {}", n, bad.shape().0),
        ));
    }
    let widths: Vec<usize> = parts.iter().map(|p| p.shape().1).collect();
    let total: usize = widths.iter().sum();
    let mut out = Tensor::zeros(n, total);
    let mut offset = 0;
    for (part, &w) in parts.iter().zip(&widths) {
        let d = part.data();
        for r in 0..n {
            out.row_slice_mut(r)[offset..offset + w].copy_from_slice(d.row_slice(r));
        }
        offset += w;
    }
    Ok(Value::from_op(
        "concat_cols",
        out,
        parts.iter().map(|p| (*p).clone()).collect(),
        Box::new(move |g, p| {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(widths.len());
            for (parent, &w) in p.iter().zip(&widths) {
                if parent.requires_grad() {
                    let mut d = Tensor::zeros(n, w);
                    for r in 0..n {
                        d.row_slice_mut(r)
                            .copy_from_slice(&g.row_slice(r)[offset..offset + w]);
                    }
                    grads.push(Some(d));
                } else {
                    grads.push(None);
                }
                offset += w;
            }
            grads
        }),
    ))
}

/// Columns `start..end`.
pub fn slice_cols(x: &Value, start: usize, end: usize) -> Result<Value> {
    let (n, c) = x.shape();
    if start >= end || end > c {
        return Err(Error::shape(
            "slice_cols",
            format!("range {start}..{end} of {c} columns"),
        ));
    }
    let w = end - start;
    let mut out = Tensor::zeros(n, w);
    {
        let d = x.data();
        for r in 0..n {
            out.row_slice_mut(r)
                .copy_from_slice(&d.row_slice(r)[start..end]);
        }
    }
    Ok(Value::from_op(
        "slice_cols",
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut d = Tensor::zeros(n, c);
            for r in 0..n {
                d.row_slice_mut(r)[start..end].copy_from_slice(g.row_slice(r));
            }
            vec![Some(d)]
        }),
    ))
}

/// Row `i` as a `1×c` value; the gradient scatters back into that row.
pub fn select_row(x: &Value, i: usize) -> Result<Value> {
    let (n, c) = x.shape();
    if i >= n {
        return Err(Error::shape("select_row", format!("row {i} of {n}")));
    }
    let out = Tensor::from_vec(1, c, x.data().row_slice(i).to_vec());
    Ok(Value::from_op(
        "select_row",
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut d = Tensor::zeros(n, c);
            d.row_slice_mut(i).copy_from_slice(g.as_slice());
            vec![Some(d)]
        }),
    ))
}

/// Repeats every row `k` times consecutively: `r×c → (r·k)×c`.
pub fn repeat_rows(x: &Value, k: usize) -> Result<Value> {
    let (n, c) = x.shape();
    if k == 0 {
        return Err(Error::shape("repeat_rows", "repeat count 0"));
    }
    let mut out = Tensor::zeros(n * k, c);
    {
        let d = x.data();
        for r in 0..n {
            for j in 0..k {
                out.row_slice_mut(r * k + j).copy_from_slice(d.row_slice(r));
            }
        }
    }
    Ok(Value::from_op(
        "repeat_rows",
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut d = Tensor::zeros(n, c);
            for r in 0..n {
                let dst = d.row_slice_mut(r);
                for j in 0..k {
                    for (a, &b) in dst.iter_mut().zip(g.row_slice(r * k + j)) {
                        *a += b;
                    }
                }
            }
            vec![Some(d)]
        }),
    ))
}

/// Scales every row to unit Euclidean length. Zero rows are rejected.
pub fn normalize_rows(x: &Value) -> Result<Value> {
    let (n, c) = x.shape();
    let mut out = x.data().clone();
    let mut norms = vec![0.0; n];
    for r in 0..n {
        let row = out.row_slice_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "normalize_rows: row {r} has norm {norm}"
            )));
        }
        row.iter_mut().for_each(|v| *v /= norm);
        norms[r] = norm;
    }
    let y = out.clone();
    Ok(Value::from_op(
        "normalize_rows",
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            // d(x/|x|) = (I - y yᵀ) / |x|
            let mut d = Tensor::zeros(n, c);
            for r in 0..n {
                let yr = y.row_slice(r);
                let gr = g.row_slice(r);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((o, &gi), &yi) in d.row_slice_mut(r).iter_mut().zip(gr).zip(yr) {
                    *o = (gi - dot * yi) / norms[r];
                }
            }
            vec![Some(d)]
        }),
    ))
}

pub fn sum(x: &Value) -> Value {
    let (n, c) = x.shape();
    let s = x.data().sum();
    Value::from_op(
        "sum",
        Tensor::scalar(s),
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(Tensor::full(n, c, g.item()))]),
    )
}

pub fn mean(x: &Value) -> Value {
    let (n, c) = x.shape();
    let count = (n * c).max(1) as f64;
    let s = x.data().sum() / count;
    Value::from_op(
        "mean",
        Tensor::scalar(s),
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(Tensor::full(n, c, g.item() / count))]),
    )
}

/// Squared L2 norm of all elements.
pub fn sum_squares(x: &Value) -> Value {
    let s: f64 = x.data().as_slice().iter().map(|v| v * v).sum();
    Value::from_op(
        "sum_squares",
        Tensor::scalar(s),
        vec![x.clone()],
        Box::new(|g, p| {
            let k = 2.0 * g.item();
            vec![Some(p[0].data().map(|v| k * v))]
        }),
    )
}

/// Mean of squared elements; the per-element mean of `‖·‖²`.
pub fn mean_squares(x: &Value) -> Value {
    let (n, c) = x.shape();
    let count = (n * c).max(1) as f64;
    scale(&sum_squares(x), 1.0 / count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::value::{backward, detach};

    fn v(rows: &[&[f64]]) -> Value {
        let c = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Value::param(Tensor::from_vec(rows.len(), c, data))
    }

    #[test]
    fn relu_sigmoid_affine_examples() {
        let x = v(&[&[-1.0, 0.0, 2.0]]);
        assert_eq!(relu(&x).data().as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(&v(&[&[0.0]])).item(), 0.5);

        let w = Value::constant(Tensor::identity(2));
        let b = Value::constant(Tensor::row(&[1.0, 1.0]));
        let x = Value::constant(Tensor::row(&[2.0, 3.0]));
        assert_eq!(affine(&x, &w, &b).unwrap().data().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_magnitudes() {
        assert_eq!(stable_sigmoid(800.0), 1.0);
        assert_eq!(stable_sigmoid(-800.0), 0.0);
        assert!(stable_sigmoid(-40.0) > 0.0);
    }

    #[test]
    fn shape_mismatch_names_the_primitive() {
        let a = v(&[&[1.0, 2.0]]);
        let b = v(&[&[1.0, 2.0, 3.0]]);
        let err = add(&a, &b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("(1, 2)") && err.contains("(1, 3)"));
        let w = v(&[&[1.0, 2.0, 3.0]]);
        let bias = v(&[&[0.0]]);
        let err = affine(&a, &w, &bias).unwrap_err().to_string();
        assert!(err.starts_with("affine"), "{err}");
    }

    #[test]
    fn square_gradient() {
        let x = v(&[&[3.0]]);
        let loss = mul(&x, &x).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap().item(), 6.0);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let x = v(&[&[0.3, -1.2, 4.0]]);
        let y = v(&[&[0.3, -1.2, 4.0]]);
        let loss = mean_squares(&sub(&x, &y).unwrap());
        backward(&loss).unwrap();
        assert!(x.grad().unwrap().as_slice().iter().all(|&g| g == 0.0));
        assert!(y.grad().unwrap().as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = v(&[&[1.0, 2.0]]);
        assert!(matches!(
            backward(&x),
            Err(Error::NonScalarLoss { rows: 1, cols: 2 })
        ));
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = v(&[&[2.0]]);
        let d = detach(&x);
        assert!(!d.requires_grad() && !d.has_parents());
        let loss = mul(&d, &d).unwrap();
        backward(&loss).unwrap();
        assert!(x.grad().is_none());

        let y = add(&x, &detach(&x)).unwrap();
        backward(&sum(&y)).unwrap();
        assert_eq!(x.grad().unwrap().item(), 1.0);
    }

    #[test]
    fn shared_value_accumulates_both_paths() {
        let x = v(&[&[1.5, -2.0]]);
        let y = add(&scale(&x, 3.0), &mul(&x, &x).unwrap()).unwrap();
        backward(&sum(&y)).unwrap();
        assert_eq!(x.grad().unwrap().as_slice(), &[3.0 + 3.0, 3.0 - 4.0]);
    }

    #[test]
    fn repeat_and_select_scatter_back() {
        let x = v(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let r = repeat_rows(&x, 3).unwrap();
        assert_eq!(r.shape(), (6, 2));
        assert_eq!(r.data().row_slice(4), &[3.0, 4.0]);
        let s = select_row(&x, 1).unwrap();
        let loss = add(&sum(&r), &sum(&s)).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap().as_slice(), &[3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn clamp_passes_gradient_only_inside() {
        let x = v(&[&[-0.5, 0.5, 1.5]]);
        let y = clamp(&x, 0.0, 1.0);
        assert_eq!(y.data().as_slice(), &[0.0, 0.5, 1.0]);
        backward(&sum(&y)).unwrap();
        assert_eq!(x.grad().unwrap().as_slice(), &[0.0, 1.0, 0.0]);
    }
}
