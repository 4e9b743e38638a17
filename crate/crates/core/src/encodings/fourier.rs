use crate::autodiff::{Tensor, Value};

/// Output width of the Fourier features of a `dim`-dimensional input.
pub fn fourier_width(dim: usize, degree: usize) -> usize {
    2 * degree * dim
}

/// `γ(x)` for one vector.
///
/// Layout, per input coordinate in order:
/// `sin(2⁰x), cos(2⁰x), sin(2¹x), cos(2¹x), …, sin(2^{L-1}x), cos(2^{L-1}x)`.
pub fn fourier_encode(x: &[f64], degree: usize) -> Vec<f64> {
    assert!(degree >= 1, "Fourier degree must be at least 1");
    let mut out = Vec::with_capacity(fourier_width(x.len(), degree));
    for &v in x {
        let mut freq = 1.0;
        for _ in 0..degree {
            let (s, c) = (freq * v).sin_cos();
            out.push(s);
            out.push(c);
            freq *= 2.0;
        }
    }
    out
}

/// Row-wise [`fourier_encode`] as a differentiable operation: `n×d → n×2Ld`.
pub fn fourier(x: &Value, degree: usize) -> Value {
    assert!(degree >= 1, "Fourier degree must be at least 1");
    let (n, d) = x.shape();
    let width = fourier_width(d, degree);
    let mut out = Tensor::zeros(n, width);
    {
        let xd = x.data();
        for r in 0..n {
            out.row_slice_mut(r)
                .copy_from_slice(&fourier_encode(xd.row_slice(r), degree));
        }
    }
    let enc = out.clone();
    Value::from_op(
        "fourier",
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            // d sin(f x) = f cos(f x), d cos(f x) = -f sin(f x)
            let mut dx = Tensor::zeros(n, d);
            for r in 0..n {
                let e = enc.row_slice(r);
                let gr = g.row_slice(r);
                for j in 0..d {
                    let mut acc = 0.0;
                    let mut freq = 1.0;
                    for k in 0..degree {
                        let base = 2 * (j * degree + k);
                        acc += freq * (gr[base] * e[base + 1] - gr[base + 1] * e[base]);
                        freq *= 2.0;
                    }
                    dx.set(r, j, acc);
                }
            }
            vec![Some(dx)]
        }),
    )
}
