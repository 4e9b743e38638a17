use std::time::{Duration, Instant};

use hashcc::autodiff::{backward, detach, ops, Tensor, Value};
use hashcc::encodings::{fourier, spherical_harmonics};
use hashcc::gradcheck::{check_gradients, run_all, suites, GradCheckOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

fn weighted(out: &Value, seed: u64) -> Value {
    let (r, c) = out.shape();
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), r, c, -1.0, 1.0);
    ops::sum(&ops::mul(out, &Value::constant(w)).unwrap())
}

/// The reference step: a single central difference, no retries.
fn reference() -> GradCheckOptions {
    GradCheckOptions {
        eps: 1e-3,
        retry_steps: false,
        ..GradCheckOptions::default()
    }
}

#[test]
fn every_suite_passes_within_two_minutes() {
    let start = Instant::now();
    let reports = run_all(0).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(reports.len(), suites().len());
    for r in &reports {
        assert!(r.coords_checked >= 100, "{r}");
        assert!(r.passed(), "{r}, worst {:?}", r.worst);
    }
    assert!(elapsed < Duration::from_secs(120), "{elapsed:?}");
}

#[test]
fn suites_are_seed_independent() {
    for seed in [1, 2, 3] {
        for r in run_all(seed).unwrap() {
            assert!(r.passed(), "seed {seed}: {r}, worst {:?}", r.worst);
        }
    }
}

// Smooth primitives checked at the 1e-3 step with inputs kept more than a
// step away from every kink.
#[test]
fn primitives_pass_at_the_reference_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut signed = uniform(&mut rng, 10, 12, 0.05, 1.0);
    for (i, v) in signed.as_mut_slice().iter_mut().enumerate() {
        if i % 3 == 0 {
            *v = -*v;
        }
    }
    let x = Value::param(signed);
    let y = Value::param(uniform(&mut rng, 10, 12, -1.0, 1.0));
    let w = Value::param(uniform(&mut rng, 7, 12, -1.0, 1.0));
    let b = Value::param(uniform(&mut rng, 1, 7, -1.0, 1.0));
    let dirs = Value::param(uniform(&mut rng, 40, 3, 0.3, 1.0));

    let cases: Vec<(&str, Vec<Value>, Box<dyn Fn() -> hashcc::Result<Value>>)> = vec![
        ("relu", vec![x.clone()], Box::new(|| Ok(weighted(&ops::relu(&x), 1)))),
        ("sigmoid", vec![x.clone()], Box::new(|| Ok(weighted(&ops::sigmoid(&x), 2)))),
        ("exp", vec![x.clone()], Box::new(|| Ok(weighted(&ops::exp(&x), 3)))),
        (
            "clamp",
            vec![y.clone()],
            Box::new(|| {
                // Inputs inside (-1, 1); bounds sit well outside every probe.
                Ok(weighted(&ops::clamp(&y, -1.5, 1.5), 4))
            }),
        ),
        ("mul", vec![x.clone(), y.clone()], Box::new(|| Ok(weighted(&ops::mul(&x, &y)?, 5)))),
        ("sub", vec![x.clone(), y.clone()], Box::new(|| Ok(weighted(&ops::sub(&x, &y)?, 6)))),
        (
            "affine",
            vec![y.clone(), w.clone(), b.clone()],
            Box::new(|| Ok(weighted(&ops::affine(&y, &w, &b)?, 7))),
        ),
        (
            "normalize_rows",
            vec![dirs.clone()],
            Box::new(|| Ok(weighted(&ops::normalize_rows(&dirs)?, 8))),
        ),
        ("mean_squares", vec![y.clone()], Box::new(|| Ok(ops::mean_squares(&y)))),
        ("sh", vec![dirs.clone()], Box::new(|| Ok(weighted(&spherical_harmonics(&dirs)?, 9)))),
        (
            "fourier",
            vec![y.clone()],
            // Low degree: the step truncation grows with the square of the
            // highest frequency.
            Box::new(|| Ok(weighted(&fourier(&y, 2), 10))),
        ),
    ];
    for (name, params, loss) in cases {
        let r = check_gradients(name, &params, &*loss, reference()).unwrap();
        assert!(r.coords_checked >= 100, "{r}");
        assert!(r.passed(), "{r}, worst {:?}", r.worst);
    }
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Value::constant(uniform(&mut rng, 6, 5, -1.0, 1.0));
    let w1 = Value::param(uniform(&mut rng, 8, 5, -1.0, 1.0));
    let b1 = Value::param(uniform(&mut rng, 1, 8, -0.5, 0.5));
    let w2 = Value::param(uniform(&mut rng, 2, 8, -1.0, 1.0));
    let b2 = Value::param(uniform(&mut rng, 1, 2, -0.5, 0.5));
    let opts = GradCheckOptions {
        coords: 20,
        ..reference()
    };
    let r = check_gradients(
        "mlp",
        &[w1.clone(), b1.clone(), w2.clone(), b2.clone()],
        || {
            let h = ops::relu(&ops::affine(&x, &w1, &b1)?);
            Ok(ops::mean_squares(&ops::affine(&h, &w2, &b2)?))
        },
        opts,
    )
    .unwrap();
    assert_eq!(r.coords_checked, 20);
    assert!(r.passed(), "{r}, worst {:?}", r.worst);
}

#[test]
fn checker_catches_a_wrong_backward() {
    let x = Value::param(Tensor::from_vec(1, 3, vec![0.3, -0.7, 1.1]));
    let square_off_by_ten_percent = |x: &Value| {
        let out = x.data().map(|v| v * v);
        Value::from_op(
            "bad_square",
            out,
            vec![x.clone()],
            Box::new(|g: &Tensor, parents: &[Value]| {
                let p = parents[0].data();
                let mut d = g.clone();
                for (d, p) in d.as_mut_slice().iter_mut().zip(p.as_slice()) {
                    *d *= 2.2 * p;
                }
                vec![Some(d)]
            }),
        )
    };
    let r = check_gradients(
        "bad",
        &[x.clone()],
        || Ok(ops::sum(&square_off_by_ten_percent(&x))),
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(!r.passed(), "{r}");
    assert!((r.max_rel_error - 0.1 / 1.1).abs() < 1e-6, "{r}");
}

#[test]
fn backward_is_bit_deterministic() {
    let grads = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Value::param(uniform(&mut rng, 9, 4, -1.0, 1.0));
        let w = Value::param(uniform(&mut rng, 6, 4, -1.0, 1.0));
        let b = Value::param(uniform(&mut rng, 1, 6, -1.0, 1.0));
        let h = ops::sigmoid(&ops::affine(&x, &w, &b).unwrap());
        backward(&ops::mean_squares(&h)).unwrap();
        [x, w, b].map(|v| v.grad().unwrap().into_vec())
    };
    let (a, b) = (grads(), grads());
    for (ga, gb) in a.iter().zip(&b) {
        let bits = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ga), bits(gb));
    }
}

proptest! {
    #[test]
    fn shared_value_receives_sum_of_paths(
        v in proptest::collection::vec(-3.0f64..3.0, 1..8),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let n = v.len();
        let x = Value::param(Tensor::from_vec(1, n, v));
        let loss = ops::add(&ops::sum(&ops::scale(&x, a)), &ops::sum(&ops::scale(&x, b))).unwrap();
        backward(&loss).unwrap();
        for g in x.grad().unwrap().as_slice() {
            prop_assert!((g - (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn detached_values_receive_zero_gradient(
        v in proptest::collection::vec(-3.0f64..3.0, 1..8),
    ) {
        let n = v.len();
        let x = Value::param(Tensor::from_vec(1, n, v));
        let y = ops::mul(&detach(&x), &ops::exp(&detach(&x))).unwrap();
        let loss = ops::add(&ops::sum_squares(&y), &ops::sum(&x)).unwrap();
        backward(&loss).unwrap();
        // Only the live `sum(x)` path contributes.
        for g in x.grad().unwrap().as_slice() {
            prop_assert_eq!(*g, 1.0);
        }
    }
}
