use hashcc::camera::rodrigues;
use hashcc::evaluation::{
    align_and_transfer, pose_errors, psnr, psnr_from_mse, rotation_error_deg, ssim, umeyama_sim3,
    Sim3, PSNR_CAP,
};
use hashcc::{Image, Pose};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    rodrigues([0; 3].map(|_: i32| rng.gen_range(-PI..PI) / 3f64.sqrt()))
}

fn random_sim3(rng: &mut impl Rng) -> Sim3 {
    Sim3 {
        scale: rng.gen_range(0.2..5.0),
        rotation: random_rotation(rng),
        translation: Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
    }
}

/// Box–Muller, so the noise oracle needs no distribution crate.
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
}

fn residual_rms(s: &Sim3, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let sq: f64 = src.iter().zip(dst).map(|(x, y)| (s.apply(x) - y).norm_squared()).sum();
    (sq / src.len() as f64).sqrt()
}

#[test]
fn identical_point_sets_give_the_identity() {
    let pts = random_points(&mut ChaCha8Rng::seed_from_u64(1), 12);
    let s = umeyama_sim3(&pts, &pts).unwrap();
    assert!((s.scale - 1.0).abs() < 1e-12);
    assert!((s.rotation - Matrix3::identity()).abs().max() < 1e-12);
    assert!(s.translation.norm() < 1e-12);
}

#[test]
fn constructed_similarity_is_recovered() {
    let est = random_points(&mut ChaCha8Rng::seed_from_u64(2), 10);
    let rz = rodrigues([0.0, 0.0, 30f64.to_radians()]);
    let u = Vector3::new(1.0, 2.0, 3.0);
    let reference: Vec<_> = est.iter().map(|x| 2.0 * rz * x + u).collect();
    let s = umeyama_sim3(&est, &reference).unwrap();
    assert!((s.scale - 2.0).abs() < 1e-9);
    assert!((s.rotation - rz).abs().max() < 1e-9);
    assert!((s.translation - u).norm() < 1e-9);
}

#[test]
fn noisy_alignment_residual_stays_near_the_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let est = random_points(&mut rng, 20);
        let truth = random_sim3(&mut rng);
        let reference: Vec<_> = est
            .iter()
            .map(|x| truth.apply(x) + Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * 1e-3)
            .collect();
        let s = umeyama_sim3(&est, &reference).unwrap();
        let rms = residual_rms(&s, &est, &reference);
        assert!(rms <= 3e-3, "residual {rms}");
    }
}

#[test]
fn degenerate_configurations_are_rejected() {
    let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
    assert!(umeyama_sim3(&line, &line).is_err());
    let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
    assert!(umeyama_sim3(&same, &same).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn alignment_residual_is_similarity_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_points(&mut rng, 8);
        let dst = random_points(&mut rng, 8);
        let base = residual_rms(&umeyama_sim3(&src, &dst).unwrap(), &src, &dst);
        let g = random_sim3(&mut rng);
        let src2: Vec<_> = src.iter().map(|x| g.apply(x)).collect();
        let dst2: Vec<_> = dst.iter().map(|x| g.apply(x)).collect();
        let moved = residual_rms(&umeyama_sim3(&src2, &dst2).unwrap(), &src2, &dst2);
        // Residuals scale with g; compare in the original units.
        prop_assert!((moved / g.scale - base).abs() <= 1e-9);
    }

    #[test]
    fn transfer_respects_composition(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, h) = (random_sim3(&mut rng), random_sim3(&mut rng));
        let poses: Vec<Pose> = (0..4)
            .map(|_| Pose { rotation: random_rotation(&mut rng), translation: random_points(&mut rng, 1)[0] })
            .collect();
        let once = align_and_transfer(&poses, &g.compose(&h));
        let twice = align_and_transfer(&align_and_transfer(&poses, &h), &g);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a.rotation - b.rotation).abs().max() <= 1e-10);
            prop_assert!((a.translation - b.translation).norm() <= 1e-10);
        }
    }

    #[test]
    fn rotation_error_is_a_metric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [a, b, c] = [0; 3].map(|_| random_rotation(&mut rng));
        let ac = rotation_error_deg(&a, &c);
        prop_assert!(ac <= rotation_error_deg(&a, &b) + rotation_error_deg(&b, &c) + 1e-9);
        prop_assert!((0.0..=180.0).contains(&ac));
        prop_assert!((ac - rotation_error_deg(&c, &a)).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_mse(a in 1e-8f64..10.0, b in 1e-8f64..10.0) {
        prop_assume!(a < b);
        prop_assert!(psnr_from_mse(a, 1.0) > psnr_from_mse(b, 1.0));
    }

    #[test]
    fn ssim_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_image(&mut rng, 16, 13), random_image(&mut rng, 16, 13));
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }
}

#[test]
fn transfer_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let poses: Vec<Pose> = (0..3)
        .map(|_| Pose { rotation: random_rotation(&mut rng), translation: random_points(&mut rng, 1)[0] })
        .collect();
    assert_eq!(align_and_transfer(&poses, &Sim3::identity()), poses);
    let double = Sim3 { scale: 2.0, ..Sim3::identity() };
    for (a, b) in align_and_transfer(&poses, &double).iter().zip(&poses) {
        assert_eq!(a.rotation, b.rotation);
        assert_eq!(a.translation, 2.0 * b.translation);
    }
}

#[test]
fn pose_error_examples() {
    let p = Pose::identity();
    let e = pose_errors(&[p], &[p]).unwrap();
    assert_eq!((e.rotation_mean(), e.translation_mean()), (0.0, 0.0));
    for axis in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.6, 0.0, 0.8]] {
        let r = rodrigues(axis.map(|v| v * PI / 2.0));
        assert!((rotation_error_deg(&Matrix3::identity(), &r) - 90.0).abs() < 1e-12);
    }
    let shifted = Pose { translation: Vector3::new(3.0, 4.0, 0.0), ..p };
    assert_eq!(pose_errors(&[shifted], &[p]).unwrap().translation_mean(), 5.0);
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
    Image::from_vec(w, h, (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn constant_image(w: usize, h: usize, v: f64) -> Image {
    Image::from_vec(w, h, vec![v; w * h * 3]).unwrap()
}

#[test]
fn psnr_examples() {
    let a = constant_image(4, 4, 0.5);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert!((psnr(&a, &constant_image(4, 4, 0.6)).unwrap() - 20.0).abs() < 1e-9);
    assert!((psnr(&constant_image(4, 4, 0.0), &constant_image(4, 4, 1.0)).unwrap()).abs() < 1e-12);
}

#[test]
fn ssim_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = random_image(&mut rng, 20, 20);
    assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);

    let mut board = Image::new(24, 24);
    for r in 0..24 {
        for c in 0..24 {
            let v = if (r + c) % 2 == 0 { 0.1 } else { 0.9 };
            board.set_pixel(r, c, [v; 3]);
        }
    }
    let negative = Image::from_vec(24, 24, board.as_slice().iter().map(|v| 1.0 - v).collect()).unwrap();
    assert!(ssim(&board, &negative).unwrap() < 0.0);

    // Zero variance leaves only the luminance term.
    let (a, b) = (0.3, 0.7);
    let c1 = 1e-4;
    let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
    let got = ssim(&constant_image(16, 16, a), &constant_image(16, 16, b)).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    assert!(ssim(&constant_image(10, 10, 0.5), &constant_image(10, 10, 0.5)).is_err());
}
