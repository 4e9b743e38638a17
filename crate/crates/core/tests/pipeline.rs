use hashcc::checkpoint;
use hashcc::encodings::HashGridConfig;
use hashcc::scene::{load_scene, read_poses, split_indices, write_poses, ReferenceCamera};
use hashcc::synthetic::{generate_synthetic, Blob, SyntheticSpec, Trajectory};
use hashcc::{FieldConfig, Image, Pose, Scene, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

fn noise_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
    Image::from_vec(w, h, (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn write_scene(dir: &Path, count: usize, size: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(count as u64);
    fs::create_dir_all(dir.join("images")).unwrap();
    // Written in reverse so the loader has to sort.
    for i in (0..count).rev() {
        noise_image(&mut rng, size, size).write_png(&dir.join(format!("images/{i:03}.png"))).unwrap();
    }
}

#[test]
fn every_eighth_image_is_held_out() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), 16, 8);
    let scene = load_scene(dir.path(), 1).unwrap();
    assert_eq!(scene.test, vec![0, 8]);
    assert_eq!(scene.train.len(), 14);
    assert_eq!(scene.names[0], "000.png");
    assert!(scene.names.windows(2).all(|w| w[0] < w[1]));

    let (train, test) = split_indices(8);
    assert_eq!((train.len(), test), (7, vec![0]));
}

#[test]
fn box_downsampling_preserves_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = noise_image(&mut rng, 64, 64);
    let small = img.downsample(4).unwrap();
    assert_eq!((small.width(), small.height()), (16, 16));
    let mean = |i: &Image| i.as_slice().iter().sum::<f64>() / i.as_slice().len() as f64;
    assert!((mean(&img) - mean(&small)).abs() < 1e-6);
    // First block by hand.
    let mut acc = 0.0;
    for r in 0..4 {
        for c in 0..4 {
            acc += img.pixel(r, c)[1];
        }
    }
    assert!((small.pixel(0, 0)[1] - acc / 16.0).abs() < 1e-15);
}

#[test]
fn loader_downsamples_and_scales_reference_focals() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), 3, 16);
    let cams: Vec<_> = (0..3)
        .map(|i| (format!("{i:03}.png"), ReferenceCamera { pose: Pose::identity(), focal: (20.0, 18.0) }))
        .collect();
    write_poses(&dir.path().join("poses.jsonl"), &cams).unwrap();
    assert_eq!(read_poses(&dir.path().join("poses.jsonl")).unwrap(), cams);
    let scene = load_scene(dir.path(), 2).unwrap();
    assert_eq!((scene.width(), scene.height()), (8, 8));
    assert_eq!(scene.reference.unwrap()[2].focal, (10.0, 9.0));
}

#[test]
fn malformed_scenes_are_rejected_with_file_names() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    noise_image(&mut rng, 9, 8).write_png(&dir.path().join("images/001.png")).unwrap();
    let err = load_scene(dir.path(), 1).unwrap_err().to_string();
    assert!(err.contains("001.png"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), 3, 8);
    let one = vec![("000.png".to_string(), ReferenceCamera { pose: Pose::identity(), focal: (8.0, 8.0) })];
    write_poses(&dir.path().join("poses.jsonl"), &one).unwrap();
    assert!(load_scene(dir.path(), 1).unwrap_err().to_string().contains("poses.jsonl"));

    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), 2, 8);
    fs::write(dir.path().join("images/001.png"), b"not a png").unwrap();
    assert!(load_scene(dir.path(), 1).unwrap_err().to_string().contains("001.png"));
}

fn small_spec(samples: usize) -> SyntheticSpec {
    SyntheticSpec {
        width: 16,
        height: 16,
        samples_per_ray: samples,
        trajectory: Trajectory { count: 2, ..SyntheticSpec::default().trajectory },
        ..SyntheticSpec::default()
    }
}

#[test]
fn synthetic_quadrature_has_converged() {
    let a = generate_synthetic(&small_spec(4096)).unwrap();
    let b = generate_synthetic(&small_spec(8192)).unwrap();
    for (x, y) in a.images.iter().zip(&b.images) {
        let max = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(max < 1e-3, "max change {max}");
    }
}

#[test]
fn synthetic_generation_is_bit_identical_by_seed() {
    let a = generate_synthetic(&small_spec(256)).unwrap();
    let b = generate_synthetic(&small_spec(256)).unwrap();
    assert_eq!(a.images, b.images);
    assert_eq!(a.reference, b.reference);
    let c = generate_synthetic(&SyntheticSpec { seed: 1, ..small_spec(256) }).unwrap();
    assert_ne!(a.reference, c.reference);
}

#[test]
fn synthetic_edge_cases() {
    let empty = generate_synthetic(&SyntheticSpec { blobs: Vec::new(), ..small_spec(64) }).unwrap();
    assert!(empty.images.iter().all(|i| i.as_slice().iter().all(|&v| v == 0.0)));

    let centered = SyntheticSpec {
        blobs: vec![Blob { center: [0.0, 0.0, -3.0], radius: 0.4, peak: 200.0, color: [0.2, 0.9, 0.4] }],
        trajectory: Trajectory { count: 1, arc_degrees: 0.0, jitter: 0.0, ..SyntheticSpec::default().trajectory },
        ..small_spec(512)
    };
    let scene = generate_synthetic(&centered).unwrap();
    let img = &scene.images[0];
    let mut best = (0.0, (0, 0));
    for r in 0..16 {
        for c in 0..16 {
            let g = img.pixel(r, c)[1];
            if g > best.0 {
                best = (g, (r, c));
            }
        }
    }
    let (r, c) = best.1;
    assert!((7..=8).contains(&r) && (7..=8).contains(&c), "brightest at {:?}", best.1);
}

#[test]
fn synthetic_trajectory_is_forward_facing() {
    let spec = SyntheticSpec::default();
    spec.validate().unwrap();
    for p in hashcc::synthetic::trajectory_poses(&spec.trajectory, spec.seed) {
        let view = -p.rotation.column(2);
        assert!(view.z < (60f64).to_radians().cos() * -1.0);
    }
}

fn tiny_trainer(scene: &Scene) -> Trainer {
    let cfg = TrainConfig {
        epochs: 2,
        batch_rows: 4,
        batch_cols: 4,
        samples_per_ray: 8,
        field: FieldConfig {
            hidden_width: 16,
            hidden_layers: 2,
            skip_layer: 1,
            view_width: 8,
            cc_width: 8,
            hash: HashGridConfig { levels: 2, table_size: 64, max_resolution: 32, ..HashGridConfig::default() },
            ..FieldConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(scene, cfg).unwrap();
    for _ in 0..3 {
        t.step().unwrap();
    }
    t
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), 3, 8);
    let scene = load_scene(dir.path(), 1).unwrap();
    let trainer = tiny_trainer(&scene);
    let path = dir.path().join("a.hcc");
    checkpoint::save(&path, &trainer).unwrap();
    let first = fs::read(&path).unwrap();
    assert_eq!(&first[..4], b"HCC1");
    let reloaded = checkpoint::load(&path).unwrap().into_trainer(&scene).unwrap();
    let again = dir.path().join("b.hcc");
    checkpoint::save(&again, &reloaded).unwrap();
    assert_eq!(first, fs::read(&again).unwrap());
    for ((_, a), (_, b)) in trainer.field.named_parameters().iter().zip(reloaded.field.named_parameters().iter()) {
        assert_eq!(a.data().as_slice(), b.data().as_slice());
    }
    assert_eq!(trainer.optimizers, reloaded.optimizers);
}

#[test]
fn corrupted_checkpoints_are_rejected_and_left_alone() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), 3, 8);
    let scene = load_scene(dir.path(), 1).unwrap();
    let path = dir.path().join("c.hcc");
    checkpoint::save(&path, &tiny_trainer(&scene)).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x5a;
    fs::write(&path, &bytes).unwrap();
    assert!(checkpoint::load(&path).is_err());
    assert_eq!(fs::read(&path).unwrap(), bytes);

    bytes.truncate(n / 2);
    assert!(checkpoint::from_bytes(&bytes, &path).is_err());
    let mut wrong_version = fs::read(&path).unwrap();
    wrong_version[3] = b'9';
    assert!(checkpoint::from_bytes(&wrong_version, &path).is_err());
}
