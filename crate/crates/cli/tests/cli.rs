use std::path::Path;
use std::process::{Command, Output};

fn hashcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hashcc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

// A tiny model so the end-to-end commands finish in seconds.
const TINY: &[&str] = &[
    "--epochs", "1",
    "--samples-per-ray", "8",
    "--batch-rows", "4",
    "--batch-cols", "4",
    "--hidden-width", "16",
    "--hidden-layers", "2",
    "--skip-layer", "1",
    "--view-width", "8",
    "--cc-width", "8",
    "--hash-levels", "2",
    "--hash-table-size", "64",
    "--hash-max-resolution", "32",
];

#[test]
fn gradcheck_passes_every_suite() {
    let out = hashcc(&["gradcheck"]);
    let stdout = text(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}{}", text(&out.stderr));
    assert!(stdout.contains("all suites passed"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn train_without_scene_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hashcc(&["train", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("Usage:"));

    let missing = dir.path().join("missing");
    let out = hashcc(&["train", "--scene", path(&missing), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = text(&out.stderr);
    assert!(stderr.contains("Usage:") && stderr.contains("missing"), "{stderr}");
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    std::fs::create_dir_all(scene.join("images")).unwrap();
    let out = hashcc(&[
        "train", "--scene", path(&scene), "--out", path(dir.path()), "--learning-rate", "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("learning_rate"));

    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "epochs = 2\nwarmup = 3\n").unwrap();
    let out = hashcc(&[
        "train", "--scene", path(&scene), "--out", path(dir.path()), "--config", path(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("line 2"), "{}", text(&out.stderr));
}

#[test]
fn empty_scene_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    std::fs::create_dir_all(scene.join("images")).unwrap();
    let out = hashcc(&["train", "--scene", path(&scene), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("no PNG"));
}

#[test]
fn synth_train_render_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let run = dir.path().join("run");
    let out = hashcc(&[
        "synth", "--out", path(&scene), "--width", "16", "--height", "16",
        "--samples-per-ray", "64",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(std::fs::read_dir(scene.join("images")).unwrap().count(), 16);

    let mut args = vec!["train", "--scene", path(&scene), "--out", path(&run)];
    args.extend_from_slice(TINY);
    let out = hashcc(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    for f in ["checkpoint.hcc", "history.csv", "config.txt", "poses.jsonl"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    // Header plus one row per iteration: 14 training images, one epoch.
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 14);
    // The effective configuration records the overrides.
    let cfg = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(cfg.contains("hidden_width = 16"));

    let renders = dir.path().join("renders");
    let out = hashcc(&[
        "render", "--checkpoint", path(&run.join("checkpoint.hcc")), "--out", path(&renders),
        "--poses", path(&run.join("poses.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(std::fs::read_dir(&renders).unwrap().count(), 2 * 14);

    let eval = dir.path().join("eval");
    let out = hashcc(&[
        "evaluate", "--scene", path(&scene), "--checkpoint", path(&run.join("checkpoint.hcc")),
        "--out", path(&eval), "--refine-steps", "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(eval.join("metrics_ours.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    // Header, the two held-out images (indices 0 and 8), the scene summary.
    assert_eq!(rows.len(), 1 + 2 + 1, "{csv}");
    assert!(rows[1].starts_with("000.png") && rows[2].starts_with("008.png"), "{csv}");
    assert!(rows[3].starts_with("scene_mean"), "{csv}");
    assert!(text(&out.stdout).contains("PSNR"));
}

#[test]
fn evaluate_two_checkpoints_prints_the_ablation_table() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let out = hashcc(&[
        "synth", "--out", path(&scene), "--width", "16", "--height", "16",
        "--samples-per-ray", "32",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut ckpts = Vec::new();
    for enc in ["fe", "sh"] {
        let run = dir.path().join(enc);
        let mut args = vec![
            "train", "--scene", path(&scene), "--out", path(&run), "--encoding-dir", enc,
        ];
        args.extend_from_slice(TINY);
        args.extend_from_slice(&["--color-correction", "false"]);
        let out = hashcc(&args);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        ckpts.push(run.join("checkpoint.hcc"));
    }
    let eval = dir.path().join("eval");
    let out = hashcc(&[
        "evaluate", "--scene", path(&scene), "--checkpoint", path(&ckpts[0]),
        "--checkpoint", path(&ckpts[1]), "--out", path(&eval), "--refine-steps", "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(eval.join("metrics_fe.csv").is_file() && eval.join("metrics_sh.csv").is_file());
    let summary = std::fs::read_to_string(eval.join("summary.txt")).unwrap();
    assert!(summary.contains("ΔR"), "{summary}");
}

#[test]
fn resume_continues_to_the_new_length() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let run = dir.path().join("run");
    let out = hashcc(&[
        "synth", "--out", path(&scene), "--width", "16", "--height", "16",
        "--samples-per-ray", "32",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut args = vec!["train", "--scene", path(&scene), "--out", path(&run)];
    args.extend_from_slice(TINY);
    assert_eq!(hashcc(&args).status.code(), Some(0));
    let mut args = vec!["train", "--scene", path(&scene), "--out", path(&run), "--resume"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--epochs", "2"]);
    let out = hashcc(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 28);
}
