use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trackvo"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pose_lines(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
}

#[test]
fn synth_run_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let out = run(&["synth", "--config", s(&fixture("static30.json")), "--seed", "2", "--out", s(&scene)]);
    assert!(out.status.success(), "{}", text(&out));
    for f in ["scene.json", "groundtruth.txt", "intrinsics.txt"] {
        assert!(scene.join(f).exists(), "{f}");
    }

    let res = dir.path().join("run");
    let out = run(&[
        "run",
        "--scene",
        s(&scene.join("scene.json")),
        "--config",
        s(&fixture("run.cfg")),
        "--out",
        s(&res),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(text(&out).contains("ATE"));
    assert_eq!(pose_lines(&res.join("trajectory.txt")), 30);
    let timing = std::fs::read_to_string(res.join("timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 31);
    let tracks = std::fs::read_to_string(res.join("tracks.csv")).unwrap();
    assert!(tracks.starts_with("host,index,point,dyn_score,mean_uncertainty,kept,depth\n"));
    let resolved = std::fs::read_to_string(res.join("config.json")).unwrap();
    assert!(resolved.contains("\"n_queries\": 128"));

    let metrics = dir.path().join("metrics.csv");
    let out = run(&[
        "eval",
        "--est",
        s(&res.join("trajectory.txt")),
        "--gt",
        s(&scene.join("groundtruth.txt")),
        "--out",
        s(&metrics),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    let csv = std::fs::read_to_string(&metrics).unwrap();
    let ate: f64 = csv
        .lines()
        .find_map(|l| l.strip_prefix("ate,"))
        .expect("ate row")
        .parse()
        .unwrap();
    // 30-frame path spans about 1.27 m
    assert!(ate < 0.005 * 1.27, "ATE {ate}");
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let res = dir.path().join(name);
        let out = run(&[
            "run",
            "--scene",
            s(&fixture("static30.json")),
            "--seed",
            "4",
            "--set",
            "sigma_px=0.5",
            "--set",
            "n_queries=64",
            "--out",
            s(&res),
        ]);
        assert!(out.status.success(), "{}", text(&out));
        outputs.push((
            std::fs::read(res.join("trajectory.txt")).unwrap(),
            std::fs::read(res.join("tracks.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn image_directory_run() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let out = run(&["synth", "--config", s(&fixture("small_images.json")), "--render", "--out", s(&scene)]);
    assert!(out.status.success(), "{}", text(&out));
    let images = scene.join("images");
    assert_eq!(std::fs::read_dir(&images).unwrap().count(), 4 + 1);

    let res = dir.path().join("run");
    let out = run(&[
        "run",
        "--images",
        s(&images),
        "--intrinsics",
        s(&scene.join("intrinsics.txt")),
        "--set",
        "n_queries=64",
        "--out",
        s(&res),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(pose_lines(&res.join("trajectory.txt")), 4);
    // timestamps come from the rendered sequence, so eval associates
    let out = run(&["eval", "--est", s(&res.join("trajectory.txt")), "--gt", s(&scene.join("groundtruth.txt")), "--delta", "0.05"]);
    assert!(out.status.success(), "{}", text(&out));
}

#[test]
fn bad_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scene = fixture("static30.json");
    let cases: Vec<Vec<String>> = vec![
        vec!["run".into()],
        vec!["run".into(), "--scene".into(), s(&scene).into(), "--set".into(), "bogus=1".into()],
        vec!["run".into(), "--scene".into(), s(&scene).into(), "--set".into(), "s_ba=1".into()],
        vec!["run".into(), "--images".into(), s(dir.path()).into()],
        vec![
            "run".into(),
            "--images".into(),
            s(dir.path()).into(),
            "--intrinsics".into(),
            s(&scene).into(),
            "--tracker".into(),
            "oracle".into(),
        ],
        vec!["eval".into(), "--est".into(), s(&scene).into(), "--gt".into(), s(&scene).into()],
        vec!["frobnicate".into()],
    ];
    for args in cases {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", text(&out));
    }
}

#[test]
fn missing_intrinsics_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", "--images", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("intrinsics"), "{}", text(&out));
}

#[test]
fn empty_image_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let k = dir.path().join("k.txt");
    std::fs::write(&k, "500 500 319.5 239.5\n").unwrap();
    let images = dir.path().join("frames");
    std::fs::create_dir(&images).unwrap();
    let out = run(&["run", "--images", s(&images), "--intrinsics", s(&k)]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));
    assert!(text(&out).contains("empty"));
}
