use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use visback::model::{save_weights, NetworkConfig, WeightSet};
use visback::pnm;

fn visback(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_visback"))
        .args(args)
        .env_remove("VISBACK_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = visback(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config() -> NetworkConfig {
    NetworkConfig::with_widths(66, 66, [2, 3, 3, 3, 3], &[4])
}

fn gen_small(dir: &Path, scenes: &str, extra: &[&str]) {
    let mut args = vec![
        "gen",
        "--scenes",
        scenes,
        "--seed",
        "7",
        "--width",
        "66",
        "--height",
        "66",
        "--out",
        s(dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

/// Trains a tiny model on a small generated set and returns the weight path.
fn trained_model(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    gen_small(&data, "6", &["--augment"]);
    let cfg_path = dir.join("net.json");
    std::fs::write(&cfg_path, tiny_config().to_canonical_json()).unwrap();
    let weights = dir.join("model.pnw");
    ok(&[
        "train",
        "--config",
        s(&cfg_path),
        "--data",
        s(&data),
        "--out",
        s(&weights),
        "--epochs",
        "2",
        "--batch-size",
        "4",
    ]);
    weights
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["labels.csv", "frames/000000.ppm"] {
        out.push((sub.to_string(), std::fs::read(dir.join(sub)).unwrap()));
    }
    out
}

#[test]
fn gen_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_small(&a, "1", &[]);
    gen_small(&b, "1", &[]);
    assert_eq!(files_in(&a), files_in(&b));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "gen");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn gen_zero_scenes_writes_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path(), "0", &[]);
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("labels.csv")).unwrap(),
        "frame,steering\n"
    );
}

#[test]
fn lane_marked_frames_contain_markings() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "gen",
        "--scenes",
        "3",
        "--style",
        "lane_marked",
        "--seed",
        "1",
        "--out",
        s(tmp.path()),
    ]);
    for i in 0..3 {
        let img = pnm::read_ppm(tmp.path().join(format!("frames/{i:06}.ppm"))).unwrap();
        // rows well below the horizon cross both lines; paint is far
        // brighter than asphalt or grass in every channel
        for v in [45, 55, 65] {
            let painted = (0..200)
                .filter(|&u| (0..3).all(|c| img.get(c, v, u) > 180.0))
                .count();
            assert!(painted > 0, "frame {i} row {v} has no marking pixels");
        }
    }
}

#[test]
fn train_writes_weights_loss_log_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let w = trained_model(tmp.path());
    let log = std::fs::read_to_string(tmp.path().join("model.pnw.loss.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 3);
    let m: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("model.pnw.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(m["subcommand"], "train");
    let first = std::fs::read(&w).unwrap();

    // same inputs and seed reproduce the weight file byte for byte
    let data = tmp.path().join("data");
    let again = tmp.path().join("again.pnw");
    let cfg = tmp.path().join("net.json");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&again),
        "--epochs",
        "2",
        "--batch-size",
        "4",
    ]);
    assert_eq!(first, std::fs::read(&again).unwrap());
}

#[test]
fn train_with_zero_learning_rate_has_flat_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "4", &[]);
    let cfg = tmp.path().join("net.json");
    std::fs::write(&cfg, tiny_config().to_canonical_json()).unwrap();
    let w = tmp.path().join("m.pnw");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&w),
        "--epochs",
        "3",
        "--lr",
        "0",
    ]);
    let log = std::fs::read_to_string(tmp.path().join("m.pnw.loss.csv")).unwrap();
    let losses: Vec<f32> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 3);
    assert!(losses
        .iter()
        .all(|l| (l - losses[0]).abs() <= 1e-6 * losses[0]));
}

#[test]
fn train_divergence_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "4", &[]);
    let cfg = tmp.path().join("net.json");
    std::fs::write(&cfg, tiny_config().to_canonical_json()).unwrap();
    let out = visback(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("m.pnw")),
        "--lr",
        "1e6",
        "--batch-size",
        "1",
        "--epochs",
        "3",
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_rejects_mismatched_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "gen",
        "--scenes",
        "1",
        "--width",
        "70",
        "--height",
        "66",
        "--out",
        s(&data),
    ]);
    let cfg = tmp.path().join("net.json");
    std::fs::write(&cfg, tiny_config().to_canonical_json()).unwrap();
    let out = visback(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("m.pnw")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn predict_explain_and_shift_on_trained_model() {
    let tmp = tempfile::tempdir().unwrap();
    let w = trained_model(tmp.path());
    let image = tmp.path().join("data/frames/000000.ppm");

    let out = ok(&["predict", "--weights", s(&w), "--image", s(&image)]);
    let line = String::from_utf8(out.stdout).unwrap();
    let value: f32 = line.trim().rsplit('\t').next().unwrap().parse().unwrap();
    assert!(value.is_finite());

    let ex = tmp.path().join("explain");
    ok(&[
        "explain",
        "--weights",
        s(&w),
        "--image",
        s(&image),
        "--out",
        s(&ex),
        "--mask-trace",
    ]);
    let mask = pnm::read_pgm(ex.join("mask.pgm")).unwrap();
    assert_eq!((mask.height, mask.width), (66, 66));
    assert!(ex.join("overlay.ppm").exists());
    assert!(ex.join("level1_mask.pgm").exists() && ex.join("level5_averaged.pgm").exists());

    let zero_gain = tmp.path().join("explain0");
    ok(&[
        "explain",
        "--weights",
        s(&w),
        "--image",
        s(&image),
        "--out",
        s(&zero_gain),
        "--gain",
        "0",
    ]);
    assert_eq!(
        pnm::read_ppm(zero_gain.join("overlay.ppm")).unwrap(),
        pnm::read_ppm(&image).unwrap()
    );

    let sh = tmp.path().join("shift");
    ok(&[
        "shift",
        "--weights",
        s(&w),
        "--image",
        s(&image),
        "--range",
        "-8..8",
        "--step",
        "4",
        "--out",
        s(&sh),
    ]);
    let csv = std::fs::read_to_string(sh.join("shifts.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("shift_px,steer_class1,steer_class2,steer_all")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    let zero = rows.iter().find(|r| r[0] == "0").unwrap();
    assert!(zero[1] == zero[2] && zero[2] == zero[3]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sh.join("summary.json")).unwrap()).unwrap();
    assert!(summary["fits"]["class1"]["slope"].is_number());
    assert_eq!(summary["dilation_radius"], 10);

    // rerunning into a fresh directory reproduces the primary outputs
    let sh2 = tmp.path().join("shift2");
    ok(&[
        "shift",
        "--weights",
        s(&w),
        "--image",
        s(&image),
        "--range",
        "-8..8",
        "--step",
        "4",
        "--out",
        s(&sh2),
    ]);
    for f in ["shifts.csv", "summary.json", "class1.pgm"] {
        assert_eq!(
            std::fs::read(sh.join(f)).unwrap(),
            std::fs::read(sh2.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn zero_weight_network_gives_zero_mask() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let w = tmp.path().join("zero.pnw");
    save_weights(&cfg, &WeightSet::zeros(&cfg).unwrap(), &w).unwrap();
    gen_small(&tmp.path().join("data"), "1", &[]);
    let image = tmp.path().join("data/frames/000000.ppm");
    let ex = tmp.path().join("ex");
    ok(&[
        "explain",
        "--weights",
        s(&w),
        "--image",
        s(&image),
        "--out",
        s(&ex),
    ]);
    let mask = pnm::read_pgm(ex.join("mask.pgm")).unwrap();
    assert!(mask.data.iter().all(|&v| v == 0));
}

#[test]
fn corrupted_weights_exit_3_with_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let w = tmp.path().join("m.pnw");
    save_weights(&cfg, &WeightSet::init_uniform(&cfg, 1).unwrap(), &w).unwrap();
    gen_small(&tmp.path().join("data"), "1", &[]);
    let image = tmp.path().join("data/frames/000000.ppm");
    let pristine = std::fs::read(&w).unwrap();

    let mut flipped = pristine.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    std::fs::write(&w, &flipped).unwrap();
    let out = visback(&["predict", "--weights", s(&w), "--image", s(&image)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_CHECKSUM"));

    let mut bad_magic = pristine;
    bad_magic[0] = b'X';
    std::fs::write(&w, &bad_magic).unwrap();
    let out = visback(&["predict", "--weights", s(&w), "--image", s(&image)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_MAGIC"));
}

#[test]
fn image_size_mismatch_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let w = tmp.path().join("m.pnw");
    save_weights(&cfg, &WeightSet::init_uniform(&cfg, 1).unwrap(), &w).unwrap();
    ok(&[
        "gen",
        "--scenes",
        "1",
        "--width",
        "80",
        "--height",
        "66",
        "--out",
        s(&tmp.path().join("d")),
    ]);
    let image = tmp.path().join("d/frames/000000.ppm");
    let out = visback(&[
        "explain",
        "--weights",
        s(&w),
        "--image",
        s(&image),
        "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(visback(&["gen"]).status.code(), Some(2));
    assert_eq!(visback(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        visback(&["gen", "--scenes", "1", "--style", "snow", "--out", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(visback(&["--help"]).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_visback"))
        .args(["gen", "--scenes", "0", "--out", "unused"])
        .env("VISBACK_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
