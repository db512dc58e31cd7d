//! End-to-end tests of the `depthfuse` binary on a synthetic frame written
//! to disk.

use std::path::PathBuf;
use std::process::{Command, Output};

use depthfuse::io::{write_depth_png, write_point_cloud, write_rgb_png};
use depthfuse::synth::{piecewise_planar_scene, SynthOptions};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_depthfuse"))
}

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    image: PathBuf,
    cloud: PathBuf,
    intrinsics: PathBuf,
    gt: PathBuf,
    out: PathBuf,
    config: PathBuf,
}

fn write_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let scene = piecewise_planar_scene(&SynthOptions {
        width: 160,
        height: 120,
        sample_fraction: 0.08,
        ..SynthOptions::default()
    });
    let image = dir.path().join("frame.png");
    std::fs::write(&image, write_rgb_png(&scene.image).unwrap()).unwrap();
    let cloud = dir.path().join("frame.bin");
    std::fs::write(&cloud, write_point_cloud(&scene.cloud)).unwrap();
    let intrinsics = dir.path().join("intrinsics.txt");
    let f = scene.calib.f_u();
    std::fs::write(
        &intrinsics,
        format!("{f} 0 {} 0 {f} {} 0 0 1\n", scene.calib.c_u(), scene.calib.c_v()),
    )
    .unwrap();
    let gt = dir.path().join("gt.png");
    std::fs::write(&gt, write_depth_png(&scene.true_depth).unwrap()).unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "n_superpixels = 200\n").unwrap();
    Fixture {
        dir,
        image,
        cloud,
        intrinsics,
        gt,
        out,
        config,
    }
}

fn expect_success(output: &Output) -> String {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn complete_args(fx: &Fixture) -> Vec<String> {
    [
        "--config",
        fx.config.to_str().unwrap(),
        "--out",
        fx.out.to_str().unwrap(),
        "complete",
        "--image",
        fx.image.to_str().unwrap(),
        "--cloud",
        fx.cloud.to_str().unwrap(),
        "--intrinsics",
        fx.intrinsics.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn complete_writes_artifacts_and_is_deterministic() {
    let fx = write_fixture();
    let output = bin().args(complete_args(&fx)).arg("--oracle").output().unwrap();
    let stdout = expect_success(&output);
    assert!(stdout.contains("oracle check passed"), "{stdout}");
    let depth = fx.out.join("frame_depth.png");
    let unc = fx.out.join("frame_uncertainty.png");
    let preview = fx.out.join("frame_preview.png");
    for p in [&depth, &unc, &preview] {
        assert!(p.is_file(), "missing {}", p.display());
    }
    let first = std::fs::read(&depth).unwrap();
    // Second identical run produces byte-identical output.
    expect_success(&bin().args(complete_args(&fx)).output().unwrap());
    assert_eq!(std::fs::read(&depth).unwrap(), first);

    // The completed map evaluates against ground truth through `eval`.
    let output = bin()
        .args([
            "eval",
            "--pred",
            depth.to_str().unwrap(),
            "--gt",
            fx.gt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let stdout = expect_success(&output);
    assert!(stdout.starts_with("rmse="), "{stdout}");
}

#[test]
fn project_and_segment_write_debug_outputs() {
    let fx = write_fixture();
    let output = bin()
        .args([
            "--out",
            fx.out.to_str().unwrap(),
            "project",
            "--image",
            fx.image.to_str().unwrap(),
            "--cloud",
            fx.cloud.to_str().unwrap(),
            "--intrinsics",
            fx.intrinsics.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let stdout = expect_success(&output);
    assert!(stdout.contains("projected"), "{stdout}");
    assert!(fx.out.join("frame_sparse_depth.png").is_file());

    let output = bin()
        .args([
            "--out",
            fx.out.to_str().unwrap(),
            "segment",
            "--image",
            fx.image.to_str().unwrap(),
            "--n-superpixels",
            "64",
        ])
        .output()
        .unwrap();
    expect_success(&output);
    for name in ["frame_labels16.png", "frame_labels_indexed.png", "frame_overlay.png"] {
        assert!(fx.out.join(name).is_file(), "missing {name}");
    }
}

#[test]
fn sweeps_and_ablation_write_csv() {
    let fx = write_fixture();
    let base = [
        "--config",
        fx.config.to_str().unwrap(),
        "--out",
        fx.out.to_str().unwrap(),
    ];
    let frame = [
        "--image",
        fx.image.to_str().unwrap(),
        "--cloud",
        fx.cloud.to_str().unwrap(),
        "--intrinsics",
        fx.intrinsics.to_str().unwrap(),
        "--gt",
        fx.gt.to_str().unwrap(),
    ];

    let output = bin()
        .args(base)
        .arg("sweep-subsample")
        .args(frame)
        .args(["--fractions", "0.5,1.0"])
        .output()
        .unwrap();
    expect_success(&output);
    let csv = std::fs::read_to_string(fx.out.join("sweep_subsample.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,value,rmse,mae,rel,log10,n");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("subsample_fraction,0.5,"));

    let output = bin().args(base).arg("ablate").args(frame).output().unwrap();
    expect_success(&output);
    let csv = std::fs::read_to_string(fx.out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("potential_set,I,"));
    assert!(csv.contains("potential_set,III,"));
}

#[test]
fn export_cloud_emits_point_lines() {
    let fx = write_fixture();
    expect_success(&bin().args(complete_args(&fx)).output().unwrap());
    let depth = fx.out.join("frame_depth.png");
    let output = bin()
        .args([
            "--out",
            fx.out.to_str().unwrap(),
            "export-cloud",
            "--depth",
            depth.to_str().unwrap(),
            "--image",
            fx.image.to_str().unwrap(),
            "--intrinsics",
            fx.intrinsics.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    expect_success(&output);
    let text = std::fs::read_to_string(fx.out.join("frame_depth_cloud.txt")).unwrap();
    let first = text.lines().next().unwrap();
    assert_eq!(first.split_whitespace().count(), 6);
    assert_eq!(text.lines().count(), 160 * 120);
}

#[test]
fn missing_cloud_fails_with_frame_context() {
    let fx = write_fixture();
    let output = bin()
        .args([
            "--out",
            fx.out.to_str().unwrap(),
            "complete",
            "--image",
            fx.image.to_str().unwrap(),
            "--cloud",
            "/nonexistent/points.bin",
            "--intrinsics",
            fx.intrinsics.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("frame"), "stderr: {stderr}");
    assert!(stderr.contains("point cloud"), "stderr: {stderr}");
}

#[test]
fn empty_cloud_gives_singular_system_error() {
    let fx = write_fixture();
    let empty = fx.dir.path().join("empty.bin");
    std::fs::write(&empty, []).unwrap();
    let output = bin()
        .args([
            "--config",
            fx.config.to_str().unwrap(),
            "--out",
            fx.out.to_str().unwrap(),
            "complete",
            "--image",
            fx.image.to_str().unwrap(),
            "--cloud",
            empty.to_str().unwrap(),
            "--intrinsics",
            fx.intrinsics.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("singular"), "stderr: {stderr}");
}

#[test]
fn eval_rejects_dimension_mismatch() {
    let fx = write_fixture();
    let small = piecewise_planar_scene(&SynthOptions {
        width: 32,
        height: 24,
        ..SynthOptions::default()
    });
    let small_gt = fx.dir.path().join("small_gt.png");
    std::fs::write(&small_gt, write_depth_png(&small.true_depth).unwrap()).unwrap();
    let output = bin()
        .args([
            "eval",
            "--pred",
            fx.gt.to_str().unwrap(),
            "--gt",
            small_gt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn config_file_is_honored_and_bad_config_rejected() {
    let fx = write_fixture();
    let bad = fx.dir.path().join("bad.cfg");
    std::fs::write(&bad, "alpha = 0\n").unwrap();
    let output = bin()
        .args([
            "--config",
            bad.to_str().unwrap(),
            "segment",
            "--image",
            fx.image.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("alpha"), "stderr: {stderr}");
}
