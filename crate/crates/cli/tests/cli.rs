use std::path::Path;
use std::process::{Command, Output};

use qrbs_core::mesh::load_mesh;

fn qrbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrbs"))
        .args(args)
        .output()
        .expect("run qrbs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A short sequence and a fit cheap enough for a smoke test.
const SMALL: &[&str] = &[
    "--set",
    "synth.angles=[0.0, 0.3, 0.6]",
    "--set",
    "synth.samples_per_frame=400",
    "--set",
    "fit.iterations=12",
    "--set",
    "fit.grid_resolution=24",
    "--set",
    "fit.refresh_period=5",
    "--set",
    "extract.resolution=32",
    "--set",
    "eval.samples=500",
    "--set",
    "assign.points=200",
];

fn run_in(out: &Path, sub: &str, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--out", out.to_str().unwrap(), "--seed", "5"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    qrbs(&args)
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let o = qrbs(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_lists_override_keys_for_every_subcommand() {
    for sub in ["synth", "fit", "deform", "render", "extract-mesh", "eval", "assign-debug"] {
        let o = qrbs(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8_lossy(&o.stdout);
        for key in ["fit.weights.sparse", "fit.iterations", "render.width", "eval.samples", "seed"] {
            assert!(text.contains(key), "{sub} --help lacks {key}");
        }
    }
}

#[test]
fn config_errors_exit_2_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = qrbs(&["synth", "--out", out, "--set", "synth.nope=1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=config:"), "{err}");
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"fit\": {\"iterations\": \"many\"}}").unwrap();
    let o = qrbs(&["fit", "--out", out, "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invariant_violations_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = qrbs(&["synth", "--out", out, "--set", "synth.hinge.axis=[0.0, 0.0, 2.0]"]);
    // Axis validation happens while loading the configuration.
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = qrbs(&["fit", "--out", out]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error kind=invariant:"));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrbs(&["eval", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for sub in ["synth", "fit", "extract-mesh", "deform", "render", "eval", "assign-debug"] {
        let o = run_in(out, sub, &[]);
        assert!(o.status.success(), "{sub}: {}", stderr(&o));
    }
    for f in [
        "data/cloud_0002.pcd",
        "data/angles.csv",
        "meshes/gt_0002.obj",
        "checkpoints/rig.json",
        "checkpoints/poses.json",
        "checkpoints/sdf.bin",
        "checkpoints/color.bin",
        "checkpoints/delta.bin",
        "checkpoints/loss.csv",
        "meshes/canonical.obj",
        "meshes/deformed_0000.obj",
        "diag/render_0000.ppm",
        "diag/opacity_0000.bin",
        "metrics/metrics.json",
        "metrics/metrics.csv",
        "metrics/angles.csv",
        "diag/assignments.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let loss = std::fs::read_to_string(out.join("checkpoints/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 13);

    // Frame 0 is the canonical pose, so deforming into it is the identity.
    let canonical = load_mesh(out.join("meshes/canonical.obj")).unwrap();
    let deformed = load_mesh(out.join("meshes/deformed_0000.obj")).unwrap();
    assert_eq!(canonical.faces(), deformed.faces());
    for (a, b) in canonical.vertices().iter().zip(deformed.vertices()) {
        assert!((a - b).norm() < 1e-6);
    }

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics/metrics.json")).unwrap()).unwrap();
    assert!(json["fscore_10"].as_f64().unwrap() >= json["fscore_5"].as_f64().unwrap());
    assert_eq!(json["seed"].as_u64(), Some(5));

    let ppm = std::fs::read(out.join("diag/render_0000.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n64 48\n255\n"));
}

#[test]
fn subcommands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for sub in ["synth", "fit", "eval"] {
        assert!(run_in(out, sub, &[]).status.success());
    }
    let first: Vec<Vec<u8>> = ["checkpoints/sdf.bin", "checkpoints/loss.csv", "metrics/metrics.json", "meshes/gt_0001.obj"]
        .iter()
        .map(|f| std::fs::read(out.join(f)).unwrap())
        .collect();
    for sub in ["synth", "fit", "eval"] {
        assert!(run_in(out, sub, &[]).status.success());
    }
    for (i, f) in ["checkpoints/sdf.bin", "checkpoints/loss.csv", "metrics/metrics.json", "meshes/gt_0001.obj"]
        .iter()
        .enumerate()
    {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), first[i], "{f} changed");
    }
}
