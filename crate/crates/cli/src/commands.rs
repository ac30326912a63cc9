//! Subcommand implementations.
//!
//! Output layout under `--out`:
//!
//! | path                          | written by     |
//! |-------------------------------|----------------|
//! | `data/cloud_NNNN.pcd`         | synth          |
//! | `data/angles.csv`             | synth          |
//! | `data/sequence.json`          | synth          |
//! | `meshes/gt_NNNN.obj`          | synth          |
//! | `checkpoints/`                | fit            |
//! | `checkpoints/diverged/`       | fit (on abort) |
//! | `meshes/deformed_NNNN.obj`    | deform         |
//! | `meshes/canonical.obj`        | extract-mesh   |
//! | `diag/render_NNNN.ppm`        | render         |
//! | `diag/opacity_NNNN.bin`       | render         |
//! | `metrics/metrics.json`, `.csv`| eval           |
//! | `metrics/angles.csv`          | eval           |
//! | `diag/assignments.csv`        | assign-debug   |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use qrbs_core::benchmark::{evaluate_with_samples, generate_sequence, MetricsRecord};
use qrbs_core::field::{extract_mesh, render_ray};
use qrbs_core::fitting::{fit_detailed, relative_rotation_angle, Checkpoint, FrameObservation, PinholeCamera};
use qrbs_core::io::{self, Image};
use qrbs_core::mesh::{load_mesh, sample_points_uniform, write_obj};
use qrbs_core::skinning::{assign_points_detailed, deform_forward, deform_inverse, write_diagnostics_csv, Branch};
use qrbs_core::{Error, RenderConfig, RigidTransform, SdfGrid, TriangleMesh, Vector3};

use crate::config::{ConfigError, ExtractOptions, RunConfig};

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Core(Error::Diverged { .. }) => "divergence",
            Failure::Core(Error::Io(_)) => "io",
            Failure::Core(_) => "invariant",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "config" => 2,
            "divergence" => 4,
            "io" => 1,
            _ => 3,
        }
    }

    /// Single-line, `error kind=<kind>: <message>`.
    pub fn line(&self) -> String {
        let msg = match self {
            Failure::Config(e) => e.to_string(),
            Failure::Core(e) => e.to_string(),
        };
        format!("error kind={}: {}", self.kind(), msg.replace('\n', " "))
    }
}

type Outcome = Result<(), Failure>;

pub fn run(name: &str, cfg: &RunConfig, out: &Path) -> Outcome {
    match name {
        "synth" => synth(cfg, out),
        "fit" => fit(cfg, out),
        "deform" => deform(cfg, out),
        "render" => render(cfg, out),
        "extract-mesh" => extract(cfg, out),
        "eval" => eval(cfg, out),
        "assign-debug" => assign_debug(cfg, out),
        other => Err(Failure::Config(ConfigError(format!("unknown subcommand `{other}`")))),
    }
}

fn data_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths.data.clone().unwrap_or_else(|| out.join("data"))
}

fn checkpoint_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths.checkpoint.clone().unwrap_or_else(|| out.join("checkpoints"))
}

fn numbered(dir: &Path, prefix: &str, ext: &str, i: usize) -> PathBuf {
    dir.join(format!("{prefix}_{i:04}.{ext}"))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    io::write_file(path, text.as_bytes())?;
    Ok(())
}

fn synth(cfg: &RunConfig, out: &Path) -> Outcome {
    let seq = generate_sequence(&cfg.synth, cfg.seed)?;
    let data = data_dir(cfg, out);
    let meshes = out.join("meshes");
    let mut angles = String::from("frame,angle_rad\n");
    for (f, (cloud, mesh)) in seq.clouds.iter().zip(&seq.meshes).enumerate() {
        io::write_file(numbered(&data, "cloud", "pcd", f), &io::encode_point_cloud(cloud)?)?;
        let header = [format!("seed {}", cfg.seed), format!("frame {f}")];
        write_text(&numbered(&meshes, "gt", "obj", f), &write_obj(mesh, &header))?;
        let _ = writeln!(angles, "{f},{}", cfg.synth.angles[f]);
    }
    write_text(&data.join("angles.csv"), &angles)?;
    let manifest = serde_json::json!({ "seed": cfg.seed, "spec": cfg.synth });
    write_text(
        &data.join("sequence.json"),
        &(serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n"),
    )?;
    println!("synth: {} frames written to {}", seq.clouds.len(), data.display());
    Ok(())
}

fn load_observations(dir: &Path) -> Result<Vec<FrameObservation>, Failure> {
    let mut obs = Vec::new();
    loop {
        let path = numbered(dir, "cloud", "pcd", obs.len());
        if !path.exists() {
            break;
        }
        let cloud = io::decode_point_cloud(&fs::read(&path)?)?;
        obs.push(FrameObservation::new(obs.len(), cloud)?);
    }
    if obs.is_empty() {
        return Err(Error::InvalidArgument(format!("no observed clouds in {}", dir.display())).into());
    }
    Ok(obs)
}

fn fit(cfg: &RunConfig, out: &Path) -> Outcome {
    let obs = load_observations(&data_dir(cfg, out))?;
    info!("fitting {} frames", obs.len());
    let outcome = fit_detailed(&obs, &cfg.fit)?;
    let ck = Checkpoint::from_state(&outcome.state, &cfg.fit);
    let dir = checkpoint_dir(cfg, out);
    match outcome.error {
        None => {
            ck.save(&dir, &outcome.state.history)?;
            let last = outcome.state.history.last().map(|r| r.total).unwrap_or(f64::NAN);
            println!("fit: final loss {last:.6e}, checkpoint in {}", dir.display());
            Ok(())
        }
        Some(e) => {
            let dump = dir.join("diverged");
            ck.save(&dump, &outcome.state.history)?;
            eprintln!("fit: state at abort written to {}", dump.display());
            Err(e.into())
        }
    }
}

fn canonical_mesh(sdf: &SdfGrid, opts: &ExtractOptions) -> Result<TriangleMesh, Failure> {
    let grid;
    let source = if sdf.resolution() == [opts.resolution; 3] {
        sdf
    } else {
        grid = SdfGrid::from_fn([opts.resolution; 3], *sdf.bounds(), |p| sdf.value(p))?;
        &grid
    };
    let mesh = extract_mesh(source, opts.iso);
    if mesh.is_empty() {
        return Err(Error::EmptyMesh.into());
    }
    Ok(mesh)
}

fn deformed(ck: &Checkpoint, mesh: &TriangleMesh, frame: usize) -> Result<TriangleMesh, Failure> {
    let pose = ck.poses.get(frame).ok_or_else(|| {
        Error::InvalidArgument(format!("frame {frame} out of range ({} fitted)", ck.poses.len()))
    })?;
    let verts = mesh
        .vertices()
        .iter()
        .map(|v| deform_forward(ck.config.backend, v, &ck.bones, &ck.delta, ck.gamma(), pose))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TriangleMesh::new(verts, mesh.faces().to_vec())?)
}

fn deform(cfg: &RunConfig, out: &Path) -> Outcome {
    let ck = Checkpoint::load(checkpoint_dir(cfg, out))?;
    let canonical = canonical_mesh(&ck.sdf, &cfg.extract)?;
    let frame = cfg.deform.frame;
    let mesh = deformed(&ck, &canonical, frame)?;
    let path = numbered(&out.join("meshes"), "deformed", "obj", frame);
    let header = [format!("seed {}", cfg.seed), format!("frame {frame}")];
    write_text(&path, &write_obj(&mesh, &header))?;
    println!("deform: {} vertices written to {}", mesh.vertex_count(), path.display());
    Ok(())
}

fn extract(cfg: &RunConfig, out: &Path) -> Outcome {
    let sdf = match &cfg.paths.sdf {
        Some(p) => io::decode_sdf(&fs::read(p)?)?,
        None => Checkpoint::load(checkpoint_dir(cfg, out))?.sdf,
    };
    let mesh = canonical_mesh(&sdf, &cfg.extract)?;
    let path = out.join("meshes").join("canonical.obj");
    write_text(&path, &write_obj(&mesh, &[format!("seed {}", cfg.seed)]))?;
    println!("extract-mesh: {} faces written to {}", mesh.face_count(), path.display());
    Ok(())
}

fn render(cfg: &RunConfig, out: &Path) -> Outcome {
    let ck = Checkpoint::load(checkpoint_dir(cfg, out))?;
    let opts = &cfg.render;
    let frame = opts.frame;
    let pose = ck
        .poses
        .get(frame)
        .ok_or_else(|| Error::InvalidArgument(format!("frame {frame} out of range ({} fitted)", ck.poses.len())))?;
    let canonical = canonical_mesh(&ck.sdf, &cfg.extract)?;
    let (lo, hi) = deformed(&ck, &canonical, frame)?.bounds().ok_or(Error::EmptyMesh)?;
    let center = (lo + hi) / 2.0;
    let diag = (hi - lo).norm();
    let dist = opts.distance * diag;
    let eye = center + Vector3::new(0.0, 0.0, dist);
    let flip = qrbs_core::nalgebra::Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let focal = (opts.height as f64 / 2.0) / (opts.fov.to_radians() / 2.0).tan();
    let camera = PinholeCamera {
        width: opts.width,
        height: opts.height,
        fx: focal,
        fy: focal,
        cx: opts.width as f64 / 2.0,
        cy: opts.height as f64 / 2.0,
        extrinsics: RigidTransform::new(flip, -(flip * eye))?,
        near: (dist - diag).max(1e-3),
        far: dist + diag,
    };
    let rc = RenderConfig {
        samples: opts.samples,
        beta: opts.beta.unwrap_or(ck.beta),
        seed: cfg.seed,
    };
    let to_canonical =
        |x: &Vector3<f64>| deform_inverse(ck.config.backend, x, &ck.bones, &ck.delta, ck.gamma(), pose).unwrap_or(*x);
    let mut img = Image {
        width: opts.width,
        height: opts.height,
        rgb: Vec::with_capacity(opts.width * opts.height),
        opacity: Vec::with_capacity(opts.width * opts.height),
    };
    for ray in camera.rays(frame)? {
        let (rgb, a) = render_ray(&ck.sdf, &ck.color, &to_canonical, &ray, &rc)?;
        img.rgb.push([rgb.x, rgb.y, rgb.z]);
        img.opacity.push(a);
    }
    let diag_dir = out.join("diag");
    io::write_file(numbered(&diag_dir, "render", "ppm", frame), &io::encode_ppm(&img))?;
    io::write_file(numbered(&diag_dir, "opacity", "bin", frame), &io::encode_opacity(&img)?)?;
    let covered = img.opacity.iter().filter(|&&a| a > 0.5).count();
    println!("render: {}x{} image, {covered} opaque pixels", opts.width, opts.height);
    Ok(())
}

fn mean_record(records: &[MetricsRecord]) -> MetricsRecord {
    let n = records.len() as f64;
    MetricsRecord {
        chamfer: records.iter().map(|r| r.chamfer).sum::<f64>() / n,
        fscore_10: records.iter().map(|r| r.fscore_10).sum::<f64>() / n,
        fscore_5: records.iter().map(|r| r.fscore_5).sum::<f64>() / n,
        samples: records[0].samples,
        seed: records[0].seed,
    }
}

fn eval(cfg: &RunConfig, out: &Path) -> Outcome {
    let ck = Checkpoint::load(checkpoint_dir(cfg, out))?;
    let canonical = canonical_mesh(&ck.sdf, &cfg.extract)?;
    let reference = cfg.paths.reference.clone().unwrap_or_else(|| out.join("meshes"));
    let mut records = Vec::new();
    let mut csv = format!("frame,{}\n", MetricsRecord::csv_header());
    for f in 0..ck.poses.len() {
        let path = numbered(&reference, "gt", "obj", f);
        if !path.exists() {
            break;
        }
        let gt = load_mesh(&path)?;
        let pred = deformed(&ck, &canonical, f)?;
        let r = evaluate_with_samples(&pred, &gt, cfg.seed, cfg.eval.samples)?;
        let _ = writeln!(csv, "{f},{}", r.csv_row());
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("no reference meshes in {}", reference.display())).into());
    }
    let mean = mean_record(&records);
    let _ = writeln!(csv, "mean,{}", mean.csv_row());
    let metrics = out.join("metrics");
    write_text(&metrics.join("metrics.csv"), &csv)?;
    write_text(&metrics.join("metrics.json"), &mean.to_json())?;
    let angles_path = data_dir(cfg, out).join("angles.csv");
    if ck.bones.len() == 2 && angles_path.exists() {
        let text = fs::read_to_string(&angles_path)?;
        let mut table = String::from("frame,reference_deg,fitted_deg,error_deg\n");
        let mut errors = Vec::new();
        for line in text.lines().skip(1) {
            let Some((f, a)) = line.split_once(',') else { continue };
            let (Ok(f), Ok(a)) = (f.parse::<usize>(), a.parse::<f64>()) else {
                return Err(Error::InvalidArgument(format!("{}: bad row `{line}`", angles_path.display())).into());
            };
            let Some(pose) = ck.poses.get(f) else { break };
            let fitted = relative_rotation_angle(pose, 0, 1).to_degrees();
            let err = (fitted - a.abs().to_degrees()).abs();
            errors.push(err);
            let _ = writeln!(table, "{f},{},{fitted},{err}", a.to_degrees());
        }
        write_text(&metrics.join("angles.csv"), &table)?;
        errors.sort_by(f64::total_cmp);
        if let Some(m) = errors.get(errors.len() / 2) {
            println!("eval: median hinge angle error {m:.3} deg");
        }
    }
    println!(
        "eval: {} frames, chamfer_x1e4 {:.4}, F@10% {:.2}, F@5% {:.2}",
        records.len(),
        mean.chamfer,
        mean.fscore_10,
        mean.fscore_5
    );
    Ok(())
}

fn assign_debug(cfg: &RunConfig, out: &Path) -> Outcome {
    let ck = Checkpoint::load(checkpoint_dir(cfg, out))?;
    let mesh = canonical_mesh(&ck.sdf, &cfg.extract)?;
    let cloud = sample_points_uniform(&mesh, cfg.assign.points, cfg.seed)?;
    let report = assign_points_detailed(&mesh, &ck.bones, &cloud, ck.rig.eta, ck.rig.zeta)?;
    let path = out.join("diag").join("assignments.csv");
    write_text(&path, &write_diagnostics_csv(&report))?;
    let counts: Vec<String> = [Branch::Mahalanobis, Branch::Joint, Branch::Geodesic, Branch::Fallback]
        .iter()
        .map(|b| format!("{}={}", b.name(), report.branch_count(*b)))
        .collect();
    println!("assign-debug: {} -> {}", counts.join(" "), path.display());
    Ok(())
}
