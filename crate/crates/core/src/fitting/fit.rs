//! The phased optimization loop.
//!
//! 1. `warmup`: shape and color only, against the first frame, poses at
//!    identity.
//! 2. `tracking`: frame by frame, each extrapolated from its predecessors,
//!    only that frame's poses move.
//! 3. `joint`: every group against every frame.
//!
//! Frame 0 defines the canonical pose; its transforms are never updated.
//!
//! The temperature and the density scale are annealed geometrically over
//! the whole run, step sizes follow a cosine within each segment.

use log::{debug, info};
use nalgebra::{Rotation3, Vector3};

use super::config::FitConfig;
use super::loss::{evaluate_with_gradients, Gradients, Prepared};
use super::optim::{cosine_lr, RmsProp};
use super::state::{FitState, FrameObservation, LossRecord};
use crate::benchmark::normalized_chamfer;
use crate::dq::DualQuaternion;
use crate::error::{Error, Result};
use crate::mesh::{sample_points_uniform, TriangleMesh};
use crate::scalar::dq_from_tangent;
use crate::skinning::{deform_forward, Bone, BoneSet, PoseState, SkinningBackend};

/// A segment aborts when its loss stays above `DIVERGENCE_FACTOR` times its
/// first loss for `DIVERGENCE_STEPS` consecutive steps.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Groups {
    shape: bool,
    poses: bool,
    rig: bool,
}

struct Segment {
    phase: &'static str,
    frames: Vec<usize>,
    groups: Groups,
    iterations: usize,
    /// Frame whose poses are extrapolated from its predecessors at the start.
    init_from_previous: Option<usize>,
}

fn schedule(cfg: &FitConfig, frame_count: usize) -> Vec<Segment> {
    let n = cfg.iterations;
    let warm = ((n as f64) * cfg.warmup_fraction).round() as usize;
    let mut track = ((n as f64) * cfg.tracking_fraction).round() as usize;
    track = track.min(n - warm.min(n));
    if frame_count < 2 {
        track = 0;
    }
    let joint = n - warm.min(n) - track;
    let mut out = vec![Segment {
        phase: "warmup",
        frames: vec![0],
        groups: Groups {
            shape: true,
            poses: false,
            rig: false,
        },
        iterations: warm.min(n),
        init_from_previous: None,
    }];
    if track > 0 {
        let per = track / (frame_count - 1);
        let extra = track % (frame_count - 1);
        for t in 1..frame_count {
            out.push(Segment {
                phase: "tracking",
                frames: vec![t],
                groups: Groups {
                    shape: false,
                    poses: true,
                    rig: false,
                },
                iterations: per + usize::from(t <= extra),
                init_from_previous: Some(t),
            });
        }
    }
    out.push(Segment {
        phase: "joint",
        frames: (0..frame_count).collect(),
        groups: Groups {
            shape: true,
            poses: true,
            rig: true,
        },
        iterations: joint,
        init_from_previous: None,
    });
    out.retain(|s| s.iterations > 0 || s.init_from_previous.is_some());
    out
}

#[derive(Default)]
struct Optimizers {
    centers: RmsProp,
    orientations: RmsProp,
    scales: RmsProp,
    poses: RmsProp,
    cameras: RmsProp,
    delta: RmsProp,
    sdf: RmsProp,
    color: RmsProp,
    beta: RmsProp,
}

/// Result of a fit that may have stopped early; `state` is always the
/// last state reached.
#[derive(Debug)]
pub struct FitOutcome {
    pub state: FitState,
    pub error: Option<Error>,
}

/// Fit shape, rig and motion to the observations.
pub fn fit(obs: &[FrameObservation], cfg: &FitConfig) -> Result<FitState> {
    let out = fit_detailed(obs, cfg)?;
    match out.error {
        Some(e) => Err(e),
        None => Ok(out.state),
    }
}

/// Like [`fit`], but a failure during optimization still returns the state
/// reached so far.
pub fn fit_detailed(obs: &[FrameObservation], cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let mut state = FitState::initialize(obs, cfg)?;
    let error = optimize(&mut state, obs, cfg).err();
    Ok(FitOutcome { state, error })
}

/// Run the full schedule starting from `state`.
pub fn optimize(state: &mut FitState, obs: &[FrameObservation], cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    if state.poses.len() != obs.len() {
        return Err(Error::invalid(format!(
            "state has {} frames, {} observed",
            state.poses.len(),
            obs.len()
        )));
    }
    let prep = Prepared::new(obs, cfg)?;
    let mut opt = Optimizers::default();
    let total = cfg.iterations.max(1);
    let mut k = 0usize;
    for seg in schedule(cfg, obs.len()) {
        if let Some(t) = seg.init_from_previous {
            state.poses[t] = extrapolate(&state.poses, t);
        }
        info!("{} on frames {:?} for {} steps", seg.phase, seg.frames, seg.iterations);
        let mut initial = None;
        let mut over = 0usize;
        for i in 0..seg.iterations {
            let progress = k as f64 / (total.max(2) - 1) as f64;
            state.gamma = cfg.temperature(progress);
            if cfg.steps.beta == 0.0 {
                state.beta = FitConfig::anneal(cfg.beta_start, cfg.beta_end, progress);
            }
            if k > 0 && k % cfg.resample_period == 0 {
                state.resample_surface(cfg.surface_samples, cfg.seed ^ k as u64)?;
            }
            if seg.groups.rig && (state.assignments.is_empty() || k % cfg.refresh_period == 0) {
                state.refresh_assignments(cfg)?;
            }
            let (terms, grads) = evaluate_with_gradients(state, &prep, cfg, &seg.frames)?;
            let loss = terms.total;
            let first = *initial.get_or_insert(loss);
            if !loss.is_finite() || loss > DIVERGENCE_FACTOR * first {
                over += 1;
                if over >= DIVERGENCE_STEPS || !loss.is_finite() {
                    return Err(Error::Diverged {
                        iteration: k,
                        loss,
                        initial: first,
                        steps: over,
                    });
                }
            } else {
                over = 0;
            }
            if k % 50 == 0 {
                debug!("step {k} ({}) loss {loss:.6e}", seg.phase);
            }
            state.history.push(LossRecord {
                iteration: k,
                phase: seg.phase,
                total: loss,
                terms,
            });
            let seg_progress = i as f64 / seg.iterations.max(2).saturating_sub(1) as f64;
            apply(state, &grads, seg.groups, cfg, seg_progress, &mut opt)?;
            k += 1;
        }
    }
    state.resample_surface(cfg.surface_samples, cfg.seed)?;
    Ok(())
}

/// Constant-velocity guess for frame `t` from the two frames before it.
fn extrapolate(poses: &[PoseState], t: usize) -> PoseState {
    let mut next = poses[t - 1].clone();
    if t >= 2 {
        for (b, dq) in next.bones.iter_mut().enumerate() {
            let step = poses[t - 1].bones[b].compose(&poses[t - 2].bones[b].inverse());
            *dq = step.compose(dq);
        }
    }
    next
}

fn flat3(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|g| [g.x, g.y, g.z]).collect()
}

fn apply(
    state: &mut FitState,
    g: &Gradients,
    groups: Groups,
    cfg: &FitConfig,
    progress: f64,
    opt: &mut Optimizers,
) -> Result<()> {
    let lr = |peak: f64| cosine_lr(peak, progress);
    let s = &cfg.steps;
    if groups.rig {
        let dc = opt.centers.step(&flat3(&g.centers), lr(s.centers));
        let dr = opt.orientations.step(&flat3(&g.orientations), lr(s.orientations));
        let log_grad: Vec<f64> = flat3(&g.scales)
            .iter()
            .zip(state.bones.bones().iter().flat_map(|b| [b.scale.x, b.scale.y, b.scale.z]))
            .map(|(g, s)| g * s)
            .collect();
        let ds = opt.scales.step(&log_grad, lr(s.scales));
        let bones = state
            .bones
            .bones()
            .iter()
            .enumerate()
            .map(|(b, bone)| {
                let at = |v: &[f64]| Vector3::new(v[3 * b], v[3 * b + 1], v[3 * b + 2]);
                let turn = Rotation3::new(-at(&dr));
                let orientation = Rotation3::from_matrix(&(turn.matrix() * bone.orientation)).into_inner();
                Bone {
                    center: bone.center - at(&dc),
                    orientation,
                    scale: bone.scale.component_mul(&at(&ds).map(|d| (-d).exp())),
                }
            })
            .collect();
        state.bones = BoneSet::new(bones)?;
        let dd = opt.delta.step(&g.delta, lr(s.delta));
        for (v, d) in state.delta.values_mut().iter_mut().zip(dd) {
            *v -= d;
        }
        if s.beta > 0.0 {
            let db = opt.beta.step(&[g.beta * state.beta], lr(s.beta));
            state.beta *= (-db[0]).exp();
        }
    }
    if groups.shape {
        let dsdf = opt.sdf.step(&g.sdf, lr(s.sdf));
        for (v, d) in state.sdf.values_mut().iter_mut().zip(dsdf) {
            *v -= d;
        }
        let flat: Vec<f64> = g.color.iter().flatten().copied().collect();
        let dcol = opt.color.step(&flat, lr(s.color));
        for (c, d) in state.color.values_mut().iter_mut().flatten().zip(dcol) {
            *c = (*c - d).clamp(0.0, 1.0);
        }
    }
    if groups.poses {
        let flat: Vec<f64> = g.poses.iter().flatten().flatten().copied().collect();
        let dp = opt.poses.step(&flat, lr(s.poses));
        // Frame 0 defines the canonical pose and stays at identity.
        for (f, pose) in state.poses.iter_mut().enumerate().skip(1) {
            for (b, dq) in pose.bones.iter_mut().enumerate() {
                let o = (f * g.poses[f].len() + b) * 6;
                *dq = nudge(dq, &dp[o..o + 6]);
            }
        }
        let flat: Vec<f64> = g.cameras.iter().flatten().copied().collect();
        let dcam = opt.cameras.step(&flat, lr(s.cameras));
        for (f, pose) in state.poses.iter_mut().enumerate().skip(1) {
            let step = &dcam[6 * f..6 * f + 6];
            if step.iter().any(|&v| v != 0.0) {
                let cam = DualQuaternion::from_rigid(&pose.camera)?;
                pose.camera = nudge(&cam, step).to_rigid()?;
            }
        }
    }
    Ok(())
}

/// `exp(-step) * dq`, renormalized.
fn nudge(dq: &DualQuaternion, step: &[f64]) -> DualQuaternion {
    if step.iter().all(|&v| v == 0.0) {
        return *dq;
    }
    let xi: [f64; 6] = std::array::from_fn(|i| -step[i]);
    DualQuaternion::from_kernel_normalized(&dq_from_tangent(xi).compose(&dq.to_kernel()))
}

/// Angle of the motion of bone `b` relative to bone `a`, in radians.
pub fn relative_rotation_angle(pose: &PoseState, a: usize, b: usize) -> f64 {
    pose.bones[b]
        .compose(&pose.bones[a].inverse())
        .rotation_quaternion()
        .angle()
}

/// Canonical mesh carried into `frame` by the fitted deformation.
pub fn deformed_mesh(state: &FitState, backend: SkinningBackend, frame: usize) -> Result<TriangleMesh> {
    let pose = state
        .poses
        .get(frame)
        .ok_or_else(|| Error::invalid(format!("no frame {frame}")))?;
    let verts = state
        .mesh
        .vertices()
        .iter()
        .map(|v| deform_forward(backend, v, &state.bones, &state.delta, state.gamma, pose))
        .collect::<Result<Vec<_>>>()?;
    TriangleMesh::new(verts, state.mesh.faces().to_vec())
}

/// Frame mean of the normalized Chamfer distance between the deformed
/// canonical mesh and each ground-truth mesh.
pub fn mean_normalized_chamfer(
    state: &FitState,
    backend: SkinningBackend,
    gt: &[TriangleMesh],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if gt.is_empty() || gt.len() > state.poses.len() {
        return Err(Error::invalid(format!(
            "{} reference meshes for {} fitted frames",
            gt.len(),
            state.poses.len()
        )));
    }
    let mut acc = 0.0;
    for (f, m) in gt.iter().enumerate() {
        let pred = deformed_mesh(state, backend, f)?;
        if pred.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let a = sample_points_uniform(&pred, samples, seed)?;
        let b = sample_points_uniform(m, samples, seed)?;
        acc += normalized_chamfer(&a, &b)?;
    }
    Ok(acc / gt.len() as f64)
}
