//! Forward (canonical to observation) and inverse blend deformations.
//!
//! The kernels are generic over [`Real`] so the fitter differentiates the
//! same code the public functions run.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use super::{check_delta, check_gamma, mahalanobis_t, BoneSet, DeltaWeightField};
use crate::dq::{DualQuaternion, RigidTransform};
use crate::error::{Error, Result};
use crate::mesh::PointCloud;
use crate::scalar::{argmax, dq_blend, softmax, Dq, Real, M3, V3};

#[derive(Clone, Debug)]
pub(crate) struct BoneT<T> {
    pub center: V3<T>,
    /// Row-major `V`.
    pub rot: M3<T>,
    pub prec: V3<T>,
}

/// How per-bone transforms are combined at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SkinningBackend {
    /// Dual-quaternion blend of the temperature-sharpened weights.
    #[default]
    Qrbs,
    /// Linear blend of the `[R | t]` matrices.
    Lbs,
    /// Each point follows only its highest-weight bone.
    Rigid,
}

impl SkinningBackend {
    pub const ALL: [SkinningBackend; 3] = [SkinningBackend::Qrbs, SkinningBackend::Lbs, SkinningBackend::Rigid];

    pub fn name(&self) -> &'static str {
        match self {
            SkinningBackend::Qrbs => "qrbs",
            SkinningBackend::Lbs => "lbs",
            SkinningBackend::Rigid => "rigid",
        }
    }
}

impl fmt::Display for SkinningBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SkinningBackend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SkinningBackend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown skinning backend {s:?} (qrbs, lbs, rigid)")))
    }
}

/// Motion of one frame: per-bone transforms plus the global root and
/// camera transforms. The full map is `camera ∘ root ∘ blend(bones)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseState {
    pub bones: Vec<DualQuaternion>,
    pub root: RigidTransform,
    pub camera: RigidTransform,
}

impl PoseState {
    pub fn identity(bones: usize) -> Self {
        PoseState {
            bones: vec![DualQuaternion::identity(); bones],
            root: RigidTransform::identity(),
            camera: RigidTransform::identity(),
        }
    }

    pub fn global(&self) -> RigidTransform {
        self.camera.compose(&self.root)
    }

    pub(crate) fn global_dq(&self) -> Dq<f64> {
        DualQuaternion::from_rigid(&self.global())
            .unwrap_or_else(|_| DualQuaternion::identity())
            .to_kernel()
    }

    pub(crate) fn bone_dqs(&self) -> Vec<Dq<f64>> {
        self.bones.iter().map(|d| d.to_kernel()).collect()
    }
}

/// Bone logits `(-d_M + W_Δ) / γ` at canonical `x`.
fn logits<T: Real>(bones: &[BoneT<T>], delta: &mut impl FnMut(usize, V3<T>) -> T, gamma: f64, x: V3<T>) -> Vec<T> {
    bones
        .iter()
        .enumerate()
        .map(|(b, bone)| (delta(b, x) - mahalanobis_t(bone, x)) / gamma)
        .collect()
}

/// Temperature-sharpened softmax weights at canonical `x`.
pub(crate) fn blend_weights<T: Real>(
    bones: &[BoneT<T>],
    delta: &mut impl FnMut(usize, V3<T>) -> T,
    gamma: f64,
    x: V3<T>,
) -> Vec<T> {
    softmax(&logits(bones, delta, gamma, x))
}

fn weights<T: Real>(backend: SkinningBackend, logits: &[T]) -> Vec<T> {
    match backend {
        SkinningBackend::Rigid => {
            let a = argmax(logits.iter().map(|l| l.val()));
            (0..logits.len())
                .map(|b| if b == a { T::one() } else { T::zero() })
                .collect()
        }
        _ => softmax(logits),
    }
}

fn blend_apply<T: Real>(backend: SkinningBackend, w: &[T], poses: &[Dq<T>], x: V3<T>, per_bone: Option<&[V3<T>]>) -> Option<V3<T>> {
    match backend {
        SkinningBackend::Qrbs => dq_blend(w, poses).map(|d| d.apply(x)),
        SkinningBackend::Rigid => {
            let a = argmax(w.iter().map(|v| v.val()));
            Some(poses[a].apply(x))
        }
        SkinningBackend::Lbs => {
            let mut out = [T::zero(); 3];
            for (b, (wb, pose)) in w.iter().zip(poses).enumerate() {
                let y = match per_bone {
                    Some(ys) => ys[b],
                    None => pose.apply(x),
                };
                for k in 0..3 {
                    out[k] = out[k] + y[k] * *wb;
                }
            }
            Some(out)
        }
    }
}

/// Canonical point to observation space. Returns `None` on a degenerate
/// dual-quaternion blend.
pub(crate) fn forward_kernel<T: Real>(
    backend: SkinningBackend,
    bones: &[BoneT<T>],
    delta: &mut impl FnMut(usize, V3<T>) -> T,
    gamma: f64,
    poses: &[Dq<T>],
    global: &Dq<T>,
    x: V3<T>,
) -> Option<V3<T>> {
    let l = logits(bones, delta, gamma, x);
    let w = weights(backend, &l);
    blend_apply(backend, &w, poses, x, None).map(|y| global.apply(y))
}

/// Observation point to canonical space: strip the global transform, score
/// each bone at the point pulled back by that bone's own inverse motion
/// (equivalently, the bone's Gaussian carried forward by its motion), then
/// blend the inverse transforms.
pub(crate) fn inverse_kernel<T: Real>(
    backend: SkinningBackend,
    bones: &[BoneT<T>],
    delta: &mut impl FnMut(usize, V3<T>) -> T,
    gamma: f64,
    poses: &[Dq<T>],
    global: &Dq<T>,
    x: V3<T>,
) -> Option<V3<T>> {
    let xo = global.inverse().apply(x);
    let inv: Vec<Dq<T>> = poses.iter().map(|p| p.inverse()).collect();
    let ys: Vec<V3<T>> = inv.iter().map(|p| p.apply(xo)).collect();
    let l: Vec<T> = bones
        .iter()
        .enumerate()
        .map(|(b, bone)| (delta(b, ys[b]) - mahalanobis_t(bone, ys[b])) / gamma)
        .collect();
    let w = weights(backend, &l);
    blend_apply(backend, &w, &inv, xo, Some(&ys))
}

fn check_pose(bones: &BoneSet, pose: &PoseState) -> Result<()> {
    if pose.bones.len() != bones.len() {
        return Err(Error::invalid(format!(
            "pose has {} bone transforms, rig has {} bones",
            pose.bones.len(),
            bones.len()
        )));
    }
    Ok(())
}

fn delta_fn(delta: &DeltaWeightField) -> impl FnMut(usize, V3<f64>) -> f64 + '_ {
    let n = delta.lattice().node_count();
    move |b, y| delta.lattice().interpolate(y, |i| delta.values()[b * n + i])
}

fn run(
    inverse: bool,
    backend: SkinningBackend,
    x: &Vector3<f64>,
    bones: &BoneSet,
    delta: &DeltaWeightField,
    gamma: f64,
    pose: &PoseState,
) -> Result<Vector3<f64>> {
    check_gamma(gamma)?;
    check_delta(bones, delta)?;
    check_pose(bones, pose)?;
    let bt = bones.to_t::<f64>();
    let mut d = delta_fn(delta);
    let poses = pose.bone_dqs();
    let global = pose.global_dq();
    let f = if inverse { inverse_kernel } else { forward_kernel };
    f(backend, &bt, &mut d, gamma, &poses, &global, [x.x, x.y, x.z])
        .map(Vector3::from)
        .ok_or(Error::DegenerateBlend(0.0))
}

pub fn deform_forward(
    backend: SkinningBackend,
    x: &Vector3<f64>,
    bones: &BoneSet,
    delta: &DeltaWeightField,
    gamma: f64,
    pose: &PoseState,
) -> Result<Vector3<f64>> {
    run(false, backend, x, bones, delta, gamma, pose)
}

pub fn deform_inverse(
    backend: SkinningBackend,
    x: &Vector3<f64>,
    bones: &BoneSet,
    delta: &DeltaWeightField,
    gamma: f64,
    pose: &PoseState,
) -> Result<Vector3<f64>> {
    run(true, backend, x, bones, delta, gamma, pose)
}

/// Quasi-rigid blend skinning of a canonical point.
pub fn qrbs_forward(
    x: &Vector3<f64>,
    bones: &BoneSet,
    delta: &DeltaWeightField,
    gamma: f64,
    pose: &PoseState,
) -> Result<Vector3<f64>> {
    deform_forward(SkinningBackend::Qrbs, x, bones, delta, gamma, pose)
}

/// Map an observed point back to canonical space.
pub fn qrbs_inverse(
    x: &Vector3<f64>,
    bones: &BoneSet,
    delta: &DeltaWeightField,
    gamma: f64,
    pose: &PoseState,
) -> Result<Vector3<f64>> {
    deform_inverse(SkinningBackend::Qrbs, x, bones, delta, gamma, pose)
}

/// `‖inverse(forward(x)) - x‖` for every point.
pub fn cycle_residual(
    points: &PointCloud,
    bones: &BoneSet,
    delta: &DeltaWeightField,
    gamma: f64,
    pose: &PoseState,
) -> Result<Vec<f64>> {
    points
        .points()
        .iter()
        .map(|x| {
            let y = qrbs_forward(x, bones, delta, gamma, pose)?;
            Ok((qrbs_inverse(&y, bones, delta, gamma, pose)? - x).norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Aabb;
    use crate::skinning::Bone;
    use std::f64::consts::{FRAC_PI_4, PI};

    /// Bones at x = -1 and x = +1; bone 1 rotates by `angle` about the z
    /// axis through the origin.
    fn hinge(angle: f64) -> (BoneSet, DeltaWeightField, PoseState) {
        let bones = BoneSet::new(vec![
            Bone::isotropic(Vector3::new(-1.0, 0.0, 0.0), 1.0),
            Bone::isotropic(Vector3::new(1.0, 0.0, 0.0), 1.0),
        ])
        .unwrap();
        let delta = DeltaWeightField::zeros(2, Aabb::cube(3.0).unwrap(), [4; 3]).unwrap();
        let mut pose = PoseState::identity(2);
        pose.bones[1] =
            DualQuaternion::from_rigid(&RigidTransform::about_axis(Vector3::zeros(), Vector3::z(), angle)).unwrap();
        (bones, delta, pose)
    }

    #[test]
    fn identity_pose_is_identity() {
        let (bones, delta, _) = hinge(0.0);
        let pose = PoseState::identity(2);
        let x = Vector3::new(0.3, -0.2, 0.5);
        for b in SkinningBackend::ALL {
            assert!((deform_forward(b, &x, &bones, &delta, 0.5, &pose).unwrap() - x).norm() < 1e-12);
            assert!((deform_inverse(b, &x, &bones, &delta, 0.5, &pose).unwrap() - x).norm() < 1e-12);
        }
        let cloud = PointCloud::new(vec![x, -x]).unwrap();
        assert!(cycle_residual(&cloud, &bones, &delta, 1.0, &pose)
            .unwrap()
            .iter()
            .all(|&r| r < 1e-12));
    }

    #[test]
    fn rigid_region_follows_bone_and_global() {
        let (bones, delta, mut pose) = hinge(PI / 3.0);
        pose.root = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 2.0));
        pose.camera = RigidTransform::about_axis(Vector3::zeros(), Vector3::x(), 0.4);
        // deep inside part 2 with a tiny temperature the weights are one-hot
        let x = Vector3::new(1.6, 0.1, 0.0);
        let y = qrbs_forward(&x, &bones, &delta, 0.01, &pose).unwrap();
        let expect = pose.global().apply(&pose.bones[1].apply(&x));
        assert!((y - expect).norm() < 1e-12);
        // the part rotates about the hinge axis
        let (_, _, plain) = hinge(PI / 3.0);
        let y = qrbs_forward(&x, &bones, &delta, 0.01, &plain).unwrap();
        let rot = RigidTransform::about_axis(Vector3::zeros(), Vector3::z(), PI / 3.0).apply(&x);
        assert!((y - rot).norm() < 1e-12);
        let back = qrbs_inverse(&y, &bones, &delta, 0.01, &plain).unwrap();
        assert!((back - x).norm() < 1e-9);
    }

    #[test]
    fn cycle_residual_shrinks_with_temperature() {
        let (bones, delta, pose) = hinge(FRAC_PI_4);
        // a band around the joint plane x = 0
        let pts: Vec<Vector3<f64>> = (0..21).map(|i| Vector3::new(-0.5 + 0.05 * i as f64, 0.1, 0.0)).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let mean = |g: f64| {
            let r = cycle_residual(&cloud, &bones, &delta, g, &pose).unwrap();
            r.iter().sum::<f64>() / r.len() as f64
        };
        let (a, b, c) = (mean(1.0), mean(0.1), mean(0.01));
        assert!(a > 0.0 && a.is_finite());
        assert!(a >= b && b >= c, "{a} {b} {c}");
    }

    #[test]
    fn backends_differ_only_near_the_joint() {
        let (bones, delta, pose) = hinge(PI);
        let x = Vector3::new(0.0, 0.5, 0.0);
        let q = deform_forward(SkinningBackend::Qrbs, &x, &bones, &delta, 1.0, &pose).unwrap();
        let l = deform_forward(SkinningBackend::Lbs, &x, &bones, &delta, 1.0, &pose).unwrap();
        let r = deform_forward(SkinningBackend::Rigid, &x, &bones, &delta, 1.0, &pose).unwrap();
        // half-turn blend: LBS collapses to the axis, DQB keeps the radius
        assert!(l.norm() < 1e-12);
        assert!((q.norm() - 0.5).abs() < 1e-12);
        assert!((r - x).norm() < 1e-12);
        assert!("lbs".parse::<SkinningBackend>().unwrap() == SkinningBackend::Lbs);
        assert!("x".parse::<SkinningBackend>().is_err());
    }
}
