//! Rigid transforms, unit dual quaternions and the two transform blends
//! (dual-quaternion and linear).

use nalgebra::{Matrix3, Matrix3x4, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Dq;

const RIGID_TOL: f64 = 1e-9;

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det_err = (rotation.determinant() - 1.0).abs();
        if err > RIGID_TOL || det_err > RIGID_TOL || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonOrthonormal(err.max(det_err)));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about the line through `point` along `axis`.
    pub fn about_axis(point: Vector3<f64>, axis: Vector3<f64>, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let rotation = *r.matrix();
        RigidTransform {
            rotation,
            translation: point - rotation * point,
        }
    }

    pub fn from_rotation_translation(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `[R | t]`.
    pub fn to_matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.set_column(3, &self.translation);
        m
    }
}

/// Unit dual quaternion `real + ε dual`, quaternions stored `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuaternion {
    real: [f64; 4],
    dual: [f64; 4],
}

fn quat(q: &[f64; 4]) -> Quaternion<f64> {
    Quaternion::new(q[0], q[1], q[2], q[3])
}

fn arr(q: &Quaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

impl DualQuaternion {
    /// Checked constructor: `real` must be unit and orthogonal to `dual`.
    pub fn new(real: [f64; 4], dual: [f64; 4]) -> Result<Self> {
        let norm = quat(&real).norm();
        if (norm - 1.0).abs() > RIGID_TOL || !dual.iter().all(|v| v.is_finite()) {
            return Err(Error::NonUnit(norm));
        }
        let dot = quat(&real).dot(&quat(&dual));
        if dot.abs() > RIGID_TOL {
            return Err(Error::NonUnit(dot));
        }
        Ok(DualQuaternion { real, dual })
    }

    pub fn identity() -> Self {
        DualQuaternion {
            real: [1.0, 0.0, 0.0, 0.0],
            dual: [0.0; 4],
        }
    }

    pub fn real(&self) -> [f64; 4] {
        self.real
    }

    pub fn dual(&self) -> [f64; 4] {
        self.dual
    }

    /// Same rigid motion, opposite sign.
    pub fn negated(&self) -> Self {
        DualQuaternion {
            real: self.real.map(|v| -v),
            dual: self.dual.map(|v| -v),
        }
    }

    pub fn from_rigid(t: &RigidTransform) -> Result<Self> {
        let t = RigidTransform::new(t.rotation, t.translation)?;
        let r = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(t.rotation));
        let real = *r.quaternion();
        let tq = Quaternion::new(0.0, t.translation.x, t.translation.y, t.translation.z);
        let dual = tq * real * 0.5;
        Ok(DualQuaternion {
            real: arr(&real),
            dual: arr(&dual),
        })
    }

    pub fn rotation_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_unchecked(quat(&self.real))
    }

    pub fn translation(&self) -> Vector3<f64> {
        let t = quat(&self.dual) * quat(&self.real).conjugate() * 2.0;
        Vector3::new(t.i, t.j, t.k)
    }

    pub fn to_rigid(&self) -> Result<RigidTransform> {
        DualQuaternion::new(self.real, self.dual)?;
        Ok(RigidTransform::from_rotation_translation(
            self.rotation_quaternion(),
            self.translation(),
        ))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_quaternion() * p + self.translation()
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &DualQuaternion) -> DualQuaternion {
        let (r1, d1) = (quat(&self.real), quat(&self.dual));
        let (r2, d2) = (quat(&other.real), quat(&other.dual));
        DualQuaternion {
            real: arr(&(r1 * r2)),
            dual: arr(&(r1 * d2 + d1 * r2)),
        }
    }

    /// Inverse of a unit dual quaternion: the quaternion conjugate of both
    /// parts.
    pub fn inverse(&self) -> DualQuaternion {
        DualQuaternion {
            real: arr(&quat(&self.real).conjugate()),
            dual: arr(&quat(&self.dual).conjugate()),
        }
    }

    /// Whether both represent the same rigid motion (sign-insensitive).
    pub fn same_motion(&self, other: &DualQuaternion, tol: f64) -> bool {
        let close = |s: f64| {
            (0..4).all(|k| {
                (self.real[k] - s * other.real[k]).abs() <= tol
                    && (self.dual[k] - s * other.dual[k]).abs() <= tol
            })
        };
        close(1.0) || close(-1.0)
    }

    pub(crate) fn to_kernel(self) -> Dq<f64> {
        Dq {
            real: self.real,
            dual: self.dual,
        }
    }

    /// Project an arbitrary kernel value back onto the unit constraint.
    pub(crate) fn from_kernel_normalized(d: &Dq<f64>) -> Self {
        let n = quat(&d.real).norm();
        let real = d.real.map(|v| v / n);
        let dual = d.dual.map(|v| v / n);
        let proj = quat(&real).dot(&quat(&dual));
        let dual = [
            dual[0] - real[0] * proj,
            dual[1] - real[1] * proj,
            dual[2] - real[2] * proj,
            dual[3] - real[3] * proj,
        ];
        DualQuaternion { real, dual }
    }
}

pub fn dq_from_rigid(t: &RigidTransform) -> Result<DualQuaternion> {
    DualQuaternion::from_rigid(t)
}

pub fn dq_to_rigid(dq: &DualQuaternion) -> Result<RigidTransform> {
    dq.to_rigid()
}

pub fn dq_apply(dq: &DualQuaternion, p: &Vector3<f64>) -> Vector3<f64> {
    dq.apply(p)
}

fn check_weights(weights: &[f64], count: usize) -> Result<()> {
    if weights.is_empty() || weights.len() != count {
        return Err(Error::invalid(format!(
            "{} weights for {} transforms",
            weights.len(),
            count
        )));
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("weights must be nonnegative and sum to 1"));
    }
    Ok(())
}

/// Dual-quaternion blend: hemisphere-align every input with the max-weight
/// pivot (lowest index on ties), sum in R^8, normalise the real part and
/// remove the dual part's component along it.
pub fn dq_blend(weights: &[f64], dqs: &[DualQuaternion]) -> Result<DualQuaternion> {
    check_weights(weights, dqs.len())?;
    let pivot = crate::scalar::argmax(weights.iter().copied());
    let piv = quat(&dqs[pivot].real);
    let mut real = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    let mut dual = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (&w, d) in weights.iter().zip(dqs) {
        let s = if quat(&d.real).dot(&piv) < 0.0 { -w } else { w };
        real += quat(&d.real) * s;
        dual += quat(&d.dual) * s;
    }
    let n = real.norm();
    if n < 1e-8 {
        return Err(Error::DegenerateBlend(n));
    }
    let real = real / n;
    let dual = dual / n;
    let dual = dual - real * real.dot(&dual);
    Ok(DualQuaternion {
        real: arr(&real),
        dual: arr(&dual),
    })
}

/// Linear blend skinning: entrywise weighted sum of the `[R | t]` matrices.
/// The result is generally not rigid.
pub fn lbs_blend(weights: &[f64], transforms: &[RigidTransform]) -> Result<Matrix3x4<f64>> {
    check_weights(weights, transforms.len())?;
    Ok(weights
        .iter()
        .zip(transforms)
        .fold(Matrix3x4::zeros(), |acc, (&w, t)| acc + t.to_matrix() * w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn random_dq(rx: f64, ry: f64, rz: f64, a: f64, t: [f64; 3]) -> DualQuaternion {
        let axis = Vector3::new(rx, ry, rz);
        let axis = if axis.norm() < 1e-6 { Vector3::z() } else { axis };
        let r = RigidTransform::about_axis(Vector3::zeros(), axis, a)
            .compose(&RigidTransform::from_translation(Vector3::from(t)));
        dq_from_rigid(&r).unwrap()
    }

    fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn from_rigid_examples() {
        let id = dq_from_rigid(&RigidTransform::identity()).unwrap();
        assert_eq!(id.real(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(id.dual(), [0.0; 4]);

        let tr = dq_from_rigid(&RigidTransform::from_translation(Vector3::new(0.0, 0.0, 2.0))).unwrap();
        assert_eq!(tr.real(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(tr.dual(), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(dq_apply(&tr, &Vector3::zeros()), Vector3::new(0.0, 0.0, 2.0));

        // R_z(90°) then +x: (1,0,0) -> (0,1,0) -> (1,1,0)
        let r = RigidTransform::new(
            *Rotation3::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2).matrix(),
            Vector3::new(1.0, 0.0, 0.0),
        )
        .unwrap();
        let q = dq_from_rigid(&r).unwrap();
        assert!(close(&dq_apply(&q, &Vector3::x()), &Vector3::new(1.0, 1.0, 0.0), 1e-12));

        let half = dq_from_rigid(&RigidTransform::about_axis(Vector3::zeros(), Vector3::z(), PI)).unwrap();
        assert!(close(&dq_apply(&half, &Vector3::x()), &-Vector3::x(), 1e-12));
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(dq_apply(&DualQuaternion::identity(), &p), p);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let bad = RigidTransform {
            rotation: Matrix3::identity() * 1.01,
            translation: Vector3::zeros(),
        };
        assert!(matches!(dq_from_rigid(&bad), Err(Error::NonOrthonormal(_))));
        assert!(RigidTransform::new(-Matrix3::identity(), Vector3::zeros()).is_err());
        assert!(DualQuaternion::new([2.0, 0.0, 0.0, 0.0], [0.0; 4]).is_err());
        assert!(DualQuaternion::new([1.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn sign_flip_is_same_transform() {
        let q = random_dq(0.2, 0.5, -1.0, 1.1, [0.3, -2.0, 0.7]);
        let a = dq_to_rigid(&q).unwrap();
        let b = dq_to_rigid(&q.negated()).unwrap();
        assert!((a.rotation() - b.rotation()).amax() < 1e-12);
        assert!(close(a.translation(), b.translation(), 1e-12));
        assert!(dq_to_rigid(&DualQuaternion::identity()).unwrap() == RigidTransform::identity());
    }

    #[test]
    fn blend_examples() {
        let a = random_dq(1.0, 0.0, 0.0, 0.4, [1.0, 0.0, 0.0]);
        let b = random_dq(0.0, 1.0, 0.0, 2.0, [0.0, -1.0, 3.0]);
        let r = dq_blend(&[0.0, 1.0], &[a, b]).unwrap();
        assert!(r.same_motion(&b, 1e-12));
        let r = dq_blend(&[0.3, 0.7], &[b, b.negated()]).unwrap();
        assert!(r.same_motion(&b, 1e-12));

        let rot = random_dq(0.0, 0.0, 1.0, FRAC_PI_2, [0.0; 3]);
        let mid = dq_blend(&[0.5, 0.5], &[DualQuaternion::identity(), rot]).unwrap();
        // slerp midpoint of identity and the 90° turn
        let slerp = UnitQuaternion::identity().slerp(&rot.rotation_quaternion(), 0.5);
        assert!(mid.rotation_quaternion().angle_to(&slerp) < 1e-12);
        assert!((mid.rotation_quaternion().angle() - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn blend_rejects_bad_weights() {
        let q = DualQuaternion::identity();
        assert!(dq_blend(&[0.5, 0.6], &[q, q]).is_err());
        assert!(dq_blend(&[1.0], &[q, q]).is_err());
        assert!(dq_blend(&[1.5, -0.5], &[q, q]).is_err());
    }

    #[test]
    fn aligned_blend_never_cancels() {
        // after alignment every real part has a nonnegative dot with the
        // pivot, so the sum's norm is at least the pivot weight
        let a = DualQuaternion::new([0.0, 1.0, 0.0, 0.0], [0.0; 4]).unwrap();
        let r = dq_blend(&[0.5, 0.5], &[a, a.negated()]).unwrap();
        assert!(r.same_motion(&a, 1e-12));
    }

    #[test]
    fn lbs_examples() {
        let id = RigidTransform::identity();
        let half = RigidTransform::about_axis(Vector3::zeros(), Vector3::z(), PI);
        let m = lbs_blend(&[0.5, 0.5], &[id, half]).unwrap();
        let expected = Matrix3x4::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        assert!((m - expected).amax() < 1e-12);
        assert_eq!(lbs_blend(&[0.0, 1.0], &[id, half]).unwrap(), half.to_matrix());
        let t1 = RigidTransform::from_translation(Vector3::new(2.0, 0.0, 0.0));
        let t2 = RigidTransform::from_translation(Vector3::new(0.0, 4.0, 0.0));
        let m = lbs_blend(&[0.5, 0.5], &[t1, t2]).unwrap();
        assert_eq!(m.column(3).into_owned(), Vector3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn compose_matches_kernel() {
        let a = random_dq(0.1, 0.9, 0.3, 0.8, [1.0, 2.0, 3.0]);
        let b = random_dq(-0.4, 0.2, 0.6, -1.9, [0.5, 0.0, -1.0]);
        let p = Vector3::new(0.3, -0.7, 1.1);
        let k = a.to_kernel().compose(&b.to_kernel()).apply([p.x, p.y, p.z]);
        let c = a.compose(&b).apply(&p);
        assert!(close(&c, &Vector3::from(k), 1e-12));
    }

    proptest! {
        #[test]
        fn invariants(
            r1 in proptest::array::uniform3(-1.0f64..1.0), a1 in -3.0f64..3.0, t1 in proptest::array::uniform3(-5.0f64..5.0),
            r2 in proptest::array::uniform3(-1.0f64..1.0), a2 in -3.0f64..3.0, t2 in proptest::array::uniform3(-5.0f64..5.0),
            p in proptest::array::uniform3(-5.0f64..5.0), q in proptest::array::uniform3(-5.0f64..5.0),
            w in 0.0f64..1.0,
        ) {
            let d1 = random_dq(r1[0], r1[1], r1[2], a1, t1);
            let d2 = random_dq(r2[0], r2[1], r2[2], a2, t2);
            let (p, q) = (Vector3::from(p), Vector3::from(q));
            let rig1 = dq_to_rigid(&d1).unwrap();
            let rig2 = dq_to_rigid(&d2).unwrap();
            // round trip up to sign
            prop_assert!(dq_from_rigid(&rig1).unwrap().same_motion(&d1, 1e-9));
            prop_assert!(close(&rig1.apply(&p), &dq_apply(&d1, &p), 1e-9));
            // isometry
            let dp = (dq_apply(&d1, &p) - dq_apply(&d1, &q)).norm();
            prop_assert!((dp - (p - q).norm()).abs() < 1e-9);
            // composition and inverse
            let comp = dq_from_rigid(&rig1.compose(&rig2)).unwrap();
            prop_assert!(close(&dq_apply(&comp, &p), &rig1.apply(&rig2.apply(&p)), 1e-9));
            prop_assert!(close(&dq_apply(&d1.inverse(), &dq_apply(&d1, &p)), &p, 1e-9));
            // blended rigidity
            let b = dq_to_rigid(&dq_blend(&[w, 1.0 - w], &[d1, d2]).unwrap()).unwrap();
            let r = b.rotation();
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-6);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-6);
        }
    }
}
