use qrbs_core::benchmark::cylinder_mesh;
use qrbs_core::field::extract_mesh;
use qrbs_core::skinning::{assign_points_detailed, deform_forward, Bone, Branch};
use qrbs_core::{
    Aabb, AssignmentVector, BoneSet, DeltaWeightField, DualQuaternion, PointCloud, PoseState, RigidTransform,
    SdfGrid, SkinningBackend, TriangleMesh, Vector3,
};

/// Unit-radius cylinder along x from -2 to 2 with a vertex ring at x = 0;
/// bone 1 turns half a revolution about the axis.
fn twisted_cylinder() -> (TriangleMesh, BoneSet, PoseState) {
    let mesh = cylinder_mesh(Vector3::new(-2.0, 0.0, 0.0), Vector3::new(4.0, 0.0, 0.0), 1.0, 32, 8);
    let bones = BoneSet::new(vec![
        Bone::isotropic(Vector3::new(-1.0, 0.0, 0.0), 1.0),
        Bone::isotropic(Vector3::new(1.0, 0.0, 0.0), 1.0),
    ])
    .unwrap();
    let mut pose = PoseState::identity(2);
    let twist = RigidTransform::about_axis(Vector3::zeros(), Vector3::x(), std::f64::consts::PI);
    pose.bones[1] = DualQuaternion::from_rigid(&twist).unwrap();
    (mesh, bones, pose)
}

fn midline_radii(backend: SkinningBackend) -> Vec<f64> {
    let (mesh, bones, pose) = twisted_cylinder();
    let delta = DeltaWeightField::zeros(2, Aabb::cube(3.0).unwrap(), [2, 2, 2]).unwrap();
    mesh.vertices()
        .iter()
        .filter(|v| v.x.abs() < 1e-9 && (v.y * v.y + v.z * v.z).sqrt() > 0.5)
        .map(|v| {
            let p = deform_forward(backend, v, &bones, &delta, 1.0, &pose).unwrap();
            (p.y * p.y + p.z * p.z).sqrt()
        })
        .collect()
}

#[test]
fn half_twist_collapses_linear_blend_only() {
    let lbs = midline_radii(SkinningBackend::Lbs);
    assert_eq!(lbs.len(), 32);
    assert!(lbs.iter().all(|r| *r < 0.1), "{lbs:?}");
    let dq = midline_radii(SkinningBackend::Qrbs);
    assert!(dq.iter().all(|r| (0.9..=1.1).contains(r)), "{dq:?}");
}

/// Two unit spheres at x = -2.5 and 2.5 joined by a bar of radius 0.35,
/// extracted from a distance field so the surface is one connected mesh.
fn dumbbell() -> TriangleMesh {
    let bounds = Aabb::new(Vector3::new(-4.0, -1.5, -1.5), Vector3::new(4.0, 1.5, 1.5)).unwrap();
    let grid = SdfGrid::from_fn([65, 25, 25], bounds, |p| {
        let ball = |cx: f64| ((p.x - cx).powi(2) + p.y * p.y + p.z * p.z).sqrt() - 1.0;
        let bar = ((p.y * p.y + p.z * p.z).sqrt() - 0.35).max(p.x.abs() - 2.5);
        ball(-2.5).min(ball(2.5)).min(bar)
    })
    .unwrap();
    extract_mesh(&grid, 0.0)
}

#[test]
fn surface_distance_overrides_a_misleading_mahalanobis_order() {
    let mesh = dumbbell();
    // the narrow left bone makes the right one nearer in Mahalanobis terms
    let bones = BoneSet::new(vec![
        Bone::isotropic(Vector3::new(-3.4, 0.0, 0.0), 9.0),
        Bone::isotropic(Vector3::new(3.4, 0.0, 0.0), 1.0),
    ])
    .unwrap();
    let a = 40f64.to_radians();
    let x = Vector3::new(-2.5 + a.cos(), 0.0, a.sin());
    let d = qrbs_core::skinning::mahalanobis(&bones, &x);
    assert!(d[1] < d[0] && d[1] / d[0] > 0.8);
    let report = assign_points_detailed(&mesh, &bones, &PointCloud::new(vec![x]).unwrap(), 0.2, 0.2).unwrap();
    assert_eq!(report.records[0].branch, Branch::Geodesic);
    assert_eq!(report.records[0].mask, AssignmentVector::one_hot(2, 0));
}

#[test]
fn bar_midpoint_is_a_joint() {
    let mesh = dumbbell();
    let bones = BoneSet::new(vec![
        Bone::isotropic(Vector3::new(-3.4, 0.0, 0.0), 1.0),
        Bone::isotropic(Vector3::new(3.4, 0.0, 0.0), 1.0),
    ])
    .unwrap();
    let pts = PointCloud::new(vec![Vector3::new(0.0, 0.0, 0.35), Vector3::new(-3.3, 0.0, 0.3)]).unwrap();
    let report = assign_points_detailed(&mesh, &bones, &pts, 0.2, 0.2).unwrap();
    assert_eq!(report.records[0].branch, Branch::Joint);
    assert_eq!(report.records[0].mask, AssignmentVector::two_hot(2, 0, 1));
    assert_eq!(report.records[1].branch, Branch::Mahalanobis);
    assert_eq!(report.records[1].mask, AssignmentVector::one_hot(2, 0));
}

#[test]
fn hinged_point_rotates_about_the_axis() {
    let bones = BoneSet::new(vec![
        Bone::isotropic(Vector3::new(-1.0, 0.0, 0.0), 4.0),
        Bone::isotropic(Vector3::new(1.0, 0.0, 0.0), 4.0),
    ])
    .unwrap();
    let delta = DeltaWeightField::zeros(2, Aabb::cube(3.0).unwrap(), [2, 2, 2]).unwrap();
    let hinge = RigidTransform::about_axis(Vector3::new(0.0, 0.25, 0.0), Vector3::z(), 0.7);
    let mut pose = PoseState::identity(2);
    pose.bones[1] = DualQuaternion::from_rigid(&hinge).unwrap();
    let x = Vector3::new(1.2, 0.1, 0.0);
    let got = qrbs_core::skinning::qrbs_forward(&x, &bones, &delta, 0.01, &pose).unwrap();
    let pivot = Vector3::new(0.0, 0.25, 0.0);
    let (s, c) = 0.7f64.sin_cos();
    let r = x - pivot;
    let want = pivot + Vector3::new(c * r.x - s * r.y, s * r.x + c * r.y, r.z);
    assert!((got - want).norm() < 1e-9, "{got} vs {want}");
}
