use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qrbs_core::benchmark::{chamfer, generate_sequence, SyntheticSpec};
use qrbs_core::dq::dq_blend;
use qrbs_core::field::extract_mesh;
use qrbs_core::fitting::{gradients, FitConfig, FitState, FrameObservation};
use qrbs_core::mesh::{icosphere, sample_points_uniform, GeodesicSolver};
use qrbs_core::skinning::{qrbs_forward, qrbs_inverse, Bone};
use qrbs_core::{Aabb, BoneSet, DeltaWeightField, DualQuaternion, PoseState, RigidTransform, SdfGrid, Vector3};

fn hinge_rig() -> (BoneSet, DeltaWeightField, PoseState) {
    let bones = BoneSet::new(vec![
        Bone::isotropic(Vector3::new(-0.5, 0.0, 0.0), 4.0),
        Bone::isotropic(Vector3::new(0.5, 0.0, 0.0), 4.0),
    ])
    .unwrap();
    let delta = DeltaWeightField::zeros(2, Aabb::cube(1.5).unwrap(), [8; 3]).unwrap();
    let mut pose = PoseState::identity(2);
    pose.bones[1] =
        DualQuaternion::from_rigid(&RigidTransform::about_axis(Vector3::zeros(), Vector3::z(), 0.8)).unwrap();
    (bones, delta, pose)
}

fn deformation(c: &mut Criterion) {
    let (bones, delta, pose) = hinge_rig();
    let x = Vector3::new(0.1, 0.2, 0.0);
    c.bench_function("qrbs_forward", |b| {
        b.iter(|| qrbs_forward(black_box(&x), &bones, &delta, 0.2, &pose).unwrap())
    });
    c.bench_function("qrbs_inverse", |b| {
        b.iter(|| qrbs_inverse(black_box(&x), &bones, &delta, 0.2, &pose).unwrap())
    });
    let dqs = vec![DualQuaternion::identity(), pose.bones[1]];
    c.bench_function("dq_blend_2", |b| b.iter(|| dq_blend(black_box(&[0.3, 0.7]), &dqs).unwrap()));
}

fn geometry(c: &mut Criterion) {
    let sphere = icosphere(3, 1.0);
    c.bench_function("geodesic_icosphere3_single_source", |b| {
        b.iter(|| GeodesicSolver::new(&sphere).distances(0, black_box(&[100, 200, 300])).unwrap())
    });
    let grid = SdfGrid::sphere([48; 3], Aabb::cube(1.5).unwrap(), 1.0).unwrap();
    c.bench_function("extract_sphere_48", |b| b.iter(|| extract_mesh(black_box(&grid), 0.0)));
    let a = sample_points_uniform(&sphere, 2000, 1).unwrap();
    let bb = sample_points_uniform(&sphere, 2000, 2).unwrap();
    c.bench_function("chamfer_2000", |b| b.iter(|| chamfer(black_box(&a), &bb).unwrap()));
}

fn loss(c: &mut Criterion) {
    let mut spec = SyntheticSpec::hinge(2, 0.5);
    spec.samples_per_frame = 500;
    let seq = generate_sequence(&spec, 0).unwrap();
    let obs: Vec<_> = seq
        .clouds
        .into_iter()
        .enumerate()
        .map(|(f, cl)| FrameObservation::new(f, cl).unwrap())
        .collect();
    let cfg = FitConfig {
        grid_resolution: 32,
        ..FitConfig::default()
    };
    let mut state = FitState::initialize(&obs, &cfg).unwrap();
    state.refresh_assignments(&cfg).unwrap();
    let mut group = c.benchmark_group("fitting");
    group.sample_size(10);
    group.bench_function("gradients_2_frames", |b| b.iter(|| gradients(&state, &obs, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, deformation, geometry, loss);
criterion_main!(benches);
