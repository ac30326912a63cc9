//! Two-part hinged objects driven through an angle schedule.

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dq::{DualQuaternion, RigidTransform};
use crate::error::{Error, Result};
use crate::mesh::{sample_points_uniform, subdivided_box_mesh, PointCloud, TriangleMesh};
use crate::skinning::PoseState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Box {
        min: [f64; 3],
        max: [f64; 3],
        /// Grid cells per box face side.
        #[serde(default = "default_subdivisions")]
        subdivisions: usize,
    },
    /// Capped cylinder from `base` along `axis` (need not be unit).
    Cylinder {
        base: [f64; 3],
        axis: [f64; 3],
        radius: f64,
        #[serde(default = "default_segments")]
        segments: usize,
        #[serde(default = "default_subdivisions")]
        rings: usize,
    },
}

fn default_subdivisions() -> usize {
    6
}

fn default_segments() -> usize {
    24
}

impl Primitive {
    fn validate(&self) -> Result<()> {
        match self {
            Primitive::Box { min, max, subdivisions } => {
                if (0..3).any(|k| !(min[k] < max[k])) || *subdivisions == 0 {
                    return Err(Error::invalid(format!("bad box {min:?}..{max:?}")));
                }
            }
            Primitive::Cylinder {
                axis,
                radius,
                segments,
                rings,
                ..
            } => {
                if !(Vector3::from(*axis).norm() > 0.0) || !(*radius > 0.0) || *segments < 3 || *rings == 0 {
                    return Err(Error::invalid("bad cylinder"));
                }
            }
        }
        Ok(())
    }

    pub fn mesh(&self) -> TriangleMesh {
        match self {
            Primitive::Box { min, max, subdivisions } => {
                subdivided_box_mesh(Vector3::from(*min), Vector3::from(*max), *subdivisions)
            }
            Primitive::Cylinder {
                base,
                axis,
                radius,
                segments,
                rings,
            } => cylinder_mesh(Vector3::from(*base), Vector3::from(*axis), *radius, *segments, *rings),
        }
    }
}

/// Closed cylinder with outward-facing triangles and `rings` bands along
/// the axis.
pub fn cylinder_mesh(base: Vector3<f64>, axis: Vector3<f64>, radius: f64, segments: usize, rings: usize) -> TriangleMesh {
    let dir = axis.normalize();
    let helper = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = dir.cross(&helper).normalize();
    let v = dir.cross(&u);
    let mut vertices = Vec::new();
    for r in 0..=rings {
        let c = base + axis * (r as f64 / rings as f64);
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(c + (u * a.cos() + v * a.sin()) * radius);
        }
    }
    let ring = |r: usize, s: usize| r * segments + s % segments;
    let mut faces = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s + 1), ring(r + 1, s));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let bottom = vertices.len();
    vertices.push(base);
    let top = vertices.len();
    vertices.push(base + axis);
    for s in 0..segments {
        faces.push([bottom, ring(0, s + 1), ring(0, s)]);
        faces.push([top, ring(rings, s), ring(rings, s + 1)]);
    }
    // u x v = dir, so the side winding above faces outward
    TriangleMesh::new(vertices, faces).unwrap_or_else(|_| TriangleMesh::empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hinge {
    pub point: [f64; 3],
    /// Unit rotation axis.
    pub axis: [f64; 3],
}

/// A fixed first part and one or more parts rotating together about a
/// hinge, one angle per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub parts: Vec<Primitive>,
    pub hinge: Hinge,
    /// Hinge angle per frame, radians. The frame count is its length.
    pub angles: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples_per_frame: usize,
}

fn default_samples() -> usize {
    2000
}

impl SyntheticSpec {
    /// Two `2 x 0.5 x 0.5` blocks meeting at `x = 0`, hinged along the top
    /// edge of the contact face and opened linearly from 0 to `max_angle`.
    pub fn hinge(frames: usize, max_angle: f64) -> Self {
        SyntheticSpec {
            parts: vec![
                Primitive::Box {
                    min: [-1.0, -0.25, -0.25],
                    max: [0.0, 0.25, 0.25],
                    subdivisions: default_subdivisions(),
                },
                Primitive::Box {
                    min: [0.0, -0.25, -0.25],
                    max: [1.0, 0.25, 0.25],
                    subdivisions: default_subdivisions(),
                },
            ],
            hinge: Hinge {
                point: [0.0, 0.25, 0.0],
                axis: [0.0, 0.0, 1.0],
            },
            angles: linear_angles(frames, max_angle),
            samples_per_frame: default_samples(),
        }
    }

    /// Append the schedule played backwards, so frame `k` and frame
    /// `2K - 1 - k` share an angle.
    pub fn mirrored(mut self) -> Self {
        let back: Vec<f64> = self.angles.iter().rev().copied().collect();
        self.angles.extend(back);
        self
    }

    pub fn frame_count(&self) -> usize {
        self.angles.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::invalid("synthetic spec has no parts"));
        }
        if self.angles.is_empty() {
            return Err(Error::invalid("synthetic spec has no frames"));
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("non-finite hinge angle"));
        }
        if self.samples_per_frame == 0 {
            return Err(Error::invalid("samples_per_frame must be at least 1"));
        }
        let n = Vector3::from(self.hinge.axis).norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("hinge axis has norm {n}, expected 1")));
        }
        self.parts.iter().try_for_each(Primitive::validate)
    }

    /// Rigid motion of the moving parts at hinge angle `angle`.
    pub fn hinge_transform(&self, angle: f64) -> RigidTransform {
        RigidTransform::about_axis(Vector3::from(self.hinge.point), Vector3::from(self.hinge.axis), angle)
    }

    /// The rest mesh and, per vertex, the part it belongs to.
    pub fn rest_mesh(&self) -> (TriangleMesh, Vec<usize>) {
        let mut mesh = TriangleMesh::empty();
        let mut labels = Vec::new();
        for (p, part) in self.parts.iter().enumerate() {
            let m = part.mesh();
            labels.extend(std::iter::repeat_n(p, m.vertex_count()));
            mesh = mesh.merged(&m);
        }
        (mesh, labels)
    }
}

fn linear_angles(frames: usize, max_angle: f64) -> Vec<f64> {
    match frames {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..frames).map(|t| max_angle * t as f64 / (frames - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub rest: TriangleMesh,
    /// Part index per rest vertex; part 0 is fixed.
    pub labels: Vec<usize>,
    pub meshes: Vec<TriangleMesh>,
    /// One bone per part.
    pub poses: Vec<PoseState>,
    pub clouds: Vec<PointCloud>,
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Articulate the rest mesh through the schedule and sample an observation
/// cloud from every frame.
pub fn generate_sequence(spec: &SyntheticSpec, seed: u64) -> Result<Sequence> {
    spec.validate()?;
    let (rest, labels) = spec.rest_mesh();
    let mut meshes = Vec::with_capacity(spec.frame_count());
    let mut poses = Vec::with_capacity(spec.frame_count());
    let mut clouds = Vec::with_capacity(spec.frame_count());
    let mut warned = false;
    for (t, &angle) in spec.angles.iter().enumerate() {
        let motion = spec.hinge_transform(angle);
        let mut vertices = rest.vertices().to_vec();
        for (v, &l) in vertices.iter_mut().zip(&labels) {
            if l != 0 {
                *v = motion.apply(v);
            }
        }
        let mesh = TriangleMesh::new(vertices, rest.faces().to_vec())?;
        if !warned && parts_overlap(&mesh, &labels) {
            warn!("frame {t}: moving parts overlap the fixed part");
            warned = true;
        }
        let mut pose = PoseState::identity(spec.parts.len());
        let moving = DualQuaternion::from_rigid(&motion)?;
        for b in pose.bones.iter_mut().skip(1) {
            *b = moving;
        }
        clouds.push(sample_points_uniform(&mesh, spec.samples_per_frame, frame_seed(seed, t))?);
        meshes.push(mesh);
        poses.push(pose);
    }
    Ok(Sequence {
        rest,
        labels,
        meshes,
        poses,
        clouds,
    })
}

/// Whether the bounding box of the moving vertices intersects that of the
/// fixed ones with positive volume.
fn parts_overlap(mesh: &TriangleMesh, labels: &[usize]) -> bool {
    let bounds = |fixed: bool| {
        let pts: Vec<_> = mesh
            .vertices()
            .iter()
            .zip(labels)
            .filter(|(_, &l)| (l == 0) == fixed)
            .map(|(v, _)| *v)
            .collect();
        crate::mesh::bounds_of(&pts)
    };
    match (bounds(true), bounds(false)) {
        (Some((a0, a1)), Some((b0, b1))) => (0..3).all(|k| a0[k].max(b0[k]) + 1e-9 < a1[k].min(b1[k])),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_schedule_repeats_the_rest_mesh() {
        let mut spec = SyntheticSpec::hinge(4, 0.0);
        spec.samples_per_frame = 50;
        let seq = generate_sequence(&spec, 3).unwrap();
        for m in &seq.meshes {
            assert_eq!(m.vertices(), seq.rest.vertices());
            assert_eq!(m.faces(), seq.rest.faces());
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let mut spec = SyntheticSpec::hinge(1, 0.0);
        spec.hinge.point = [0.0; 3];
        let t = spec.hinge_transform(FRAC_PI_2);
        let p = t.apply(&Vector3::new(1.0, 0.0, 0.0));
        assert!((p - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn mirrored_schedule_is_palindromic() {
        let mut spec = SyntheticSpec::hinge(5, 1.0).mirrored();
        spec.samples_per_frame = 10;
        let seq = generate_sequence(&spec, 1).unwrap();
        let k = seq.meshes.len();
        assert_eq!(k, 10);
        for i in 0..k {
            assert_eq!(seq.meshes[i].vertices(), seq.meshes[k - 1 - i].vertices());
        }
    }

    #[test]
    fn moving_vertices_follow_the_ground_truth_pose() {
        let mut spec = SyntheticSpec::hinge(6, 1.2);
        spec.samples_per_frame = 10;
        let seq = generate_sequence(&spec, 9).unwrap();
        for (mesh, pose) in seq.meshes.iter().zip(&seq.poses) {
            for ((v, r), &l) in mesh.vertices().iter().zip(seq.rest.vertices()).zip(&seq.labels) {
                let expect = pose.bones[l].apply(r);
                assert!((v - expect).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = SyntheticSpec::hinge(3, 0.5);
        spec.hinge.axis = [0.0, 0.0, 2.0];
        assert!(generate_sequence(&spec, 0).is_err());
        let mut spec = SyntheticSpec::hinge(0, 0.5);
        assert!(spec.validate().is_err());
        spec = SyntheticSpec::hinge(2, 0.5);
        spec.parts.clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn cylinder_is_closed_and_outward() {
        let m = cylinder_mesh(Vector3::new(0.0, 0.0, -1.0), Vector3::new(0.0, 0.0, 2.0), 1.0, 32, 4);
        let exact = 2.0 * std::f64::consts::PI * 2.0 + 2.0 * std::f64::consts::PI;
        assert!((m.total_area() - exact).abs() / exact < 0.02);
        for f in 0..m.face_count() {
            let [a, b, c] = m.face_corners(f);
            let centroid = (a + b + c) / 3.0;
            assert!(m.face_normal(f).dot(&centroid) > 0.0);
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = SyntheticSpec::hinge(3, 0.4);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticSpec>(&text).unwrap(), spec);
    }
}
