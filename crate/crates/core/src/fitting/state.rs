//! Observations, the optimized state and its initialization.

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::FitConfig;
use crate::dq::RigidTransform;
use crate::error::{Error, Result};
use crate::field::{extract_mesh, Aabb, ColorGrid, Ray, SdfGrid, DEFAULT_ISO};
use crate::mesh::{PointCloud, TriangleMesh};
use crate::skinning::{
    assign_points_detailed, AssignmentReport, AssignmentVector, Bone, BoneSet, DeltaWeightField, PoseState,
};

/// Pinhole camera looking down `+z` of its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Observation space to camera frame.
    pub extrinsics: RigidTransform,
    pub near: f64,
    pub far: f64,
}

impl PinholeCamera {
    /// Ray through the center of pixel `(u, v)`, in observation space.
    pub fn ray(&self, u: usize, v: usize, frame: usize) -> Result<Ray> {
        let d = Vector3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        let inv = self.extrinsics.inverse();
        let dir = inv.rotation() * d.normalize();
        Ray::new(*inv.translation(), dir, self.near, self.far, frame)
    }

    pub fn rays(&self, frame: usize) -> Result<Vec<Ray>> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for v in 0..self.height {
            for u in 0..self.width {
                out.push(self.ray(u, v, frame)?);
            }
        }
        Ok(out)
    }
}

/// Binary object mask seen by a camera, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    pub camera: PinholeCamera,
    pub mask: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FrameObservation {
    pub frame: usize,
    pub cloud: PointCloud,
    pub silhouette: Option<Silhouette>,
}

impl FrameObservation {
    pub fn new(frame: usize, cloud: PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(FrameObservation {
            frame,
            cloud,
            silhouette: None,
        })
    }

    pub fn with_silhouette(mut self, s: Silhouette) -> Result<Self> {
        if s.mask.len() != s.camera.width * s.camera.height {
            return Err(Error::invalid(format!(
                "mask has {} pixels, camera is {}x{}",
                s.mask.len(),
                s.camera.width,
                s.camera.height
            )));
        }
        self.silhouette = Some(s);
        Ok(self)
    }
}

/// Canonical surface points with what is needed to move them with the SDF:
/// a sample at `p` with SDF value `s0` and gradient `g` when extracted
/// follows `p - g (s(p) - s0) / |g|^2` to first order.
#[derive(Debug, Clone, Default)]
pub struct SurfaceSamples {
    pub points: Vec<Vector3<f64>>,
    pub values: Vec<f64>,
    /// `g / |g|^2`, zero where the gradient vanishes.
    pub offsets: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub phase: &'static str,
    pub total: f64,
    pub terms: super::loss::LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct FitState {
    pub bones: BoneSet,
    /// One per observed frame.
    pub poses: Vec<PoseState>,
    pub delta: DeltaWeightField,
    pub sdf: SdfGrid,
    pub color: ColorGrid,
    pub beta: f64,
    pub gamma: f64,
    pub mesh: TriangleMesh,
    pub samples: SurfaceSamples,
    /// Canonical points whose assignments drive the sparse penalty.
    pub sparse_points: Vec<Vector3<f64>>,
    pub assignments: Vec<AssignmentVector>,
    pub report: Option<AssignmentReport>,
    pub history: Vec<LossRecord>,
}

impl FitState {
    /// Sphere SDF around the first frame, bones from k-means on its cloud,
    /// identity poses.
    pub fn initialize(obs: &[FrameObservation], cfg: &FitConfig) -> Result<Self> {
        cfg.validate()?;
        let first = obs.first().ok_or_else(|| Error::invalid("no observed frames"))?;
        let (lo, hi) = first.cloud.bounds().ok_or(Error::EmptyCloud)?;
        let center = (lo + hi) / 2.0;
        let radius = (hi - lo).norm() / 2.0;
        if !(radius > 0.0) {
            return Err(Error::invalid("first frame cloud has zero extent"));
        }
        let half = 1.3 * radius;
        let bounds = Aabb::new(center.add_scalar(-half), center.add_scalar(half))?;
        let r = cfg.grid_resolution;
        let sdf = SdfGrid::from_fn([r; 3], bounds, |p| (p - center).norm() - radius)?;
        let color = ColorGrid::uniform([r; 3], bounds, [0.5; 3])?;
        let delta = DeltaWeightField::zeros(cfg.bones, bounds, [cfg.delta_resolution; 3])?;
        let bones = kmeans_bones(first.cloud.points(), cfg.bones, cfg.seed)?;
        let mut state = FitState {
            poses: vec![PoseState::identity(cfg.bones); obs.len()],
            bones,
            delta,
            sdf,
            color,
            beta: cfg.beta_start,
            gamma: cfg.gamma_start,
            mesh: TriangleMesh::empty(),
            samples: SurfaceSamples::default(),
            sparse_points: Vec::new(),
            assignments: Vec::new(),
            report: None,
            history: Vec::new(),
        };
        state.resample_surface(cfg.surface_samples, cfg.seed)?;
        Ok(state)
    }

    /// Re-extract the canonical mesh and draw fresh surface samples.
    pub fn resample_surface(&mut self, n: usize, seed: u64) -> Result<()> {
        let mesh = extract_mesh(&self.sdf, DEFAULT_ISO);
        if mesh.is_empty() || mesh.total_area() <= 0.0 {
            warn!("canonical surface vanished; keeping the previous samples");
            return Ok(());
        }
        let picks = mesh.sample_surface(n, seed)?;
        let points: Vec<Vector3<f64>> = picks.iter().map(|s| mesh.sample_position(s)).collect();
        let values = points.iter().map(|p| self.sdf.value(p)).collect();
        let offsets = points
            .iter()
            .map(|p| {
                let g = self.sdf.gradient(p);
                let n2 = g.norm_squared();
                if n2 > 1e-12 {
                    g / n2
                } else {
                    Vector3::zeros()
                }
            })
            .collect();
        self.samples = SurfaceSamples {
            points,
            values,
            offsets,
        };
        self.mesh = mesh;
        Ok(())
    }

    /// Extract the canonical mesh and recompute the point assignments.
    /// An empty surface keeps the previous assignments.
    pub fn refresh_assignments(&mut self, cfg: &FitConfig) -> Result<()> {
        let mesh = extract_mesh(&self.sdf, DEFAULT_ISO);
        if mesh.is_empty() || mesh.total_area() <= 0.0 {
            warn!("extracted mesh is empty; keeping the previous assignments");
            return Ok(());
        }
        let picks = mesh.sample_surface(cfg.surface_samples, cfg.seed ^ 0x5eed)?;
        let points: Vec<Vector3<f64>> = picks.iter().map(|s| mesh.sample_position(s)).collect();
        let cloud = PointCloud::new(points.clone())?;
        let report = assign_points_detailed(&mesh, &self.bones, &cloud, cfg.eta, cfg.zeta)?;
        self.assignments = report.assignments();
        self.sparse_points = points;
        self.report = Some(report);
        self.mesh = mesh;
        Ok(())
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.history.iter().map(|r| r.total).reduce(f64::min)
    }
}

/// Bones from k-means (farthest-point seeding) on `points`: centers at the
/// cluster means, axes and precisions from the cluster covariance.
pub fn kmeans_bones(points: &[Vector3<f64>], k: usize, seed: u64) -> Result<BoneSet> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if k == 0 {
        return Err(Error::invalid("need at least one bone"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < k {
        let far = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, centers.iter().map(|c| (p - c).norm_squared()).fold(f64::INFINITY, f64::min)))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        centers.push(points[far.0]);
    }
    let mut label = vec![0; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (p, l) in points.iter().zip(label.iter_mut()) {
            let best = (0..k)
                .min_by(|&a, &b| (p - centers[a]).norm_squared().total_cmp(&(p - centers[b]).norm_squared()))
                .unwrap_or(0);
            changed |= best != *l;
            *l = best;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<_> = points.iter().zip(&label).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                *center = members.iter().copied().sum::<Vector3<f64>>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let diag = crate::mesh::bounds_of(points).map(|(lo, hi)| (hi - lo).norm()).unwrap_or(1.0);
    let floor = (0.01 * diag).powi(2);
    let bones = (0..k)
        .map(|c| {
            let members: Vec<_> = points.iter().zip(&label).filter(|(_, &l)| l == c).map(|(p, _)| *p).collect();
            let mut cov = Matrix3::zeros();
            for p in &members {
                let d = p - centers[c];
                cov += d * d.transpose();
            }
            cov /= members.len().max(1) as f64;
            let eig = SymmetricEigen::new(cov);
            let mut axes = eig.eigenvectors.transpose();
            if axes.determinant() < 0.0 {
                let flipped = -axes.row(2);
                axes.set_row(2, &flipped);
            }
            Bone {
                center: centers[c],
                orientation: axes,
                scale: eig.eigenvalues.map(|v| 1.0 / v.max(floor)),
            }
        })
        .collect();
    BoneSet::new(bones)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, sample_points_uniform};

    #[test]
    fn kmeans_splits_a_bar() {
        let bar = box_mesh(Vector3::new(-1.0, -0.25, -0.25), Vector3::new(1.0, 0.25, 0.25));
        let cloud = sample_points_uniform(&bar, 2000, 1).unwrap();
        let bones = kmeans_bones(cloud.points(), 2, 0).unwrap();
        let mut xs: Vec<f64> = bones.centers().iter().map(|c| c.x).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + 0.5).abs() < 0.1 && (xs[1] - 0.5).abs() < 0.1, "{xs:?}");
        for b in bones.bones() {
            assert!((b.orientation.determinant() - 1.0).abs() < 1e-9);
        }
        assert_eq!(kmeans_bones(cloud.points(), 2, 0).unwrap(), bones);
    }

    #[test]
    fn camera_rays_start_at_the_center() {
        let cam = PinholeCamera {
            width: 4,
            height: 4,
            fx: 4.0,
            fy: 4.0,
            cx: 2.0,
            cy: 2.0,
            extrinsics: RigidTransform::from_translation(Vector3::new(0.0, 0.0, 3.0)),
            near: 0.1,
            far: 6.0,
        };
        let rays = cam.rays(0).unwrap();
        assert_eq!(rays.len(), 16);
        for r in &rays {
            assert!((r.origin - Vector3::new(0.0, 0.0, -3.0)).norm() < 1e-12);
            assert!(r.direction.z > 0.8);
        }
    }
}
