//! Triangle meshes and point clouds.

mod geodesic;
mod obj;

pub use geodesic::{geodesic_distance, graph_distance_upper_bound, GeodesicSolver};
pub use obj::{load_mesh, parse_obj, save_mesh, write_obj};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spatial::KdTree;

/// Faces whose area falls below this fraction of their squared longest edge
/// are treated as degenerate.
pub(crate) const DEGENERATE_AREA_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    colors: Option<Vec<Vector3<f64>>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriangleMesh {
            vertices,
            faces,
            colors: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        TriangleMesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            colors: None,
        }
    }

    /// Attach per-vertex colors in `[0,1]^3`.
    pub fn with_colors(mut self, colors: Vec<Vector3<f64>>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        if colors
            .iter()
            .any(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidMesh("vertex color outside [0,1]".into()));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &idx in f {
                if idx >= n {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: idx,
                        count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} repeats a vertex: {f:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> Option<&[Vector3<f64>]> {
        self.colors.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn face_corners(&self, f: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalised normal (twice the area, right-handed winding).
    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_corners(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_normal(f).norm()
    }

    pub(crate) fn is_degenerate(&self, f: usize) -> bool {
        let [a, b, c] = self.face_corners(f);
        let longest = (b - a)
            .norm_squared()
            .max((c - b).norm_squared())
            .max((a - c).norm_squared());
        self.face_area(f) <= DEGENERATE_AREA_RATIO * longest
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        bounds_of(&self.vertices)
    }

    /// Apply a point map to every vertex, keeping topology and colors.
    pub fn map_vertices(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        TriangleMesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        }
    }

    /// Index of the closest vertex; ties go to the smallest index.
    pub fn nearest_vertex(&self, query: &Vector3<f64>) -> Result<usize> {
        crate::spatial::nearest_brute_force(&self.vertices, query)
            .map(|(i, _)| i)
            .ok_or(Error::EmptyMesh)
    }

    /// A tree over the vertices, for repeated [`Self::nearest_vertex`]-style queries.
    pub fn vertex_tree(&self) -> KdTree {
        KdTree::new(&self.vertices)
    }

    /// Disjoint union of two meshes.
    pub fn merged(&self, other: &TriangleMesh) -> TriangleMesh {
        let off = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        let colors = match (&self.colors, &other.colors) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        TriangleMesh {
            vertices,
            faces,
            colors,
        }
    }

    /// Area-weighted uniform samples expressed as `(face, barycentric)`.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            if !self.is_degenerate(f) {
                total += self.face_area(f);
            }
            cdf.push(total);
        }
        if total <= 0.0 {
            return Err(Error::ZeroArea);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.random::<f64>() * total;
            let mut face = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            while self.is_degenerate(face) {
                // u landed exactly on a boundary; step to the next face with area
                face = (face + 1) % cdf.len();
            }
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let s = r1.sqrt();
            out.push(SurfaceSample {
                face,
                bary: [1.0 - s, s * (1.0 - r2), s * r2],
            });
        }
        Ok(out)
    }

    pub fn sample_position(&self, s: &SurfaceSample) -> Vector3<f64> {
        let [a, b, c] = self.face_corners(s.face);
        a * s.bary[0] + b * s.bary[1] + c * s.bary[2]
    }

    /// Barycentric interpolation of vertex colors, if present.
    pub fn sample_color(&self, s: &SurfaceSample) -> Option<Vector3<f64>> {
        let colors = self.colors.as_ref()?;
        let [a, b, c] = self.faces[s.face];
        Some(colors[a] * s.bary[0] + colors[b] * s.bary[1] + colors[c] * s.bary[2])
    }
}

/// A point on a mesh face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub face: usize,
    pub bary: [f64; 3],
}

pub(crate) fn bounds_of(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let first = points.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Some((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    colors: Option<Vec<Vector3<f64>>>,
    seed: Option<u64>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        Ok(PointCloud {
            points,
            colors: None,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_colors(mut self, colors: Vec<Vector3<f64>>) -> Result<Self> {
        if colors.len() != self.points.len() {
            return Err(Error::invalid("color count does not match point count"));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Vector3<f64>]> {
        self.colors.as_deref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        bounds_of(&self.points)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }
}

/// Area-weighted uniform sampling of `n` surface points, deterministic in `seed`.
pub fn sample_points_uniform(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let samples = mesh.sample_surface(n, seed)?;
    let points = samples.iter().map(|s| mesh.sample_position(s)).collect();
    let mut cloud = PointCloud::new(points)?.with_seed(seed);
    if mesh.colors().is_some() {
        let colors = samples
            .iter()
            .map(|s| mesh.sample_color(s).unwrap_or_else(Vector3::zeros))
            .collect();
        cloud = cloud.with_colors(colors)?;
    }
    Ok(cloud)
}

/// Geodesic icosphere: the icosahedron subdivided `level` times with
/// vertices projected to the sphere of the given radius.
pub fn icosphere(level: usize, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mids = std::collections::HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    TriangleMesh {
        vertices,
        faces,
        colors: None,
    }
}

/// Closed axis-aligned box with outward-facing triangles.
pub fn box_mesh(min: Vector3<f64>, max: Vector3<f64>) -> TriangleMesh {
    let c = |x: usize, y: usize, z: usize| {
        Vector3::new(
            if x == 0 { min.x } else { max.x },
            if y == 0 { min.y } else { max.y },
            if z == 0 { min.z } else { max.z },
        )
    };
    let vertices = vec![
        c(0, 0, 0),
        c(1, 0, 0),
        c(1, 1, 0),
        c(0, 1, 0),
        c(0, 0, 1),
        c(1, 0, 1),
        c(1, 1, 1),
        c(0, 1, 1),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [0, 4, 7],
        [0, 7, 3],
    ];
    TriangleMesh {
        vertices,
        faces,
        colors: None,
    }
}

/// Closed box whose faces are split into an `n x n` grid of quads, giving
/// interior vertices for geodesic queries.
pub fn subdivided_box_mesh(min: Vector3<f64>, max: Vector3<f64>, n: usize) -> TriangleMesh {
    let n = n.max(1);
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut faces = Vec::new();
    // six faces: (fixed axis, side), parameterised over the other two axes
    for axis in 0..3 {
        for side in 0..2 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let mut ids = vec![vec![0usize; n + 1]; n + 1];
            for (i, row) in ids.iter_mut().enumerate() {
                for (j, id) in row.iter_mut().enumerate() {
                    let mut key = [0usize; 3];
                    key[axis] = side * n;
                    key[u] = i;
                    key[v] = j;
                    *id = *index.entry(key).or_insert_with(|| {
                        let p = Vector3::from_fn(|k, _| {
                            min[k] + (max[k] - min[k]) * key[k] as f64 / n as f64
                        });
                        vertices.push(p);
                        vertices.len() - 1
                    });
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let (a, b, c, d) = (ids[i][j], ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]);
                    // (u, v, axis) is right-handed, so u x v points along +axis
                    if side == 1 {
                        faces.push([a, b, c]);
                        faces.push([a, c, d]);
                    } else {
                        faces.push([a, c, b]);
                        faces.push([a, d, c]);
                    }
                }
            }
        }
    }
    TriangleMesh {
        vertices,
        faces,
        colors: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> TriangleMesh {
        box_mesh(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn rejects_out_of_range_and_repeated_indices() {
        let v = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 9]]),
            Err(Error::IndexOutOfRange { index: 9, .. })
        ));
        assert!(TriangleMesh::new(v, vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn nearest_vertex_cases() {
        let cube = unit_cube();
        let i = cube.nearest_vertex(&Vector3::new(0.9, 0.9, 0.9)).unwrap();
        assert_eq!(cube.vertices()[i], Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(cube.nearest_vertex(&cube.vertices()[3]).unwrap(), 3);
        // (1, .5, .5) is equidistant from vertices 1, 2, 5 and 6
        let q = (cube.vertices()[2] + cube.vertices()[5]) * 0.5;
        assert_eq!(cube.nearest_vertex(&q).unwrap(), 1);
        assert!(matches!(
            TriangleMesh::empty().nearest_vertex(&q),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn tie_break_prefers_smaller_index() {
        let v = vec![
            Vector3::new(5.0, 0.0, 0.0),
            Vector3::new(9.0, 9.0, 9.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(7.0, 7.0, 7.0),
            Vector3::new(8.0, 8.0, 8.0),
            Vector3::new(1.0, 0.0, 0.0),
        ];
        let mesh = TriangleMesh::new(v, vec![]).unwrap();
        assert_eq!(mesh.nearest_vertex(&Vector3::zeros()).unwrap(), 2);
    }

    #[test]
    fn icosphere_counts() {
        let s = icosphere(4, 1.0);
        assert_eq!(s.vertex_count(), 2562);
        assert_eq!(s.face_count(), 20 * 4usize.pow(4));
    }

    #[test]
    fn sampling_is_deterministic_and_on_surface() {
        let s = icosphere(3, 1.0);
        let a = sample_points_uniform(&s, 10_000, 7).unwrap();
        let b = sample_points_uniform(&s, 10_000, 7).unwrap();
        assert_eq!(a, b);
        // chordal sag of the level-3 icosphere is well under 1%
        for p in a.points() {
            let r = p.norm();
            assert!(r <= 1.0 + 1e-12 && r > 0.99, "radius {r}");
        }
    }

    #[test]
    fn sampling_follows_area() {
        // one face of area 100 and one of area 1
        let v = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(20.0, 0.0, 0.0),
            Vector3::new(0.0, 10.0, 0.0),
            Vector3::new(100.0, 0.0, 0.0),
            Vector3::new(102.0, 0.0, 0.0),
            Vector3::new(100.0, 1.0, 0.0),
        ];
        let mesh = TriangleMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        assert!((mesh.face_area(0) - 100.0).abs() < 1e-12);
        assert!((mesh.face_area(1) - 1.0).abs() < 1e-12);
        let samples = mesh.sample_surface(10_100, 42).unwrap();
        let big = samples.iter().filter(|s| s.face == 0).count() as f64;
        // binomial(n = 10100, p = 100/101): mean 10000, sigma ~ 9.95
        let sigma = (10_100.0f64 * (100.0 / 101.0) * (1.0 / 101.0)).sqrt();
        assert!((big - 10_000.0).abs() <= 3.0 * sigma, "{big}");
    }

    #[test]
    fn sampling_rejects_zero_area() {
        let v = vec![Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0];
        let mesh = TriangleMesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert!(matches!(
            sample_points_uniform(&mesh, 5, 0),
            Err(Error::ZeroArea)
        ));
    }

    #[test]
    fn subdivided_box_is_closed_and_outward() {
        let b = subdivided_box_mesh(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0), 3);
        assert!((b.total_area() - 2.0 * (2.0 + 3.0 + 6.0)).abs() < 1e-9);
        let centroid = Vector3::new(0.5, 1.0, 1.5);
        for f in 0..b.face_count() {
            let [a, _, _] = b.face_corners(f);
            assert!(b.face_normal(f).dot(&(a - centroid)) > 0.0);
        }
    }
}
