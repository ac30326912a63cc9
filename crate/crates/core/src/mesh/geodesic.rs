//! Exact polyhedral geodesics by continuous-Dijkstra window propagation.
//!
//! A window is an interval on an edge together with the unfolded image of
//! the (pseudo-)source that reaches every point of the interval by a straight
//! line across the faces behind it. Windows are expanded face by face in
//! order of their smallest distance. Instead of trimming overlapping windows
//! against each other, a window is dropped only when a known vertex distance
//! plus a walk along the edge already beats it everywhere on the interval;
//! that keeps every window that carries a true shortest path while bounding
//! the total work.
//!
//! Geodesics can only bend at saddle vertices (cone angle above 2π), at
//! boundary and non-manifold vertices, and around degenerate faces. Those are
//! pseudo-sources: once their distance settles they emit fresh windows onto
//! the opposite edge of every incident face.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Window {
    edge: usize,
    // frame: `va` at the origin, `vb` at (len, 0), source below the x axis
    va: usize,
    vb: usize,
    from_face: usize,
    b0: f64,
    b1: f64,
    sx: f64,
    sy: f64,
    sigma: f64,
}

impl Window {
    fn dist_at(&self, x: f64) -> f64 {
        self.sigma + ((x - self.sx).powi(2) + self.sy * self.sy).sqrt()
    }

    fn min_dist(&self) -> f64 {
        self.dist_at(self.sx.clamp(self.b0, self.b1))
    }
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Window(usize),
    Vertex(usize),
}

struct Queued {
    key: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Precomputed connectivity for repeated exact geodesic solves on one mesh.
pub struct GeodesicSolver<'m> {
    mesh: &'m TriangleMesh,
    edge_index: HashMap<(usize, usize), usize>,
    edge_len: Vec<f64>,
    edge_faces: Vec<Vec<usize>>,
    edge_ends: Vec<[usize; 2]>,
    vertex_faces: Vec<Vec<usize>>,
    vertex_edges: Vec<Vec<usize>>,
    degenerate: Vec<bool>,
    pseudo: Vec<bool>,
    component: Vec<usize>,
    tol: f64,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl<'m> GeodesicSolver<'m> {
    pub fn new(mesh: &'m TriangleMesh) -> Self {
        let nv = mesh.vertex_count();
        let verts = mesh.vertices();
        let mut edge_index = HashMap::new();
        let mut edge_len = Vec::new();
        let mut edge_faces: Vec<Vec<usize>> = Vec::new();
        let mut edge_ends = Vec::new();
        let mut vertex_faces = vec![Vec::new(); nv];
        let mut vertex_edges = vec![Vec::new(); nv];
        for (f, face) in mesh.faces().iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edge_len.push((verts[a] - verts[b]).norm());
                    edge_faces.push(Vec::new());
                    edge_ends.push([key.0, key.1]);
                    vertex_edges[key.0].push(edge_len.len() - 1);
                    vertex_edges[key.1].push(edge_len.len() - 1);
                    edge_len.len() - 1
                });
                edge_faces[e].push(f);
                vertex_faces[face[k]].push(f);
            }
        }
        let degenerate: Vec<bool> = (0..mesh.face_count()).map(|f| mesh.is_degenerate(f)).collect();

        let mut angle = vec![0.0; nv];
        let mut pseudo = vec![false; nv];
        for (f, face) in mesh.faces().iter().enumerate() {
            if degenerate[f] {
                for &v in face {
                    pseudo[v] = true;
                }
                continue;
            }
            for k in 0..3 {
                let v = face[k];
                let p = verts[face[(k + 1) % 3]] - verts[v];
                let q = verts[face[(k + 2) % 3]] - verts[v];
                angle[v] += (p.dot(&q) / (p.norm() * q.norm())).clamp(-1.0, 1.0).acos();
            }
        }
        for (e, faces) in edge_faces.iter().enumerate() {
            if faces.len() != 2 {
                pseudo[edge_ends[e][0]] = true;
                pseudo[edge_ends[e][1]] = true;
            }
        }
        for v in 0..nv {
            if angle[v] > 2.0 * PI + 1e-9 || !fan_is_connected(mesh, v, &vertex_faces[v]) {
                pseudo[v] = true;
            }
        }

        let mut parent: Vec<usize> = (0..nv).collect();
        for &[a, b] in &edge_ends {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let component = (0..nv).map(|v| find(&mut parent, v)).collect();
        let diag = mesh.bounds().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(1.0);

        GeodesicSolver {
            mesh,
            edge_index,
            edge_len,
            edge_faces,
            edge_ends,
            vertex_faces,
            vertex_edges,
            degenerate,
            pseudo,
            component,
            tol: 1e-12 * diag.max(1e-300),
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        self.mesh
    }

    pub fn same_component(&self, a: usize, b: usize) -> bool {
        self.component[a] == self.component[b]
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v >= self.mesh.vertex_count() {
            return Err(Error::invalid(format!(
                "vertex {v} out of range for {} vertices",
                self.mesh.vertex_count()
            )));
        }
        Ok(())
    }

    /// Geodesic lengths from `source` to each of `targets`.
    pub fn distances(&self, source: usize, targets: &[usize]) -> Result<Vec<f64>> {
        self.check_vertex(source)?;
        for &t in targets {
            self.check_vertex(t)?;
            if !self.same_component(source, t) {
                return Err(Error::Disconnected {
                    source_vertex: source,
                    target: t,
                });
            }
        }
        let dist = self.propagate(source, Some(targets));
        Ok(targets.iter().map(|&t| dist[t]).collect())
    }

    /// Geodesic lengths from `source` to every vertex; `f64::INFINITY` for
    /// vertices in other components.
    pub fn all_distances(&self, source: usize) -> Result<Vec<f64>> {
        self.check_vertex(source)?;
        Ok(self.propagate(source, None))
    }

    fn propagate(&self, source: usize, targets: Option<&[usize]>) -> Vec<f64> {
        let mut run = Run {
            solver: self,
            dist: vec![f64::INFINITY; self.mesh.vertex_count()],
            windows: Vec::new(),
            heap: BinaryHeap::new(),
            seq: 0,
        };
        run.dist[source] = 0.0;
        run.emit_from_vertex(source);

        while let Some(top) = run.heap.pop() {
            if let Some(targets) = targets {
                let horizon = targets
                    .iter()
                    .map(|&t| run.dist[t])
                    .fold(0.0, f64::max);
                if top.key >= horizon {
                    break;
                }
            }
            match top.event {
                Event::Vertex(v) => {
                    if run.dist[v] == top.key {
                        run.emit_from_vertex(v);
                    }
                }
                Event::Window(w) => {
                    let win = run.windows[w];
                    if !run.dominated(&win) {
                        run.expand(&win);
                    }
                }
            }
        }
        run.dist
    }

    fn third_vertex(&self, face: usize, a: usize, b: usize) -> usize {
        let f = self.mesh.faces()[face];
        f.into_iter().find(|&v| v != a && v != b).unwrap_or(f[0])
    }

    fn edge_between(&self, a: usize, b: usize) -> usize {
        self.edge_index[&(a.min(b), a.max(b))]
    }
}

/// Whether the faces around `v` form a single fan (connected through edges
/// incident to `v`).
fn fan_is_connected(mesh: &TriangleMesh, v: usize, faces: &[usize]) -> bool {
    if faces.len() <= 1 {
        return true;
    }
    let mut seen = vec![false; faces.len()];
    let mut stack = vec![0];
    seen[0] = true;
    let others = |f: usize| -> Vec<usize> {
        mesh.faces()[f].iter().copied().filter(|&u| u != v).collect()
    };
    while let Some(i) = stack.pop() {
        let oi = others(faces[i]);
        for j in 0..faces.len() {
            if !seen[j] && others(faces[j]).iter().any(|u| oi.contains(u)) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

struct Run<'s, 'm> {
    solver: &'s GeodesicSolver<'m>,
    dist: Vec<f64>,
    windows: Vec<Window>,
    heap: BinaryHeap<Queued>,
    seq: u64,
}

impl Run<'_, '_> {
    fn push(&mut self, key: f64, event: Event) {
        self.seq += 1;
        self.heap.push(Queued {
            key,
            seq: self.seq,
            event,
        });
    }

    fn relax(&mut self, v: usize, d: f64) {
        if d < self.dist[v] {
            self.dist[v] = d;
            if self.solver.pseudo[v] {
                self.push(d, Event::Vertex(v));
            }
        }
    }

    /// A window is useless when walking from one of its edge's endpoints
    /// along the edge is already shorter at every point of the interval.
    fn dominated(&self, w: &Window) -> bool {
        let len = self.solver.edge_len[w.edge];
        let tol = self.solver.tol;
        // dist_at(x) - x is non-increasing, dist_at(x) + x non-decreasing
        w.dist_at(w.b1) > self.dist[w.va] + w.b1 + tol
            || w.dist_at(w.b0) > self.dist[w.vb] + (len - w.b0) + tol
    }

    fn add_window(&mut self, w: Window) {
        let len = self.solver.edge_len[w.edge];
        if !(w.b0.is_finite() && w.b1.is_finite()) || w.b1 - w.b0 <= 1e-12 * len {
            return;
        }
        if w.b0 <= 1e-12 * len {
            self.relax(w.va, w.dist_at(0.0));
        }
        if w.b1 >= len * (1.0 - 1e-12) {
            self.relax(w.vb, w.dist_at(len));
        }
        // a source on the edge's own line only grazes it; the endpoints
        // above already carry those rays
        if w.sy > -1e-12 * len || self.dominated(&w) {
            return;
        }
        self.windows.push(w);
        let id = self.windows.len() - 1;
        self.push(w.min_dist(), Event::Window(id));
    }

    fn emit_from_vertex(&mut self, v: usize) {
        let s = self.solver;
        let dv = self.dist[v];
        let verts = s.mesh.vertices();
        for &e in &s.vertex_edges[v] {
            let [a, b] = s.edge_ends[e];
            let u = if a == v { b } else { a };
            self.relax(u, dv + s.edge_len[e]);
        }
        for &f in &s.vertex_faces[v] {
            if s.degenerate[f] {
                continue;
            }
            let face = s.mesh.faces()[f];
            let k = face.iter().position(|&x| x == v).unwrap_or(0);
            let (p, q) = (face[(k + 1) % 3], face[(k + 2) % 3]);
            let e = s.edge_between(p, q);
            let len = s.edge_len[e];
            let lp = (verts[v] - verts[p]).norm_squared();
            let lq = (verts[v] - verts[q]).norm_squared();
            let sx = (len * len + lp - lq) / (2.0 * len);
            let sy = -(lp - sx * sx).max(0.0).sqrt();
            self.add_window(Window {
                edge: e,
                va: p,
                vb: q,
                from_face: f,
                b0: 0.0,
                b1: len,
                sx,
                sy,
                sigma: dv,
            });
        }
    }

    fn expand(&mut self, w: &Window) {
        let s = self.solver;
        let verts = s.mesh.vertices();
        let len = s.edge_len[w.edge];
        for fi in 0..s.edge_faces[w.edge].len() {
            let g = s.edge_faces[w.edge][fi];
            if g == w.from_face || s.degenerate[g] {
                continue;
            }
            let c = s.third_vertex(g, w.va, w.vb);
            let la2 = (verts[c] - verts[w.va]).norm_squared();
            let lb2 = (verts[c] - verts[w.vb]).norm_squared();
            let cx = (len * len + la2 - lb2) / (2.0 * len);
            let cy = (la2 - cx * cx).max(0.0).sqrt();
            if cy <= 1e-12 * len {
                continue;
            }
            let (sx, sy) = (w.sx, w.sy.min(0.0));
            // where the ray through c meets the window's edge
            let pc = sx + (cx - sx) * (-sy) / (cy - sy);
            if pc >= w.b0 && pc <= w.b1 {
                let dc = w.sigma + ((cx - sx).powi(2) + (cy - sy).powi(2)).sqrt();
                self.relax(c, dc);
            }

            // intersection parameter along P0 -> P1 of the ray through (p, 0)
            let hit = |p0: [f64; 2], u: [f64; 2], p: f64| -> f64 {
                let d = [p - sx, -sy];
                let num = (sx - p0[0]) * d[1] - (sy - p0[1]) * d[0];
                let den = u[0] * d[1] - u[1] * d[0];
                (num / den).clamp(0.0, 1.0)
            };

            if w.b0 < pc {
                let la = la2.sqrt();
                let u = [cx, cy];
                let lo = hit([0.0, 0.0], u, w.b0) * la;
                let hi = hit([0.0, 0.0], u, w.b1.min(pc)) * la;
                let ex = [cx / la, cy / la];
                let ey = [-ex[1], ex[0]];
                self.add_window(Window {
                    edge: s.edge_between(w.va, c),
                    va: w.va,
                    vb: c,
                    from_face: g,
                    b0: lo.min(hi),
                    b1: lo.max(hi),
                    sx: sx * ex[0] + sy * ex[1],
                    sy: (sx * ey[0] + sy * ey[1]).min(0.0),
                    sigma: w.sigma,
                });
            }
            if w.b1 > pc {
                let lb = lb2.sqrt();
                let u = [len - cx, -cy];
                let lo = hit([cx, cy], u, w.b0.max(pc)) * lb;
                let hi = hit([cx, cy], u, w.b1) * lb;
                let ex = [u[0] / lb, u[1] / lb];
                let ey = [-ex[1], ex[0]];
                let (rx, ry) = (sx - cx, sy - cy);
                self.add_window(Window {
                    edge: s.edge_between(c, w.vb),
                    va: c,
                    vb: w.vb,
                    from_face: g,
                    b0: lo.min(hi),
                    b1: lo.max(hi),
                    sx: rx * ex[0] + ry * ex[1],
                    sy: (rx * ey[0] + ry * ey[1]).min(0.0),
                    sigma: w.sigma,
                });
            }
        }
    }
}

/// Exact surface distance from `source` to each target vertex.
pub fn geodesic_distance(mesh: &TriangleMesh, source: usize, targets: &[usize]) -> Result<Vec<f64>> {
    GeodesicSolver::new(mesh).distances(source, targets)
}

/// Dijkstra over vertices and edge midpoints, with every pair of those six
/// nodes per face joined by a straight in-face segment. Each such path lies
/// on the surface, so the result bounds the true geodesic from above.
pub fn graph_distance_upper_bound(
    mesh: &TriangleMesh,
    source: usize,
    targets: &[usize],
) -> Result<Vec<f64>> {
    let nv = mesh.vertex_count();
    if source >= nv || targets.iter().any(|&t| t >= nv) {
        return Err(Error::invalid("vertex index out of range"));
    }
    let verts = mesh.vertices();
    let mut mid_index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pos: Vec<nalgebra::Vector3<f64>> = verts.to_vec();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
    for face in mesh.faces() {
        let mut nodes = face.to_vec();
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            let id = *mid_index.entry((a.min(b), a.max(b))).or_insert_with(|| {
                pos.push((verts[a] + verts[b]) * 0.5);
                adj.push(Vec::new());
                pos.len() - 1
            });
            nodes.push(id);
        }
        for i in 0..6 {
            for j in i + 1..6 {
                let d = (pos[nodes[i]] - pos[nodes[j]]).norm();
                adj[nodes[i]].push((nodes[j], d));
                adj[nodes[j]].push((nodes[i], d));
            }
        }
    }
    let mut dist = vec![f64::INFINITY; pos.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Queued {
        key: 0.0,
        seq: source as u64,
        event: Event::Vertex(source),
    });
    while let Some(Queued { key, event, .. }) = heap.pop() {
        let Event::Vertex(u) = event else { continue };
        if key > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            if key + w < dist[v] {
                dist[v] = key + w;
                heap.push(Queued {
                    key: dist[v],
                    seq: v as u64,
                    event: Event::Vertex(v),
                });
            }
        }
    }
    let mut out = Vec::with_capacity(targets.len());
    for &t in targets {
        if !dist[t].is_finite() {
            return Err(Error::Disconnected {
                source_vertex: source,
                target: t,
            });
        }
        out.push(dist[t]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, subdivided_box_mesh};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    /// Two unit squares meeting at a right angle along x = 1, each split into
    /// an n x n grid with alternating diagonals.
    fn folded_strip(n: usize) -> TriangleMesh {
        let mut vertices = Vec::new();
        // u runs 0..2 across the fold, v runs 0..1 along it
        for i in 0..=2 * n {
            for j in 0..=n {
                let u = i as f64 / n as f64;
                let v = j as f64 / n as f64;
                vertices.push(if u <= 1.0 {
                    Vector3::new(u, v, 0.0)
                } else {
                    Vector3::new(1.0, v, u - 1.0)
                });
            }
        }
        let id = |i: usize, j: usize| i * (n + 1) + j;
        let mut faces = Vec::new();
        for i in 0..2 * n {
            for j in 0..n {
                if (i + j) % 2 == 0 {
                    faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                    faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                } else {
                    faces.push([id(i, j), id(i + 1, j), id(i, j + 1)]);
                    faces.push([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
                }
            }
        }
        TriangleMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn flat_square_diagonal() {
        let d = geodesic_distance(&unit_square(), 0, &[2, 0]).unwrap();
        assert!((d[0] - 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn unfolds_across_fold() {
        let n = 4;
        let mesh = folded_strip(n);
        let a = 0;
        let b = mesh
            .nearest_vertex(&Vector3::new(1.0, 1.0, 1.0))
            .unwrap();
        assert_eq!(mesh.vertices()[b], Vector3::new(1.0, 1.0, 1.0));
        let d = geodesic_distance(&mesh, a, &[b]).unwrap()[0];
        assert!((d - 5f64.sqrt()).abs() < 1e-9, "{d}");
    }

    #[test]
    fn antipodal_on_icosphere() {
        let s = icosphere(4, 1.0);
        let a = s.nearest_vertex(&Vector3::new(0.0, 1.0, 0.0)).unwrap();
        let p = s.vertices()[a];
        let b = s.nearest_vertex(&(-p)).unwrap();
        let d = geodesic_distance(&s, a, &[b]).unwrap()[0];
        assert!((d - PI).abs() / PI < 0.03, "{d}");
        let oracle = graph_distance_upper_bound(&s, a, &[b]).unwrap()[0];
        assert!(d <= oracle + 1e-9);
    }

    #[test]
    fn symmetric_bounded_and_triangle_inequality() {
        let mesh = subdivided_box_mesh(Vector3::zeros(), Vector3::new(1.0, 0.6, 0.4), 3);
        let solver = GeodesicSolver::new(&mesh);
        let n = mesh.vertex_count();
        let all: Vec<Vec<f64>> = (0..n).map(|s| solver.all_distances(s).unwrap()).collect();
        let v = mesh.vertices();
        for a in 0..n {
            assert_eq!(all[a][a], 0.0);
            let oracle = graph_distance_upper_bound(&mesh, a, &(0..n).collect::<Vec<_>>()).unwrap();
            for b in 0..n {
                assert!((all[a][b] - all[b][a]).abs() < 1e-9);
                assert!(all[a][b] >= (v[a] - v[b]).norm() - 1e-12);
                assert!(all[a][b] <= oracle[b] + 1e-9);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, b, c) = (
                rng.random_range(0..n),
                rng.random_range(0..n),
                rng.random_range(0..n),
            );
            assert!(all[a][c] <= all[a][b] + all[b][c] + 1e-6);
        }
    }

    #[test]
    fn box_corner_to_corner_unfolds() {
        // opposite corners of a 1 x 1 x 1 cube: unfold two faces, sqrt(1 + 4)
        let mesh = subdivided_box_mesh(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), 2);
        let a = mesh.nearest_vertex(&Vector3::zeros()).unwrap();
        let b = mesh.nearest_vertex(&Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let d = geodesic_distance(&mesh, a, &[b]).unwrap()[0];
        assert!((d - 5f64.sqrt()).abs() < 1e-9, "{d}");
    }

    #[test]
    fn disconnected_components_error() {
        let a = subdivided_box_mesh(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), 1);
        let b = subdivided_box_mesh(Vector3::new(3.0, 0.0, 0.0), Vector3::new(4.0, 1.0, 1.0), 1);
        let both = a.merged(&b);
        let far = a.vertex_count();
        assert!(matches!(
            geodesic_distance(&both, 0, &[far]),
            Err(Error::Disconnected { .. })
        ));
        assert!(geodesic_distance(&both, 0, &[1]).is_ok());
    }
}
