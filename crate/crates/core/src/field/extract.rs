//! Iso-surface extraction by marching tetrahedra.
//!
//! Every lattice cell is split into the six tetrahedra that share its main
//! diagonal. All cells use the same split, so neighbouring cells agree on
//! their face diagonals and surface vertices (keyed by lattice edge) are
//! shared exactly: the output is watertight wherever the surface stays
//! inside the grid.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::SdfGrid;
use crate::mesh::TriangleMesh;

pub const DEFAULT_ISO: f64 = 0.0;

// corners of a cell, bit 0 = +x, bit 1 = +y, bit 2 = +z
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

struct Builder<'g> {
    grid: &'g SdfGrid,
    iso: f64,
    vertices: Vec<Vector3<f64>>,
    index: HashMap<(usize, usize), usize>,
    faces: Vec<[usize; 3]>,
}

impl Builder<'_> {
    fn position(&self, node: usize) -> Vector3<f64> {
        let [i, j, k] = self.grid.lattice().node_coords(node);
        self.grid.lattice().node_position(i, j, k)
    }

    /// Surface vertex on the lattice edge between an inside and an outside
    /// node; crossings that land on a node are keyed by that node alone.
    fn crossing(&mut self, inside: usize, outside: usize) -> usize {
        let v = self.grid.values();
        let (si, so) = (v[inside], v[outside]);
        let t = ((self.iso - si) / (so - si)).clamp(0.0, 1.0);
        let key = if t <= 0.0 {
            (inside, inside)
        } else if t >= 1.0 {
            (outside, outside)
        } else {
            (inside.min(outside), inside.max(outside))
        };
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let p = if key.0 == key.1 {
            self.position(key.0)
        } else {
            let (a, b) = (self.position(inside), self.position(outside));
            a + (b - a) * t
        };
        self.vertices.push(p);
        self.index.insert(key, self.vertices.len() - 1);
        self.vertices.len() - 1
    }

    /// Emit a triangle whose normal points from the inside nodes towards the
    /// outside ones.
    fn triangle(&mut self, tri: [usize; 3], towards_outside: Vector3<f64>) {
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return;
        }
        let [a, b, c] = tri.map(|i| self.vertices[i]);
        let n = (b - a).cross(&(c - a));
        if n.dot(&towards_outside) < 0.0 {
            self.faces.push([tri[0], tri[2], tri[1]]);
        } else {
            self.faces.push(tri);
        }
    }

    fn tetrahedron(&mut self, nodes: [usize; 4]) {
        let v = self.grid.values();
        let (mut ins, mut outs) = (Vec::with_capacity(4), Vec::with_capacity(4));
        for n in nodes {
            if v[n] < self.iso {
                ins.push(n);
            } else {
                outs.push(n);
            }
        }
        if ins.is_empty() || outs.is_empty() {
            return;
        }
        let centroid = |ns: &[usize], b: &Self| {
            ns.iter().map(|&n| b.position(n)).sum::<Vector3<f64>>() / ns.len() as f64
        };
        let dir = centroid(&outs, self) - centroid(&ins, self);
        match (ins.len(), outs.len()) {
            (1, 3) => {
                let t = [
                    self.crossing(ins[0], outs[0]),
                    self.crossing(ins[0], outs[1]),
                    self.crossing(ins[0], outs[2]),
                ];
                self.triangle(t, dir);
            }
            (3, 1) => {
                let t = [
                    self.crossing(ins[0], outs[0]),
                    self.crossing(ins[1], outs[0]),
                    self.crossing(ins[2], outs[0]),
                ];
                self.triangle(t, dir);
            }
            _ => {
                // quad a-b-d-c with a/b sharing ins[0] and c/d sharing ins[1]
                let a = self.crossing(ins[0], outs[0]);
                let b = self.crossing(ins[0], outs[1]);
                let c = self.crossing(ins[1], outs[0]);
                let d = self.crossing(ins[1], outs[1]);
                self.triangle([a, b, d], dir);
                self.triangle([a, d, c], dir);
            }
        }
    }
}

/// Triangulate the `iso` level set of the grid. Normals point towards
/// larger SDF values. A grid without a sign change yields an empty mesh.
pub fn extract_mesh(grid: &SdfGrid, iso: f64) -> TriangleMesh {
    let lat = *grid.lattice();
    let [nx, ny, nz] = lat.resolution();
    let mut b = Builder {
        grid,
        iso,
        vertices: Vec::new(),
        index: HashMap::new(),
        faces: Vec::new(),
    };
    let v = grid.values();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner = |c: usize| lat.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                let nodes: [usize; 8] = std::array::from_fn(corner);
                let below = nodes.iter().filter(|&&n| v[n] < iso).count();
                if below == 0 || below == 8 {
                    continue;
                }
                for tet in TETS {
                    b.tetrahedron(tet.map(|c| nodes[c]));
                }
            }
        }
    }
    TriangleMesh::new(b.vertices, b.faces).unwrap_or_else(|_| TriangleMesh::empty())
}
