//! Geodesic point assignment.
//!
//! A point clearly closer (in Mahalanobis terms) to one bone than to the
//! runner-up belongs to that bone. Otherwise the along-surface distances to
//! the two bones decide: nearly equal means the point sits on the joint and
//! both bones are assigned; otherwise the geodesically nearer bone wins.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::Vector3;

use super::{mahalanobis, AssignmentVector, BoneSet};
use crate::error::{Error, Result};
use crate::mesh::{GeodesicSolver, PointCloud, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Mahalanobis ratio test decided.
    Mahalanobis,
    /// Both bones assigned.
    Joint,
    /// Geodesically nearer bone.
    Geodesic,
    /// Geodesics undefined (separate mesh components); nearest bone by
    /// Mahalanobis distance.
    Fallback,
}

impl Branch {
    pub fn name(&self) -> &'static str {
        match self {
            Branch::Mahalanobis => "mahalanobis",
            Branch::Joint => "joint",
            Branch::Geodesic => "geodesic",
            Branch::Fallback => "fallback",
        }
    }
}

fn check_params(i: usize, j: usize, b: usize, eta: f64, zeta: f64) -> Result<()> {
    if i == j || i >= b || j >= b {
        return Err(Error::invalid(format!("need distinct bones below {b}, got {i} and {j}")));
    }
    if !(eta > 0.0 && eta < 1.0) || !(zeta > 0.0) {
        return Err(Error::invalid(format!("need 0 < eta < 1 and zeta > 0, got {eta}, {zeta}")));
    }
    Ok(())
}

/// Assignment of one point given its two nearest bones `i` (nearest) and
/// `j`, their Mahalanobis distances and the geodesic distances from the
/// point to each bone. Also reports which test decided.
#[allow(clippy::too_many_arguments)]
pub fn assign_point_traced(
    dm_i: f64,
    dm_j: f64,
    dg_i: f64,
    dg_j: f64,
    i: usize,
    j: usize,
    eta: f64,
    zeta: f64,
    b: usize,
) -> Result<(AssignmentVector, Branch)> {
    check_params(i, j, b, eta, zeta)?;
    if [dm_i, dm_j, dg_i, dg_j].iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::invalid("distances must be nonnegative"));
    }
    // dm_j = 0 forces dm_i = 0: the point sits on both centers
    if dm_j == 0.0 {
        return Ok((AssignmentVector::two_hot(b, i, j), Branch::Joint));
    }
    if dm_i / dm_j < 1.0 - eta {
        return Ok((AssignmentVector::one_hot(b, i), Branch::Mahalanobis));
    }
    let nearest = if dg_i <= dg_j { i } else { j };
    let m = dg_i.min(dg_j);
    if m == 0.0 {
        return Ok((AssignmentVector::one_hot(b, nearest), Branch::Geodesic));
    }
    if (dg_i - dg_j).abs() / m < zeta {
        return Ok((AssignmentVector::two_hot(b, i, j), Branch::Joint));
    }
    Ok((AssignmentVector::one_hot(b, nearest), Branch::Geodesic))
}

#[allow(clippy::too_many_arguments)]
pub fn assign_point(
    dm_i: f64,
    dm_j: f64,
    dg_i: f64,
    dg_j: f64,
    i: usize,
    j: usize,
    eta: f64,
    zeta: f64,
    b: usize,
) -> Result<AssignmentVector> {
    assign_point_traced(dm_i, dm_j, dg_i, dg_j, i, j, eta, zeta, b).map(|(m, _)| m)
}

/// Everything that went into one point's assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentRecord {
    pub point: usize,
    pub bone_i: usize,
    pub bone_j: usize,
    pub dm: (f64, f64),
    /// `None` when the Mahalanobis test decided or geodesics were undefined.
    pub dg: Option<(f64, f64)>,
    pub branch: Branch,
    pub mask: AssignmentVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentReport {
    pub records: Vec<AssignmentRecord>,
    /// Points that fell back to Mahalanobis-only assignment.
    pub fallback_count: usize,
}

impl AssignmentReport {
    pub fn assignments(&self) -> Vec<AssignmentVector> {
        self.records.iter().map(|r| r.mask.clone()).collect()
    }

    pub fn branch_count(&self, branch: Branch) -> usize {
        self.records.iter().filter(|r| r.branch == branch).count()
    }
}

/// Two smallest entries (ties to the lower index).
fn two_nearest(d: &[f64]) -> (usize, usize) {
    let mut i = 0;
    for b in 1..d.len() {
        if d[b] < d[i] {
            i = b;
        }
    }
    let mut j = if i == 0 { 1 } else { 0 };
    for b in 0..d.len() {
        if b != i && d[b] < d[j] {
            j = b;
        }
    }
    (i, j)
}

/// Assign every point: Mahalanobis ratio first, then geodesics on `mesh`
/// between the point's nearest vertex and the vertices nearest to the two
/// bone centers (one exact solve per bone).
pub fn assign_points_detailed(
    mesh: &TriangleMesh,
    bones: &BoneSet,
    points: &PointCloud,
    eta: f64,
    zeta: f64,
) -> Result<AssignmentReport> {
    let b = bones.len();
    if b == 1 {
        let records = (0..points.len())
            .map(|p| AssignmentRecord {
                point: p,
                bone_i: 0,
                bone_j: 0,
                dm: (mahalanobis(bones, &points.points()[p])[0], f64::INFINITY),
                dg: None,
                branch: Branch::Mahalanobis,
                mask: AssignmentVector::one_hot(1, 0),
            })
            .collect();
        return Ok(AssignmentReport {
            records,
            fallback_count: 0,
        });
    }
    check_params(0, 1, b, eta, zeta)?;
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }

    struct Pending {
        point: usize,
        i: usize,
        j: usize,
        dm: (f64, f64),
        vertex: usize,
    }
    let tree = mesh.vertex_tree();
    let nearest_vertex = |x: &Vector3<f64>| tree.nearest(x).map(|(v, _)| v).unwrap_or(0);
    let bone_vertex: Vec<usize> = bones.centers().iter().map(nearest_vertex).collect();

    let mut records: Vec<Option<AssignmentRecord>> = vec![None; points.len()];
    let mut pending = Vec::new();
    for (p, x) in points.points().iter().enumerate() {
        let d = mahalanobis(bones, x);
        let (i, j) = two_nearest(&d);
        let dm = (d[i], d[j]);
        if dm.1 > 0.0 && dm.0 / dm.1 < 1.0 - eta {
            records[p] = Some(AssignmentRecord {
                point: p,
                bone_i: i,
                bone_j: j,
                dm,
                dg: None,
                branch: Branch::Mahalanobis,
                mask: AssignmentVector::one_hot(b, i),
            });
        } else {
            pending.push(Pending {
                point: p,
                i,
                j,
                dm,
                vertex: nearest_vertex(x),
            });
        }
    }

    // one solve per bone over every target vertex that needs it
    let solver = GeodesicSolver::new(mesh);
    let mut wanted: Vec<Vec<usize>> = vec![Vec::new(); b];
    for q in &pending {
        for bone in [q.i, q.j] {
            if solver.same_component(bone_vertex[bone], q.vertex) {
                wanted[bone].push(q.vertex);
            }
        }
    }
    let mut dist: Vec<HashMap<usize, f64>> = vec![HashMap::new(); b];
    for bone in 0..b {
        let mut targets = std::mem::take(&mut wanted[bone]);
        targets.sort_unstable();
        targets.dedup();
        if targets.is_empty() {
            continue;
        }
        let d = solver.distances(bone_vertex[bone], &targets)?;
        dist[bone] = targets.into_iter().zip(d).collect();
    }

    let mut fallback_count = 0;
    for q in pending {
        let geo = dist[q.i]
            .get(&q.vertex)
            .zip(dist[q.j].get(&q.vertex))
            .map(|(&a, &c)| (a, c));
        let record = match geo {
            Some(dg) => {
                let (mask, branch) =
                    assign_point_traced(q.dm.0, q.dm.1, dg.0, dg.1, q.i, q.j, eta, zeta, b)?;
                AssignmentRecord {
                    point: q.point,
                    bone_i: q.i,
                    bone_j: q.j,
                    dm: q.dm,
                    dg: Some(dg),
                    branch,
                    mask,
                }
            }
            None => {
                fallback_count += 1;
                AssignmentRecord {
                    point: q.point,
                    bone_i: q.i,
                    bone_j: q.j,
                    dm: q.dm,
                    dg: None,
                    branch: Branch::Fallback,
                    mask: AssignmentVector::one_hot(b, q.i),
                }
            }
        };
        records[q.point] = Some(record);
    }
    if fallback_count > 0 {
        log::debug!("{fallback_count} points assigned without geodesics (disconnected mesh)");
    }
    Ok(AssignmentReport {
        records: records.into_iter().flatten().collect(),
        fallback_count,
    })
}

pub fn assign_points(
    mesh: &TriangleMesh,
    bones: &BoneSet,
    points: &PointCloud,
    eta: f64,
    zeta: f64,
) -> Result<Vec<AssignmentVector>> {
    Ok(assign_points_detailed(mesh, bones, points, eta, zeta)?.assignments())
}

/// CSV with one row per point:
/// `point,bone_i,bone_j,dm_i,dm_j,dg_i,dg_j,branch,mask`; `mask` lists the
/// assigned bones separated by `;`, geodesic columns are empty when unused.
pub fn write_diagnostics_csv(report: &AssignmentReport) -> String {
    let mut out = String::from("point,bone_i,bone_j,dm_i,dm_j,dg_i,dg_j,branch,mask\n");
    for r in &report.records {
        let (gi, gj) = match r.dg {
            Some((a, b)) => (a.to_string(), b.to_string()),
            None => (String::new(), String::new()),
        };
        let mask: Vec<String> = r.mask.assigned().iter().map(|b| b.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.point,
            r.bone_i,
            r.bone_j,
            r.dm.0,
            r.dm.1,
            gi,
            gj,
            r.branch.name(),
            mask.join(";")
        );
    }
    out
}
