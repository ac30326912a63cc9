//! Chamfer distance and F-score between point clouds.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{bounds_of, sample_points_uniform, PointCloud, TriangleMesh};
use crate::spatial::KdTree;

pub const EVAL_SAMPLES: usize = 10_000;

pub const CHAMFER_CONVENTION: &str =
    "mean squared nearest distance in both directions, on clouds scaled by 1/(ground-truth bbox diagonal), x1e4";

/// Squared distance from every point of `from` to its nearest point in `to`.
fn nearest_sq(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Vec<f64> {
    let tree = KdTree::new(to);
    from.iter()
        .map(|p| tree.nearest(p).map(|(_, d)| d).unwrap_or(f64::INFINITY))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(())
}

/// Mean squared nearest distance from A to B plus from B to A.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check(a, b)?;
    Ok(mean(&nearest_sq(a.points(), b.points())) + mean(&nearest_sq(b.points(), a.points())))
}

/// Root-mean-square nearest distance, averaged over both directions, as a
/// fraction of the bounding-box diagonal of `gt`.
pub fn normalized_chamfer(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    let cd = chamfer(pred, gt)?;
    Ok((cd / 2.0).sqrt() / gt.bbox_diagonal())
}

/// F-score in percent at a threshold of `d` times the diagonal of the joint
/// bounding box of both clouds.
pub fn fscore(a: &PointCloud, b: &PointCloud, d: f64) -> Result<f64> {
    check(a, b)?;
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::invalid(format!("threshold fraction {d} outside (0, 1)")));
    }
    let all: Vec<Vector3<f64>> = a.points().iter().chain(b.points()).copied().collect();
    let diag = bounds_of(&all).map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0);
    let thr = d * diag;
    let within = |v: Vec<f64>| v.iter().filter(|&&s| s.sqrt() <= thr).count() as f64 / v.len() as f64;
    let precision = within(nearest_sq(a.points(), b.points()));
    let recall = within(nearest_sq(b.points(), a.points()));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// See [`CHAMFER_CONVENTION`].
    pub chamfer: f64,
    pub fscore_10: f64,
    pub fscore_5: f64,
    pub samples: usize,
    pub seed: u64,
}

impl MetricsRecord {
    pub fn csv_header() -> &'static str {
        "chamfer_x1e4,fscore_10,fscore_5,samples,seed"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.chamfer, self.fscore_10, self.fscore_5, self.samples, self.seed
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.csv_row())
    }

    pub fn to_json(&self) -> String {
        let value = serde_json::json!({
            "chamfer_x1e4": self.chamfer,
            "chamfer_convention": CHAMFER_CONVENTION,
            "fscore_10": self.fscore_10,
            "fscore_5": self.fscore_5,
            "samples": self.samples,
            "seed": self.seed,
        });
        serde_json::to_string_pretty(&value).unwrap_or_default() + "\n"
    }
}

/// Compare two meshes through `EVAL_SAMPLES` surface samples each. Both
/// meshes are sampled with the same seed.
pub fn evaluate(pred: &TriangleMesh, gt: &TriangleMesh, seed: u64) -> Result<MetricsRecord> {
    evaluate_with_samples(pred, gt, seed, EVAL_SAMPLES)
}

pub fn evaluate_with_samples(pred: &TriangleMesh, gt: &TriangleMesh, seed: u64, samples: usize) -> Result<MetricsRecord> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let p = sample_points_uniform(pred, samples, seed)?;
    let g = sample_points_uniform(gt, samples, seed)?;
    let diag = g.bbox_diagonal();
    if !(diag > 0.0) {
        return Err(Error::ZeroArea);
    }
    let scale = |c: &PointCloud| PointCloud::new(c.points().iter().map(|v| v / diag).collect());
    let (ps, gs) = (scale(&p)?, scale(&g)?);
    Ok(MetricsRecord {
        chamfer: chamfer(&ps, &gs)? * 1e4,
        fscore_10: fscore(&p, &g, 0.10)?,
        fscore_5: fscore(&p, &g, 0.05)?,
        samples,
        seed,
    })
}

/// Largest jump between consecutive deformed points of a path. A path
/// crossing a joint exposes seams as a single large step.
pub fn joint_discontinuity(
    path: &[Vector3<f64>],
    mut deform: impl FnMut(&Vector3<f64>) -> Result<Vector3<f64>>,
) -> Result<f64> {
    let moved = path.iter().map(&mut deform).collect::<Result<Vec<_>>>()?;
    Ok(moved.windows(2).map(|w| (w[1] - w[0]).norm()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::box_mesh;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap()
    }

    // O(n^2) reference written out independently of the tree
    fn chamfer_brute(a: &PointCloud, b: &PointCloud) -> f64 {
        let dir = |x: &PointCloud, y: &PointCloud| {
            let mut sum = 0.0;
            for p in x.points() {
                let mut best = f64::INFINITY;
                for q in y.points() {
                    best = best.min((p - q).norm_squared());
                }
                sum += best;
            }
            sum / x.len() as f64
        };
        dir(a, b) + dir(b, a)
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let empty = PointCloud::new(vec![]).unwrap();
        assert!(matches!(chamfer(&a, &empty), Err(Error::EmptyCloud)));
        assert!(fscore(&empty, &a, 0.1).is_err());
        assert!(fscore(&a, &b, 1.0).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (a, b) = (random_cloud(&mut rng, 100), random_cloud(&mut rng, 100));
            assert_eq!(chamfer(&a, &b).unwrap(), chamfer_brute(&a, &b));
        }
    }

    #[test]
    fn fscore_examples() {
        let a = cloud(&[[0.0; 3], [1.0, 1.0, 1.0]]);
        assert_eq!(fscore(&a, &a, 0.05).unwrap(), 100.0);
        let far = cloud(&[[100.0, 0.0, 0.0], [101.0, 1.0, 1.0]]);
        let near = cloud(&[[0.0; 3], [1.0, 1.0, 1.0]]);
        assert_eq!(fscore(&near, &far, 0.001).unwrap(), 0.0);
        // half of A matches B, all of B is matched
        let a = cloud(&[[0.0; 3], [10.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0; 3]]);
        let f = fscore(&a, &b, 0.05).unwrap();
        assert!((f - 200.0 / 3.0).abs() < 1e-9, "{f}");
    }

    #[test]
    fn evaluate_orders_degradations() {
        let gt = box_mesh(Vector3::new(-1.0, -0.5, -0.5), Vector3::new(1.0, 0.5, 0.5));
        let same = evaluate(&gt, &gt, 4).unwrap();
        assert!(same.chamfer < 1e-6 && same.fscore_5 > 99.0 && same.fscore_10 > 99.0);
        let scaled = evaluate(&gt.map_vertices(|v| v * 1.5), &gt, 4).unwrap();
        assert!(scaled.chamfer > same.chamfer && scaled.fscore_5 < same.fscore_5);
        let diag = (Vector3::new(2.0, 1.0, 1.0f64)).norm();
        let moved = evaluate(&gt.map_vertices(|v| v + Vector3::x() * 0.2 * diag), &gt, 4).unwrap();
        assert!(moved.fscore_10 < same.fscore_10);
        assert!(evaluate(&TriangleMesh::empty(), &gt, 4).is_err());
        assert_eq!(evaluate(&gt, &gt, 4).unwrap(), same);
    }

    #[test]
    fn metrics_serialise() {
        let r = MetricsRecord {
            chamfer: 1.5,
            fscore_10: 90.0,
            fscore_5: 80.0,
            samples: 10,
            seed: 7,
        };
        assert_eq!(r.to_csv(), "chamfer_x1e4,fscore_10,fscore_5,samples,seed\n1.5,90,80,10,7\n");
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["fscore_5"], 80.0);
    }

    #[test]
    fn discontinuity_of_a_step() {
        let path: Vec<_> = (0..11).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let smooth = joint_discontinuity(&path, |p| Ok(*p)).unwrap();
        let step = joint_discontinuity(&path, |p| Ok(if p.x > 0.5 { p + Vector3::y() } else { *p })).unwrap();
        assert!((smooth - 0.1).abs() < 1e-12);
        assert!(step > 1.0);
    }

    proptest! {
        #[test]
        fn symmetric_and_threshold_monotone(seed in 0u64..1000, n in 1usize..60, m in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_cloud(&mut rng, n), random_cloud(&mut rng, m));
            prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
            prop_assert!(fscore(&a, &b, 0.1).unwrap() >= fscore(&a, &b, 0.05).unwrap());
            let f = fscore(&a, &b, 0.05).unwrap();
            prop_assert!((0.0..=100.0).contains(&f));
        }
    }
}
