//! Gaussian-bone skinning: Mahalanobis weights with a temperature, the
//! learnable per-bone weight offsets, geodesic point assignment, the sparse
//! skinning penalty and the forward/inverse blend deformations.

mod assign;
mod config;
mod deform;

pub use assign::{
    assign_point, assign_point_traced, assign_points, assign_points_detailed, write_diagnostics_csv,
    AssignmentRecord, AssignmentReport, Branch,
};
pub use config::{BoneConfig, RigConfig};
pub use deform::{
    cycle_residual, deform_forward, deform_inverse, qrbs_forward, qrbs_inverse, PoseState,
    SkinningBackend,
};
pub(crate) use deform::{blend_weights, forward_kernel, inverse_kernel, BoneT};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::field::{Aabb, Lattice};
use crate::scalar::{mat_vec, softmax, sub, Real, V3};

/// One Gaussian bone. `orientation` is `V` (rows are the bone axes in
/// canonical coordinates) and `scale` holds the diagonal precision, so a
/// larger entry narrows the bone's influence along that axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bone {
    pub center: Vector3<f64>,
    pub orientation: Matrix3<f64>,
    pub scale: Vector3<f64>,
}

impl Bone {
    pub fn isotropic(center: Vector3<f64>, precision: f64) -> Self {
        Bone {
            center,
            orientation: Matrix3::identity(),
            scale: Vector3::repeat(precision),
        }
    }

    pub(crate) fn to_t<T: Real>(self) -> BoneT<T> {
        BoneT {
            center: [self.center.x, self.center.y, self.center.z].map(T::cst),
            rot: std::array::from_fn(|i| std::array::from_fn(|j| T::cst(self.orientation[(i, j)]))),
            prec: [self.scale.x, self.scale.y, self.scale.z].map(T::cst),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoneSet {
    bones: Vec<Bone>,
}

impl BoneSet {
    pub fn new(bones: Vec<Bone>) -> Result<Self> {
        if bones.is_empty() {
            return Err(Error::invalid("a rig needs at least one bone"));
        }
        for (b, bone) in bones.iter().enumerate() {
            let v = bone.orientation;
            let err = (v.transpose() * v - Matrix3::identity()).amax();
            if err > 1e-6 || (v.determinant() - 1.0).abs() > 1e-6 {
                return Err(Error::NonOrthonormal(err));
            }
            if bone.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                return Err(Error::invalid(format!("bone {b} has a non-positive scale")));
            }
            if bone.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("bone {b} center is not finite")));
            }
        }
        Ok(BoneSet { bones })
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn centers(&self) -> Vec<Vector3<f64>> {
        self.bones.iter().map(|b| b.center).collect()
    }

    pub(crate) fn to_t<T: Real>(&self) -> Vec<BoneT<T>> {
        self.bones.iter().map(|b| b.to_t()).collect()
    }
}

/// Squared Mahalanobis distance of `x` to every bone:
/// `(x - O)ᵀ Vᵀ Λ V (x - O)`.
pub fn mahalanobis(bones: &BoneSet, x: &Vector3<f64>) -> Vec<f64> {
    let xt = [x.x, x.y, x.z];
    bones
        .to_t::<f64>()
        .iter()
        .map(|b| mahalanobis_t(b, xt))
        .collect()
}

pub(crate) fn mahalanobis_t<T: Real>(b: &BoneT<T>, x: V3<T>) -> T {
    let d = mat_vec(&b.rot, sub(x, b.center));
    b.prec[0] * d[0].sq() + b.prec[1] * d[1].sq() + b.prec[2] * d[2].sq()
}

/// A point on the probability simplex over bones.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningWeights(Vec<f64>);

impl SkinningWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if w.is_empty() || w.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("not a simplex vector: {w:?}")));
        }
        Ok(SkinningWeights(w))
    }

    pub fn one_hot(len: usize, at: usize) -> Self {
        let mut w = vec![0.0; len];
        w[at] = 1.0;
        SkinningWeights(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        crate::scalar::argmax(self.0.iter().copied())
    }
}

/// Per-bone trilinear lattices over the canonical bounds giving the
/// additive weight offsets `W_Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaWeightField {
    lattice: Lattice,
    bones: usize,
    // bone-major: values[b * nodes + node]
    values: Vec<f64>,
}

pub const DEFAULT_DELTA_RESOLUTION: usize = 8;

impl DeltaWeightField {
    pub fn zeros(bones: usize, bounds: Aabb, res: [usize; 3]) -> Result<Self> {
        let lattice = Lattice::new(res, bounds)?;
        Ok(DeltaWeightField {
            values: vec![0.0; bones * lattice.node_count()],
            lattice,
            bones,
        })
    }

    pub fn from_values(bones: usize, bounds: Aabb, res: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let mut f = DeltaWeightField::zeros(bones, bounds, res)?;
        if values.len() != f.values.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("delta weight values: wrong length or non-finite"));
        }
        f.values = values;
        Ok(f)
    }

    pub fn bone_count(&self) -> usize {
        self.bones
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `W_Δ` of one bone at `x`.
    pub fn value(&self, bone: usize, x: &Vector3<f64>) -> f64 {
        let n = self.lattice.node_count();
        self.lattice
            .interpolate([x.x, x.y, x.z], |i| self.values[bone * n + i])
    }

    pub fn evaluate(&self, x: &Vector3<f64>) -> Vec<f64> {
        (0..self.bones).map(|b| self.value(b, x)).collect()
    }
}

/// `softmax((-d_M(x) + W_Δ(x)) / γ)`.
pub fn skin_weights(
    bones: &BoneSet,
    x: &Vector3<f64>,
    delta: &DeltaWeightField,
    gamma: f64,
) -> Result<SkinningWeights> {
    check_gamma(gamma)?;
    check_delta(bones, delta)?;
    let d = mahalanobis(bones, x);
    let logits: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(b, dm)| (-dm + delta.value(b, x)) / gamma)
        .collect();
    Ok(SkinningWeights(softmax(&logits)))
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {gamma}")));
    }
    Ok(())
}

pub(crate) fn check_delta(bones: &BoneSet, delta: &DeltaWeightField) -> Result<()> {
    if delta.bone_count() != bones.len() {
        return Err(Error::invalid(format!(
            "delta field has {} bones, rig has {}",
            delta.bone_count(),
            bones.len()
        )));
    }
    Ok(())
}

/// One-hot at the largest weight (lowest index on ties).
pub fn rigid_binarize(w: &SkinningWeights) -> SkinningWeights {
    SkinningWeights::one_hot(w.len(), w.argmax())
}

/// Binary mask over bones with exactly one or two entries set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentVector(Vec<bool>);

impl AssignmentVector {
    pub fn new(mask: Vec<bool>) -> Result<Self> {
        let set = mask.iter().filter(|&&m| m).count();
        if set == 0 || set > 2 {
            return Err(Error::invalid(format!(
                "assignment must have one or two bones set, got {set}"
            )));
        }
        Ok(AssignmentVector(mask))
    }

    pub fn one_hot(len: usize, at: usize) -> Self {
        let mut m = vec![false; len];
        m[at] = true;
        AssignmentVector(m)
    }

    pub fn two_hot(len: usize, a: usize, b: usize) -> Self {
        let mut m = vec![false; len];
        m[a] = true;
        m[b] = true;
        AssignmentVector(m)
    }

    pub fn mask(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_joint(&self) -> bool {
        self.0.iter().filter(|&&m| m).count() == 2
    }

    /// Bones that are set, in index order.
    pub fn assigned(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&b| self.0[b]).collect()
    }
}

/// `Σ ‖W ⊙ (1 - M)‖² / Σ (1 - M)` over all points and bones; zero when no
/// bone is left unassigned anywhere.
pub fn sparse_skin_loss(weights: &[SkinningWeights], masks: &[AssignmentVector]) -> Result<f64> {
    if weights.len() != masks.len() {
        return Err(Error::invalid(format!(
            "{} weight vectors for {} assignments",
            weights.len(),
            masks.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (w, m) in weights.iter().zip(masks) {
        if w.len() != m.len() {
            return Err(Error::invalid("weight and assignment lengths differ"));
        }
        for (wb, &mb) in w.as_slice().iter().zip(m.mask()) {
            if !mb {
                num += wb * wb;
                den += 1.0;
            }
        }
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}
