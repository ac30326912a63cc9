//! JSON rig description.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{Bone, BoneSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneConfig {
    pub center: [f64; 3],
    /// Unit quaternion `[w, x, y, z]` of the bone frame.
    pub orientation: [f64; 4],
    /// Diagonal precision.
    pub scale: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub bone_count: usize,
    pub bones: Vec<BoneConfig>,
    pub gamma: f64,
    pub eta: f64,
    pub zeta: f64,
}

impl RigConfig {
    pub fn from_bones(bones: &BoneSet, gamma: f64, eta: f64, zeta: f64) -> Self {
        let bones: Vec<BoneConfig> = bones
            .bones()
            .iter()
            .map(|b| {
                let q = UnitQuaternion::from_matrix(&b.orientation);
                BoneConfig {
                    center: [b.center.x, b.center.y, b.center.z],
                    orientation: [q.w, q.i, q.j, q.k],
                    scale: [b.scale.x, b.scale.y, b.scale.z],
                }
            })
            .collect();
        RigConfig {
            bone_count: bones.len(),
            bones,
            gamma,
            eta,
            zeta,
        }
    }

    pub fn bone_set(&self) -> Result<BoneSet> {
        if self.bone_count != self.bones.len() {
            return Err(Error::invalid(format!(
                "bone_count is {} but {} bones are listed",
                self.bone_count,
                self.bones.len()
            )));
        }
        let bones = self
            .bones
            .iter()
            .map(|b| {
                let [w, x, y, z] = b.orientation;
                let q = Quaternion::new(w, x, y, z);
                if (q.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::NonUnit(q.norm()));
                }
                Ok(Bone {
                    center: Vector3::from(b.center),
                    orientation: *UnitQuaternion::new_normalize(q).to_rotation_matrix().matrix(),
                    scale: Vector3::from(b.scale),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        BoneSet::new(bones)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
