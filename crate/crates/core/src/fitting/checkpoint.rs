//! Checkpoint directories.
//!
//! | file          | contents                                          |
//! |---------------|---------------------------------------------------|
//! | `rig.json`    | bones, temperature and assignment thresholds      |
//! | `poses.json`  | per frame: bone, root and camera dual quaternions |
//! | `sdf.bin`     | canonical SDF grid (`SDF1`)                       |
//! | `color.bin`   | canonical color grid (`COL1`)                     |
//! | `delta.bin`   | weight-correction field (`DWF1`)                  |
//! | `config.json` | the fit configuration                             |
//! | `loss.csv`    | per-iteration loss terms                          |
//!
//! Dual quaternions are stored as 8 numbers, real part `[w, x, y, z]` then
//! dual part.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::FitConfig;
use super::loss::LossBreakdown;
use super::state::{FitState, LossRecord};
use crate::dq::DualQuaternion;
use crate::error::{Error, Result};
use crate::field::{ColorGrid, SdfGrid};
use crate::io;
use crate::skinning::{BoneSet, DeltaWeightField, PoseState, RigConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FramePoses {
    bones: Vec<[f64; 8]>,
    root: [f64; 8],
    camera: [f64; 8],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PosesFile {
    beta: f64,
    frames: Vec<FramePoses>,
}

fn pack(d: &DualQuaternion) -> [f64; 8] {
    let (r, u) = (d.real(), d.dual());
    [r[0], r[1], r[2], r[3], u[0], u[1], u[2], u[3]]
}

fn unpack(v: &[f64; 8]) -> Result<DualQuaternion> {
    DualQuaternion::new([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])
}

/// Everything needed to deform, render or extract a fitted model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub rig: RigConfig,
    pub bones: BoneSet,
    pub poses: Vec<PoseState>,
    pub delta: DeltaWeightField,
    pub sdf: SdfGrid,
    pub color: ColorGrid,
    pub beta: f64,
    pub config: FitConfig,
}

impl Checkpoint {
    pub fn from_state(state: &FitState, cfg: &FitConfig) -> Self {
        Checkpoint {
            rig: RigConfig::from_bones(&state.bones, state.gamma, cfg.eta, cfg.zeta),
            bones: state.bones.clone(),
            poses: state.poses.clone(),
            delta: state.delta.clone(),
            sdf: state.sdf.clone(),
            color: state.color.clone(),
            beta: state.beta,
            config: cfg.clone(),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.rig.gamma
    }

    /// Write the checkpoint files into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("rig.json"), self.rig.to_json())?;
        let poses = PosesFile {
            beta: self.beta,
            frames: self
                .poses
                .iter()
                .map(|p| {
                    Ok(FramePoses {
                        bones: p.bones.iter().map(pack).collect(),
                        root: pack(&DualQuaternion::from_rigid(&p.root)?),
                        camera: pack(&DualQuaternion::from_rigid(&p.camera)?),
                    })
                })
                .collect::<Result<_>>()?,
        };
        fs::write(dir.join("poses.json"), serde_json::to_string_pretty(&poses)? + "\n")?;
        io::write_file(dir.join("sdf.bin"), &io::encode_sdf(&self.sdf)?)?;
        io::write_file(dir.join("color.bin"), &io::encode_color(&self.color)?)?;
        io::write_file(dir.join("delta.bin"), &io::encode_delta(&self.delta)?)?;
        fs::write(dir.join("config.json"), self.config.to_json())?;
        fs::write(dir.join("loss.csv"), loss_csv(history))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| fs::read(dir.join(name));
        let rig = RigConfig::from_json(&fs::read_to_string(dir.join("rig.json"))?)?;
        let bones = rig.bone_set()?;
        let pf: PosesFile = serde_json::from_slice(&read("poses.json")?)?;
        let poses = pf
            .frames
            .iter()
            .map(|f| {
                if f.bones.len() != bones.len() {
                    return Err(Error::invalid(format!(
                        "poses.json lists {} bone transforms, rig has {} bones",
                        f.bones.len(),
                        bones.len()
                    )));
                }
                Ok(PoseState {
                    bones: f.bones.iter().map(unpack).collect::<Result<_>>()?,
                    root: unpack(&f.root)?.to_rigid()?,
                    camera: unpack(&f.camera)?.to_rigid()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let delta = io::decode_delta(&read("delta.bin")?)?;
        if delta.bone_count() != bones.len() {
            return Err(Error::invalid(format!(
                "delta.bin has {} bones, rig has {}",
                delta.bone_count(),
                bones.len()
            )));
        }
        let config = match read("config.json") {
            Ok(text) => FitConfig::from_json(&String::from_utf8_lossy(&text))?,
            Err(_) => FitConfig::default(),
        };
        if !(pf.beta > 0.0) {
            return Err(Error::invalid("poses.json: beta must be positive"));
        }
        Ok(Checkpoint {
            rig,
            bones,
            poses,
            delta,
            sdf: io::decode_sdf(&read("sdf.bin")?)?,
            color: io::decode_color(&read("color.bin")?)?,
            beta: pf.beta,
            config,
        })
    }
}

/// One row per iteration: `iteration,phase,total,<terms>`.
pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut out = format!("iteration,phase,{}\n", LossBreakdown::NAMES.join(","));
    for r in history {
        let vals: Vec<String> = r.terms.values().iter().map(|v| format!("{v:e}")).collect();
        out += &format!("{},{},{}\n", r.iteration, r.phase, vals.join(","));
    }
    out
}
