//! Fit configuration. Every field has a default, so a config file only
//! needs the values it changes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skinning::SkinningBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Symmetric Chamfer between deformed canonical surface samples and the
    /// observed cloud.
    pub data: f64,
    /// Squared SDF at observed points pulled back to canonical space.
    pub surface: f64,
    /// Mean squared error between rendered opacity and observed masks.
    pub silhouette: f64,
    /// Squared color error at pulled-back observed points (colored clouds only).
    pub color: f64,
    pub sparse: f64,
    pub cycle: f64,
    /// Bone anisotropy plus pose smoothness.
    pub reg: f64,
    pub eikonal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            data: 1.0,
            surface: 20.0,
            silhouette: 0.0,
            color: 1.0,
            sparse: 0.1,
            cycle: 0.01,
            reg: 0.001,
            eikonal: 0.1,
        }
    }
}

/// Peak step sizes per parameter group, in parameter units per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSizes {
    pub centers: f64,
    /// Radians.
    pub orientations: f64,
    /// Relative (the update is multiplicative).
    pub scales: f64,
    pub poses: f64,
    pub cameras: f64,
    pub delta: f64,
    pub sdf: f64,
    pub color: f64,
    pub beta: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        StepSizes {
            centers: 0.005,
            orientations: 0.005,
            scales: 0.01,
            poses: 0.01,
            cameras: 0.0,
            delta: 0.02,
            sdf: 0.02,
            color: 0.02,
            beta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Total optimizer steps over all phases.
    pub iterations: usize,
    /// Share of the steps spent fitting the shape to the first frame.
    pub warmup_fraction: f64,
    /// Share of the steps spent tracking the frames one by one.
    pub tracking_fraction: f64,
    pub bones: usize,
    pub backend: SkinningBackend,
    pub seed: u64,
    pub weights: LossWeights,
    pub steps: StepSizes,
    /// Temperature falls linearly from `gamma_start` to `gamma_end` over the
    /// first `gamma_anneal_fraction` of the steps, then holds.
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub gamma_anneal_fraction: f64,
    /// Density scale, annealed geometrically over the whole run.
    pub beta_start: f64,
    pub beta_end: f64,
    /// Assignment distance-ratio and joint-zone thresholds.
    pub eta: f64,
    pub zeta: f64,
    /// Iterations between assignment refreshes.
    pub refresh_period: usize,
    /// Iterations between re-extractions of the surface samples.
    pub resample_period: usize,
    pub grid_resolution: usize,
    pub delta_resolution: usize,
    pub surface_samples: usize,
    pub observed_samples: usize,
    pub cycle_samples: usize,
    pub render_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 1000,
            warmup_fraction: 0.4,
            tracking_fraction: 0.3,
            bones: 2,
            backend: SkinningBackend::Qrbs,
            seed: 0,
            weights: LossWeights::default(),
            steps: StepSizes::default(),
            gamma_start: 1.0,
            gamma_end: 0.1,
            gamma_anneal_fraction: 0.5,
            beta_start: 0.1,
            beta_end: 0.001,
            eta: 0.2,
            zeta: 0.2,
            refresh_period: 100,
            resample_period: 10,
            grid_resolution: 64,
            delta_resolution: crate::skinning::DEFAULT_DELTA_RESOLUTION,
            surface_samples: 400,
            observed_samples: 2000,
            cycle_samples: 300,
            render_samples: 32,
        }
    }
}

impl Serialize for SkinningBackend {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SkinningBackend {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let weights = [w.data, w.surface, w.silhouette, w.color, w.sparse, w.cycle, w.reg, w.eikonal];
        if weights.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        let s = &self.steps;
        let steps = [
            s.centers,
            s.orientations,
            s.scales,
            s.poses,
            s.cameras,
            s.delta,
            s.sdf,
            s.color,
            s.beta,
        ];
        if steps.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("step sizes must be finite and non-negative"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.bones == 0 {
            return Err(Error::invalid("bones must be at least 1"));
        }
        let fr = [self.warmup_fraction, self.tracking_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr[0] + fr[1] > 1.0 {
            return Err(Error::invalid("phase fractions must lie in [0,1] and sum to at most 1"));
        }
        if !(self.gamma_anneal_fraction > 0.0 && self.gamma_anneal_fraction <= 1.0) {
            return Err(Error::invalid("gamma_anneal_fraction must lie in (0, 1]"));
        }
        for (name, v) in [
            ("gamma_start", self.gamma_start),
            ("gamma_end", self.gamma_end),
            ("beta_start", self.beta_start),
            ("beta_end", self.beta_end),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) || !(self.zeta > 0.0) {
            return Err(Error::invalid("need 0 < eta < 1 and zeta > 0"));
        }
        if self.grid_resolution < 2 || self.delta_resolution < 2 {
            return Err(Error::invalid("grid resolutions must be at least 2"));
        }
        if self.refresh_period == 0 || self.resample_period == 0 {
            return Err(Error::invalid("refresh and resample periods must be at least 1"));
        }
        if self.surface_samples == 0 || self.observed_samples == 0 || self.render_samples < 2 {
            return Err(Error::invalid("sample counts too small"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: FitConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Temperature after `progress` (in `[0, 1]`) of the run.
    pub(crate) fn temperature(&self, progress: f64) -> f64 {
        let t = (progress / self.gamma_anneal_fraction).clamp(0.0, 1.0);
        self.gamma_start + (self.gamma_end - self.gamma_start) * t
    }

    /// Geometric interpolation from `start` to `end` over `[0, 1]`.
    pub(crate) fn anneal(start: f64, end: f64, progress: f64) -> f64 {
        start * (end / start).powf(progress.clamp(0.0, 1.0))
    }
}
