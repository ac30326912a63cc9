//! The run configuration: one JSON file, every field defaulted, dotted
//! `--set key=value` overrides applied on top.

use std::path::{Path, PathBuf};

use qrbs_core::benchmark::SyntheticSpec;
use qrbs_core::fitting::FitConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds sampling, fitting and evaluation. Replaces `fit.seed`.
    pub seed: u64,
    pub synth: SyntheticSpec,
    pub fit: FitConfig,
    pub deform: DeformOptions,
    pub render: RenderOptions,
    pub extract: ExtractOptions,
    pub eval: EvalOptions,
    pub assign: AssignOptions,
    pub paths: PathOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SyntheticSpec::hinge(20, 60f64.to_radians()),
            fit: FitConfig::default(),
            deform: DeformOptions::default(),
            render: RenderOptions::default(),
            extract: ExtractOptions::default(),
            eval: EvalOptions::default(),
            assign: AssignOptions::default(),
            paths: PathOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformOptions {
    pub frame: usize,
}

impl Default for DeformOptions {
    fn default() -> Self {
        DeformOptions { frame: 0 }
    }
}

/// A camera on the `+z` side of the object's bounding box, looking down `-z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub frame: usize,
    pub width: usize,
    pub height: usize,
    /// Vertical field of view, degrees.
    pub fov: f64,
    /// Camera distance in units of the bounding-box diagonal.
    pub distance: f64,
    pub samples: usize,
    /// Density scale; the checkpoint's value when absent.
    pub beta: Option<f64>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            frame: 0,
            width: 64,
            height: 48,
            fov: 40.0,
            distance: 1.5,
            samples: 64,
            beta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractOptions {
    /// Grid resolution the SDF is resampled to before extraction.
    pub resolution: usize,
    pub iso: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            resolution: 128,
            iso: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub samples: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples: qrbs_core::benchmark::EVAL_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignOptions {
    pub points: usize,
}

impl Default for AssignOptions {
    fn default() -> Self {
        AssignOptions { points: 2000 }
    }
}

/// Inputs that do not follow the default `--out` layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathOptions {
    /// Observed clouds and ground truth; default `<out>/data`.
    pub data: Option<PathBuf>,
    /// Checkpoint directory; default `<out>/checkpoints`.
    pub checkpoint: Option<PathBuf>,
    /// `SDF1` grid for `extract-mesh`; default the checkpoint's.
    pub sdf: Option<PathBuf>,
    /// Reference meshes `gt_NNNN.obj` for `eval`; default `<out>/meshes`.
    pub reference: Option<PathBuf>,
}

/// A problem with the configuration itself.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(RunConfig::default()).map_err(|e| ConfigError(e.to_string()))?;
        let reference = value.clone();
        let origin = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                let file: Value =
                    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                merge(&mut value, file);
                format!("{}: ", p.display())
            }
            None => String::new(),
        };
        for o in overrides {
            apply_override(&mut value, &reference, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| ConfigError(format!("{origin}{e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.fit.seed = cfg.seed;
        cfg.fit.validate().map_err(|e| ConfigError(format!("fit: {e}")))?;
        cfg.synth.validate().map_err(|e| ConfigError(format!("synth: {e}")))?;
        Ok(cfg)
    }
}

/// Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Every dotted key accepted by `--set`, with its default.
pub fn override_keys() -> Vec<(String, String)> {
    let mut out = Vec::new();
    let value = serde_json::to_value(RunConfig::default()).unwrap_or(Value::Null);
    flatten("", &value, &mut out);
    for optional in [
        "render.beta",
        "paths.data",
        "paths.checkpoint",
        "paths.sdf",
        "paths.reference",
    ] {
        if let Some(entry) = out.iter_mut().find(|(k, _)| k == optional) {
            entry.1 = "(unset)".into();
        }
    }
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Set `key=value` in `target`. The key must exist in `reference` (the
/// serialized defaults); the value is parsed as JSON, falling back to a
/// plain string.
fn apply_override(target: &mut Value, reference: &Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{spec}` is not key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    let mut r = reference;
    for p in &parts {
        r = r
            .get(p)
            .ok_or_else(|| ConfigError(format!("unknown config key `{key}`")))?;
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut t = target;
    for (i, p) in parts.iter().enumerate() {
        if !t.is_object() {
            *t = Value::Object(Default::default());
        }
        let map = t.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert((*p).to_string(), value);
            return Ok(());
        }
        t = map.entry((*p).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
