//! Run configuration.
//!
//! A run is described by one TOML document. The `scene` and `ldsi` tables may
//! name a preset (`preset = "fast"`) whose values the remaining keys of the
//! table override. Command-line overrides use dotted paths such as
//! `ldsi.tce=10` and are applied before presets are expanded.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::frame::{AxisMap, BlobParams, FrameCameraSpec, FrameError};
use crate::kinematics::{KinematicsError, RobotGeometry};
use crate::ldsi::{FilterPreset, LdsiError, LdsiParams};
use crate::netsim::{BusConfig, BusError, Mode};
use crate::scene::{SceneError, SceneSpec, SCENE_PRESETS};
use crate::tracker::{TrackerError, TrackerParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{spec}`: {message}")]
    Override { spec: String, message: String },
    #[error("unknown {section} preset `{name}`")]
    UnknownPreset { section: &'static str, name: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid run setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Ldsi(#[from] LdsiError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Everything needed to reproduce one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub mode: Mode,
    /// Servo first-order time constant, ms. Zero is an ideal servo.
    pub servo_tau_ms: f64,
    /// Sensor pixels to robot millimetres.
    pub px_to_mm: AxisMap,
    /// Time from frame capture until its blob result is available, us.
    pub frame_latency_us: u64,
    /// Start of the interval over which tracking errors are scored, ms.
    pub warmup_ms: f64,
    /// Upper bound on RMS tracking error used by mode comparison, mm.
    pub rms_bound_mm: f64,
    pub scene: SceneSpec,
    pub ldsi: LdsiParams,
    pub tracker: TrackerParams,
    pub blob: BlobParams,
    pub camera: FrameCameraSpec,
    pub robot: RobotGeometry,
    pub bus: BusConfig,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            mode: Mode::Event,
            servo_tau_ms: 5.0,
            // 1 px = 1 mm, 128 px sensor centered over the midline, its
            // nearest row 6 mm above the singular curve (y ~ 193.7 mm)
            px_to_mm: AxisMap {
                scale: [1.0, 1.0],
                offset: [86.0, 200.0],
            },
            frame_latency_us: 0,
            warmup_ms: 50.0,
            rms_bound_mm: 10.0,
            scene: SceneSpec::default(),
            ldsi: LdsiParams::default(),
            tracker: TrackerParams::default(),
            blob: BlobParams::default(),
            camera: FrameCameraSpec::default(),
            robot: RobotGeometry::default(),
            bus: BusConfig::default(),
        }
    }
}

impl RunSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scene.validate()?;
        self.ldsi.validate()?;
        self.tracker.validate()?;
        self.blob.validate()?;
        self.camera.validate()?;
        self.robot.validate()?;
        self.bus.validate()?;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.servo_tau_ms.is_finite() && self.servo_tau_ms >= 0.0) {
            return bad("servo_tau_ms must be finite and >= 0");
        }
        if !(self.warmup_ms.is_finite() && self.warmup_ms >= 0.0) {
            return bad("warmup_ms must be finite and >= 0");
        }
        if !(self.rms_bound_mm.is_finite() && self.rms_bound_mm > 0.0) {
            return bad("rms_bound_mm must be > 0");
        }
        let s = self.px_to_mm.scale;
        let o = self.px_to_mm.offset;
        if !s.iter().chain(&o).all(|v| v.is_finite()) || s.contains(&0.0) {
            return bad("px_to_mm needs finite, non-zero scales");
        }
        Ok(())
    }

    /// Canonical TOML form, with presets expanded.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run spec is representable in TOML")
    }

    /// Parses and validates a TOML document; see [`load`].
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        load::<&str>(Some(text), &[])
    }
}

/// Builds a run spec from an optional TOML document and `key=value`
/// overrides. Unknown keys are rejected.
pub fn load<S: AsRef<str>>(text: Option<&str>, overrides: &[S]) -> Result<RunSpec, ConfigError> {
    let mut user = match text {
        Some(t) => t
            .parse::<Table>()
            .map_err(|e| ConfigError::Parse(e.to_string()))?,
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut user, o.as_ref())?;
    }
    let resolved = expand_presets(user.clone())?;
    let spec: RunSpec = Value::Table(resolved)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let canonical = Value::try_from(&spec).map_err(|e| ConfigError::Parse(e.to_string()))?;
    check_known(&user, &canonical, "")?;
    spec.validate()?;
    Ok(spec)
}

/// Applies one `dotted.key=value` override. Values are read as TOML
/// literals, falling back to a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let err = |m: &str| ConfigError::Override {
        spec: spec.to_string(),
        message: m.to_string(),
    };
    let (path, raw) = spec.split_once('=').ok_or_else(|| err("expected key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(err("empty key segment"));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("split yields one segment");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(err(&format!("`{k}` is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn expand_presets(mut user: Table) -> Result<Table, ConfigError> {
    if let Some(Value::Table(scene)) = user.get_mut("scene") {
        if let Some(name) = take_preset(scene, "scene")? {
            let base = SceneSpec::preset(&name).ok_or(ConfigError::UnknownPreset {
                section: "scene",
                name: name.clone(),
            })?;
            *scene = merged(&base, scene);
        }
    }
    if let Some(Value::Table(ldsi)) = user.get_mut("ldsi") {
        if let Some(name) = take_preset(ldsi, "ldsi")? {
            let base = FilterPreset::from_name(&name).ok_or(ConfigError::UnknownPreset {
                section: "ldsi",
                name: name.clone(),
            })?;
            *ldsi = merged(&base.params(), ldsi);
        }
    }
    Ok(user)
}

fn take_preset(table: &mut Table, section: &'static str) -> Result<Option<String>, ConfigError> {
    match table.remove("preset") {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(ConfigError::UnknownPreset {
            section,
            name: other.to_string(),
        }),
    }
}

fn merged<T: Serialize>(base: &T, over: &Table) -> Table {
    let Ok(Value::Table(mut base)) = Value::try_from(base) else {
        unreachable!("presets serialize to tables")
    };
    merge_into(&mut base, over);
    base
}

fn merge_into(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge_into(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn check_known(user: &Table, canonical: &Value, prefix: &str) -> Result<(), ConfigError> {
    for (k, v) in user {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        if k == "preset" && matches!(prefix, "scene" | "ldsi") {
            continue;
        }
        let Some(c) = canonical.get(k) else {
            return Err(ConfigError::UnknownKey(path));
        };
        // tagged enums change shape with their tag; serde already checked them
        if let (Value::Table(u), Value::Table(_)) = (v, c) {
            if !u.contains_key("kind") {
                check_known(u, c, &path)?;
            }
        }
    }
    Ok(())
}

/// Names accepted for `scene.preset`.
pub fn scene_presets() -> &'static [&'static str] {
    SCENE_PRESETS
}
