//! The JSON scenario schema.
//!
//! Every section except `map`, `start` and `goal` is optional and falls back
//! to the defaults below. Unknown keys are rejected.
//!
//! | key | default |
//! |-----|---------|
//! | `name` | file stem |
//! | `trolleys` | `{count: 3, base_length: 0.70, per_trolley_increment: 0.32, grip_offset: 0}` |
//! | `goal_tolerance` | 0.3 m |
//! | `reference` | `{kind: "planned"}` |
//! | `pedestrians` | none |
//! | `limits` | `v_max` 0.6 / 0.7 m/s, `w_max` 1 rad/s, `a_max` 0.1, `alpha_max` 0.2 per step, workspace = map bounds |
//! | `weights` | `P = 10 I`, `R = diag(0.1, 0.05, 0.1, 0.05)`, `λr = 50`, `λφ = 5`, `w = 100` |
//! | `search` | 0.25 m × 15° bins, 3 × 3 steers in ±0.4 rad, 0.5 m/s × 0.75 s primitives |
//! | `noise` | see [`NoiseSpec::default`] |
//! | `rates` | 10 Hz per source |
//! | `seed` | 0 |
//! | `duration_cap` | 60 s |
//! | `behavior` | ROI 0.3–3 m, `stop_eps` 0.02 m/s, braking 0.5 m/s², limited speed 50 %, 2-tick debounce |
//! | `ekf` | gate 16.266, late tolerance 0.1 s |
//! | `control` | `dt` 0.1 s, horizon 20, lookahead 1 m, integrity 0.15 m, no follower lag, pedestrian σ 0.05 m |

use std::path::{Path, PathBuf};

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::behavior::BehaviorConfig;
use crate::estimator::{EkfConfig, MeasurementRates, NoiseModel};
use crate::geometry::Pose2;
use crate::kinematics::TrolleyStack;
use crate::mpc::{MpcLimits, MpcWeights};
use crate::planner::{MapError, OccupancyGrid, SearchConfig};
use crate::sim::{ControlConfig, Pedestrian, ReferenceSource, Scenario, SimError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}, column {column}: {key}: {message}")]
    Parse {
        path: PathBuf,
        key: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("map file not found: {0}")]
    MapMissing(PathBuf),
    #[error("map: {0}")]
    Map(#[from] MapError),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

/// Where the occupancy grid comes from. Exactly one of `ascii`,
/// `ascii_file`, `yaml` or `width`/`height` (an empty grid) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ascii: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ascii_file: Option<PathBuf>,
    /// Metadata file pointing at a greyscale image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaml: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "Pose2::origin")]
    pub origin: Pose2,
}

fn default_resolution() -> f64 {
    0.25
}

impl MapSpec {
    /// Loads the grid; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<OccupancyGrid, ScenarioError> {
        let sources = [
            self.ascii.is_some(),
            self.ascii_file.is_some(),
            self.yaml.is_some(),
            self.width.is_some() || self.height.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(invalid("map", "give exactly one of ascii, ascii_file, yaml or width/height"));
        }
        let existing = |p: &Path| {
            let full = base.join(p);
            if full.exists() {
                Ok(full)
            } else {
                Err(ScenarioError::MapMissing(full))
            }
        };
        if let Some(rows) = &self.ascii {
            return Ok(OccupancyGrid::from_rows(rows, self.resolution, self.origin)?);
        }
        if let Some(p) = &self.ascii_file {
            let full = existing(p)?;
            let text = std::fs::read_to_string(&full).map_err(|source| ScenarioError::Read { path: full, source })?;
            return Ok(OccupancyGrid::from_ascii(&text, self.resolution, self.origin)?);
        }
        if let Some(p) = &self.yaml {
            return Ok(OccupancyGrid::from_metadata_file(&existing(p)?)?);
        }
        match (self.width, self.height) {
            (Some(w), Some(h)) => Ok(OccupancyGrid::new(w, h, self.resolution, self.origin, vec![false; w * h])?),
            _ => Err(invalid("map", "an empty map needs both width and height")),
        }
    }
}

/// Noise standard deviations; covariances are diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Per step, `[xL, yL, θL, xF, yF, θF]`.
    pub process: [f64; 6],
    pub leader: [f64; 3],
    pub follower: [f64; 3],
    pub relative: [f64; 3],
    /// Spread of the initial belief around the true start.
    pub initial: [f64; 6],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            process: [0.005, 0.005, 0.003, 0.005, 0.005, 0.003],
            leader: [0.03, 0.03, 0.02],
            follower: [0.03, 0.03, 0.02],
            relative: [0.025, 0.025, 0.01],
            initial: [0.01, 0.01, 0.005, 0.01, 0.01, 0.005],
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            process: [0.0; 6],
            leader: [0.0; 3],
            follower: [0.0; 3],
            relative: [0.0; 3],
            initial: [0.0; 6],
        }
    }

    pub fn model(&self) -> NoiseModel {
        NoiseModel::from_sigmas(self.process, self.leader, self.follower, self.relative)
    }

    pub fn initial_covariance(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from(self.initial.map(|s| s * s)))
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let groups: [(&str, &[f64]); 5] = [
            ("process", &self.process),
            ("leader", &self.leader),
            ("follower", &self.follower),
            ("relative", &self.relative),
            ("initial", &self.initial),
        ];
        for (name, values) in groups {
            if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid(format!("noise.{name}[{i}]"), "must be a non-negative number"));
            }
        }
        Ok(())
    }
}

/// The on-disk scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub map: MapSpec,
    #[serde(default)]
    pub trolleys: TrolleyStack,
    pub start: Pose2,
    pub goal: Pose2,
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
    #[serde(default = "default_reference")]
    pub reference: ReferenceSource,
    #[serde(default)]
    pub pedestrians: Vec<Pedestrian>,
    #[serde(default)]
    pub limits: MpcLimits,
    #[serde(default)]
    pub weights: MpcWeights,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub rates: MeasurementRates,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration_cap")]
    pub duration_cap: f64,
    #[serde(default)]
    pub behavior: BehaviorConfig,
    #[serde(default)]
    pub ekf: EkfConfig,
    #[serde(default)]
    pub control: ControlConfig,
}

fn default_goal_tolerance() -> f64 {
    0.3
}

fn default_duration_cap() -> f64 {
    60.0
}

fn default_reference() -> ReferenceSource {
    ReferenceSource::Planned
}

/// Splits `key=value`. The value is read as JSON when it parses, otherwise
/// as a plain string.
pub fn parse_override(s: &str) -> Result<(String, Value), ScenarioError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ScenarioError::Override(s.to_string()))?;
    if k.is_empty() {
        return Err(ScenarioError::Override(s.to_string()));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Sets the dotted `key` in `doc`, creating objects along the way.
pub fn apply_override(doc: &mut Value, key: &str, value: Value) -> Result<(), ScenarioError> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().unwrap()
            }
            _ => return Err(invalid(parts[..i].join("."), "is not an object")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// A parsed scenario file with the settings needed to rebuild it.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    /// Directory that relative map paths resolve against.
    pub base_dir: PathBuf,
}

impl LoadedScenario {
    /// Parses `text` as a scenario; `origin` only labels diagnostics.
    pub fn from_str(text: &str, origin: &Path, base_dir: &Path, overrides: &[(String, Value)]) -> Result<Self, ScenarioError> {
        let parse_err = |key: String, e: &serde_json::Error| ScenarioError::Parse {
            path: origin.to_owned(),
            key,
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let mut doc: Value = serde_json::from_str(text).map_err(|e| parse_err("<document>".into(), &e))?;
        for (k, v) in overrides {
            apply_override(&mut doc, k, v.clone())?;
        }
        // re-render so line numbers refer to a real document even after overrides
        let rendered = if overrides.is_empty() {
            text.to_string()
        } else {
            serde_json::to_string_pretty(&doc).expect("json value renders")
        };
        let de = &mut serde_json::Deserializer::from_str(&rendered);
        let mut file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            parse_err(key, e.inner())
        })?;
        if file.name.is_empty() {
            file.name = origin
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        validate_fields(&file)?;
        Ok(Self {
            file,
            base_dir: base_dir.to_owned(),
        })
    }

    pub fn from_path(path: &Path, overrides: &[(String, Value)]) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str(&text, path, base, overrides)
    }

    /// Canonical JSON of the effective scenario.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.file).expect("scenario serializes")
    }

    /// Hex SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Builds the runtime scenario, loading the map.
    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        let f = &self.file;
        let map = f.map.load(&self.base_dir)?;
        let scenario = Scenario {
            name: f.name.clone(),
            map,
            trolleys: f.trolleys,
            start: f.start,
            goal: f.goal,
            goal_tolerance: f.goal_tolerance,
            pedestrians: f.pedestrians.clone(),
            limits: f.limits,
            weights: f.weights.clone(),
            search: f.search,
            noise: f.noise.model(),
            initial_covariance: f.noise.initial_covariance(),
            rates: f.rates,
            seed: f.seed,
            duration_cap: f.duration_cap,
            behavior: f.behavior,
            ekf: f.ekf,
            control: f.control,
            reference: f.reference.clone(),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Loads, validates and builds a scenario file in one go.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    LoadedScenario::from_path(path, &[])?.build()
}

fn validate_fields(f: &ScenarioFile) -> Result<(), ScenarioError> {
    let positive = |key: &str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(invalid(key, format!("must be positive, got {v}")))
        }
    };
    let l = &f.limits;
    for (key, v) in [
        ("limits.v_max_leader", l.v_max_leader),
        ("limits.v_max_follower", l.v_max_follower),
        ("limits.w_max_leader", l.w_max_leader),
        ("limits.w_max_follower", l.w_max_follower),
        ("limits.a_max_leader", l.a_max_leader),
        ("limits.a_max_follower", l.a_max_follower),
        ("limits.alpha_max_leader", l.alpha_max_leader),
        ("limits.alpha_max_follower", l.alpha_max_follower),
        ("goal_tolerance", f.goal_tolerance),
        ("duration_cap", f.duration_cap),
        ("map.resolution", f.map.resolution),
        ("control.dt", f.control.dt),
        ("control.integrity_threshold", f.control.integrity_threshold),
    ] {
        positive(key, v)?;
    }
    if let Some([x0, y0, x1, y1]) = l.workspace {
        if !(x0 < x1 && y0 < y1) {
            return Err(invalid("limits.workspace", "needs xmin < xmax and ymin < ymax"));
        }
    }
    if f.control.horizon == 0 {
        return Err(invalid("control.horizon", "must be at least 1"));
    }
    if f.trolleys.count == 0 {
        return Err(invalid("trolleys.count", "must be at least 1"));
    }
    for (key, v) in [("rates.leader", f.rates.leader), ("rates.follower", f.rates.follower), ("rates.relative", f.rates.relative)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(invalid(key, "must be non-negative"));
        }
    }
    f.noise.validate()?;
    let mut ids = std::collections::HashSet::new();
    for (i, p) in f.pedestrians.iter().enumerate() {
        if !ids.insert(p.id.as_str()) {
            return Err(invalid(format!("pedestrians[{i}].id"), format!("duplicate id {:?}", p.id)));
        }
        p.validate().map_err(|e| invalid(format!("pedestrians[{i}] ({})", p.id), e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "map": {"width": 40, "height": 20},
        "start": {"x": 2.0, "y": 2.5, "theta": 0.0},
        "goal": {"x": 8.0, "y": 2.5, "theta": 0.0}
    }"#;

    fn load(text: &str) -> Result<LoadedScenario, ScenarioError> {
        LoadedScenario::from_str(text, Path::new("test.json"), Path::new("."), &[])
    }

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = load(MINIMAL).unwrap();
        assert_eq!(s.file.name, "test");
        assert_eq!(s.file.goal_tolerance, 0.3);
        assert_eq!(s.file.limits, MpcLimits::default());
        assert_eq!(s.file.control, ControlConfig::default());
        let built = s.build().unwrap();
        assert_eq!(built.map.width(), 40);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("\"goal\"", "\"limits\": {\"v_max_leder\": 1.0}, \"goal\"");
        let err = load(&text).unwrap_err().to_string();
        assert!(err.contains("limits") && err.contains("v_max_leder"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn negative_speed_names_the_key() {
        let text = MINIMAL.replace("\"goal\"", "\"limits\": {\"v_max_leader\": -1.0}, \"goal\"");
        let err = load(&text).unwrap_err().to_string();
        assert!(err.contains("limits.v_max_leader"), "{err}");
    }

    #[test]
    fn out_of_order_knots_name_the_pedestrian() {
        let text = MINIMAL.replace(
            "\"goal\"",
            "\"pedestrians\": [{\"id\": \"bob\", \"knots\": [[2.0, [1, 1]], [1.0, [2, 2]]]}], \"goal\"",
        );
        let err = load(&text).unwrap_err().to_string();
        assert!(err.contains("bob"), "{err}");
    }

    #[test]
    fn wrong_type_reports_path_and_line() {
        let text = MINIMAL.replace("\"start\": {\"x\": 2.0", "\"start\": {\"x\": \"two\"");
        match load(&text).unwrap_err() {
            ScenarioError::Parse { key, line, .. } => {
                assert_eq!(key, "start.x");
                assert_eq!(line, 3);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_map_file_is_distinct() {
        let text = MINIMAL.replace("{\"width\": 40, \"height\": 20}", "{\"yaml\": \"nowhere.yaml\"}");
        assert!(matches!(load(&text).unwrap().build(), Err(ScenarioError::MapMissing(_))));
    }

    #[test]
    fn overrides_apply_dotted_keys() {
        let ov = vec![
            parse_override("limits.v_max_leader=0.4").unwrap(),
            parse_override("seed=7").unwrap(),
            parse_override("name=renamed").unwrap(),
        ];
        let s = LoadedScenario::from_str(MINIMAL, Path::new("t.json"), Path::new("."), &ov).unwrap();
        assert_eq!(s.file.limits.v_max_leader, 0.4);
        assert_eq!(s.file.seed, 7);
        assert_eq!(s.file.name, "renamed");
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn serialized_scenario_parses_back_equal() {
        let s = load(MINIMAL).unwrap();
        let again = load(&s.canonical_json()).unwrap();
        assert_eq!(s.file, again.file);
        assert_eq!(s.hash(), again.hash());
        assert_eq!(s.build().unwrap(), again.build().unwrap());
    }
}
