//! Robot and object descriptions.
//!
//! A description document carries the simulation-side joint model together
//! with a `bounds` sidecar holding the controller-side limits. Bounds must be
//! contained in (never looser than) the simulation limits. Several documents
//! are merged into one [`SceneModel`] whose joint names are qualified as
//! `instance/joint`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::ServoGains;

/// Separator between an instance name and a joint name.
pub const NAME_SEPARATOR: char = '/';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// Simulation-side joint model. Prismatic joints use meters and newtons in
/// place of radians and newton-meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub inertia: f64,
    #[serde(default)]
    pub rotor_inertia: f64,
    #[serde(default = "unit_gear")]
    pub gear: f64,
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub coulomb_friction: f64,
    #[serde(default)]
    pub stiction: f64,
    /// Amplitude of the `sin(q)` gravity torque.
    #[serde(default)]
    pub gravity_amp: f64,
    pub pos_limits: [f64; 2],
    pub vel_limit: f64,
    /// Joint-side torque limit, applied after gear scaling.
    pub torque_limit: f64,
}

fn unit_gear() -> f64 {
    1.0
}

impl JointSpec {
    /// A frictionless, undamped, gravity-free joint with generous limits.
    pub fn free(name: impl Into<String>, inertia: f64) -> Self {
        JointSpec {
            name: name.into(),
            kind: JointKind::Revolute,
            inertia,
            rotor_inertia: 0.0,
            gear: 1.0,
            damping: 0.0,
            coulomb_friction: 0.0,
            stiction: 0.0,
            gravity_amp: 0.0,
            pos_limits: [-1.0e3, 1.0e3],
            vel_limit: 1.0e3,
            torque_limit: 1.0e6,
        }
    }

    pub fn min_position(&self) -> f64 {
        self.pos_limits[0]
    }

    pub fn max_position(&self) -> f64 {
        self.pos_limits[1]
    }

    fn check(&self, issues: &mut Vec<Issue>) {
        let mut bad = |what: String| {
            issues.push(Issue::Joint {
                joint: self.name.clone(),
                what,
            })
        };
        let finite = [
            self.inertia,
            self.rotor_inertia,
            self.gear,
            self.damping,
            self.coulomb_friction,
            self.stiction,
            self.gravity_amp,
            self.pos_limits[0],
            self.pos_limits[1],
            self.vel_limit,
            self.torque_limit,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            bad("non-finite parameter".into());
            return;
        }
        if self.inertia <= 0.0 {
            bad(format!("inertia must be > 0 (got {})", self.inertia));
        }
        if self.rotor_inertia < 0.0 {
            bad(format!("rotor_inertia must be >= 0 (got {})", self.rotor_inertia));
        }
        if self.gear <= 0.0 {
            bad(format!("gear must be > 0 (got {})", self.gear));
        }
        if self.damping < 0.0 {
            bad(format!("damping must be >= 0 (got {})", self.damping));
        }
        if self.coulomb_friction < 0.0 {
            bad(format!(
                "coulomb_friction must be >= 0 (got {})",
                self.coulomb_friction
            ));
        }
        if self.stiction < self.coulomb_friction {
            bad(format!(
                "stiction {} is below coulomb_friction {}",
                self.stiction, self.coulomb_friction
            ));
        }
        if self.gravity_amp < 0.0 {
            bad(format!("gravity_amp must be >= 0 (got {})", self.gravity_amp));
        }
        if self.pos_limits[0] >= self.pos_limits[1] {
            bad(format!(
                "pos_limits min {} must be below max {}",
                self.pos_limits[0], self.pos_limits[1]
            ));
        }
        if self.vel_limit <= 0.0 {
            bad(format!("vel_limit must be > 0 (got {})", self.vel_limit));
        }
        if self.torque_limit <= 0.0 {
            bad(format!("torque_limit must be > 0 (got {})", self.torque_limit));
        }
    }
}

/// Reflected inertia seen at the joint: link inertia plus rotor inertia
/// scaled by the square of the gear ratio.
pub fn effective_inertia(joint: &JointSpec) -> f64 {
    joint.inertia + joint.gear * joint.gear * joint.rotor_inertia
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorKind {
    DirectTorque,
    Position,
    Velocity,
    PdServo,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorSpec {
    pub joint: String,
    pub kind: ActuatorKind,
    #[serde(default)]
    pub default_gains: ServoGains,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Encoder,
    JointTorque,
    ImuStub,
    GripperForce,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: String,
    pub kind: SensorKind,
    /// Joint or object the sensor reads from.
    pub target: String,
    #[serde(default)]
    pub noise_std: f64,
    /// Reading resolution; 0 disables quantization.
    #[serde(default)]
    pub quantization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotDescription {
    pub name: String,
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub actuators: Vec<ActuatorSpec>,
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub default_posture: BTreeMap<String, f64>,
}

impl RobotDescription {
    pub fn joint(&self, name: &str) -> Option<&JointSpec> {
        self.joints.iter().find(|j| j.name == name)
    }

    pub fn actuator(&self, joint: &str) -> Option<&ActuatorSpec> {
        self.actuators.iter().find(|a| a.joint == joint)
    }

    /// A joint is passive when it has no actuator or an actuator of kind `none`.
    pub fn is_passive(&self, joint: &str) -> bool {
        self.actuator(joint)
            .map_or(true, |a| a.kind == ActuatorKind::None)
    }

    /// Default position of a joint; joints absent from the posture map rest
    /// at zero, pulled into the position limits.
    pub fn default_position(&self, joint: &JointSpec) -> f64 {
        self.default_posture
            .get(&joint.name)
            .copied()
            .unwrap_or_else(|| 0.0_f64.clamp(joint.min_position(), joint.max_position()))
    }

    /// Checks every invariant that can be decided from the description alone.
    /// Sensor targets that may name scene objects are checked at merge time.
    pub fn validate(&self) -> Result<(), Vec<Issue>> {
        let mut issues = Vec::new();
        if !is_identifier(&self.name) {
            issues.push(Issue::BadName(self.name.clone()));
        }
        let mut seen = HashSet::new();
        for joint in &self.joints {
            if !is_identifier(&joint.name) || joint.name.contains(NAME_SEPARATOR) {
                issues.push(Issue::BadName(joint.name.clone()));
            }
            if !seen.insert(joint.name.as_str()) {
                issues.push(Issue::DuplicateJoint(joint.name.clone()));
            }
            joint.check(&mut issues);
        }

        let mut actuated = HashSet::new();
        for act in &self.actuators {
            if self.joint(&act.joint).is_none() {
                issues.push(Issue::Dangling {
                    referrer: "actuator".into(),
                    name: act.joint.clone(),
                });
            }
            if !actuated.insert(act.joint.as_str()) {
                issues.push(Issue::MultipleActuators(act.joint.clone()));
            }
            let g = act.default_gains;
            if !(g.kp.is_finite() && g.kd.is_finite() && g.kp >= 0.0 && g.kd >= 0.0) {
                issues.push(Issue::Joint {
                    joint: act.joint.clone(),
                    what: format!("invalid default gains kp={} kd={}", g.kp, g.kd),
                });
            }
        }

        let mut sensor_names = HashSet::new();
        for sensor in &self.sensors {
            if !sensor_names.insert(sensor.name.as_str()) {
                issues.push(Issue::DuplicateSensor(sensor.name.clone()));
            }
            if !(sensor.noise_std.is_finite() && sensor.noise_std >= 0.0)
                || !(sensor.quantization.is_finite() && sensor.quantization >= 0.0)
            {
                issues.push(Issue::Sensor {
                    sensor: sensor.name.clone(),
                    what: "noise_std and quantization must be finite and >= 0".into(),
                });
            }
            let joint_only = matches!(sensor.kind, SensorKind::Encoder | SensorKind::JointTorque);
            let imu = sensor.kind == SensorKind::ImuStub;
            let known = self.joint(&sensor.target).is_some() || sensor.target == self.name;
            if (joint_only && self.joint(&sensor.target).is_none()) || (imu && !known) {
                issues.push(Issue::Dangling {
                    referrer: format!("sensor `{}`", sensor.name),
                    name: sensor.target.clone(),
                });
            }
        }

        for (joint, &value) in &self.default_posture {
            match self.joint(joint) {
                None => issues.push(Issue::Dangling {
                    referrer: "default_posture".into(),
                    name: joint.clone(),
                }),
                Some(spec) => {
                    if !value.is_finite()
                        || value < spec.min_position()
                        || value > spec.max_position()
                    {
                        issues.push(Issue::PostureOutOfLimits {
                            joint: joint.clone(),
                            value,
                        });
                    }
                }
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

/// Controller-side limits for one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointBounds {
    pub pos: [f64; 2],
    pub vel: f64,
    pub torque: f64,
}

impl JointBounds {
    /// Bounds identical to the simulation limits of `joint`.
    pub fn from_limits(joint: &JointSpec) -> Self {
        JointBounds {
            pos: joint.pos_limits,
            vel: joint.vel_limit,
            torque: joint.torque_limit,
        }
    }

    pub fn contains_position(&self, q: f64) -> bool {
        q >= self.pos[0] && q <= self.pos[1]
    }
}

/// Conservative controller-side bounds keyed by (unqualified) joint name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlBounds {
    pub joints: BTreeMap<String, JointBounds>,
}

impl ControlBounds {
    /// Bounds equal to the simulation limits for every non-passive joint.
    pub fn from_limits(desc: &RobotDescription) -> Self {
        let joints = desc
            .joints
            .iter()
            .filter(|j| !desc.is_passive(&j.name))
            .map(|j| (j.name.clone(), JointBounds::from_limits(j)))
            .collect();
        ControlBounds { joints }
    }

    pub fn get(&self, joint: &str) -> Option<&JointBounds> {
        self.joints.get(joint)
    }
}

/// Which limit a containment violation concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundAxis {
    PositionMin,
    PositionMax,
    Velocity,
    Torque,
}

impl fmt::Display for BoundAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundAxis::PositionMin => "pos.min",
            BoundAxis::PositionMax => "pos.max",
            BoundAxis::Velocity => "vel",
            BoundAxis::Torque => "torque",
        })
    }
}

/// Checks that `bounds` covers every non-passive joint and that each bound
/// is contained in the simulation limit. Containment is non-strict.
pub fn validate_bounds(desc: &RobotDescription, bounds: &ControlBounds) -> Result<(), Vec<Issue>> {
    let mut issues = Vec::new();
    for name in bounds.joints.keys() {
        if desc.joint(name).is_none() {
            issues.push(Issue::Dangling {
                referrer: "bounds".into(),
                name: name.clone(),
            });
        }
    }
    for joint in &desc.joints {
        let Some(b) = bounds.get(&joint.name) else {
            if !desc.is_passive(&joint.name) {
                issues.push(Issue::Unbounded(joint.name.clone()));
            }
            continue;
        };
        let mut violate = |axis| {
            issues.push(Issue::BoundNotContained {
                joint: joint.name.clone(),
                axis,
            })
        };
        let finite = b.pos[0].is_finite() && b.pos[1].is_finite();
        if !finite || b.pos[0] < joint.min_position() || b.pos[0] > b.pos[1] {
            violate(BoundAxis::PositionMin);
        }
        if !finite || b.pos[1] > joint.max_position() || b.pos[1] < b.pos[0] {
            violate(BoundAxis::PositionMax);
        }
        if !(b.vel.is_finite() && b.vel > 0.0 && b.vel <= joint.vel_limit) {
            violate(BoundAxis::Velocity);
        }
        if !(b.torque.is_finite() && b.torque > 0.0 && b.torque <= joint.torque_limit) {
            violate(BoundAxis::Torque);
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

/// A 1-D object resting on a table: mass in kg, heights in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub mass: f64,
    pub rest_height: f64,
    pub table_height: f64,
}

impl ObjectSpec {
    fn check(&self, issues: &mut Vec<Issue>) {
        if !is_identifier(&self.name) || self.name.contains(NAME_SEPARATOR) {
            issues.push(Issue::BadName(self.name.clone()));
        }
        let ok = self.mass.is_finite()
            && self.mass > 0.0
            && self.rest_height.is_finite()
            && self.table_height.is_finite()
            && self.rest_height >= self.table_height;
        if !ok {
            issues.push(Issue::Object {
                object: self.name.clone(),
                what: "mass must be > 0 and rest_height >= table_height".into(),
            });
        }
    }
}

/// One parsed description file.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotDocument {
    pub description: RobotDescription,
    pub bounds: ControlBounds,
    pub objects: Vec<ObjectSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocumentRepr {
    name: String,
    joints: Vec<JointSpec>,
    #[serde(default)]
    actuators: Vec<ActuatorSpec>,
    #[serde(default)]
    sensors: Vec<SensorSpec>,
    #[serde(default)]
    default_posture: BTreeMap<String, f64>,
    #[serde(default)]
    bounds: Option<ControlBounds>,
    #[serde(default)]
    objects: Vec<ObjectSpec>,
}

impl From<DocumentRepr> for RobotDocument {
    fn from(r: DocumentRepr) -> Self {
        let description = RobotDescription {
            name: r.name,
            joints: r.joints,
            actuators: r.actuators,
            sensors: r.sensors,
            default_posture: r.default_posture,
        };
        let bounds = r
            .bounds
            .unwrap_or_else(|| ControlBounds::from_limits(&description));
        RobotDocument {
            description,
            bounds,
            objects: r.objects,
        }
    }
}

impl From<&RobotDocument> for DocumentRepr {
    fn from(d: &RobotDocument) -> Self {
        let desc = d.description.clone();
        DocumentRepr {
            name: desc.name,
            joints: desc.joints,
            actuators: desc.actuators,
            sensors: desc.sensors,
            default_posture: desc.default_posture,
            bounds: Some(d.bounds.clone()),
            objects: d.objects.clone(),
        }
    }
}

impl Serialize for RobotDocument {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DocumentRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RobotDocument {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        DocumentRepr::deserialize(d).map(Into::into)
    }
}

impl RobotDocument {
    /// Runs description, bounds and object checks.
    pub fn validate(&self) -> Result<(), Vec<Issue>> {
        let mut issues = self.description.validate().err().unwrap_or_default();
        if let Err(mut more) = validate_bounds(&self.description, &self.bounds) {
            issues.append(&mut more);
        }
        for obj in &self.objects {
            obj.check(&mut issues);
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("description serializes")
    }
}

/// How unknown keys in input documents are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// Deserializes `text` as JSON into `T`, collecting paths of keys `T` does
/// not know. Strict mode fails on any such key; lenient mode returns them.
pub(crate) fn from_json_checked<T: serde::de::DeserializeOwned>(
    text: &str,
    mode: ParseMode,
) -> Result<(T, Vec<String>), ModelError> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string()))
        .map_err(|e| ModelError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    de.end().map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if mode == ParseMode::Strict && !unknown.is_empty() {
        return Err(ModelError::UnknownKeys(unknown));
    }
    Ok((value, unknown))
}

/// Parses and validates a description document. Returns the document and,
/// in lenient mode, the unknown keys that were skipped.
pub fn parse_document(text: &str, mode: ParseMode) -> Result<(RobotDocument, Vec<String>), ModelError> {
    let (doc, warnings) = from_json_checked::<RobotDocument>(text, mode)?;
    doc.validate().map_err(ModelError::Invalid)?;
    Ok((doc, warnings))
}

/// Parses a description document in strict mode and returns its robot.
pub fn parse_description(text: &str) -> Result<RobotDescription, ModelError> {
    parse_document(text, ParseMode::Strict).map(|(doc, _)| doc.description)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Issue {
    #[error("invalid name `{0}`")]
    BadName(String),
    #[error("duplicate joint `{0}`")]
    DuplicateJoint(String),
    #[error("duplicate sensor `{0}`")]
    DuplicateSensor(String),
    #[error("joint `{joint}`: {what}")]
    Joint { joint: String, what: String },
    #[error("sensor `{sensor}`: {what}")]
    Sensor { sensor: String, what: String },
    #[error("object `{object}`: {what}")]
    Object { object: String, what: String },
    #[error("{referrer} references unknown `{name}`")]
    Dangling { referrer: String, name: String },
    #[error("joint `{0}` has more than one actuator")]
    MultipleActuators(String),
    #[error("default posture for `{joint}` ({value}) is outside its limits")]
    PostureOutOfLimits { joint: String, value: f64 },
    #[error("unbounded joint `{0}`")]
    Unbounded(String),
    #[error("joint `{joint}`: bound {axis} is not contained in the simulation limit")]
    BoundNotContained { joint: String, axis: BoundAxis },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("{}", join_issues(.0))]
    Invalid(Vec<Issue>),
    #[error("duplicate instance `{0}`")]
    DuplicateInstance(String),
    #[error("invalid instance name `{0}`")]
    InvalidInstance(String),
    #[error("duplicate object `{0}`")]
    DuplicateObject(String),
}

fn join_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn is_identifier(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

/// Input to [`merge_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEntry {
    pub instance: String,
    pub description: RobotDescription,
    pub bounds: ControlBounds,
}

/// Flattened view of one joint in the merged scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneJoint {
    /// Qualified `instance/joint` name.
    pub name: String,
    pub entry: usize,
    pub spec: JointSpec,
    /// `None` for passive joints.
    pub actuator: Option<ActuatorSpec>,
    pub bounds: Option<JointBounds>,
    pub default_position: f64,
    pub effective_inertia: f64,
}

/// What a sensor reads from, resolved against the merged scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorTarget {
    Joint(usize),
    Object(usize),
    Robot(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSensor {
    /// Qualified `instance/sensor` name.
    pub name: String,
    pub spec: SensorSpec,
    pub target: SensorTarget,
}

/// All robots and objects of one simulation, with qualified joint names.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub entries: Vec<SceneEntry>,
    pub objects: Vec<ObjectSpec>,
    pub joints: Vec<SceneJoint>,
    pub sensors: Vec<SceneSensor>,
    index: HashMap<String, usize>,
}

impl SceneModel {
    pub fn joint_index(&self, qualified: &str) -> Option<usize> {
        self.index.get(qualified).copied()
    }

    pub fn joint(&self, qualified: &str) -> Option<&SceneJoint> {
        self.joint_index(qualified).map(|i| &self.joints[i])
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    pub fn joint_names(&self) -> impl Iterator<Item = &str> {
        self.joints.iter().map(|j| j.name.as_str())
    }

    /// Default posture of the whole scene, keyed by qualified name.
    pub fn default_posture(&self) -> BTreeMap<String, f64> {
        self.joints
            .iter()
            .map(|j| (j.name.clone(), j.default_position))
            .collect()
    }
}

pub fn qualify(instance: &str, joint: &str) -> String {
    format!("{instance}{NAME_SEPARATOR}{joint}")
}

/// Merges robot entries and scene objects into one scene, qualifying every
/// joint and sensor name with its instance.
pub fn merge_scene(entries: Vec<SceneEntry>, objects: Vec<ObjectSpec>) -> Result<SceneModel, ModelError> {
    let mut instances = HashSet::new();
    for e in &entries {
        if !is_identifier(&e.instance) || e.instance.contains(NAME_SEPARATOR) {
            return Err(ModelError::InvalidInstance(e.instance.clone()));
        }
        if !instances.insert(e.instance.as_str()) {
            return Err(ModelError::DuplicateInstance(e.instance.clone()));
        }
    }
    let mut object_names = HashSet::new();
    let mut issues = Vec::new();
    for o in &objects {
        if !object_names.insert(o.name.as_str()) {
            return Err(ModelError::DuplicateObject(o.name.clone()));
        }
        o.check(&mut issues);
    }
    if !issues.is_empty() {
        return Err(ModelError::Invalid(issues));
    }

    let mut joints = Vec::new();
    let mut sensors = Vec::new();
    let mut index = HashMap::new();
    for (entry_idx, e) in entries.iter().enumerate() {
        let desc = &e.description;
        let first_joint = joints.len();
        for spec in &desc.joints {
            let name = qualify(&e.instance, &spec.name);
            let actuator = desc
                .actuator(&spec.name)
                .filter(|a| a.kind != ActuatorKind::None)
                .cloned();
            index.insert(name.clone(), joints.len());
            joints.push(SceneJoint {
                name,
                entry: entry_idx,
                spec: spec.clone(),
                actuator,
                bounds: e.bounds.get(&spec.name).copied(),
                default_position: desc.default_position(spec),
                effective_inertia: effective_inertia(spec),
            });
        }
        for s in &desc.sensors {
            let target = if let Some(k) = desc.joints.iter().position(|j| j.name == s.target) {
                SensorTarget::Joint(first_joint + k)
            } else if let Some(k) = objects.iter().position(|o| o.name == s.target) {
                SensorTarget::Object(k)
            } else if s.target == desc.name && s.kind != SensorKind::GripperForce {
                SensorTarget::Robot(entry_idx)
            } else {
                issues.push(Issue::Dangling {
                    referrer: format!("sensor `{}`", qualify(&e.instance, &s.name)),
                    name: s.target.clone(),
                });
                continue;
            };
            let kind_ok = match (s.kind, target) {
                (SensorKind::Encoder | SensorKind::JointTorque, SensorTarget::Joint(_)) => true,
                (SensorKind::GripperForce, SensorTarget::Object(_)) => true,
                (SensorKind::ImuStub, SensorTarget::Joint(_) | SensorTarget::Robot(_)) => true,
                (SensorKind::GroundTruth, _) => true,
                _ => false,
            };
            if !kind_ok {
                issues.push(Issue::Sensor {
                    sensor: qualify(&e.instance, &s.name),
                    what: format!("cannot read `{}` with a {:?} sensor", s.target, s.kind),
                });
                continue;
            }
            sensors.push(SceneSensor {
                name: qualify(&e.instance, &s.name),
                spec: s.clone(),
                target,
            });
        }
    }
    if !issues.is_empty() {
        return Err(ModelError::Invalid(issues));
    }
    Ok(SceneModel {
        entries,
        objects,
        joints,
        sensors,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "pendulum",
        "joints": [{"name": "j1", "kind": "revolute", "inertia": 0.1,
                    "pos_limits": [-3.0, 3.0], "vel_limit": 5.0, "torque_limit": 10.0}],
        "actuators": [{"joint": "j1", "kind": "pd_servo", "default_gains": {"kp": 10.0, "kd": 1.0}}]
    }"#;

    fn three_joint(name: &str) -> RobotDescription {
        RobotDescription {
            name: name.into(),
            joints: (1..=3).map(|i| JointSpec::free(format!("j{i}"), 1.0)).collect(),
            actuators: (1..=3)
                .map(|i| ActuatorSpec {
                    joint: format!("j{i}"),
                    kind: ActuatorKind::PdServo,
                    default_gains: ServoGains { kp: 1.0, kd: 0.1 },
                })
                .collect(),
            sensors: vec![],
            default_posture: BTreeMap::new(),
        }
    }

    fn entry(instance: &str) -> SceneEntry {
        let description = three_joint("arm");
        let bounds = ControlBounds::from_limits(&description);
        SceneEntry {
            instance: instance.into(),
            description,
            bounds,
        }
    }

    #[test]
    fn minimal_document() {
        let desc = parse_description(MINIMAL).unwrap();
        assert_eq!(desc.joints.len(), 1);
        assert_eq!(desc.actuators.len(), 1);
        assert_eq!(desc.actuators[0].kind, ActuatorKind::PdServo);
        assert_eq!(desc.joints[0].gear, 1.0);
    }

    #[test]
    fn dangling_actuator_is_named() {
        let text = MINIMAL.replace(r#""joint": "j1""#, r#""joint": "jX""#);
        let err = parse_description(&text).unwrap_err();
        assert!(err.to_string().contains("jX"), "{err}");
    }

    #[test]
    fn stiction_below_coulomb_rejected() {
        let text = MINIMAL.replace(
            r#""inertia": 0.1,"#,
            r#""inertia": 0.1, "coulomb_friction": 0.5, "stiction": 0.2,"#,
        );
        let err = parse_description(&text).unwrap_err();
        assert!(matches!(err, ModelError::Invalid(_)));
        assert!(err.to_string().contains("stiction"));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_description("{\n  \"name\": }").unwrap_err();
        match err {
            ModelError::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_strict_and_lenient() {
        let text = MINIMAL.replacen("\"name\"", "\"colour\": \"red\", \"name\"", 1);
        let err = parse_document(&text, ParseMode::Strict).unwrap_err();
        assert_eq!(err, ModelError::UnknownKeys(vec!["colour".into()]));
        let (_, warnings) = parse_document(&text, ParseMode::Lenient).unwrap();
        assert_eq!(warnings, vec!["colour".to_string()]);
    }

    #[test]
    fn bounds_equal_to_limits_are_contained() {
        let desc = parse_description(MINIMAL).unwrap();
        let bounds = ControlBounds::from_limits(&desc);
        assert!(validate_bounds(&desc, &bounds).is_ok());
    }

    #[test]
    fn looser_velocity_bound_rejected() {
        let desc = parse_description(MINIMAL).unwrap();
        let mut bounds = ControlBounds::from_limits(&desc);
        bounds.joints.get_mut("j1").unwrap().vel = 1.1 * 5.0;
        let issues = validate_bounds(&desc, &bounds).unwrap_err();
        assert_eq!(
            issues,
            vec![Issue::BoundNotContained {
                joint: "j1".into(),
                axis: BoundAxis::Velocity
            }]
        );
    }

    #[test]
    fn missing_bound_for_actuated_joint() {
        let desc = parse_description(MINIMAL).unwrap();
        let issues = validate_bounds(&desc, &ControlBounds::default()).unwrap_err();
        assert_eq!(issues, vec![Issue::Unbounded("j1".into())]);
        assert!(issues[0].to_string().contains("unbounded joint"));
    }

    #[test]
    fn passive_joint_needs_no_bound() {
        let mut desc = parse_description(MINIMAL).unwrap();
        desc.actuators[0].kind = ActuatorKind::None;
        assert!(desc.is_passive("j1"));
        assert!(validate_bounds(&desc, &ControlBounds::default()).is_ok());
    }

    #[test]
    fn merge_two_instances() {
        let scene = merge_scene(vec![entry("a"), entry("b")], vec![]).unwrap();
        let names: Vec<_> = scene.joint_names().collect();
        assert_eq!(names, ["a/j1", "a/j2", "a/j3", "b/j1", "b/j2", "b/j3"]);
        assert_eq!(scene.joint_index("b/j2"), Some(4));
        assert_eq!(scene.joint("a/j1").unwrap().spec.name, "j1");
    }

    #[test]
    fn merge_duplicate_instance() {
        let err = merge_scene(vec![entry("a"), entry("a")], vec![]).unwrap_err();
        assert_eq!(err, ModelError::DuplicateInstance("a".into()));
    }

    #[test]
    fn merge_rejects_separator_in_instance() {
        let err = merge_scene(vec![entry("a/b")], vec![]).unwrap_err();
        assert_eq!(err, ModelError::InvalidInstance("a/b".into()));
    }

    #[test]
    fn merge_single_is_prefixed_identity() {
        let e = entry("solo");
        let scene = merge_scene(vec![e.clone()], vec![]).unwrap();
        assert_eq!(scene.entries, vec![e.clone()]);
        for (sj, spec) in scene.joints.iter().zip(&e.description.joints) {
            assert_eq!(sj.name, format!("solo/{}", spec.name));
            assert_eq!(&sj.spec, spec);
        }
    }

    #[test]
    fn effective_inertia_examples() {
        let mut j = JointSpec::free("j", 0.01);
        j.gear = 100.0;
        j.rotor_inertia = 1e-6;
        assert!((effective_inertia(&j) - 0.02).abs() < 1e-15);
        j.rotor_inertia = 0.0;
        assert_eq!(effective_inertia(&j), 0.01);
        j.gear = 1.0;
        j.rotor_inertia = 0.005;
        assert!((effective_inertia(&j) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn gripper_force_sensor_resolves_scene_object() {
        let mut desc = three_joint("arm");
        desc.sensors.push(SensorSpec {
            name: "grip".into(),
            kind: SensorKind::GripperForce,
            target: "box".into(),
            noise_std: 0.0,
            quantization: 0.0,
        });
        let bounds = ControlBounds::from_limits(&desc);
        let box_ = ObjectSpec {
            name: "box".into(),
            mass: 0.5,
            rest_height: 0.7,
            table_height: 0.7,
        };
        let e = SceneEntry {
            instance: "r".into(),
            description: desc.clone(),
            bounds: bounds.clone(),
        };
        let scene = merge_scene(vec![e.clone()], vec![box_]).unwrap();
        assert_eq!(scene.sensors[0].target, SensorTarget::Object(0));
        assert_eq!(scene.sensors[0].name, "r/grip");
        let err = merge_scene(vec![e], vec![]).unwrap_err();
        assert!(err.to_string().contains("box"));
    }
}
