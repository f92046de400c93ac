//! Operator commands and their enqueue-time validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsm::Machine;
use crate::model::{JointBounds, SceneModel};

/// A request from the operator or a command script. Commands take effect
/// at the next substep boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Torque (joint, N·m) or vertical force (object, N) held for `duration` s.
    ApplyPerturbation {
        target: String,
        magnitude: f64,
        duration: f64,
    },
    SetGains { joint: String, kp: f64, kd: f64 },
    /// Real-time factor; `null` runs unpaced.
    SetSpeed { factor: Option<f64> },
    Pause,
    Resume,
    /// Advances `substeps` physics steps while paused.
    StepOnce { substeps: u64 },
    Transition { state: String },
    SetPostureTarget { joint: String, position: f64 },
    ResetScenario,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ApplyPerturbation { .. } => "apply_perturbation",
            Command::SetGains { .. } => "set_gains",
            Command::SetSpeed { .. } => "set_speed",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::StepOnce { .. } => "step_once",
            Command::Transition { .. } => "transition",
            Command::SetPostureTarget { .. } => "set_posture_target",
            Command::ResetScenario => "reset_scenario",
        }
    }

    /// Every command name, in declaration order.
    pub const NAMES: [&'static str; 9] = [
        "apply_perturbation",
        "set_gains",
        "set_speed",
        "pause",
        "resume",
        "step_once",
        "transition",
        "set_posture_target",
        "reset_scenario",
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum Rejection {
    #[error("non-finite value for `{0}`")]
    NonFinite(String),
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("unknown joint or object `{0}`")]
    UnknownTarget(String),
    #[error("joint `{0}` is passive")]
    PassiveJoint(String),
    #[error("unknown state `{target}`; valid states: {}", .valid.join(", "))]
    UnknownState { target: String, valid: Vec<String> },
    #[error("{0}")]
    InvalidValue(String),
    #[error("simulation loop is not running")]
    Closed,
}

/// Scene facts needed to vet commands away from the loop context.
#[derive(Debug, Clone, Default)]
pub struct CommandValidator {
    joints: BTreeMap<String, Option<JointBounds>>,
    objects: BTreeSet<String>,
    states: Vec<String>,
}

impl CommandValidator {
    pub fn new(scene: &SceneModel, machine: &Machine) -> Self {
        CommandValidator {
            joints: scene
                .joints
                .iter()
                .map(|j| (j.name.clone(), j.bounds.filter(|_| j.actuator.is_some())))
                .collect(),
            objects: scene.objects.iter().map(|o| o.name.clone()).collect(),
            states: machine.state_names().map(String::from).collect(),
        }
    }

    fn actuated(&self, joint: &str) -> Result<Option<JointBounds>, Rejection> {
        match self.joints.get(joint) {
            None => Err(Rejection::UnknownJoint(joint.to_string())),
            Some(None) => Err(Rejection::PassiveJoint(joint.to_string())),
            Some(b) => Ok(*b),
        }
    }

    pub fn validate(&self, cmd: &Command) -> Result<(), Rejection> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Rejection::NonFinite(name.to_string()))
            }
        };
        match cmd {
            Command::ApplyPerturbation {
                target,
                magnitude,
                duration,
            } => {
                finite("magnitude", *magnitude)?;
                finite("duration", *duration)?;
                if *duration <= 0.0 {
                    return Err(Rejection::InvalidValue(format!("duration must be > 0 (got {duration})")));
                }
                if !self.joints.contains_key(target) && !self.objects.contains(target) {
                    return Err(Rejection::UnknownTarget(target.clone()));
                }
            }
            Command::SetGains { joint, kp, kd } => {
                finite("kp", *kp)?;
                finite("kd", *kd)?;
                if *kp < 0.0 || *kd < 0.0 {
                    return Err(Rejection::InvalidValue(format!("gains must be >= 0 (kp={kp}, kd={kd})")));
                }
                self.actuated(joint)?;
            }
            Command::SetSpeed { factor } => {
                if let Some(f) = factor {
                    finite("factor", *f)?;
                    if *f <= 0.0 {
                        return Err(Rejection::InvalidValue(format!("factor must be > 0 (got {f})")));
                    }
                }
            }
            Command::StepOnce { substeps } => {
                if *substeps == 0 {
                    return Err(Rejection::InvalidValue("substeps must be >= 1".into()));
                }
            }
            Command::Transition { state } => {
                if !self.states.iter().any(|s| s == state) {
                    return Err(Rejection::UnknownState {
                        target: state.clone(),
                        valid: self.states.clone(),
                    });
                }
            }
            Command::SetPostureTarget { joint, position } => {
                finite("position", *position)?;
                if let Some(b) = self.actuated(joint)? {
                    if !b.contains_position(*position) {
                        return Err(Rejection::InvalidValue(format!(
                            "position {position} outside [{}, {}] for `{joint}`",
                            b.pos[0], b.pos[1]
                        )));
                    }
                }
            }
            Command::Pause | Command::Resume | Command::ResetScenario => {}
        }
        Ok(())
    }
}
