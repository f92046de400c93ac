//! Scenario documents: robots, objects, state machine, simulation settings
//! and an optional timestamped command script.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::InterpolationMode;
use crate::command::{Command, CommandValidator, Rejection};
use crate::control::ControlError;
use crate::demo::GraspConfig;
use crate::fsm::{referenced_names, FsmError, FsmWarning, Machine};
use crate::model::{from_json_checked, merge_scene, ModelError, ObjectSpec, ParseMode, RobotDocument, SceneEntry, SceneModel};

fn default_dt() -> f64 {
    0.001
}

fn default_divisor() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Physics and PD servo period, seconds.
    #[serde(default = "default_dt")]
    pub dt_sim: f64,
    /// Physics substeps per controller tick.
    #[serde(default = "default_divisor")]
    pub ctrl_divisor: u32,
    /// Target sim-time / wall-time ratio; `None` runs as fast as possible.
    #[serde(default)]
    pub realtime_factor: Option<f64>,
    #[serde(default)]
    pub paused: bool,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub interpolation: InterpolationMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_sim: default_dt(),
            ctrl_divisor: default_divisor(),
            realtime_factor: None,
            paused: false,
            rng_seed: 0,
            interpolation: InterpolationMode::Linear,
        }
    }
}

impl SimConfig {
    pub fn dt_ctrl(&self) -> f64 {
        self.dt_sim * f64::from(self.ctrl_divisor)
    }

    pub fn physics_hz(&self) -> f64 {
        1.0 / self.dt_sim
    }

    pub fn controller_hz(&self) -> f64 {
        1.0 / self.dt_ctrl()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.dt_sim.is_finite() && self.dt_sim > 0.0) {
            return Err(ScenarioError::Sim(format!("dt_sim must be > 0 (got {})", self.dt_sim)));
        }
        if self.ctrl_divisor == 0 {
            return Err(ScenarioError::Sim("ctrl_divisor must be >= 1".into()));
        }
        if let Some(f) = self.realtime_factor {
            if !(f.is_finite() && f > 0.0) {
                return Err(ScenarioError::Sim(format!("realtime_factor must be > 0 (got {f})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotEntry {
    pub instance: String,
    pub description: RobotDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCommand {
    /// Sim time at which the command is injected.
    pub t: f64,
    pub cmd: Command,
}

fn default_telemetry_hz() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub sim: SimConfig,
    pub robots: Vec<RobotEntry>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub fsm: Machine,
    #[serde(default)]
    pub grasp: Option<GraspConfig>,
    /// Default run length for headless runs, seconds.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default = "default_telemetry_hz")]
    pub telemetry_hz: f64,
    #[serde(default)]
    pub commands: Vec<ScriptedCommand>,
}

/// A scenario whose scene has been merged and whose parts cross-check.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub scenario: Scenario,
    pub scene: SceneModel,
    pub warnings: Vec<String>,
}

impl Scenario {
    pub fn from_json(text: &str, mode: ParseMode) -> Result<(Scenario, Vec<String>), ScenarioError> {
        from_json_checked(text, mode).map_err(ScenarioError::Parse)
    }

    pub fn load(path: &Path) -> Result<BuiltScenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        let (scenario, _) = Scenario::from_json(&text, ParseMode::Strict)?;
        scenario.build()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Merges the scene and validates every cross reference.
    pub fn build(self) -> Result<BuiltScenario, ScenarioError> {
        self.sim.validate()?;
        if !(self.telemetry_hz.is_finite() && self.telemetry_hz > 0.0 && self.telemetry_hz <= self.sim.physics_hz() + 1e-9) {
            return Err(ScenarioError::Sim(format!(
                "telemetry_hz must be in (0, {}] (got {})",
                self.sim.physics_hz(),
                self.telemetry_hz
            )));
        }
        if let Some(d) = self.duration {
            if !(d.is_finite() && d >= 0.0) {
                return Err(ScenarioError::Sim(format!("duration must be >= 0 (got {d})")));
            }
        }

        let mut objects = self.objects.clone();
        let mut entries = Vec::new();
        for r in &self.robots {
            r.description.validate().map_err(|issues| ScenarioError::Robot {
                instance: r.instance.clone(),
                source: ModelError::Invalid(issues),
            })?;
            objects.extend(r.description.objects.iter().cloned());
            entries.push(SceneEntry {
                instance: r.instance.clone(),
                description: r.description.description.clone(),
                bounds: r.description.bounds.clone(),
            });
        }
        let scene = merge_scene(entries, objects).map_err(ScenarioError::Scene)?;

        let warnings: Vec<String> = self
            .fsm
            .validate()
            .map_err(ScenarioError::Fsm)?
            .iter()
            .map(FsmWarning::to_string)
            .collect();
        for state in &self.fsm.states {
            for task in &state.tasks {
                task.validate(&scene).map_err(|source| ScenarioError::Task {
                    state: state.name.clone(),
                    source,
                })?;
            }
        }
        let (joints, objs) = referenced_names(&self.fsm);
        for j in joints {
            if scene.joint_index(&j).is_none() {
                return Err(ScenarioError::Reference(format!("criterion reads unknown joint `{j}`")));
            }
        }
        for o in objs {
            if scene.object_index(&o).is_none() {
                return Err(ScenarioError::Reference(format!("criterion reads unknown object `{o}`")));
            }
        }
        if let Some(g) = &self.grasp {
            g.validate(&scene).map_err(ScenarioError::Grasp)?;
        }

        let validator = CommandValidator::new(&scene, &self.fsm);
        for (index, sc) in self.commands.iter().enumerate() {
            if !(sc.t.is_finite() && sc.t >= 0.0) {
                return Err(ScenarioError::Script {
                    index,
                    source: Rejection::InvalidValue(format!("time {}", sc.t)),
                });
            }
            validator
                .validate(&sc.cmd)
                .map_err(|source| ScenarioError::Script { index, source })?;
        }
        let mut scenario = self;
        scenario.commands.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(BuiltScenario {
            scenario,
            scene,
            warnings,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(ModelError),
    #[error("robot `{instance}`: {source}")]
    Robot { instance: String, source: ModelError },
    #[error("scene: {0}")]
    Scene(ModelError),
    #[error("fsm: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Fsm(Vec<FsmError>),
    #[error("state `{state}`: {source}")]
    Task { state: String, source: ControlError },
    #[error("{0}")]
    Reference(String),
    #[error("grasp: {0}")]
    Grasp(String),
    #[error("sim config: {0}")]
    Sim(String),
    #[error("command script entry {index}: {source}")]
    Script { index: usize, source: Rejection },
}
