//! Flat finite-state machine with completion criteria.
//!
//! Each state lists the posture tasks it activates, a completion criterion,
//! an optional timeout and the state to enter on completion. A state with
//! no successor is terminal. A timeout forces the same transition as the
//! criterion. At most one transition happens per step.

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{PostureTask, SensorFrame};
use crate::datastore::Datastore;

/// Slack for comparing accumulated times against thresholds.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Criterion {
    /// Time spent in the state reaches `duration` seconds.
    Timer { duration: f64 },
    /// Largest tracking error of the listed joints (all task targets when
    /// empty) stays below `eps` for `hold` seconds.
    ErrorBelow {
        eps: f64,
        #[serde(default)]
        hold: f64,
        #[serde(default)]
        joints: Vec<String>,
    },
    /// Measured position of `joint` is at most `aperture_max`.
    GripperClosed { joint: String, aperture_max: f64 },
    /// Object height is at least `z_min`.
    ObjectHeight { object: String, z_min: f64 },
    /// Gripper force sensor reads at least `force_min`.
    Contact { force_min: f64 },
    /// Boolean datastore entry is true.
    Flag { key: String },
    /// Every sub-criterion holds on the same tick.
    All { of: Vec<Criterion> },
}

impl Criterion {
    fn check(&self, errors: &mut Vec<FsmError>, state: &str, holds: &mut usize) {
        let bad = |what: String| FsmError::InvalidCriterion {
            state: state.to_string(),
            what,
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match self {
            Criterion::Timer { duration } if !positive(*duration) => {
                errors.push(bad(format!("timer duration {duration}")))
            }
            Criterion::ErrorBelow { eps, hold, .. } => {
                *holds += 1;
                if !positive(*eps) || !(hold.is_finite() && *hold >= 0.0) {
                    errors.push(bad(format!("error_below eps {eps} hold {hold}")));
                }
            }
            Criterion::GripperClosed { aperture_max, .. } if !aperture_max.is_finite() => {
                errors.push(bad(format!("aperture_max {aperture_max}")))
            }
            Criterion::ObjectHeight { z_min, .. } if !z_min.is_finite() => {
                errors.push(bad(format!("z_min {z_min}")))
            }
            Criterion::Contact { force_min } if !positive(*force_min) => {
                errors.push(bad(format!("force_min {force_min}")))
            }
            Criterion::All { of } => {
                if of.is_empty() {
                    errors.push(bad("empty conjunction".into()));
                }
                for c in of {
                    c.check(errors, state, holds);
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDef {
    pub name: String,
    #[serde(default)]
    pub tasks: Vec<PostureTask>,
    /// `None` never completes on its own.
    #[serde(default)]
    pub criterion: Option<Criterion>,
    /// Seconds; 0 disables the timeout.
    #[serde(default)]
    pub timeout: f64,
    /// Successor; `None` marks a terminal state.
    #[serde(default)]
    pub on_complete: Option<String>,
}

impl StateDef {
    pub fn is_terminal(&self) -> bool {
        self.on_complete.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub initial: String,
    pub states: Vec<StateDef>,
    /// Terminal state that counts as success for headless runs.
    #[serde(default)]
    pub success: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FsmWarning {
    Unreachable(String),
}

impl std::fmt::Display for FsmWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FsmWarning::Unreachable(s) => write!(f, "state `{s}` is unreachable from the initial state"),
        }
    }
}

impl Machine {
    pub fn state(&self, name: &str) -> Option<&StateDef> {
        self.states.iter().find(|s| s.name == name)
    }

    pub fn state_names(&self) -> impl Iterator<Item = &str> {
        self.states.iter().map(|s| s.name.as_str())
    }

    /// Structural checks. Unreachable states are reported as warnings.
    pub fn validate(&self) -> Result<Vec<FsmWarning>, Vec<FsmError>> {
        let mut errors = Vec::new();
        let mut names = HashSet::new();
        for s in &self.states {
            if !crate::model::is_identifier(&s.name) {
                errors.push(FsmError::InvalidName(s.name.clone()));
            }
            if !names.insert(s.name.as_str()) {
                errors.push(FsmError::DuplicateState(s.name.clone()));
            }
            if !(s.timeout.is_finite() && s.timeout >= 0.0) {
                errors.push(FsmError::InvalidCriterion {
                    state: s.name.clone(),
                    what: format!("timeout {}", s.timeout),
                });
            }
            if let Some(c) = &s.criterion {
                let mut holds = 0;
                c.check(&mut errors, &s.name, &mut holds);
                if holds > 1 {
                    errors.push(FsmError::InvalidCriterion {
                        state: s.name.clone(),
                        what: "at most one error_below per state".into(),
                    });
                }
            }
        }
        for s in &self.states {
            if let Some(next) = &s.on_complete {
                if !names.contains(next.as_str()) {
                    errors.push(FsmError::DanglingTarget {
                        state: s.name.clone(),
                        target: next.clone(),
                    });
                }
            }
        }
        if !names.contains(self.initial.as_str()) {
            errors.push(FsmError::MissingInitial(self.initial.clone()));
        }
        if let Some(success) = &self.success {
            match self.state(success) {
                Some(s) if s.is_terminal() => {}
                _ => errors.push(FsmError::InvalidSuccess(success.clone())),
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }

        let mut reached = HashSet::from([self.initial.as_str()]);
        let mut queue = VecDeque::from([self.initial.as_str()]);
        while let Some(name) = queue.pop_front() {
            if let Some(next) = self.state(name).and_then(|s| s.on_complete.as_deref()) {
                if reached.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        Ok(self
            .states
            .iter()
            .filter(|s| !reached.contains(s.name.as_str()))
            .map(|s| FsmWarning::Unreachable(s.name.clone()))
            .collect())
    }

    /// Status at the initial state, entered at time `t`.
    pub fn start(&self, t: f64) -> FsmStatus {
        let terminal = self.state(&self.initial).is_some_and(StateDef::is_terminal);
        FsmStatus {
            current: self.initial.clone(),
            entered_at: t,
            hold_accum: 0.0,
            terminal,
        }
    }

    pub fn tasks(&self, status: &FsmStatus) -> &[PostureTask] {
        self.state(&status.current).map_or(&[], |s| s.tasks.as_slice())
    }

    /// Evaluates the current state's criterion against `ctx` and performs at
    /// most one transition.
    pub fn step(&self, status: &mut FsmStatus, ctx: &CriterionContext<'_>, dt: f64) -> Result<Option<Transition>, FsmError> {
        if status.terminal {
            return Err(FsmError::Terminal(status.current.clone()));
        }
        let state = self
            .state(&status.current)
            .ok_or_else(|| FsmError::UnknownState(status.current.clone()))?;
        let elapsed = ctx.frame.t - status.entered_at;
        let met = match &state.criterion {
            Some(c) => evaluate(c, ctx, elapsed, &mut status.hold_accum, dt)?,
            None => false,
        };
        let timed_out = state.timeout > 0.0 && elapsed + TIME_EPS >= state.timeout;
        if !(met || timed_out) {
            return Ok(None);
        }
        let next = state
            .on_complete
            .as_deref()
            .ok_or_else(|| FsmError::Terminal(state.name.clone()))?;
        let cause = if met {
            TransitionCause::Criterion
        } else {
            TransitionCause::Timeout
        };
        self.enter(status, next, ctx.frame.t)?;
        Ok(Some(Transition {
            from: state.name.clone(),
            to: next.to_string(),
            cause,
        }))
    }

    /// Operator-requested transition; re-entering the current state resets
    /// its timers.
    pub fn request_transition(&self, status: &mut FsmStatus, target: &str, t: f64) -> Result<Transition, FsmError> {
        if status.terminal {
            return Err(FsmError::Terminal(status.current.clone()));
        }
        if self.state(target).is_none() {
            return Err(FsmError::UnknownTarget {
                target: target.to_string(),
                valid: self.state_names().map(String::from).collect(),
            });
        }
        let from = status.current.clone();
        self.enter(status, target, t)?;
        Ok(Transition {
            from,
            to: target.to_string(),
            cause: TransitionCause::Manual,
        })
    }

    fn enter(&self, status: &mut FsmStatus, name: &str, t: f64) -> Result<(), FsmError> {
        let state = self
            .state(name)
            .ok_or_else(|| FsmError::UnknownState(name.to_string()))?;
        status.current = state.name.clone();
        status.entered_at = t;
        status.hold_accum = 0.0;
        status.terminal = state.is_terminal();
        Ok(())
    }
}

/// What criteria may read.
pub struct CriterionContext<'a> {
    pub frame: &'a SensorFrame,
    pub tasks: &'a [PostureTask],
    pub store: Option<&'a Datastore>,
}

fn evaluate(
    c: &Criterion,
    ctx: &CriterionContext<'_>,
    elapsed: f64,
    hold_accum: &mut f64,
    dt: f64,
) -> Result<bool, FsmError> {
    Ok(match c {
        Criterion::Timer { duration } => elapsed + TIME_EPS >= *duration,
        Criterion::ErrorBelow { eps, hold, joints } => {
            let mut targets: Vec<(&str, f64)> = Vec::new();
            for task in ctx.tasks {
                for (name, &target) in &task.targets {
                    if joints.is_empty() || joints.iter().any(|j| j == name) {
                        targets.push((name, target));
                    }
                }
            }
            let mut worst = 0.0_f64;
            for (name, target) in targets {
                let reading = ctx
                    .frame
                    .joint(name)
                    .ok_or_else(|| FsmError::MissingReading(name.to_string()))?;
                worst = worst.max((target - reading.q).abs());
            }
            if worst < *eps {
                *hold_accum += dt;
                *hold_accum + TIME_EPS >= *hold
            } else {
                *hold_accum = 0.0;
                false
            }
        }
        Criterion::GripperClosed { joint, aperture_max } => {
            let reading = ctx
                .frame
                .joint(joint)
                .ok_or_else(|| FsmError::MissingReading(joint.clone()))?;
            reading.q <= *aperture_max
        }
        Criterion::ObjectHeight { object, z_min } => {
            let o = ctx
                .frame
                .object(object)
                .ok_or_else(|| FsmError::MissingReading(object.clone()))?;
            o.z >= *z_min
        }
        Criterion::Contact { force_min } => ctx.frame.gripper_force.is_some_and(|f| f >= *force_min),
        Criterion::Flag { key } => ctx
            .store
            .and_then(|s| s.get_bool(key).ok())
            .unwrap_or(false),
        Criterion::All { of } => {
            let mut all = true;
            for sub in of {
                // evaluate everything so hold accumulators stay current
                all &= evaluate(sub, ctx, elapsed, hold_accum, dt)?;
            }
            all
        }
    })
}

/// Free-function form of [`Machine::step`] returning the active tasks.
pub fn fsm_step<'m>(
    status: &FsmStatus,
    machine: &'m Machine,
    ctx: &CriterionContext<'_>,
    dt: f64,
) -> Result<(FsmStatus, &'m [PostureTask]), FsmError> {
    let mut next = status.clone();
    machine.step(&mut next, ctx, dt)?;
    let tasks = machine.tasks(&next);
    Ok((next, tasks))
}

pub fn validate_machine(machine: &Machine) -> Result<Vec<FsmWarning>, Vec<FsmError>> {
    machine.validate()
}

/// Names referenced by criteria, for checking against a scene.
pub fn referenced_names(machine: &Machine) -> (BTreeSet<String>, BTreeSet<String>) {
    fn walk(c: &Criterion, joints: &mut BTreeSet<String>, objects: &mut BTreeSet<String>) {
        match c {
            Criterion::ErrorBelow { joints: js, .. } => joints.extend(js.iter().cloned()),
            Criterion::GripperClosed { joint, .. } => {
                joints.insert(joint.clone());
            }
            Criterion::ObjectHeight { object, .. } => {
                objects.insert(object.clone());
            }
            Criterion::All { of } => of.iter().for_each(|c| walk(c, joints, objects)),
            _ => {}
        }
    }
    let mut joints = BTreeSet::new();
    let mut objects = BTreeSet::new();
    for s in &machine.states {
        if let Some(c) = &s.criterion {
            walk(c, &mut joints, &mut objects);
        }
    }
    (joints, objects)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmStatus {
    pub current: String,
    pub entered_at: f64,
    pub hold_accum: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    Criterion,
    Timeout,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub to: String,
    pub cause: TransitionCause,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FsmError {
    #[error("state `{state}` completes into unknown state `{target}`")]
    DanglingTarget { state: String, target: String },
    #[error("initial state `{0}` is not defined")]
    MissingInitial(String),
    #[error("success state `{0}` is not a defined terminal state")]
    InvalidSuccess(String),
    #[error("duplicate state `{0}`")]
    DuplicateState(String),
    #[error("invalid state name `{0}`")]
    InvalidName(String),
    #[error("state `{state}`: invalid criterion: {what}")]
    InvalidCriterion { state: String, what: String },
    #[error("unknown state `{target}`; valid states: {}", .valid.join(", "))]
    UnknownTarget { target: String, valid: Vec<String> },
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("state machine is in terminal state `{0}`")]
    Terminal(String),
    #[error("criterion reads `{0}`, which is missing from the sensor frame")]
    MissingReading(String),
}
