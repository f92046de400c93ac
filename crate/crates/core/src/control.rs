//! Controller side of the bridge.
//!
//! Posture tasks produce desired joint accelerations, which are integrated
//! twice into the next controller-rate references and saturated to the
//! controller bounds. The accelerations servo the controller's own
//! reference state, not the raw measurement.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::ReferenceSample;
use crate::model::{JointBounds, SceneModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointReading {
    pub name: String,
    pub q: f64,
    pub qd: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReading {
    pub name: String,
    pub z: f64,
    pub vz: f64,
    pub grasped: bool,
}

/// Fixed-base IMU: gravity on the accelerometer, no rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuReading {
    pub sensor: String,
    pub linear_acceleration: [f64; 3],
    pub angular_velocity: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTruth {
    pub q: f64,
    pub qd: f64,
}

/// Exact simulation values, for debugging and evaluation only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub joints: Vec<JointTruth>,
    pub objects: Vec<ObjectReading>,
}

/// Everything the controller sees at one tick. Joint readings follow scene
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: f64,
    pub joints: Vec<JointReading>,
    pub gripper_force: Option<f64>,
    pub imu: Vec<ImuReading>,
    pub objects: Vec<ObjectReading>,
    pub ground_truth: GroundTruth,
}

impl SensorFrame {
    pub fn joint(&self, name: &str) -> Option<&JointReading> {
        self.joints.iter().find(|j| j.name == name)
    }

    pub fn object(&self, name: &str) -> Option<&ObjectReading> {
        self.objects.iter().find(|o| o.name == name)
    }
}

fn unit() -> f64 {
    1.0
}

/// Drives target joints toward fixed positions with a second-order
/// response of natural frequency `sqrt(stiffness)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostureTask {
    pub targets: BTreeMap<String, f64>,
    /// 1/s²
    pub stiffness: f64,
    /// 1 is critical damping.
    #[serde(default = "unit")]
    pub damping_ratio: f64,
    #[serde(default = "unit")]
    pub weight: f64,
}

impl PostureTask {
    pub fn new(targets: BTreeMap<String, f64>, stiffness: f64) -> Self {
        PostureTask {
            targets,
            stiffness,
            damping_ratio: 1.0,
            weight: 1.0,
        }
    }

    /// Checks gains and that every target is an actuated scene joint with a
    /// target inside its controller bounds.
    pub fn validate(&self, scene: &SceneModel) -> Result<(), ControlError> {
        let gains_ok = self.stiffness.is_finite()
            && self.stiffness > 0.0
            && self.damping_ratio.is_finite()
            && self.damping_ratio >= 0.0
            && self.weight.is_finite()
            && self.weight > 0.0;
        if !gains_ok {
            return Err(ControlError::InvalidTask(format!(
                "stiffness {} damping_ratio {} weight {}",
                self.stiffness, self.damping_ratio, self.weight
            )));
        }
        for (name, &target) in &self.targets {
            let joint = scene
                .joint(name)
                .ok_or_else(|| ControlError::UnknownJoint(name.clone()))?;
            let bounds = joint
                .bounds
                .filter(|_| joint.actuator.is_some())
                .ok_or_else(|| ControlError::PassiveJoint(name.clone()))?;
            if !target.is_finite() || !bounds.contains_position(target) {
                return Err(ControlError::TargetOutOfBounds {
                    joint: name.clone(),
                    target,
                });
            }
        }
        Ok(())
    }
}

/// Task-space PD on the reference state.
pub fn posture_acceleration(stiffness: f64, damping_ratio: f64, target: f64, reference: ReferenceSample) -> f64 {
    stiffness * (target - reference.q_ref) - 2.0 * damping_ratio * stiffness.sqrt() * reference.qd_ref
}

/// Semi-implicit double integration of a desired acceleration.
pub fn double_integrate(current: ReferenceSample, accel: f64, dt: f64) -> ReferenceSample {
    let qd_ref = current.qd_ref + dt * accel;
    ReferenceSample {
        q_ref: current.q_ref + dt * qd_ref,
        qd_ref,
    }
}

/// Next references per scene joint; `None` for passive joints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlOutput {
    pub samples: Vec<Option<ReferenceSample>>,
}

/// Saturates positions to `bounds.pos` and velocities to `±bounds.vel`. A
/// saturated position also drops the velocity component pointing outward.
pub fn clamp_to_bounds(mut out: ControlOutput, bounds: &[Option<JointBounds>]) -> ControlOutput {
    for (sample, b) in out.samples.iter_mut().zip(bounds) {
        let (Some(s), Some(b)) = (sample.as_mut(), b) else {
            continue;
        };
        s.qd_ref = s.qd_ref.clamp(-b.vel, b.vel);
        if s.q_ref >= b.pos[1] {
            s.q_ref = b.pos[1];
            s.qd_ref = s.qd_ref.min(0.0);
        } else if s.q_ref <= b.pos[0] {
            s.q_ref = b.pos[0];
            s.qd_ref = s.qd_ref.max(0.0);
        }
    }
    out
}

/// Reference generator for every actuated joint in a scene.
#[derive(Debug, Clone)]
pub struct Controller {
    names: Vec<String>,
    index: HashMap<String, usize>,
    bounds: Vec<Option<JointBounds>>,
    actuated: Vec<bool>,
    refs: Vec<ReferenceSample>,
}

impl Controller {
    /// Starts with references resting at `positions` (scene order).
    pub fn new(scene: &SceneModel, positions: &[f64]) -> Self {
        let names: Vec<String> = scene.joints.iter().map(|j| j.name.clone()).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut ctl = Controller {
            names,
            index,
            bounds: scene.joints.iter().map(|j| j.bounds).collect(),
            actuated: scene.joints.iter().map(|j| j.actuator.is_some()).collect(),
            refs: Vec::new(),
        };
        ctl.reset(positions);
        ctl
    }

    pub fn reset(&mut self, positions: &[f64]) {
        self.refs = positions.iter().map(|&q| ReferenceSample::hold(q)).collect();
    }

    pub fn references(&self) -> &[ReferenceSample] {
        &self.refs
    }

    pub fn bounds(&self) -> &[Option<JointBounds>] {
        &self.bounds
    }

    /// Desired acceleration for each target of `task`.
    pub fn posture_accel(&self, task: &PostureTask, frame: &SensorFrame) -> Result<BTreeMap<String, f64>, ControlError> {
        task.targets
            .iter()
            .map(|(name, &target)| {
                let i = self.actuated_index(name)?;
                if frame.joints.get(i).map(|j| j.name.as_str()) != Some(name.as_str()) {
                    return Err(ControlError::MissingReading(name.clone()));
                }
                let a = posture_acceleration(task.stiffness, task.damping_ratio, target, self.refs[i]);
                Ok((name.clone(), a))
            })
            .collect()
    }

    fn actuated_index(&self, name: &str) -> Result<usize, ControlError> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| ControlError::UnknownJoint(name.to_string()))?;
        if !self.actuated[i] {
            return Err(ControlError::PassiveJoint(name.to_string()));
        }
        Ok(i)
    }

    /// One controller period: blends task accelerations by weight, keeps
    /// velocities within bounds, integrates and saturates. Joints no task
    /// targets hold their reference position at zero velocity.
    pub fn tick(&mut self, frame: &SensorFrame, tasks: &[PostureTask], dt: f64) -> Result<ControlOutput, ControlError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(ControlError::InvalidPeriod(dt));
        }
        let n = self.refs.len();
        let mut weighted = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for task in tasks {
            for (name, a) in self.posture_accel(task, frame)? {
                let i = self.index[&name];
                weighted[i] += task.weight * a;
                weights[i] += task.weight;
            }
        }

        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            if !self.actuated[i] {
                samples.push(None);
                continue;
            }
            let current = self.refs[i];
            if weights[i] == 0.0 {
                samples.push(Some(ReferenceSample::hold(current.q_ref)));
                continue;
            }
            let mut accel = weighted[i] / weights[i];
            if let Some(b) = self.bounds[i] {
                accel = accel.clamp((-b.vel - current.qd_ref) / dt, (b.vel - current.qd_ref) / dt);
            }
            samples.push(Some(double_integrate(current, accel, dt)));
        }
        let out = clamp_to_bounds(ControlOutput { samples }, &self.bounds);
        for (r, s) in self.refs.iter_mut().zip(&out.samples) {
            if let Some(s) = s {
                *r = *s;
            }
        }
        Ok(out)
    }

    pub fn joint_name(&self, i: usize) -> &str {
        &self.names[i]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("joint `{0}` is passive")]
    PassiveJoint(String),
    #[error("no reading for joint `{0}` in the sensor frame")]
    MissingReading(String),
    #[error("target {target} for `{joint}` is outside its controller bounds")]
    TargetOutOfBounds { joint: String, target: f64 },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("controller period must be positive (got {0})")]
    InvalidPeriod(f64),
}
