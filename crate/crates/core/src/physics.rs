//! Fixed-step joint-space dynamics.
//!
//! Every joint is an independent 1-DoF inertia driven by the gear-scaled
//! actuator torque and an optional perturbation, and loaded by viscous
//! damping, Coulomb friction with a stiction latch, and a `sin(q)` gravity
//! torque. Objects are vertical point masses resting on a table or rigidly
//! attached to a joint while grasped.
//!
//! Integration is kick-drift-kick leapfrog: each half kick is a semi-implicit
//! velocity update with trapezoidal damping, and friction is a velocity-level
//! impulse that never reverses motion. Limits are hard stops that zero the
//! velocity on contact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SceneModel;

/// Gravitational acceleration for objects, m/s².
pub const GRAVITY: f64 = 9.81;

/// Below this speed a joint counts as resting for the stiction test.
pub const STICTION_VELOCITY_WINDOW: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointRuntime {
    pub q: f64,
    pub qd: f64,
    /// Joint-side actuator torque applied during the last step.
    pub last_applied: f64,
    pub ext_torque: f64,
    /// Steps left before `ext_torque` expires.
    pub ext_steps: u64,
}

impl JointRuntime {
    fn external(&self) -> f64 {
        if self.ext_steps > 0 {
            self.ext_torque
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectRuntime {
    pub z: f64,
    pub vz: f64,
    pub grasped: bool,
    /// `z - q_attach` at the grasp instant; meaningful only while grasped.
    pub anchor_offset: f64,
    pub attach_joint: Option<usize>,
    /// Clamp force reported by a gripper force sensor while grasped.
    pub grip_force: f64,
    pub ext_force: f64,
    pub ext_steps: u64,
}

/// Dynamic state of a scene. Joint and object vectors follow scene order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsState {
    pub t: f64,
    pub steps: u64,
    pub joints: Vec<JointRuntime>,
    pub objects: Vec<ObjectRuntime>,
}

/// Motor-side torque per scene joint; `None` for passive joints.
pub type MotorCommands = [Option<f64>];

impl PhysicsState {
    /// A state at the scene's default posture with objects at rest.
    pub fn new(scene: &SceneModel) -> Self {
        let mut state = PhysicsState {
            t: 0.0,
            steps: 0,
            joints: vec![JointRuntime::default(); scene.joints.len()],
            objects: vec![ObjectRuntime::default(); scene.objects.len()],
        };
        state
            .reset(scene, &BTreeMap::new())
            .expect("default posture is within limits");
        state
    }

    /// Moves every joint to `posture` (qualified name → position; absent
    /// joints take their default), zeroes velocities and perturbations,
    /// rests objects and sets `t = 0`.
    pub fn reset(&mut self, scene: &SceneModel, posture: &BTreeMap<String, f64>) -> Result<(), PhysicsError> {
        for name in posture.keys() {
            if scene.joint_index(name).is_none() {
                return Err(PhysicsError::UnknownJoint(name.clone()));
            }
        }
        let mut positions = Vec::with_capacity(scene.joints.len());
        for j in &scene.joints {
            let q = posture.get(&j.name).copied().unwrap_or(j.default_position);
            if !q.is_finite() || q < j.spec.min_position() || q > j.spec.max_position() {
                return Err(PhysicsError::PostureOutOfLimits {
                    joint: j.name.clone(),
                    value: q,
                });
            }
            positions.push(q);
        }
        self.t = 0.0;
        self.steps = 0;
        self.joints = positions
            .into_iter()
            .map(|q| JointRuntime {
                q,
                ..JointRuntime::default()
            })
            .collect();
        self.objects = scene
            .objects
            .iter()
            .map(|o| ObjectRuntime {
                z: o.rest_height,
                ..ObjectRuntime::default()
            })
            .collect();
        Ok(())
    }

    /// Applies `torque` to a joint for `ceil(duration / dt)` steps, replacing
    /// any perturbation already active on it.
    pub fn apply_external(
        &mut self,
        scene: &SceneModel,
        joint: &str,
        torque: f64,
        duration: f64,
        dt: f64,
    ) -> Result<(), PhysicsError> {
        let idx = scene
            .joint_index(joint)
            .ok_or_else(|| PhysicsError::UnknownJoint(joint.to_string()))?;
        let steps = perturbation_steps(torque, duration, dt)?;
        let j = &mut self.joints[idx];
        j.ext_torque = torque;
        j.ext_steps = steps;
        Ok(())
    }

    /// Applies a vertical force (N) to an object for `ceil(duration / dt)` steps.
    pub fn apply_object_force(
        &mut self,
        scene: &SceneModel,
        object: &str,
        force: f64,
        duration: f64,
        dt: f64,
    ) -> Result<(), PhysicsError> {
        let idx = scene
            .object_index(object)
            .ok_or_else(|| PhysicsError::UnknownObject(object.to_string()))?;
        let steps = perturbation_steps(force, duration, dt)?;
        let o = &mut self.objects[idx];
        o.ext_force = force;
        o.ext_steps = steps;
        Ok(())
    }

    /// Advances the state by one step of length `dt`. The state is left
    /// untouched when the commands are rejected.
    pub fn step(&mut self, scene: &SceneModel, commands: &MotorCommands, dt: f64) -> Result<(), PhysicsError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(PhysicsError::InvalidTimestep(dt));
        }
        if commands.len() != scene.joints.len() {
            return Err(PhysicsError::CommandCount {
                expected: scene.joints.len(),
                got: commands.len(),
            });
        }
        for (sj, cmd) in scene.joints.iter().zip(commands) {
            match cmd {
                Some(u) if !u.is_finite() => return Err(PhysicsError::NonFiniteCommand(sj.name.clone())),
                Some(_) if sj.actuator.is_none() => return Err(PhysicsError::PassiveCommand(sj.name.clone())),
                _ => {}
            }
        }

        for ((sj, rt), cmd) in scene.joints.iter().zip(&mut self.joints).zip(commands) {
            let spec = &sj.spec;
            let u_joint = cmd
                .map(|u| (spec.gear * u).clamp(-spec.torque_limit, spec.torque_limit))
                .unwrap_or(0.0);
            let drive = u_joint + rt.external();
            let tau_drive = drive - spec.damping * rt.qd - spec.gravity_amp * rt.q.sin();

            if rt.qd.abs() < STICTION_VELOCITY_WINDOW && tau_drive.abs() <= spec.stiction {
                rt.qd = 0.0;
            } else {
                let kick = HalfKick {
                    inertia: sj.effective_inertia,
                    damping: spec.damping,
                    friction: spec.coulomb_friction,
                    gravity: spec.gravity_amp,
                    drive,
                    h: 0.5 * dt,
                };
                let qd_half = kick.apply(rt.qd, rt.q);
                let q_free = rt.q + dt * qd_half;
                let q = q_free.clamp(spec.min_position(), spec.max_position());
                rt.q = q;
                rt.qd = if q != q_free { 0.0 } else { kick.apply(qd_half, q) };
            }
            rt.last_applied = u_joint;
            rt.ext_steps = rt.ext_steps.saturating_sub(1);
        }

        for (spec, obj) in scene.objects.iter().zip(&mut self.objects) {
            let attached = obj.attach_joint.filter(|_| obj.grasped);
            if let Some(j) = attached {
                let z = (self.joints[j].q + obj.anchor_offset).max(spec.table_height);
                obj.vz = (z - obj.z) / dt;
                obj.z = z;
            } else {
                let ext = if obj.ext_steps > 0 { obj.ext_force } else { 0.0 };
                obj.vz += dt * (ext / spec.mass - GRAVITY);
                obj.z += dt * obj.vz;
                if obj.z <= spec.table_height {
                    obj.z = spec.table_height;
                    obj.vz = obj.vz.max(0.0);
                }
            }
            obj.ext_steps = obj.ext_steps.saturating_sub(1);
        }

        self.steps += 1;
        self.t = self.steps as f64 * dt;
        Ok(())
    }
}

/// One semi-implicit half-step velocity update with constant drive torque.
struct HalfKick {
    inertia: f64,
    damping: f64,
    friction: f64,
    gravity: f64,
    drive: f64,
    h: f64,
}

impl HalfKick {
    fn apply(&self, v: f64, q: f64) -> f64 {
        let a = self.inertia / self.h;
        let b = 0.5 * self.damping;
        let v_star = (v * (a - b) + self.drive - self.gravity * q.sin()) / (a + b);
        let slip = self.friction / (a + b);
        if v_star.abs() <= slip {
            0.0
        } else {
            v_star - v_star.signum() * slip
        }
    }
}

fn perturbation_steps(magnitude: f64, duration: f64, dt: f64) -> Result<u64, PhysicsError> {
    if !magnitude.is_finite() {
        return Err(PhysicsError::NonFinitePerturbation);
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(PhysicsError::InvalidDuration(duration));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(PhysicsError::InvalidTimestep(dt));
    }
    // Tolerance keeps 0.1 / 0.001 at 100 steps instead of 101.
    Ok(((duration / dt) - 1e-9).ceil().max(1.0) as u64)
}

/// Free function form of [`PhysicsState::step`].
pub fn step(
    state: &PhysicsState,
    scene: &SceneModel,
    commands: &MotorCommands,
    dt: f64,
) -> Result<PhysicsState, PhysicsError> {
    let mut next = state.clone();
    next.step(scene, commands, dt)?;
    Ok(next)
}

/// Kinetic plus potential energy of joints and objects, in joules.
pub fn energy(state: &PhysicsState, scene: &SceneModel) -> f64 {
    let joints: f64 = scene
        .joints
        .iter()
        .zip(&state.joints)
        .map(|(sj, rt)| 0.5 * sj.effective_inertia * rt.qd * rt.qd + sj.spec.gravity_amp * (1.0 - rt.q.cos()))
        .sum();
    let objects: f64 = scene
        .objects
        .iter()
        .zip(&state.objects)
        .map(|(o, rt)| o.mass * GRAVITY * rt.z + 0.5 * o.mass * rt.vz * rt.vz)
        .sum();
    joints + objects
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("non-finite command for joint `{0}`")]
    NonFiniteCommand(String),
    #[error("command for passive joint `{0}`")]
    PassiveCommand(String),
    #[error("expected {expected} commands, got {got}")]
    CommandCount { expected: usize, got: usize },
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("perturbation duration must be positive (got {0})")]
    InvalidDuration(f64),
    #[error("perturbation magnitude must be finite")]
    NonFinitePerturbation,
    #[error("timestep must be positive (got {0})")]
    InvalidTimestep(f64),
    #[error("posture for `{joint}` ({value}) is outside its limits")]
    PostureOutOfLimits { joint: String, value: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuation::ServoGains;
    use crate::model::{
        merge_scene, ActuatorKind, ActuatorSpec, ControlBounds, JointSpec, ObjectSpec, RobotDescription,
        SceneEntry,
    };

    const DT: f64 = 1e-3;

    fn scene_with(joint: JointSpec, actuated: bool, objects: Vec<ObjectSpec>) -> SceneModel {
        let actuators = if actuated {
            vec![ActuatorSpec {
                joint: joint.name.clone(),
                kind: ActuatorKind::DirectTorque,
                default_gains: ServoGains::default(),
            }]
        } else {
            vec![]
        };
        let description = RobotDescription {
            name: "r".into(),
            joints: vec![joint],
            actuators,
            sensors: vec![],
            default_posture: Default::default(),
        };
        let bounds = ControlBounds::from_limits(&description);
        merge_scene(
            vec![SceneEntry {
                instance: "r".into(),
                description,
                bounds,
            }],
            objects,
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_only_advances_time() {
        let scene = scene_with(JointSpec::free("j", 1.0), true, vec![]);
        let s0 = PhysicsState::new(&scene);
        let s1 = step(&s0, &scene, &[Some(0.0)], DT).unwrap();
        assert_eq!(s1.joints, s0.joints);
        assert_eq!(s1.t, DT);
    }

    #[test]
    fn stiction_holds_subthreshold_torque() {
        let mut j = JointSpec::free("j", 1.0);
        j.stiction = 1.0;
        j.coulomb_friction = 0.5;
        let scene = scene_with(j, true, vec![]);
        let mut s = PhysicsState::new(&scene);
        for _ in 0..1000 {
            s.step(&scene, &[Some(0.5)], DT).unwrap();
            assert_eq!(s.joints[0].qd, 0.0);
        }
        assert_eq!(s.joints[0].q, 0.0);
    }

    #[test]
    fn breakaway_above_stiction() {
        let mut j = JointSpec::free("j", 1.0);
        j.stiction = 1.0;
        j.coulomb_friction = 0.5;
        let scene = scene_with(j, true, vec![]);
        let mut s = PhysicsState::new(&scene);
        s.step(&scene, &[Some(1.5)], DT).unwrap();
        // net accel (1.5 - 0.5) / 1
        assert!((s.joints[0].qd - 1.0 * DT).abs() < 1e-12, "{}", s.joints[0].qd);
    }

    #[test]
    fn gear_scales_and_clamps_joint_side() {
        let mut j = JointSpec::free("j", 1.0);
        j.gear = 10.0;
        j.torque_limit = 5.0;
        let scene = scene_with(j, true, vec![]);
        let mut s = PhysicsState::new(&scene);
        s.step(&scene, &[Some(0.2)], DT).unwrap();
        assert_eq!(s.joints[0].last_applied, 2.0);
        s.step(&scene, &[Some(1.0)], DT).unwrap();
        assert_eq!(s.joints[0].last_applied, 5.0);
        s.step(&scene, &[Some(-1.0)], DT).unwrap();
        assert_eq!(s.joints[0].last_applied, -5.0);
    }

    #[test]
    fn non_finite_command_rejected_without_mutation() {
        let scene = scene_with(JointSpec::free("j", 1.0), true, vec![]);
        let s0 = PhysicsState::new(&scene);
        let mut s = s0.clone();
        let err = s.step(&scene, &[Some(f64::NAN)], DT).unwrap_err();
        assert_eq!(err, PhysicsError::NonFiniteCommand("r/j".into()));
        assert_eq!(s, s0);
    }

    #[test]
    fn passive_joint_command_rejected() {
        let scene = scene_with(JointSpec::free("j", 1.0), false, vec![]);
        let mut s = PhysicsState::new(&scene);
        assert_eq!(
            s.step(&scene, &[Some(1.0)], DT).unwrap_err(),
            PhysicsError::PassiveCommand("r/j".into())
        );
        s.step(&scene, &[None], DT).unwrap();
    }

    #[test]
    fn limits_stop_motion() {
        let mut j = JointSpec::free("j", 1.0);
        j.pos_limits = [-0.1, 0.1];
        let scene = scene_with(j, true, vec![]);
        let mut s = PhysicsState::new(&scene);
        for _ in 0..2000 {
            s.step(&scene, &[Some(10.0)], DT).unwrap();
            assert!(s.joints[0].q <= 0.1 && s.joints[0].q >= -0.1);
        }
        assert_eq!(s.joints[0].q, 0.1);
        assert_eq!(s.joints[0].qd, 0.0);
    }

    #[test]
    fn zero_perturbation_changes_nothing() {
        let scene = scene_with(JointSpec::free("j", 1.0), true, vec![]);
        let mut a = PhysicsState::new(&scene);
        a.joints[0].qd = 0.3;
        let mut b = a.clone();
        b.apply_external(&scene, "r/j", 0.0, 0.5, DT).unwrap();
        for _ in 0..100 {
            a.step(&scene, &[Some(0.1)], DT).unwrap();
            b.step(&scene, &[Some(0.1)], DT).unwrap();
        }
        assert_eq!(a.joints[0].q, b.joints[0].q);
        assert_eq!(a.joints[0].qd, b.joints[0].qd);
    }

    #[test]
    fn perturbation_impulse() {
        // impulse 2 N·m × 0.1 s on unit inertia
        let scene = scene_with(JointSpec::free("j", 1.0), true, vec![]);
        let mut s = PhysicsState::new(&scene);
        s.apply_external(&scene, "r/j", 2.0, 0.1, DT).unwrap();
        assert_eq!(s.joints[0].ext_steps, 100);
        for _ in 0..300 {
            s.step(&scene, &[Some(0.0)], DT).unwrap();
        }
        assert!((s.joints[0].qd - 0.2).abs() < 1e-9, "{}", s.joints[0].qd);
    }

    #[test]
    fn perturbation_latest_wins_and_unknown_joint() {
        let scene = scene_with(JointSpec::free("j", 1.0), true, vec![]);
        let mut s = PhysicsState::new(&scene);
        s.apply_external(&scene, "r/j", 2.0, 0.1, DT).unwrap();
        s.apply_external(&scene, "r/j", -1.0, 0.01, DT).unwrap();
        assert_eq!((s.joints[0].ext_torque, s.joints[0].ext_steps), (-1.0, 10));
        assert_eq!(
            s.apply_external(&scene, "x/j9", 1.0, 0.1, DT).unwrap_err(),
            PhysicsError::UnknownJoint("x/j9".into())
        );
        assert!(s.apply_external(&scene, "r/j", 1.0, 0.0, DT).is_err());
    }

    #[test]
    fn energy_examples() {
        let mut j = JointSpec::free("j", 0.5);
        j.gravity_amp = 0.0;
        let table = ObjectSpec {
            name: "box".into(),
            mass: 1.0,
            rest_height: 0.0,
            table_height: 0.0,
        };
        let scene = scene_with(j, true, vec![table]);
        let mut s = PhysicsState::new(&scene);
        assert_eq!(energy(&s, &scene), 0.0);
        s.joints[0].qd = 2.0;
        assert!((energy(&s, &scene) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reset_checks_limits_and_is_idempotent() {
        let mut j = JointSpec::free("j", 1.0);
        j.pos_limits = [-1.0, 1.0];
        let scene = scene_with(j, true, vec![]);
        let mut s = PhysicsState::new(&scene);
        s.joints[0].qd = 3.0;
        s.step(&scene, &[Some(1.0)], DT).unwrap();
        let posture = BTreeMap::from([("r/j".to_string(), 0.5)]);
        s.reset(&scene, &posture).unwrap();
        let once = s.clone();
        s.reset(&scene, &posture).unwrap();
        assert_eq!(s, once);
        assert_eq!((s.t, s.joints[0].q, s.joints[0].qd), (0.0, 0.5, 0.0));
        let bad = BTreeMap::from([("r/j".to_string(), 1.5)]);
        assert!(matches!(
            s.reset(&scene, &bad),
            Err(PhysicsError::PostureOutOfLimits { .. })
        ));
    }

    #[test]
    fn object_falls_to_table_and_rests() {
        let box_ = ObjectSpec {
            name: "box".into(),
            mass: 0.5,
            rest_height: 1.0,
            table_height: 0.75,
        };
        let scene = scene_with(JointSpec::free("j", 1.0), true, vec![box_]);
        let mut s = PhysicsState::new(&scene);
        for _ in 0..1000 {
            s.step(&scene, &[Some(0.0)], DT).unwrap();
            assert!(s.objects[0].z >= 0.75);
        }
        assert_eq!(s.objects[0].z, 0.75);
        assert_eq!(s.objects[0].vz, 0.0);
    }

    #[test]
    fn grasped_object_tracks_joint() {
        let mut lift = JointSpec::free("lift", 1.0);
        lift.kind = crate::model::JointKind::Prismatic;
        let box_ = ObjectSpec {
            name: "box".into(),
            mass: 0.5,
            rest_height: 0.75,
            table_height: 0.75,
        };
        let scene = scene_with(lift, true, vec![box_]);
        let mut s = PhysicsState::new(&scene);
        s.objects[0].grasped = true;
        s.objects[0].attach_joint = Some(0);
        s.objects[0].anchor_offset = 0.75 - s.joints[0].q;
        s.joints[0].qd = 0.1;
        for _ in 0..1000 {
            s.step(&scene, &[Some(0.0)], DT).unwrap();
            assert_eq!(s.objects[0].z, (s.joints[0].q + s.objects[0].anchor_offset).max(0.75));
        }
        assert!(s.objects[0].z > 0.84);
        // pushed below the anchor, the table still supports the box
        s.joints[0].qd = -1.0;
        for _ in 0..1000 {
            s.step(&scene, &[Some(0.0)], DT).unwrap();
        }
        assert_eq!(s.objects[0].z, 0.75);
    }
}
