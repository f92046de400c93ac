//! Desk-scale grasp demonstration: a shoulder/elbow/lift arm with a one-joint
//! gripper picks a box off a table, driven entirely by automatic FSM
//! transitions.
//!
//! Grasping is a kinematic attachment. When the gripper is closed and the
//! arm sits at its reach posture (a joint-space stand-in for end-effector
//! proximity), the box latches to the lift joint and follows it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::actuation::ServoGains;
use crate::control::{PostureTask, SensorFrame};
use crate::datastore::{Datastore, Value};
use crate::fsm::{Criterion, Machine, StateDef};
use crate::model::{
    ActuatorKind, ActuatorSpec, ControlBounds, JointBounds, JointKind, JointSpec, ObjectSpec, RobotDescription,
    RobotDocument, SceneModel, SensorKind, SensorSpec,
};
use crate::physics::PhysicsState;
use crate::scenario::{RobotEntry, Scenario, SimConfig};

/// Datastore flag raised when the box latches.
pub const GRASPED_FLAG: &str = "demo.grasped";

fn default_lift_height() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspConfig {
    pub object: String,
    pub gripper_joint: String,
    pub lift_joint: String,
    /// Arm posture that counts as "at the object".
    pub reach_targets: BTreeMap<String, f64>,
    /// Gripper positions at or below this count as closed, rad.
    pub aperture_close: f64,
    /// Joint-space tolerance around `reach_targets`, rad.
    pub reach_tol: f64,
    #[serde(default = "default_lift_height")]
    pub lift_height: f64,
    /// Force reported by the gripper sensor while grasping, N.
    pub clamp_force: f64,
}

impl GraspConfig {
    pub fn validate(&self, scene: &SceneModel) -> Result<(), String> {
        if scene.object_index(&self.object).is_none() {
            return Err(format!("unknown object `{}`", self.object));
        }
        let gripper = scene
            .joint(&self.gripper_joint)
            .ok_or_else(|| format!("unknown gripper joint `{}`", self.gripper_joint))?;
        if !(self.aperture_close >= gripper.spec.min_position() && self.aperture_close <= gripper.spec.max_position()) {
            return Err(format!("aperture_close {} outside gripper limits", self.aperture_close));
        }
        if scene.joint_index(&self.lift_joint).is_none() {
            return Err(format!("unknown lift joint `{}`", self.lift_joint));
        }
        for name in self.reach_targets.keys() {
            if scene.joint_index(name).is_none() {
                return Err(format!("unknown reach joint `{name}`"));
            }
        }
        if !(self.lift_height.is_finite() && self.lift_height > 0.0) {
            return Err(format!("lift_height must be > 0 (got {})", self.lift_height));
        }
        if !(self.reach_tol.is_finite() && self.reach_tol > 0.0) {
            return Err(format!("reach_tol must be > 0 (got {})", self.reach_tol));
        }
        if !(self.clamp_force.is_finite() && self.clamp_force >= 0.0) {
            return Err(format!("clamp_force must be >= 0 (got {})", self.clamp_force));
        }
        Ok(())
    }
}

/// Gripper closed and arm within `reach_tol` of every reach target.
pub fn grasp_condition(frame: &SensorFrame, cfg: &GraspConfig) -> bool {
    let Some(gripper) = frame.joint(&cfg.gripper_joint) else {
        return false;
    };
    if gripper.q > cfg.aperture_close {
        return false;
    }
    cfg.reach_targets
        .iter()
        .all(|(name, &target)| frame.joint(name).is_some_and(|j| (j.q - target).abs() <= cfg.reach_tol))
}

/// Object grasped and lifted at least `lift_height` above its table.
pub fn lift_success(frame: &SensorFrame, cfg: &GraspConfig, table_height: f64) -> bool {
    frame
        .object(&cfg.object)
        .is_some_and(|o| o.grasped && o.z >= table_height + cfg.lift_height)
}

/// Latches the attachment the first time [`grasp_condition`] holds. The
/// frame is updated in place so criteria see the grasp on the same tick.
/// Returns true on the latching tick.
pub fn update_grasp(
    cfg: &GraspConfig,
    scene: &SceneModel,
    state: &mut PhysicsState,
    frame: &mut SensorFrame,
    store: &mut Datastore,
) -> bool {
    let (Some(oi), Some(li)) = (scene.object_index(&cfg.object), scene.joint_index(&cfg.lift_joint)) else {
        return false;
    };
    if state.objects[oi].grasped || !grasp_condition(frame, cfg) {
        return false;
    }
    let q_lift = state.joints[li].q;
    let obj = &mut state.objects[oi];
    obj.grasped = true;
    obj.attach_joint = Some(li);
    obj.anchor_offset = obj.z - q_lift;
    obj.vz = 0.0;
    obj.grip_force = cfg.clamp_force;
    let _ = store.put_value(GRASPED_FLAG, Value::Bool(true));
    if let Some(o) = frame.objects.iter_mut().find(|o| o.name == cfg.object) {
        o.grasped = true;
    }
    if frame.gripper_force.is_some() {
        frame.gripper_force = Some(frame.gripper_force.unwrap_or(0.0) + cfg.clamp_force);
    }
    true
}

const TABLE_HEIGHT: f64 = 0.75;

fn joint(name: &str, kind: JointKind, params: [f64; 6], limits: [f64; 2], vel: f64, torque: f64) -> JointSpec {
    let [inertia, rotor_inertia, gear, damping, coulomb_friction, stiction] = params;
    JointSpec {
        name: name.into(),
        kind,
        inertia,
        rotor_inertia,
        gear,
        damping,
        coulomb_friction,
        stiction,
        gravity_amp: 0.0,
        pos_limits: limits,
        vel_limit: vel,
        torque_limit: torque,
    }
}

fn arm_document() -> RobotDocument {
    let mut shoulder = joint(
        "shoulder",
        JointKind::Revolute,
        [0.05, 2e-5, 50.0, 0.5, 0.1, 0.15],
        [-1.5, 1.5],
        3.0,
        30.0,
    );
    shoulder.gravity_amp = 1.0;
    let mut elbow = joint(
        "elbow",
        JointKind::Revolute,
        [0.02, 1e-5, 50.0, 0.2, 0.05, 0.08],
        [-2.0, 2.0],
        3.0,
        20.0,
    );
    elbow.gravity_amp = 0.5;
    let lift = joint(
        "lift",
        JointKind::Prismatic,
        [1.0, 0.0, 1.0, 5.0, 0.5, 0.8],
        [0.0, 0.3],
        0.5,
        100.0,
    );
    let gripper = joint(
        "gripper",
        JointKind::Revolute,
        [0.002, 1e-6, 20.0, 0.02, 0.005, 0.01],
        [0.0, 1.0],
        4.0,
        5.0,
    );

    let servo = |joint: &str, kp: f64, kd: f64| ActuatorSpec {
        joint: joint.into(),
        kind: ActuatorKind::PdServo,
        default_gains: ServoGains { kp, kd },
    };
    let actuators = vec![
        servo("shoulder", 10.0, 0.23),
        servo("elbow", 6.0, 0.12),
        servo("lift", 2000.0, 70.0),
        servo("gripper", 0.5, 0.0125),
    ];

    let mut sensors = Vec::new();
    for j in ["shoulder", "elbow", "lift", "gripper"] {
        sensors.push(SensorSpec {
            name: format!("{j}_encoder"),
            kind: SensorKind::Encoder,
            target: j.into(),
            noise_std: 1e-5,
            quantization: 1e-6,
        });
        sensors.push(SensorSpec {
            name: format!("{j}_torque"),
            kind: SensorKind::JointTorque,
            target: j.into(),
            noise_std: 1e-3,
            quantization: 0.0,
        });
    }
    sensors.push(SensorSpec {
        name: "finger_force".into(),
        kind: SensorKind::GripperForce,
        target: "box".into(),
        noise_std: 0.05,
        quantization: 0.0,
    });
    sensors.push(SensorSpec {
        name: "base_imu".into(),
        kind: SensorKind::ImuStub,
        target: "desk_arm".into(),
        noise_std: 0.0,
        quantization: 0.0,
    });

    let description = RobotDescription {
        name: "desk_arm".into(),
        joints: vec![shoulder, elbow, lift, gripper],
        actuators,
        sensors,
        default_posture: BTreeMap::from([("gripper".to_string(), 0.3)]),
    };
    let mut bounds = ControlBounds::from_limits(&description);
    let tighten = |b: &mut JointBounds, pos: [f64; 2], vel: f64| {
        b.pos = pos;
        b.vel = vel;
    };
    tighten(bounds.joints.get_mut("shoulder").unwrap(), [-1.4, 1.4], 1.5);
    tighten(bounds.joints.get_mut("elbow").unwrap(), [-1.9, 1.9], 1.5);
    tighten(bounds.joints.get_mut("lift").unwrap(), [0.0, 0.28], 0.3);
    tighten(bounds.joints.get_mut("gripper").unwrap(), [0.0, 0.95], 2.0);
    RobotDocument {
        description,
        bounds,
        objects: Vec::new(),
    }
}

fn with<'a>(base: &[(&'a str, f64)], extra: &[(&'a str, f64)]) -> Vec<(&'a str, f64)> {
    base.iter().chain(extra).copied().collect()
}

fn posture(targets: &[(&str, f64)], stiffness: f64) -> PostureTask {
    PostureTask::new(
        targets
            .iter()
            .map(|(j, q)| (format!("arm/{j}"), *q))
            .collect(),
        stiffness,
    )
}

/// The shipped grasp scenario (also stored as `scenarios/grasp.json`).
pub fn build_grasp_scenario() -> Scenario {
    let pre_grasp = [("shoulder", 0.6), ("elbow", -0.9), ("lift", 0.0)];
    let reach = [("shoulder", 0.9), ("elbow", -1.3), ("lift", 0.0)];
    let open = 0.8;
    let closed = 0.05;
    let lift_to = 0.15;
    let lift_height = default_lift_height();

    let arm_error = |eps: f64| Criterion::ErrorBelow {
        eps,
        hold: 0.1,
        joints: Vec::new(),
    };
    let state = |name: &str, tasks: Vec<PostureTask>, criterion: Criterion, next: &str| StateDef {
        name: name.into(),
        tasks,
        criterion: Some(criterion),
        timeout: 0.0,
        on_complete: Some(next.into()),
    };
    let scene = arm_document();
    let defaults: Vec<(&str, f64)> = vec![("shoulder", 0.0), ("elbow", 0.0), ("lift", 0.0), ("gripper", 0.3)];
    let reach_lifted = with(&[("shoulder", 0.9), ("elbow", -1.3), ("lift", lift_to)], &[("gripper", closed)]);

    let states = vec![
        state("Initial", vec![posture(&defaults, 25.0)], Criterion::Timer { duration: 0.5 }, "PreGrasp"),
        state(
            "PreGrasp",
            vec![posture(&with(&pre_grasp, &[("gripper", 0.3)]), 25.0)],
            arm_error(0.01),
            "OpenGripper",
        ),
        state(
            "OpenGripper",
            vec![posture(&with(&pre_grasp, &[("gripper", open)]), 50.0)],
            Criterion::ErrorBelow {
                eps: 0.02,
                hold: 0.05,
                joints: vec!["arm/gripper".into()],
            },
            "Reach",
        ),
        state(
            "Reach",
            vec![posture(&with(&reach, &[("gripper", open)]), 25.0)],
            arm_error(0.01),
            "CloseGripper",
        ),
        state(
            "CloseGripper",
            vec![posture(&with(&reach, &[("gripper", closed)]), 50.0)],
            Criterion::All {
                of: vec![
                    Criterion::GripperClosed {
                        joint: "arm/gripper".into(),
                        aperture_max: 0.15,
                    },
                    Criterion::Contact { force_min: 5.0 },
                ],
            },
            "Lift",
        ),
        state(
            "Lift",
            vec![posture(&reach_lifted, 25.0)],
            Criterion::All {
                of: vec![
                    Criterion::ObjectHeight {
                        object: "box".into(),
                        z_min: TABLE_HEIGHT + lift_height,
                    },
                    Criterion::Flag {
                        key: GRASPED_FLAG.into(),
                    },
                ],
            },
            "Done",
        ),
        StateDef {
            name: "Done".into(),
            tasks: vec![posture(&reach_lifted, 25.0)],
            criterion: None,
            timeout: 0.0,
            on_complete: None,
        },
    ];

    Scenario {
        name: "grasp".into(),
        sim: SimConfig {
            rng_seed: 42,
            ..SimConfig::default()
        },
        robots: vec![RobotEntry {
            instance: "arm".into(),
            description: scene,
        }],
        objects: vec![ObjectSpec {
            name: "box".into(),
            mass: 0.5,
            rest_height: TABLE_HEIGHT,
            table_height: TABLE_HEIGHT,
        }],
        fsm: Machine {
            initial: "Initial".into(),
            states,
            success: Some("Done".into()),
        },
        grasp: Some(GraspConfig {
            object: "box".into(),
            gripper_joint: "arm/gripper".into(),
            lift_joint: "arm/lift".into(),
            reach_targets: [("arm/shoulder", 0.9), ("arm/elbow", -1.3)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            aperture_close: 0.15,
            reach_tol: 0.02,
            lift_height,
            clamp_force: 20.0,
        }),
        duration: Some(60.0),
        telemetry_hz: 50.0,
        commands: Vec::new(),
    }
}
