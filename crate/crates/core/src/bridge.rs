//! The simulation loop: physics and PD servos at `dt_sim`, the controller
//! and FSM every `ctrl_divisor` substeps, commands at substep boundaries.
//!
//! One [`Bridge`] owns all mutable state. Other threads talk to it through a
//! [`BridgeHandle`], which can only enqueue commands and read the latest
//! published [`Snapshot`].

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{command_for, ActuationError, RefInterpolator, ReferenceSample, ServoGains};
use crate::command::{Command, CommandValidator, Rejection};
use crate::control::{
    ControlError, Controller, GroundTruth, ImuReading, JointReading, JointTruth, ObjectReading, PostureTask,
    SensorFrame,
};
use crate::datastore::{self, Datastore, DatastoreError, Value};
use crate::demo;
use crate::fsm::{CriterionContext, FsmError, FsmStatus, Transition};
use crate::model::{SceneModel, SensorKind, SensorTarget};
use crate::physics::{PhysicsError, PhysicsState, GRAVITY};
use crate::scenario::{BuiltScenario, Scenario, SimConfig};
use crate::trajectory::{CommandSource, JointLog, LogRecord, ObjectLog, TrajectoryLog};

/// Stiffness used for an operator posture target on a joint no active task
/// drives.
const OVERRIDE_STIFFNESS: f64 = 25.0;

const TIME_EPS: f64 = 1e-9;

/// Samples every sensor from the latest completed substep. Noise draws come
/// from `rng` in scene sensor order, so a seeded generator replays exactly.
pub fn sample_sensors(state: &PhysicsState, scene: &SceneModel, rng: &mut ChaCha8Rng) -> SensorFrame {
    let mut noise = |std: f64| -> f64 {
        if std > 0.0 {
            Normal::new(0.0, std).map(|n| n.sample(rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    };
    let mut joints: Vec<JointReading> = scene
        .joints
        .iter()
        .zip(&state.joints)
        .map(|(sj, rt)| JointReading {
            name: sj.name.clone(),
            q: rt.q,
            qd: rt.qd,
            tau: rt.last_applied,
        })
        .collect();
    let mut gripper_force = None;
    let mut imu = Vec::new();
    for sensor in &scene.sensors {
        let spec = &sensor.spec;
        match (spec.kind, sensor.target) {
            (SensorKind::Encoder, SensorTarget::Joint(i)) => {
                let q = state.joints[i].q + noise(spec.noise_std);
                joints[i].q = quantize(q, spec.quantization);
            }
            (SensorKind::JointTorque, SensorTarget::Joint(i)) => {
                let tau = state.joints[i].last_applied + noise(spec.noise_std);
                joints[i].tau = quantize(tau, spec.quantization);
            }
            (SensorKind::GripperForce, SensorTarget::Object(k)) => {
                let o = &state.objects[k];
                let f = if o.grasped { o.grip_force } else { 0.0 };
                let f = (f + noise(spec.noise_std)).max(0.0);
                *gripper_force.get_or_insert(0.0) += quantize(f, spec.quantization);
            }
            (SensorKind::ImuStub, _) => {
                let mut lin = [0.0, 0.0, GRAVITY];
                let mut ang = [0.0; 3];
                for v in lin.iter_mut().chain(ang.iter_mut()) {
                    *v += noise(spec.noise_std);
                }
                imu.push(ImuReading {
                    sensor: sensor.name.clone(),
                    linear_acceleration: lin,
                    angular_velocity: ang,
                });
            }
            _ => {}
        }
    }
    let objects: Vec<ObjectReading> = scene
        .objects
        .iter()
        .zip(&state.objects)
        .map(|(o, rt)| ObjectReading {
            name: o.name.clone(),
            z: rt.z,
            vz: rt.vz,
            grasped: rt.grasped,
        })
        .collect();
    SensorFrame {
        t: state.t,
        joints,
        gripper_force,
        imu,
        ground_truth: GroundTruth {
            joints: state.joints.iter().map(|j| JointTruth { q: j.q, qd: j.qd }).collect(),
            objects: objects.clone(),
        },
        objects,
    }
}

fn quantize(x: f64, step: f64) -> f64 {
    if step > 0.0 {
        (x / step).round() * step
    } else {
        x
    }
}

/// Current tasks with operator posture targets substituted in.
fn effective_tasks<'a>(base: &'a [PostureTask], overrides: &BTreeMap<String, f64>) -> Cow<'a, [PostureTask]> {
    if overrides.is_empty() {
        return Cow::Borrowed(base);
    }
    let mut tasks = base.to_vec();
    let mut extra = BTreeMap::new();
    for (joint, &target) in overrides {
        let mut hit = false;
        for t in &mut tasks {
            if let Some(v) = t.targets.get_mut(joint) {
                *v = target;
                hit = true;
            }
        }
        if !hit {
            extra.insert(joint.clone(), target);
        }
    }
    if !extra.is_empty() {
        tasks.push(PostureTask::new(extra, OVERRIDE_STIFFNESS));
    }
    Cow::Owned(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmSnapshot {
    pub state: String,
    pub elapsed: f64,
    pub terminal: bool,
}

/// Immutable copy of the loop state, published after every substep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub substep: u64,
    pub tick: u64,
    pub joints: BTreeMap<String, JointLog>,
    pub fsm: FsmSnapshot,
    pub objects: BTreeMap<String, ObjectLog>,
    pub gains: BTreeMap<String, ServoGains>,
    pub speed: Option<f64>,
    pub paused: bool,
    /// Commands applied since start; bumps whenever a command takes effect.
    pub applied_commands: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub t: f64,
    #[serde(flatten)]
    pub transition: Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub physics_hz: f64,
    pub controller_hz: f64,
    pub ctrl_divisor: u32,
    pub t_final: f64,
    pub substeps: u64,
    pub ticks: u64,
    pub final_state: String,
    pub terminal: bool,
    /// `None` when the scenario declares no success state.
    pub success: Option<bool>,
    pub lift_success: Option<bool>,
    pub objects: BTreeMap<String, ObjectLog>,
    pub transitions: Vec<TransitionRecord>,
    pub commands_applied: u64,
    pub commands_rejected: u64,
    pub overruns: u64,
    pub max_tick_wall_s: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("physics: {0}")]
    Physics(#[from] PhysicsError),
    #[error("control: {0}")]
    Control(#[from] ControlError),
    #[error("fsm: {0}")]
    Fsm(#[from] FsmError),
    #[error("actuation: {0}")]
    Actuation(#[from] ActuationError),
    #[error("datastore: {0}")]
    Datastore(#[from] DatastoreError),
    #[error("log: {0}")]
    Io(#[from] std::io::Error),
}

enum LoopMsg {
    Command(Command),
    Load(Box<BuiltScenario>),
}

struct Shared {
    snapshot: Mutex<Arc<Snapshot>>,
    report: Mutex<Option<Arc<RunReport>>>,
    validator: RwLock<CommandValidator>,
    scenario: RwLock<Arc<Scenario>>,
    stop: AtomicBool,
}

/// Cross-thread access to a running [`Bridge`].
#[derive(Clone)]
pub struct BridgeHandle {
    tx: Sender<LoopMsg>,
    shared: Arc<Shared>,
}

impl BridgeHandle {
    pub fn validate(&self, cmd: &Command) -> Result<(), Rejection> {
        self.shared.validator.read().validate(cmd)
    }

    /// Validates and queues a command for the next substep boundary.
    pub fn enqueue(&self, cmd: Command) -> Result<(), Rejection> {
        self.validate(&cmd)?;
        self.tx.send(LoopMsg::Command(cmd)).map_err(|_| Rejection::Closed)
    }

    /// Replaces the scenario and resets at the next substep boundary.
    pub fn load(&self, built: BuiltScenario) -> Result<(), Rejection> {
        *self.shared.validator.write() = CommandValidator::new(&built.scene, &built.scenario.fsm);
        *self.shared.scenario.write() = Arc::new(built.scenario.clone());
        self.tx.send(LoopMsg::Load(Box::new(built))).map_err(|_| Rejection::Closed)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.shared.snapshot.lock().clone()
    }

    pub fn report(&self) -> Option<Arc<RunReport>> {
        self.shared.report.lock().clone()
    }

    pub fn scenario(&self) -> Arc<Scenario> {
        self.shared.scenario.read().clone()
    }

    /// Asks the loop to stop at the next controller tick.
    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }
}

/// When [`Bridge::run`] returns.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StopCondition {
    /// Sim-time budget in seconds.
    pub max_time: Option<f64>,
    /// Stop once the FSM enters a terminal state.
    pub until_terminal: bool,
}

struct Pacer {
    wall: Instant,
    sim: f64,
}

impl Pacer {
    fn new(t: f64) -> Self {
        Pacer {
            wall: Instant::now(),
            sim: t,
        }
    }

    /// Sleeps until wall time catches up with `t / factor`. Returns true when
    /// the loop was already late. A late loop rebases instead of bursting to
    /// catch up.
    fn pace(&mut self, t: f64, factor: Option<f64>, slack: f64) -> bool {
        let Some(f) = factor else {
            return false;
        };
        let target = self.wall + Duration::from_secs_f64(((t - self.sim) / f).max(0.0));
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
            false
        } else {
            let late = (now - target).as_secs_f64() > slack;
            if late {
                *self = Pacer::new(t);
            }
            late
        }
    }
}

type Observer = Box<dyn FnMut(&Arc<Snapshot>) + Send>;

pub struct Bridge {
    built: BuiltScenario,
    config: SimConfig,
    physics: PhysicsState,
    controller: Controller,
    interps: Vec<RefInterpolator>,
    refs: Vec<ReferenceSample>,
    gains: Vec<ServoGains>,
    store: Datastore,
    fsm: FsmStatus,
    overrides: BTreeMap<String, f64>,
    rng: ChaCha8Rng,
    ticks: u64,
    script_pos: usize,
    paused: bool,
    step_budget: u64,
    applied: u64,
    rejected: u64,
    transitions: Vec<TransitionRecord>,
    tx: Sender<LoopMsg>,
    rx: Receiver<LoopMsg>,
    shared: Arc<Shared>,
    log: Option<TrajectoryLog>,
    observer: Option<Observer>,
    overruns: u64,
    max_tick_wall: f64,
}

impl Bridge {
    pub fn new(built: BuiltScenario) -> Result<Self, BridgeError> {
        let (tx, rx) = crossbeam_channel::unbounded();
        let config = built.scenario.sim.clone();
        let shared = Arc::new(Shared {
            snapshot: Mutex::new(Arc::new(placeholder_snapshot())),
            report: Mutex::new(None),
            validator: RwLock::new(CommandValidator::new(&built.scene, &built.scenario.fsm)),
            scenario: RwLock::new(Arc::new(built.scenario.clone())),
            stop: AtomicBool::new(false),
        });
        let physics = PhysicsState::new(&built.scene);
        let positions: Vec<f64> = physics.joints.iter().map(|j| j.q).collect();
        let mut bridge = Bridge {
            controller: Controller::new(&built.scene, &positions),
            physics,
            interps: Vec::new(),
            refs: Vec::new(),
            gains: Vec::new(),
            store: Datastore::new(),
            fsm: built.scenario.fsm.start(0.0),
            overrides: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            ticks: 0,
            script_pos: 0,
            paused: config.paused,
            step_budget: 0,
            applied: 0,
            rejected: 0,
            transitions: Vec::new(),
            tx,
            rx,
            shared,
            log: None,
            observer: None,
            overruns: 0,
            max_tick_wall: 0.0,
            config,
            built,
        };
        bridge.reset()?;
        bridge.publish(true);
        Ok(bridge)
    }

    pub fn handle(&self) -> BridgeHandle {
        BridgeHandle {
            tx: self.tx.clone(),
            shared: self.shared.clone(),
        }
    }

    /// Starts writing the trajectory log, beginning with a header record.
    pub fn set_log(&mut self, mut log: TrajectoryLog) -> Result<(), BridgeError> {
        log.write(&self.header())?;
        self.log = Some(log);
        Ok(())
    }

    /// Called with every published snapshot, from the loop thread.
    pub fn set_observer(&mut self, f: impl FnMut(&Arc<Snapshot>) + Send + 'static) {
        self.observer = Some(Box::new(f));
    }

    pub fn scene(&self) -> &SceneModel {
        &self.built.scene
    }

    pub fn scenario(&self) -> &Scenario {
        &self.built.scenario
    }

    pub fn physics(&self) -> &PhysicsState {
        &self.physics
    }

    pub fn physics_mut(&mut self) -> &mut PhysicsState {
        &mut self.physics
    }

    pub fn fsm(&self) -> &FsmStatus {
        &self.fsm
    }

    pub fn datastore(&self) -> &Datastore {
        &self.store
    }

    pub fn gains(&self) -> &[ServoGains] {
        &self.gains
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn header(&self) -> LogRecord {
        LogRecord::Header {
            scenario: self.built.scenario.name.clone(),
            dt_sim: self.config.dt_sim,
            ctrl_divisor: self.config.ctrl_divisor,
            rng_seed: self.config.rng_seed,
            joints: self.built.scene.joints.iter().map(|j| j.name.clone()).collect(),
        }
    }

    /// Returns to the scenario's initial conditions: default posture, fresh
    /// datastore, FSM at its initial state, reseeded noise.
    fn reset(&mut self) -> Result<(), BridgeError> {
        let scene = &self.built.scene;
        self.physics.reset(scene, &scene.default_posture())?;
        let positions: Vec<f64> = self.physics.joints.iter().map(|j| j.q).collect();
        self.controller = Controller::new(scene, &positions);
        self.refs = positions.iter().map(|&q| ReferenceSample::hold(q)).collect();
        self.interps = self
            .refs
            .iter()
            .map(|&r| RefInterpolator::steady(r, self.config.ctrl_divisor, self.config.interpolation))
            .collect::<Result<_, _>>()?;
        let mut store = Datastore::new();
        let defaults = scene
            .joints
            .iter()
            .filter_map(|j| j.actuator.as_ref().map(|a| (j.name.clone(), a.default_gains)))
            .collect();
        datastore::install_servo_callbacks(&mut store, defaults)?;
        datastore::install_camera_stub(&mut store)?;
        if self.built.scenario.grasp.is_some() {
            store.put_value(demo::GRASPED_FLAG, Value::Bool(false))?;
        }
        self.store = store;
        self.refresh_gains();
        self.fsm = self.built.scenario.fsm.start(0.0);
        self.overrides.clear();
        self.rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        self.ticks = 0;
        self.transitions.clear();
        Ok(())
    }

    fn refresh_gains(&mut self) {
        let scene = &self.built.scene;
        self.gains = scene
            .joints
            .iter()
            .map(|j| {
                let Some(a) = &j.actuator else {
                    return ServoGains::default();
                };
                match self.store.call(datastore::GET_GAINS, &[Value::Text(j.name.clone())]) {
                    Ok(Value::Gains(g)) => g,
                    _ => a.default_gains,
                }
            })
            .collect();
    }

    fn load(&mut self, built: BuiltScenario) -> Result<(), BridgeError> {
        self.config = built.scenario.sim.clone();
        self.paused = self.config.paused;
        self.step_budget = 0;
        self.script_pos = 0;
        self.physics = PhysicsState::new(&built.scene);
        self.built = built;
        self.reset()?;
        let header = self.header();
        self.write_log(&header)?;
        Ok(())
    }

    fn write_log(&mut self, record: &LogRecord) -> Result<(), BridgeError> {
        if let Some(log) = &mut self.log {
            log.write(record)?;
        }
        Ok(())
    }

    fn apply(&mut self, cmd: Command, source: CommandSource) -> Result<(), BridgeError> {
        let validator = CommandValidator::new(&self.built.scene, &self.built.scenario.fsm);
        let outcome = validator.validate(&cmd).and_then(|()| self.execute(&cmd));
        let (accepted, reason) = match outcome {
            Ok(()) => {
                self.applied += 1;
                (true, None)
            }
            Err(r) => {
                self.rejected += 1;
                tracing::warn!(command = cmd.name(), reason = %r, "command rejected");
                (false, Some(r.to_string()))
            }
        };
        let record = LogRecord::Command {
            t: self.physics.t,
            substep: self.physics.steps,
            source,
            cmd,
            accepted,
            reason,
        };
        self.write_log(&record)
    }

    fn execute(&mut self, cmd: &Command) -> Result<(), Rejection> {
        let dt = self.config.dt_sim;
        let scene = &self.built.scene;
        let invalid = |e: &dyn std::fmt::Display| Rejection::InvalidValue(e.to_string());
        match cmd {
            Command::ApplyPerturbation {
                target,
                magnitude,
                duration,
            } => {
                if scene.joint_index(target).is_some() {
                    self.physics
                        .apply_external(scene, target, *magnitude, *duration, dt)
                        .map_err(|e| invalid(&e))?;
                } else {
                    self.physics
                        .apply_object_force(scene, target, *magnitude, *duration, dt)
                        .map_err(|e| invalid(&e))?;
                }
            }
            Command::SetGains { joint, kp, kd } => {
                self.store
                    .call(
                        datastore::SET_GAINS,
                        &[Value::Text(joint.clone()), Value::Float(*kp), Value::Float(*kd)],
                    )
                    .map_err(|e| invalid(&e))?;
                self.refresh_gains();
            }
            Command::SetSpeed { factor } => self.config.realtime_factor = *factor,
            Command::Pause => self.paused = true,
            Command::Resume => {
                self.paused = false;
                self.step_budget = 0;
            }
            Command::StepOnce { substeps } => self.step_budget += substeps,
            Command::Transition { state } => {
                let t = self.physics.t;
                let tr = self
                    .built
                    .scenario
                    .fsm
                    .request_transition(&mut self.fsm, state, t)
                    .map_err(|e| invalid(&e))?;
                self.overrides.clear();
                self.record_transition(tr).map_err(|e| invalid(&e))?;
            }
            Command::SetPostureTarget { joint, position } => {
                self.overrides.insert(joint.clone(), *position);
            }
            Command::ResetScenario => self.reset().map_err(|e| invalid(&e))?,
        }
        Ok(())
    }

    fn record_transition(&mut self, transition: Transition) -> Result<(), BridgeError> {
        tracing::info!(from = %transition.from, to = %transition.to, cause = ?transition.cause, "fsm transition");
        let t = self.physics.t;
        let record = LogRecord::Transition {
            t,
            from: transition.from.clone(),
            to: transition.to.clone(),
            cause: transition.cause,
        };
        self.transitions.push(TransitionRecord { t, transition });
        self.write_log(&record)
    }

    fn handle_msg(&mut self, msg: LoopMsg) -> Result<(), BridgeError> {
        match msg {
            LoopMsg::Command(cmd) => self.apply(cmd, CommandSource::Queue),
            LoopMsg::Load(built) => self.load(*built),
        }
    }

    /// Applies due script entries and everything queued, in order.
    fn drain(&mut self) -> Result<bool, BridgeError> {
        let mut any = false;
        while let Some(sc) = self.built.scenario.commands.get(self.script_pos) {
            if sc.t > self.physics.t + TIME_EPS {
                break;
            }
            let cmd = sc.cmd.clone();
            self.script_pos += 1;
            self.apply(cmd, CommandSource::Script)?;
            any = true;
        }
        while let Ok(msg) = self.rx.try_recv() {
            self.handle_msg(msg)?;
            any = true;
        }
        Ok(any)
    }

    fn at_tick_boundary(&self) -> bool {
        self.physics.steps % u64::from(self.config.ctrl_divisor) == 0
    }

    /// Sensors, grasp latch, FSM and controller for one tick.
    fn controller_tick(&mut self) -> Result<(), BridgeError> {
        let started = Instant::now();
        let dt_ctrl = self.config.dt_ctrl();
        let scene = &self.built.scene;
        let mut frame = sample_sensors(&self.physics, scene, &mut self.rng);
        if let Some(cfg) = &self.built.scenario.grasp {
            if demo::update_grasp(cfg, scene, &mut self.physics, &mut frame, &mut self.store) {
                tracing::info!(t = frame.t, "grasp latched");
            }
        }

        let machine = &self.built.scenario.fsm;
        if !self.fsm.terminal {
            let tasks = effective_tasks(machine.tasks(&self.fsm), &self.overrides);
            let ctx = CriterionContext {
                frame: &frame,
                tasks: &tasks,
                store: Some(&self.store),
            };
            let transition = machine.step(&mut self.fsm, &ctx, dt_ctrl)?;
            if let Some(tr) = transition {
                self.overrides.clear();
                self.record_transition(tr)?;
            }
        }
        let machine = &self.built.scenario.fsm;
        let tasks = effective_tasks(machine.tasks(&self.fsm), &self.overrides);
        let out = self.controller.tick(&frame, &tasks, dt_ctrl)?;
        for (itp, s) in self.interps.iter_mut().zip(&out.samples) {
            if let Some(s) = s {
                itp.load(*s);
            }
        }
        self.ticks += 1;

        if self.log.is_some() {
            let record = LogRecord::Tick {
                t: self.physics.t,
                tick: self.ticks,
                fsm: self.fsm.current.clone(),
                joints: self.joint_logs(&frame, &out.samples),
                objects: self.object_logs(),
            };
            self.write_log(&record)?;
        }
        let wall = started.elapsed().as_secs_f64();
        self.max_tick_wall = self.max_tick_wall.max(wall);
        Ok(())
    }

    fn joint_logs(&self, frame: &SensorFrame, next: &[Option<ReferenceSample>]) -> BTreeMap<String, JointLog> {
        frame
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let r = next[i].unwrap_or_default();
                (
                    j.name.clone(),
                    JointLog {
                        q: j.q,
                        qd: j.qd,
                        tau: j.tau,
                        q_ref: r.q_ref,
                        qd_ref: r.qd_ref,
                    },
                )
            })
            .collect()
    }

    fn object_logs(&self) -> BTreeMap<String, ObjectLog> {
        self.built
            .scene
            .objects
            .iter()
            .zip(&self.physics.objects)
            .map(|(o, rt)| {
                (
                    o.name.clone(),
                    ObjectLog {
                        z: rt.z,
                        vz: rt.vz,
                        grasped: rt.grasped,
                    },
                )
            })
            .collect()
    }

    /// One physics substep, preceded by a controller tick when one is due.
    fn substep(&mut self) -> Result<(), BridgeError> {
        let k_div = u64::from(self.config.ctrl_divisor);
        if self.physics.steps % k_div == 0 {
            self.controller_tick()?;
        }
        let k = (self.physics.steps % k_div) as u32 + 1;
        let scene = &self.built.scene;
        let mut commands = Vec::with_capacity(scene.joints.len());
        for (i, sj) in scene.joints.iter().enumerate() {
            let r = self.interps[i].interpolate(k)?;
            self.refs[i] = r;
            let rt = &self.physics.joints[i];
            commands.push(command_for(
                sj.actuator.as_ref().map(|a| a.kind),
                self.gains[i],
                r,
                rt.q,
                rt.qd,
            ));
        }
        self.physics.step(scene, &commands, self.config.dt_sim)?;
        Ok(())
    }

    /// Runs `n` substeps regardless of pause state, applying script entries
    /// and queued commands before each.
    pub fn advance(&mut self, n: u64) -> Result<(), BridgeError> {
        for _ in 0..n {
            self.drain()?;
            self.substep()?;
            self.publish(false);
        }
        self.drain()?;
        self.publish(true);
        Ok(())
    }

    /// Applies pending script entries and queued commands without stepping.
    pub fn process_pending(&mut self) -> Result<(), BridgeError> {
        self.drain()?;
        self.publish(true);
        Ok(())
    }

    fn stop_reached(&self, stop: StopCondition) -> bool {
        if self.shared.stop.load(Ordering::SeqCst) {
            return true;
        }
        if stop.until_terminal && self.fsm.terminal {
            return true;
        }
        stop.max_time.is_some_and(|m| self.physics.t + TIME_EPS >= m)
    }

    /// Runs the loop until `stop` holds at a controller-tick boundary, pacing
    /// to the configured real-time factor.
    pub fn run(&mut self, stop: StopCondition) -> Result<RunReport, BridgeError> {
        let started = Instant::now();
        let mut pacer = Pacer::new(self.physics.t);
        let mut last_factor = self.config.realtime_factor;
        let mut was_paused = self.paused;
        loop {
            self.drain()?;
            if self.at_tick_boundary() && self.stop_reached(stop) {
                break;
            }
            if self.paused && self.step_budget == 0 {
                was_paused = true;
                self.publish(true);
                match self.rx.recv_timeout(Duration::from_millis(10)) {
                    Ok(msg) => self.handle_msg(msg)?,
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
                if self.shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                continue;
            }
            if was_paused || last_factor != self.config.realtime_factor {
                pacer = Pacer::new(self.physics.t);
                last_factor = self.config.realtime_factor;
                was_paused = false;
            }
            self.substep()?;
            if self.paused {
                self.step_budget = self.step_budget.saturating_sub(1);
            }
            self.publish(false);
            if self.at_tick_boundary() && !self.paused {
                let slack = self.config.dt_ctrl();
                if pacer.pace(self.physics.t, self.config.realtime_factor, slack) {
                    self.overruns += 1;
                }
            }
        }
        let mut report = self.report();
        report.wall_time_s = started.elapsed().as_secs_f64();
        *self.shared.report.lock() = Some(Arc::new(report.clone()));
        self.publish(true);
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        Ok(report)
    }

    pub fn flush_log(&mut self) -> Result<(), BridgeError> {
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        let scene = &self.built.scene;
        let joints = scene
            .joints
            .iter()
            .zip(&self.physics.joints)
            .zip(&self.refs)
            .map(|((sj, rt), r)| {
                (
                    sj.name.clone(),
                    JointLog {
                        q: rt.q,
                        qd: rt.qd,
                        tau: rt.last_applied,
                        q_ref: r.q_ref,
                        qd_ref: r.qd_ref,
                    },
                )
            })
            .collect();
        let gains = scene
            .joints
            .iter()
            .zip(&self.gains)
            .filter(|(sj, _)| sj.actuator.is_some())
            .map(|(sj, g)| (sj.name.clone(), *g))
            .collect();
        Snapshot {
            t: self.physics.t,
            substep: self.physics.steps,
            tick: self.ticks,
            joints,
            fsm: FsmSnapshot {
                state: self.fsm.current.clone(),
                elapsed: self.physics.t - self.fsm.entered_at,
                terminal: self.fsm.terminal,
            },
            objects: self.object_logs(),
            gains,
            speed: self.config.realtime_factor,
            paused: self.paused,
            applied_commands: self.applied,
        }
    }

    fn publish(&mut self, force: bool) {
        let watched = Arc::strong_count(&self.shared) > 1;
        if !(force || watched || self.observer.is_some()) {
            return;
        }
        let snap = Arc::new(self.snapshot());
        if let Some(obs) = &mut self.observer {
            obs(&snap);
        }
        if watched && self.at_tick_boundary() {
            *self.shared.report.lock() = Some(Arc::new(self.report()));
        }
        *self.shared.snapshot.lock() = snap;
    }

    pub fn report(&self) -> RunReport {
        let machine = &self.built.scenario.fsm;
        let success = machine
            .success
            .as_ref()
            .map(|s| self.fsm.terminal && &self.fsm.current == s);
        let lift_success = self.built.scenario.grasp.as_ref().and_then(|cfg| {
            let i = self.built.scene.object_index(&cfg.object)?;
            let o = &self.physics.objects[i];
            let table = self.built.scene.objects[i].table_height;
            Some(o.grasped && o.z >= table + cfg.lift_height)
        });
        RunReport {
            scenario: self.built.scenario.name.clone(),
            physics_hz: self.config.physics_hz(),
            controller_hz: self.config.controller_hz(),
            ctrl_divisor: self.config.ctrl_divisor,
            t_final: self.physics.t,
            substeps: self.physics.steps,
            ticks: self.ticks,
            final_state: self.fsm.current.clone(),
            terminal: self.fsm.terminal,
            success,
            lift_success,
            objects: self.object_logs(),
            transitions: self.transitions.clone(),
            commands_applied: self.applied,
            commands_rejected: self.rejected,
            overruns: self.overruns,
            max_tick_wall_s: self.max_tick_wall,
            wall_time_s: 0.0,
        }
    }
}

fn placeholder_snapshot() -> Snapshot {
    Snapshot {
        t: 0.0,
        substep: 0,
        tick: 0,
        joints: BTreeMap::new(),
        fsm: FsmSnapshot {
            state: String::new(),
            elapsed: 0.0,
            terminal: false,
        },
        objects: BTreeMap::new(),
        gains: BTreeMap::new(),
        speed: None,
        paused: false,
        applied_commands: 0,
    }
}
