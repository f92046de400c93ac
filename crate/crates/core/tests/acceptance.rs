//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simbridge::actuation::{InterpolationMode, RefInterpolator, ReferenceSample, ServoGains};
use simbridge::bridge::{Bridge, StopCondition};
use simbridge::command::Command;
use simbridge::control::PostureTask;
use simbridge::fsm::{Machine, StateDef, TransitionCause};
use simbridge::model::{
    merge_scene, ActuatorKind, ActuatorSpec, ControlBounds, JointKind, JointSpec, ModelError, RobotDescription,
    RobotDocument, SceneEntry, SceneModel,
};
use simbridge::physics::{energy, PhysicsState};
use simbridge::scenario::{RobotEntry, Scenario, ScriptedCommand, SimConfig};
use simbridge::service::codec::{
    decode_command, encode, encode_command, encode_state, CommandMessage, ErrorCode, ServerMessage,
};
use simbridge::service::headless::{self, RunOptions};
use simbridge::trajectory::{read_log, LogRecord};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grasp_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/grasp.json")
}

fn rig_document(spec: JointSpec, kind: ActuatorKind, gains: ServoGains) -> RobotDocument {
    let description = RobotDescription {
        name: "rig".into(),
        actuators: vec![ActuatorSpec {
            joint: spec.name.clone(),
            kind,
            default_gains: gains,
        }],
        joints: vec![spec],
        sensors: Vec::new(),
        default_posture: BTreeMap::new(),
    };
    RobotDocument {
        bounds: ControlBounds::from_limits(&description),
        description,
        objects: Vec::new(),
    }
}

/// One robot, one never-ending state running `tasks`.
fn rig_scenario(doc: RobotDocument, tasks: Vec<PostureTask>) -> Scenario {
    Scenario {
        name: "rig".into(),
        sim: SimConfig::default(),
        robots: vec![RobotEntry {
            instance: "rig".into(),
            description: doc,
        }],
        objects: Vec::new(),
        fsm: Machine {
            initial: "Hold".into(),
            states: vec![StateDef {
                name: "Hold".into(),
                tasks,
                criterion: None,
                timeout: 0.0,
                on_complete: None,
            }],
            success: None,
        },
        grasp: None,
        duration: None,
        telemetry_hz: 50.0,
        commands: Vec::new(),
    }
}

fn single_joint_scene(spec: JointSpec, kind: ActuatorKind) -> SceneModel {
    let doc = rig_document(spec, kind, ServoGains::default());
    merge_scene(
        vec![SceneEntry {
            instance: "rig".into(),
            description: doc.description,
            bounds: doc.bounds,
        }],
        Vec::new(),
    )
    .unwrap()
}

fn rate_fidelity() -> Outcome {
    let built = Scenario::load(&grasp_path()).map_err(|e| e.to_string())?;
    let mut built = built;
    built.scenario.sim = SimConfig {
        rng_seed: built.scenario.sim.rng_seed,
        ..SimConfig::default()
    };
    let mut bridge = Bridge::new(built).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let r = bridge
        .run(StopCondition {
            max_time: Some(10.0),
            until_terminal: false,
        })
        .map_err(|e| e.to_string())?;
    let wall = started.elapsed();
    ensure(r.physics_hz == 1000.0, || format!("physics at {} Hz", r.physics_hz))?;
    ensure((r.controller_hz - 200.0).abs() < 1e-9, || format!("controller at {} Hz", r.controller_hz))?;
    ensure(r.ctrl_divisor == 5, || format!("ctrl_divisor {}", r.ctrl_divisor))?;
    ensure(r.substeps == 5 * r.ticks, || format!("{} substeps vs {} ticks", r.substeps, r.ticks))?;
    ensure(r.substeps == 10_000, || format!("{} substeps for 10 s", r.substeps))?;
    ensure(wall < Duration::from_secs(1), || format!("10 s sim took {wall:?}"))?;
    Ok(format!(
        "PD/physics {} Hz, controller {} Hz, {} substeps = 5 x {} ticks, {:.3} s wall",
        r.physics_hz,
        r.controller_hz,
        r.substeps,
        r.ticks,
        wall.as_secs_f64()
    ))
}

fn integrator_oracle() -> Outcome {
    let dt = 0.001;
    let mut spec = JointSpec::free("j", 1.0);
    spec.damping = 5.0;
    let scene = single_joint_scene(spec, ActuatorKind::None);
    let mut s = PhysicsState::new(&scene);
    s.joints[0].qd = 1.0;
    for _ in 0..1000 {
        s.step(&scene, &[None], dt).map_err(|e| e.to_string())?;
    }
    let expect = (-5.0f64).exp();
    let rel = (s.joints[0].qd - expect).abs() / expect;
    ensure(rel < 0.01, || format!("damped qd(1) = {} vs {expect}, rel err {rel:.3e}", s.joints[0].qd))?;

    let mut pend = JointSpec::free("p", 1.0);
    pend.gravity_amp = 1.0;
    let scene = single_joint_scene(pend, ActuatorKind::None);
    let mut p = PhysicsState::new(&scene);
    p.joints[0].q = 0.5;
    let e0 = energy(&p, &scene);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        p.step(&scene, &[None], dt).map_err(|e| e.to_string())?;
        worst = worst.max((energy(&p, &scene) - e0).abs() / e0);
    }
    ensure(worst < 1e-4, || format!("pendulum energy drift {worst:.3e}"))?;
    Ok(format!("damped qd(1) rel err {rel:.2e} (< 1e-2); pendulum drift {worst:.2e} (< 1e-4)"))
}

fn random_joint(rng: &mut ChaCha8Rng, name: &str) -> JointSpec {
    let lo = rng.random_range(-2.0..0.0);
    let hi = rng.random_range(0.1..2.0);
    let coulomb = rng.random_range(0.0..0.5);
    JointSpec {
        name: name.into(),
        kind: if rng.random_bool(0.5) {
            JointKind::Revolute
        } else {
            JointKind::Prismatic
        },
        inertia: rng.random_range(0.01..2.0),
        rotor_inertia: rng.random_range(0.0..1e-4),
        gear: rng.random_range(1.0..100.0),
        damping: rng.random_range(0.0..2.0),
        coulomb_friction: coulomb,
        stiction: coulomb + rng.random_range(0.0..0.5),
        gravity_amp: rng.random_range(0.0..5.0),
        pos_limits: [lo, hi],
        vel_limit: 10.0,
        torque_limit: rng.random_range(1.0..200.0),
    }
}

fn stiction_and_limits() -> Outcome {
    let mut spec = JointSpec::free("j", 0.5);
    spec.coulomb_friction = 0.3;
    spec.stiction = 0.5;
    let scene = single_joint_scene(spec, ActuatorKind::DirectTorque);
    let mut s = PhysicsState::new(&scene);
    for step in 0..10_000 {
        s.step(&scene, &[Some(0.45)], 0.001).map_err(|e| e.to_string())?;
        ensure(s.joints[0].qd == 0.0 && s.joints[0].q == 0.0, || {
            format!("joint moved at step {step}: q={} qd={}", s.joints[0].q, s.joints[0].qd)
        })?;
    }

    let seeds = 128u64;
    let mut steps = 0u64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..5);
        let joints: Vec<JointSpec> = (0..n).map(|i| random_joint(&mut rng, &format!("j{i}"))).collect();
        let description = RobotDescription {
            name: "r".into(),
            actuators: joints
                .iter()
                .map(|j| ActuatorSpec {
                    joint: j.name.clone(),
                    kind: ActuatorKind::DirectTorque,
                    default_gains: ServoGains::default(),
                })
                .collect(),
            joints,
            sensors: Vec::new(),
            default_posture: BTreeMap::new(),
        };
        let scene = merge_scene(
            vec![SceneEntry {
                instance: "r".into(),
                bounds: ControlBounds::from_limits(&description),
                description,
            }],
            Vec::new(),
        )
        .map_err(|e| format!("seed {seed}: {e}"))?;
        let mut s = PhysicsState::new(&scene);
        for k in 0..2000 {
            if k % 100 == 0 {
                let j = rng.random_range(0..scene.joints.len());
                let name = scene.joints[j].name.clone();
                s.apply_external(&scene, &name, rng.random_range(-500.0..500.0), 0.05, 0.001)
                    .map_err(|e| e.to_string())?;
            }
            let cmds: Vec<Option<f64>> = (0..scene.joints.len())
                .map(|_| Some(rng.random_range(-20.0..20.0)))
                .collect();
            s.step(&scene, &cmds, 0.001).map_err(|e| e.to_string())?;
            steps += 1;
            for (sj, rt) in scene.joints.iter().zip(&s.joints) {
                let [lo, hi] = sj.spec.pos_limits;
                ensure(rt.q >= lo && rt.q <= hi && rt.q.is_finite(), || {
                    format!("seed {seed} step {k}: {} at {} outside [{lo}, {hi}]", sj.name, rt.q)
                })?;
            }
        }
    }
    Ok(format!(
        "0.45 N·m under 0.5 stiction held qd = 0 for 10 s; {seeds} random scenes, {steps} steps within limits"
    ))
}

fn servo_convergence() -> Outcome {
    let mut spec = JointSpec::free("j", 0.1);
    spec.damping = 0.1;
    spec.pos_limits = [-3.0, 3.0];
    spec.vel_limit = 10.0;
    spec.torque_limit = 100.0;
    let kp = 400.0;
    let kd = 2.0 * (kp * 0.1f64).sqrt();
    let doc = rig_document(spec, ActuatorKind::PdServo, ServoGains { kp, kd });
    let task = PostureTask::new(BTreeMap::from([("rig/j".to_string(), 0.5)]), 100.0);
    let built = rig_scenario(doc, vec![task]).build().map_err(|e| e.to_string())?;
    let mut bridge = Bridge::new(built).map_err(|e| e.to_string())?;
    let mut peak: f64 = 0.0;
    let mut settled_at = None;
    for i in 1..=3000u64 {
        bridge.advance(1).map_err(|e| e.to_string())?;
        let q = bridge.physics().joints[0].q;
        peak = peak.max(q);
        let err = (q - 0.5).abs();
        if err < 1e-3 {
            settled_at.get_or_insert(i);
        } else {
            settled_at = None;
        }
    }
    let overshoot = (peak - 0.5).max(0.0) / 0.5;
    let settled = settled_at.map(|i| i as f64 * 0.001);
    ensure(settled.is_some_and(|t| t <= 2.0), || format!("settled at {settled:?}"))?;
    ensure(overshoot < 0.01, || format!("overshoot {:.3}%", overshoot * 100.0))?;
    Ok(format!(
        "|error| < 1e-3 rad from t = {:.3} s (<= 2 s), overshoot {:.4}% (< 1%)",
        settled.unwrap(),
        overshoot * 100.0
    ))
}

fn interpolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0u64;
    for _ in 0..200 {
        let k_sub = rng.random_range(1..20u32);
        let mode = if rng.random_bool(0.5) {
            InterpolationMode::Linear
        } else {
            InterpolationMode::Hold
        };
        let mut itp = RefInterpolator::steady(ReferenceSample::hold(0.0), k_sub, mode).map_err(|e| e.to_string())?;
        let mut last = itp.interpolate(k_sub).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let next = ReferenceSample::new(rng.random_range(-3.0..3.0), rng.random_range(-5.0..5.0));
            itp.load(next);
            let end = itp.interpolate(k_sub).map_err(|e| e.to_string())?;
            ensure(end.q_ref.to_bits() == next.q_ref.to_bits() && end.qd_ref.to_bits() == next.qd_ref.to_bits(), || {
                format!("k=K sample {end:?} != next {next:?}")
            })?;
            if mode == InterpolationMode::Linear {
                // each substep moves at most one K-th of the tick's jump, including
                // the step across the tick boundary
                let mut prev = last;
                for k in 1..=k_sub {
                    let s = itp.interpolate(k).map_err(|e| e.to_string())?;
                    let bound = (next.q_ref - last.q_ref).abs() / f64::from(k_sub) + 1e-12;
                    ensure((s.q_ref - prev.q_ref).abs() <= bound, || {
                        format!("jump {} > {bound} at k={k}", (s.q_ref - prev.q_ref).abs())
                    })?;
                    prev = s;
                }
            }
            last = end;
            checked += 1;
        }
    }
    Ok(format!("{checked} random ticks: k=K bit-exact, linear steps bounded across tick boundaries"))
}

fn merge() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = 0;
    for n in 2..=10usize {
        for _ in 0..10 {
            let entries: Vec<SceneEntry> = (0..n)
                .map(|i| {
                    let joints: Vec<JointSpec> = (0..rng.random_range(1..6))
                        .map(|k| random_joint(&mut rng, &format!("joint{k}")))
                        .collect();
                    let description = RobotDescription {
                        name: format!("model{}", rng.random_range(0..3)),
                        joints,
                        actuators: Vec::new(),
                        sensors: Vec::new(),
                        default_posture: BTreeMap::new(),
                    };
                    SceneEntry {
                        instance: format!("robot{i}"),
                        bounds: ControlBounds::from_limits(&description),
                        description,
                    }
                })
                .collect();
            let total: usize = entries.iter().map(|e| e.description.joints.len()).sum();
            let scene = merge_scene(entries.clone(), Vec::new()).map_err(|e| e.to_string())?;
            let names: BTreeSet<&str> = scene.joint_names().collect();
            ensure(scene.joints.len() == total, || format!("{} joints, expected {total}", scene.joints.len()))?;
            ensure(names.len() == total, || "qualified names collide".into())?;

            let mut dup = entries;
            let k = rng.random_range(1..n);
            dup[k].instance = dup[0].instance.clone();
            ensure(
                matches!(merge_scene(dup, Vec::new()), Err(ModelError::DuplicateInstance(_))),
                || "duplicate instance accepted".into(),
            )?;
            cases += 1;
        }
    }
    Ok(format!("{cases} random merges of 2..10 robots: names unique, counts preserved, duplicates rejected"))
}

fn headless_log(scenario: &Path, dir: &Path, tag: &str) -> Result<(i32, Vec<u8>), String> {
    let log = dir.join(format!("{tag}.jsonl"));
    let outcome = headless::run(&RunOptions {
        scenario: scenario.to_path_buf(),
        duration: Some(60.0),
        log: Some(log.clone()),
        ..RunOptions::default()
    });
    let bytes = std::fs::read(&log).map_err(|e| e.to_string())?;
    Ok((outcome.code, bytes))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (code_a, a) = headless_log(&grasp_path(), dir.path(), "a")?;
    let (code_b, b) = headless_log(&grasp_path(), dir.path(), "b")?;
    ensure(code_a == 0 && code_b == 0, || format!("exit codes {code_a}, {code_b}"))?;
    ensure(a == b, || "shipped scenario logs differ".into())?;

    let text = std::fs::read_to_string(grasp_path()).map_err(|e| e.to_string())?;
    let (mut scripted, _) = Scenario::from_json(&text, Default::default()).map_err(|e| e.to_string())?;
    scripted.commands = vec![
        ScriptedCommand {
            t: 1.0,
            cmd: Command::ApplyPerturbation {
                target: "arm/shoulder".into(),
                magnitude: 2.0,
                duration: 0.05,
            },
        },
        ScriptedCommand {
            t: 1.5,
            cmd: Command::SetGains {
                joint: "arm/elbow".into(),
                kp: 7.0,
                kd: 0.14,
            },
        },
    ];
    let path = dir.path().join("scripted.json");
    std::fs::write(&path, scripted.to_json()).map_err(|e| e.to_string())?;
    let (_, c) = headless_log(&path, dir.path(), "c")?;
    let (_, d) = headless_log(&path, dir.path(), "d")?;
    ensure(c == d, || "scripted logs differ".into())?;
    ensure(c != a, || "script had no effect on the trajectory".into())?;
    let lines = a.iter().filter(|&&b| b == b'\n').count();
    Ok(format!(
        "shipped run x2 and scripted run x2 byte-identical ({lines} lines, {} bytes)",
        a.len()
    ))
}

fn gain_path() -> Outcome {
    let mut spec = JointSpec::free("j", 1.0);
    spec.coulomb_friction = 1e6;
    spec.stiction = 1e6;
    spec.torque_limit = 1e3;
    let doc = rig_document(spec, ActuatorKind::PdServo, ServoGains { kp: 10.0, kd: 1.0 });
    let task = PostureTask::new(BTreeMap::from([("rig/j".to_string(), 0.2)]), 400.0);
    let built = rig_scenario(doc, vec![task]).build().map_err(|e| e.to_string())?;
    let mut bridge = Bridge::new(built).map_err(|e| e.to_string())?;
    // converge the reference so the error is fixed at 0.2 rad
    bridge.advance(2003).map_err(|e| e.to_string())?;
    let before = bridge.physics().joints[0].last_applied;
    bridge
        .handle()
        .enqueue(Command::SetGains {
            joint: "rig/j".into(),
            kp: 25.0,
            kd: 1.0,
        })
        .map_err(|e| e.to_string())?;
    // finish this tick, then take the first substep of the next one
    let to_boundary = 5 - bridge.physics().steps % 5;
    bridge.advance(to_boundary + 1).map_err(|e| e.to_string())?;
    let after = bridge.physics().joints[0].last_applied;
    let expect_before = 10.0 * 0.2;
    let expect_after = 25.0 * 0.2;
    ensure((before - expect_before).abs() < 1e-6, || format!("before {before}, expected {expect_before}"))?;
    ensure((after - expect_after).abs() < 1e-6, || format!("after {after}, expected {expect_after}"))?;
    Ok(format!(
        "torque at 0.2 rad error: {before:.6} N·m (kp 10) -> {after:.6} N·m (kp 25) on the next tick"
    ))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("run.jsonl");
    let started = Instant::now();
    let outcome = headless::run(&RunOptions {
        scenario: grasp_path(),
        duration: Some(60.0),
        log: Some(log.clone()),
        ..RunOptions::default()
    });
    let wall = started.elapsed();
    let r = outcome.report.ok_or("no report")?;
    ensure(outcome.code == 0, || format!("exit code {}", outcome.code))?;
    ensure(r.final_state == "Done" && r.terminal, || format!("ended in {}", r.final_state))?;
    ensure(r.t_final <= 60.0, || format!("took {} s sim", r.t_final))?;
    let z = r.objects["box"].z;
    ensure(z >= 0.75 + 0.1, || format!("box at z = {z}"))?;
    ensure(
        r.transitions.iter().all(|t| t.transition.cause != TransitionCause::Manual) && r.transitions.len() == 6,
        || format!("transitions {:?}", r.transitions),
    )?;
    let records = read_log(std::io::BufReader::new(std::fs::File::open(&log).map_err(|e| e.to_string())?))
        .map_err(|e| e.to_string())?;
    let last_fsm = records.iter().rev().find_map(|r| match r {
        LogRecord::Tick { fsm, .. } => Some(fsm.clone()),
        _ => None,
    });
    ensure(last_fsm.as_deref() == Some("Done"), || format!("log ends in {last_fsm:?}"))?;
    ensure(wall < Duration::from_secs(10), || format!("wall {wall:?}"))?;
    Ok(format!(
        "Done at t = {:.3} s sim, box z = {z:.4} m (>= 0.85), 6 automatic transitions, exit 0, {:.3} s wall",
        r.t_final,
        wall.as_secs_f64()
    ))
}

fn random_command(rng: &mut ChaCha8Rng) -> Command {
    let name = |rng: &mut ChaCha8Rng| format!("r{}/j{}", rng.random_range(0..9), rng.random_range(0..9));
    let f = |rng: &mut ChaCha8Rng| rng.random_range(-1e6..1e6) * 10f64.powi(rng.random_range(-12..6));
    match rng.random_range(0..9) {
        0 => Command::ApplyPerturbation {
            target: name(rng),
            magnitude: f(rng),
            duration: f(rng).abs(),
        },
        1 => Command::SetGains {
            joint: name(rng),
            kp: f(rng).abs(),
            kd: f(rng).abs(),
        },
        2 => Command::SetSpeed {
            factor: rng.random_bool(0.8).then(|| f(rng).abs()),
        },
        3 => Command::Pause,
        4 => Command::Resume,
        5 => Command::StepOnce {
            substeps: rng.random(),
        },
        6 => Command::Transition {
            state: format!("S{}\"\\é", rng.random::<u16>()),
        },
        7 => Command::SetPostureTarget {
            joint: name(rng),
            position: f(rng),
        },
        _ => Command::ResetScenario,
    }
}

fn all_numbers_finite(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        serde_json::Value::Array(a) => a.iter().all(all_numbers_finite),
        serde_json::Value::Object(o) => o.values().all(all_numbers_finite),
        _ => true,
    }
}

fn wire_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut kinds = BTreeSet::new();
    let rounds = 5000;
    for i in 0..rounds {
        let cmd = random_command(&mut rng);
        kinds.insert(cmd.name());
        let id = if i % 2 == 0 {
            serde_json::Value::from(i)
        } else {
            serde_json::Value::from(format!("c{i}"))
        };
        let msg = CommandMessage::new(id, cmd);
        let text = encode_command(&msg).map_err(|e| e.to_string())?;
        let back = decode_command(&text).map_err(|e| format!("{text}: {e}"))?;
        ensure(back == msg, || format!("round trip changed {text}"))?;
        ensure(encode_command(&back).map_err(|e| e.to_string())? == text, || "re-encode differs".into())?;
    }
    ensure(kinds.len() == Command::NAMES.len(), || format!("only covered {kinds:?}"))?;

    let malformed: [(&str, ErrorCode); 9] = [
        ("{}", ErrorCode::MissingType),
        ("nope", ErrorCode::Malformed),
        (r#"{"type":"cmd","id":1,"cmd":{"op":"set_speed","factor":"fast"}}"#, ErrorCode::TypeMismatch),
        (r#"{"type":"cmd","id":1,"cmd":{"op":"warp"}}"#, ErrorCode::UnknownCommand),
        (r#"{"type":"cmd","id":1,"cmd":{"op":"pause","now":true}}"#, ErrorCode::UnknownField),
        (r#"{"type":"cmd","id":1,"cmd":{"op":"set_gains","joint":"a/b"}}"#, ErrorCode::MissingField),
        (r#"{"type":"cmd","cmd":{"op":"pause"}}"#, ErrorCode::MissingId),
        (r#"{"type":"telemetry","id":1}"#, ErrorCode::UnknownType),
        (r#"{"type":"cmd","id":1,"cmd":{"op":"step_once","substeps":-3}}"#, ErrorCode::TypeMismatch),
    ];
    for (text, code) in malformed {
        let err = decode_command(text).err().ok_or_else(|| format!("accepted {text}"))?;
        ensure(err.code == code, || format!("{text}: {:?} instead of {code:?}", err.code))?;
        let wire = encode(&err.to_message()).map_err(|e| e.to_string())?;
        ensure(wire.contains("\"type\":\"error\""), || wire.clone())?;
    }

    let built = Scenario::load(&grasp_path()).map_err(|e| e.to_string())?;
    let mut bridge = Bridge::new(built).map_err(|e| e.to_string())?;
    let mut states = 0;
    for seq in 1..=300u64 {
        bridge.advance(20).map_err(|e| e.to_string())?;
        let text = encode(&ServerMessage::State(encode_state(&bridge.snapshot(), seq))).map_err(|e| e.to_string())?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        ensure(all_numbers_finite(&v) && !text.contains("NaN") && !text.contains("inf"), || text.clone())?;
        states += 1;
    }
    let mut nan = encode_state(&bridge.snapshot(), 1);
    nan.t = f64::NAN;
    ensure(encode(&ServerMessage::State(nan)).is_err(), || "NaN telemetry encoded".into())?;
    let inf = CommandMessage::new(1, Command::SetSpeed {
        factor: Some(f64::INFINITY),
    });
    ensure(encode_command(&inf).is_err(), || "Inf command encoded".into())?;
    Ok(format!(
        "{rounds} random commands over all {} variants round-trip; 9 malformed inputs give structured errors; {states} state messages finite, NaN/Inf refused",
        kinds.len()
    ))
}

fn pacing() -> Outcome {
    let mut attempts = Vec::new();
    for _ in 0..3 {
        let mut built = Scenario::load(&grasp_path()).map_err(|e| e.to_string())?;
        built.scenario.sim.realtime_factor = Some(2.0);
        let mut bridge = Bridge::new(built).map_err(|e| e.to_string())?;
        let started = Instant::now();
        bridge
            .run(StopCondition {
                max_time: Some(1.0),
                until_terminal: false,
            })
            .map_err(|e| e.to_string())?;
        let wall = started.elapsed().as_secs_f64();
        attempts.push(wall);
        if (wall - 0.5).abs() <= 0.05 {
            return Ok(format!("1 sim-second at factor 2.0 took {wall:.4} s wall (0.5 s ± 10%), attempts {attempts:.4?}"));
        }
    }
    Err(format!("wall times {attempts:.4?}, expected 0.5 s ± 10% (soft criterion, retried 3x)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("rate fidelity", rate_fidelity),
        ("integrator oracle", integrator_oracle),
        ("stiction and limits", stiction_and_limits),
        ("servo convergence", servo_convergence),
        ("interpolation", interpolation),
        ("merge", merge),
        ("determinism/replay", determinism),
        ("datastore gain path", gain_path),
        ("end-to-end demo", end_to_end),
        ("wire codec", wire_codec),
        ("pacing (soft)", pacing),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.2}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
