//! JSON wire protocol between the server and operator clients.
//!
//! Server to client: `state`, `ack` and `error` messages. Client to server:
//! `{"type":"cmd","id":..,"cmd":{"op":..,..}}`. Numbers on the wire are
//! always finite.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::actuation::ServoGains;
use crate::bridge::Snapshot;
use crate::command::Command;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTelemetry {
    pub q: f64,
    pub qd: f64,
    pub tau: f64,
    pub q_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmTelemetry {
    pub state: String,
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectTelemetry {
    pub z: f64,
    pub grasped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryMessage {
    pub seq: u64,
    pub t: f64,
    pub joints: BTreeMap<String, JointTelemetry>,
    pub fsm: FsmTelemetry,
    pub objects: BTreeMap<String, ObjectTelemetry>,
    pub gains: BTreeMap<String, ServoGains>,
    /// Real-time factor; `null` when unpaced.
    pub speed: Option<f64>,
    pub paused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(TelemetryMessage),
    Ack {
        id: Value,
        accepted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        /// Seq of the last state message emitted before this ack.
        seq: u64,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<Value>,
        code: ErrorCode,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandMessage {
    #[serde(rename = "type")]
    pub kind: CmdTag,
    /// Client-chosen token, a string or a number.
    pub id: Value,
    pub cmd: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmdTag {
    Cmd,
}

impl CommandMessage {
    pub fn new(id: impl Into<Value>, cmd: Command) -> Self {
        CommandMessage {
            kind: CmdTag::Cmd,
            id: id.into(),
            cmd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    MissingType,
    UnknownType,
    MissingId,
    UnknownCommand,
    TypeMismatch,
    MissingField,
    UnknownField,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct DecodeError {
    pub code: ErrorCode,
    pub message: String,
    /// Echo of the client id when one could be read.
    pub id: Option<Value>,
}

impl DecodeError {
    fn new(code: ErrorCode, message: impl Into<String>, id: Option<Value>) -> Self {
        DecodeError {
            code,
            message: message.into(),
            id,
        }
    }

    pub fn to_message(&self) -> ServerMessage {
        ServerMessage::Error {
            id: self.id.clone(),
            code: self.code,
            message: self.message.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("non-finite number in `{0}`")]
    NonFinite(String),
}

pub fn encode_state(snapshot: &Snapshot, seq: u64) -> TelemetryMessage {
    TelemetryMessage {
        seq,
        t: snapshot.t,
        joints: snapshot
            .joints
            .iter()
            .map(|(k, j)| {
                (
                    k.clone(),
                    JointTelemetry {
                        q: j.q,
                        qd: j.qd,
                        tau: j.tau,
                        q_ref: j.q_ref,
                    },
                )
            })
            .collect(),
        fsm: FsmTelemetry {
            state: snapshot.fsm.state.clone(),
            elapsed: snapshot.fsm.elapsed,
        },
        objects: snapshot
            .objects
            .iter()
            .map(|(k, o)| {
                (
                    k.clone(),
                    ObjectTelemetry {
                        z: o.z,
                        grasped: o.grasped,
                    },
                )
            })
            .collect(),
        gains: snapshot.gains.clone(),
        speed: snapshot.speed,
        paused: snapshot.paused,
    }
}

fn check(path: &str, v: f64) -> Result<(), EncodeError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(EncodeError::NonFinite(path.to_string()))
    }
}

fn check_command(cmd: &Command) -> Result<(), EncodeError> {
    match cmd {
        Command::ApplyPerturbation {
            magnitude, duration, ..
        } => {
            check("cmd.magnitude", *magnitude)?;
            check("cmd.duration", *duration)
        }
        Command::SetGains { kp, kd, .. } => {
            check("cmd.kp", *kp)?;
            check("cmd.kd", *kd)
        }
        Command::SetSpeed { factor: Some(f) } => check("cmd.factor", *f),
        Command::SetPostureTarget { position, .. } => check("cmd.position", *position),
        _ => Ok(()),
    }
}

fn check_telemetry(m: &TelemetryMessage) -> Result<(), EncodeError> {
    check("t", m.t)?;
    check("fsm.elapsed", m.fsm.elapsed)?;
    for (name, j) in &m.joints {
        for (field, v) in [("q", j.q), ("qd", j.qd), ("tau", j.tau), ("q_ref", j.q_ref)] {
            check(&format!("joints.{name}.{field}"), v)?;
        }
    }
    for (name, o) in &m.objects {
        check(&format!("objects.{name}.z"), o.z)?;
    }
    for (name, g) in &m.gains {
        check(&format!("gains.{name}.kp"), g.kp)?;
        check(&format!("gains.{name}.kd"), g.kd)?;
    }
    if let Some(s) = m.speed {
        check("speed", s)?;
    }
    Ok(())
}

/// Serializes a server message, refusing NaN and infinities.
pub fn encode(msg: &ServerMessage) -> Result<String, EncodeError> {
    if let ServerMessage::State(m) = msg {
        check_telemetry(m)?;
    }
    Ok(serde_json::to_string(msg).expect("server messages serialize"))
}

pub fn encode_command(msg: &CommandMessage) -> Result<String, EncodeError> {
    check_command(&msg.cmd)?;
    Ok(serde_json::to_string(msg).expect("command messages serialize"))
}

/// Parses a client message. Every failure maps to a structured error code.
pub fn decode_command(text: &str) -> Result<CommandMessage, DecodeError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| DecodeError::new(ErrorCode::Malformed, format!("malformed JSON: {e}"), None))?;
    let Value::Object(obj) = &value else {
        return Err(DecodeError::new(ErrorCode::Malformed, "message must be a JSON object", None));
    };
    let id = obj.get("id").cloned();
    let fail = |code, msg: String| DecodeError::new(code, msg, id.clone());
    match obj.get("type") {
        None => return Err(fail(ErrorCode::MissingType, "missing type".into())),
        Some(Value::String(t)) if t == "cmd" => {}
        Some(other) => return Err(fail(ErrorCode::UnknownType, format!("unknown message type {other}"))),
    }
    match &id {
        None => return Err(fail(ErrorCode::MissingId, "missing id".into())),
        Some(Value::String(_) | Value::Number(_)) => {}
        Some(other) => return Err(fail(ErrorCode::TypeMismatch, format!("id must be a string or number, got {other}"))),
    }
    if let Some(extra) = obj.keys().find(|k| !matches!(k.as_str(), "type" | "id" | "cmd")) {
        return Err(fail(ErrorCode::UnknownField, format!("unknown field `{extra}`")));
    }
    let raw = obj
        .get("cmd")
        .ok_or_else(|| fail(ErrorCode::MissingField, "missing field `cmd`".into()))?;
    let op = match raw.get("op") {
        Some(Value::String(op)) => op,
        Some(other) => return Err(fail(ErrorCode::TypeMismatch, format!("op must be a string, got {other}"))),
        None => return Err(fail(ErrorCode::MissingField, "missing field `cmd.op`".into())),
    };
    if !Command::NAMES.contains(&op.as_str()) {
        return Err(fail(
            ErrorCode::UnknownCommand,
            format!("unknown command `{op}`; known: {}", Command::NAMES.join(", ")),
        ));
    }
    let cmd: Command = serde_json::from_value(raw.clone()).map_err(|e| {
        let text = e.to_string();
        let code = if text.starts_with("invalid type") || text.starts_with("invalid value") {
            ErrorCode::TypeMismatch
        } else if text.starts_with("unknown field") {
            ErrorCode::UnknownField
        } else if text.starts_with("missing field") {
            ErrorCode::MissingField
        } else {
            ErrorCode::Malformed
        };
        fail(code, format!("`{op}`: {text}"))
    })?;
    // serde ignores extra keys on fieldless variants, so catch them here
    if let (Some(given), Ok(Value::Object(known))) = (raw.as_object(), serde_json::to_value(&cmd)) {
        if known.len() == 1 {
            if let Some(extra) = given.keys().find(|k| k.as_str() != "op") {
                return Err(fail(ErrorCode::UnknownField, format!("`{op}`: unknown field `{extra}`")));
            }
        }
    }
    check_command(&cmd).map_err(|e| fail(ErrorCode::NonFinite, e.to_string()))?;
    Ok(CommandMessage {
        kind: CmdTag::Cmd,
        id: id.expect("checked above"),
        cmd,
    })
}
