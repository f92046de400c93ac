//! JSONL trajectory log: a header, one record per controller tick, and
//! event records for commands and FSM transitions.
//!
//! Records carry sim time only, so two runs with the same seed and script
//! write identical bytes.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::command::Command;
use crate::fsm::TransitionCause;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLog {
    pub q: f64,
    pub qd: f64,
    pub tau: f64,
    pub q_ref: f64,
    pub qd_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectLog {
    pub z: f64,
    pub vz: f64,
    pub grasped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandSource {
    Script,
    Queue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        scenario: String,
        dt_sim: f64,
        ctrl_divisor: u32,
        rng_seed: u64,
        joints: Vec<String>,
    },
    Tick {
        t: f64,
        tick: u64,
        fsm: String,
        joints: BTreeMap<String, JointLog>,
        objects: BTreeMap<String, ObjectLog>,
    },
    Command {
        t: f64,
        substep: u64,
        source: CommandSource,
        cmd: Command,
        accepted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    Transition {
        t: f64,
        from: String,
        to: String,
        cause: TransitionCause,
    },
}

impl LogRecord {
    pub fn is_header(&self) -> bool {
        matches!(self, LogRecord::Header { .. })
    }
}

/// Line-oriented writer for [`LogRecord`]s.
pub struct TrajectoryLog {
    out: Box<dyn Write + Send>,
}

impl TrajectoryLog {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        TrajectoryLog {
            out: Box::new(io::BufWriter::new(out)),
        }
    }

    pub fn create(path: &std::path::Path) -> io::Result<Self> {
        Ok(Self::new(std::fs::File::create(path)?))
    }

    pub fn write(&mut self, record: &LogRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Reads every record of a JSONL log.
pub fn read_log(reader: impl BufRead) -> io::Result<Vec<LogRecord>> {
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        records.push(rec);
    }
    Ok(records)
}
