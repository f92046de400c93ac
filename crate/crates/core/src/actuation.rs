//! Servo torque laws and controller-to-simulation reference upsampling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ActuatorKind;

/// PD gains, motor side.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ServoGains {
    pub kp: f64,
    pub kd: f64,
}

impl ServoGains {
    pub fn new(kp: f64, kd: f64) -> Result<Self, ActuationError> {
        let g = ServoGains { kp, kd };
        if g.is_valid() {
            Ok(g)
        } else {
            Err(ActuationError::InvalidGains { kp, kd })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.kp.is_finite() && self.kd.is_finite() && self.kp >= 0.0 && self.kd >= 0.0
    }
}

/// Position and velocity reference for one joint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub q_ref: f64,
    pub qd_ref: f64,
}

impl ReferenceSample {
    pub fn new(q_ref: f64, qd_ref: f64) -> Self {
        ReferenceSample { q_ref, qd_ref }
    }

    pub fn hold(q: f64) -> Self {
        ReferenceSample { q_ref: q, qd_ref: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationMode {
    /// Linear blend from the previous to the next controller reference.
    #[default]
    Linear,
    /// Zero-order hold of the next reference over the whole period.
    Hold,
}

/// Upsamples one controller period into `substeps` simulation samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefInterpolator {
    pub prev: ReferenceSample,
    pub next: ReferenceSample,
    substeps: u32,
    pub mode: InterpolationMode,
}

impl RefInterpolator {
    pub fn new(
        prev: ReferenceSample,
        next: ReferenceSample,
        substeps: u32,
        mode: InterpolationMode,
    ) -> Result<Self, ActuationError> {
        if substeps == 0 {
            return Err(ActuationError::ZeroSubsteps);
        }
        Ok(RefInterpolator {
            prev,
            next,
            substeps,
            mode,
        })
    }

    /// An interpolator resting at `sample` (prev = next).
    pub fn steady(sample: ReferenceSample, substeps: u32, mode: InterpolationMode) -> Result<Self, ActuationError> {
        Self::new(sample, sample, substeps, mode)
    }

    pub fn substeps(&self) -> u32 {
        self.substeps
    }

    /// Starts a new period: the old target becomes the starting point.
    pub fn load(&mut self, next: ReferenceSample) {
        self.prev = self.next;
        self.next = next;
    }

    /// Sample at substep `k` of the period, `1 <= k <= K`. `k = K` returns
    /// `next` bit for bit.
    pub fn interpolate(&self, k: u32) -> Result<ReferenceSample, ActuationError> {
        if k == 0 || k > self.substeps {
            return Err(ActuationError::SubstepOutOfRange {
                k,
                substeps: self.substeps,
            });
        }
        if k == self.substeps || self.mode == InterpolationMode::Hold {
            return Ok(self.next);
        }
        let s = f64::from(k) / f64::from(self.substeps);
        Ok(ReferenceSample {
            q_ref: self.prev.q_ref + s * (self.next.q_ref - self.prev.q_ref),
            qd_ref: self.prev.qd_ref + s * (self.next.qd_ref - self.prev.qd_ref),
        })
    }
}

pub fn position_torque(kp: f64, q_ref: f64, q: f64) -> f64 {
    kp * (q_ref - q)
}

pub fn velocity_torque(kd: f64, qd_ref: f64, qd: f64) -> f64 {
    kd * (qd_ref - qd)
}

/// Motor-side PD torque; the sum of a position and a velocity actuator with
/// the same gains.
pub fn pd_torque(gains: ServoGains, reference: ReferenceSample, q: f64, qd: f64) -> f64 {
    position_torque(gains.kp, reference.q_ref, q) + velocity_torque(gains.kd, reference.qd_ref, qd)
}

/// Motor torque for one actuator, or `None` for a passive joint. A
/// `direct_torque` actuator reinterprets `q_ref` as the motor torque.
pub fn command_for(
    kind: Option<ActuatorKind>,
    gains: ServoGains,
    reference: ReferenceSample,
    q: f64,
    qd: f64,
) -> Option<f64> {
    match kind? {
        ActuatorKind::None => None,
        ActuatorKind::DirectTorque => Some(reference.q_ref),
        ActuatorKind::Position => Some(position_torque(gains.kp, reference.q_ref, q)),
        ActuatorKind::Velocity => Some(velocity_torque(gains.kd, reference.qd_ref, qd)),
        ActuatorKind::PdServo => Some(pd_torque(gains, reference, q, qd)),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActuationError {
    #[error("gains must be finite and non-negative (kp={kp}, kd={kd})")]
    InvalidGains { kp: f64, kd: f64 },
    #[error("substep {k} outside 1..={substeps}")]
    SubstepOutOfRange { k: u32, substeps: u32 },
    #[error("interpolator needs at least one substep")]
    ZeroSubsteps,
}
