//! Thins the per-substep snapshot stream down to the telemetry rate.

use crate::bridge::Snapshot;

/// Passes every `every`-th substep, plus the first snapshot after any
/// command takes effect.
#[derive(Debug, Clone)]
pub struct Decimator {
    every: u64,
    last_applied: Option<u64>,
    last_emitted: Option<u64>,
}

impl Decimator {
    /// `rate_hz` is clamped to the physics rate.
    pub fn new(physics_hz: f64, rate_hz: f64) -> Self {
        let ratio = (physics_hz / rate_hz.min(physics_hz)) + 1e-9;
        Decimator {
            every: (ratio.floor() as u64).max(1),
            last_applied: None,
            last_emitted: None,
        }
    }

    pub fn every(&self) -> u64 {
        self.every
    }

    pub fn offer(&mut self, snap: &Snapshot) -> bool {
        let forced = self.last_applied.is_some_and(|a| a != snap.applied_commands);
        self.last_applied = Some(snap.applied_commands);
        let scheduled = snap.substep % self.every == 0 && self.last_emitted != Some(snap.substep);
        let emit = forced || scheduled;
        if emit {
            self.last_emitted = Some(snap.substep);
        }
        emit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::FsmSnapshot;
    use std::collections::BTreeMap;

    fn snap(substep: u64, applied: u64) -> Snapshot {
        Snapshot {
            t: substep as f64 * 0.001,
            substep,
            tick: substep / 5,
            joints: BTreeMap::new(),
            fsm: FsmSnapshot {
                state: "A".into(),
                elapsed: 0.0,
                terminal: false,
            },
            objects: BTreeMap::new(),
            gains: BTreeMap::new(),
            speed: None,
            paused: false,
            applied_commands: applied,
        }
    }

    #[test]
    fn fifty_hz_is_every_twentieth() {
        let mut d = Decimator::new(1000.0, 50.0);
        assert_eq!(d.every(), 20);
        let emitted: Vec<u64> = (1..=100).filter(|&i| d.offer(&snap(i, 0))).collect();
        assert_eq!(emitted, vec![20, 40, 60, 80, 100]);
    }

    #[test]
    fn full_rate_is_identity() {
        let mut d = Decimator::new(1000.0, 1000.0);
        assert!((1..=50).all(|i| d.offer(&snap(i, 0))));
    }

    #[test]
    fn command_forces_an_emission() {
        let mut d = Decimator::new(1000.0, 50.0);
        assert!(!d.offer(&snap(1, 0)));
        assert!(d.offer(&snap(2, 1)));
        assert!(!d.offer(&snap(3, 1)));
    }

    #[test]
    fn repeated_paused_snapshot_emits_once() {
        let mut d = Decimator::new(1000.0, 50.0);
        assert!(d.offer(&snap(20, 0)));
        assert!(!d.offer(&snap(20, 0)));
    }
}
