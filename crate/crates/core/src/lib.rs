//! Controller/simulator bridge.
//!
//! A fixed-step joint-space simulator with PD servos, coupled to a posture
//! controller and a finite-state machine running at a lower rate. Operators
//! steer a running simulation over WebSocket; headless runs write JSONL
//! trajectories and a JSON run report.

pub mod actuation;
pub mod bridge;
pub mod command;
pub mod control;
pub mod datastore;
pub mod demo;
pub mod export;
pub mod fsm;
pub mod model;
pub mod physics;
pub mod scenario;
pub mod service;
pub mod trajectory;
