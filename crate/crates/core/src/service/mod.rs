//! Network service, wire protocol and command-line runs.

pub mod codec;
pub mod decimate;
pub mod headless;
pub mod server;
