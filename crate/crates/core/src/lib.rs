//! Packet-level fat-tree simulator with probe-driven dynamic flowlet gaps.

pub mod dataplane;
pub mod engine;
pub mod flowdyn;
pub mod harness;
pub mod metrics;
pub mod sim;
pub mod time;
pub mod topology;
pub mod transport;
pub mod workload;
