//! Deterministic control-plane simulator for a fault-tolerant SDN controller
//! running over unmodified OpenFlow 1.4 switches, plus a trace checker for
//! its exactly-once guarantees.

pub mod app;
pub mod checker;
mod hexbytes;
pub mod metrics;
pub mod netsim;
pub mod ofmodel;
pub mod replica;
pub mod switchsim;
pub mod trace;
