//! Deterministic discrete-event simulator of a file-system metadata cache
//! that lives in a programmable switch, together with the metadata servers,
//! controller, clients and workload generator around it.

pub mod client;
pub mod controller;
pub mod hashing;
pub mod history;
pub mod namespace;
pub mod protocol;
pub mod server;
pub mod sim;
pub mod switch;
pub mod workload;

/// Simulation time in nanoseconds.
pub type SimTime = u64;

pub const NANOS_PER_SEC: SimTime = 1_000_000_000;
