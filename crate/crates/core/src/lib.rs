//! Discrete-event simulator for single-server secure aggregation protocols:
//! a prime-field and secret-sharing toolkit, a deterministic event kernel
//! with measured compute times, network latency models, five aggregation
//! protocols, and a config-driven experiment harness.

pub mod api;
pub mod crypto;
pub mod field;
pub mod harness;
pub mod kernel;
pub mod net;
pub mod protocols;
pub mod shamir;
pub mod wire;
