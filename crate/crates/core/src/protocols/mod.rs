//! The concrete aggregation protocols and their mask-graph support.

pub mod baseline;
pub mod diag;
pub mod graph;
pub mod masking;
pub mod shamir_proto;
pub mod stevens;
