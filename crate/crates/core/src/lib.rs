//! Conformance checking of event logs against accepting Petri nets,
//! reformulated as data-oblivious integer matrix arithmetic so that the
//! replay can run over an encrypted-vector backend.

pub mod backend;
pub mod client;
pub mod compiler;
pub mod engine;
pub mod fixtures;
pub mod logio;
pub mod net;
pub mod oracle;
pub mod protocol;
