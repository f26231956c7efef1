//! A block-based memory model, a small register-transfer IR over it, and a
//! set of security-hardening passes whose output is checked by dynamic
//! co-simulation against the input program.

pub mod corpus;
pub mod demos;
pub mod gen;
pub mod ir;
pub mod memory;
pub mod passes;
pub mod relations;
pub mod semantics;
pub mod validate;
