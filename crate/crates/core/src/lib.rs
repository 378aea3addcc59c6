//! Kernel-level energy and carbon estimation for LLM inference.

pub mod arch;
pub mod costmodel;
pub mod roofline;
pub mod graph;
pub mod gnn;
pub mod carbon;
pub mod traces;
pub mod sampler;
pub mod cli;
