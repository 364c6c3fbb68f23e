//! Trajectory-tree synthesis and robustness evaluation for GUI-style agents.

pub mod env;
pub mod oracles;
pub mod tree;
pub mod expansion;
pub mod dataset;
pub mod eval;
pub mod orchestrator;
