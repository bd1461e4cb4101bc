//! Body models learned from proprioception on a simulated planar gripper,
//! and planning through them.

pub mod cli;
pub mod collect;
pub mod data;
pub mod diffcore;
pub mod entropy;
pub mod env;
pub mod nn;
pub mod planner;
pub mod preco;
pub mod probes;
