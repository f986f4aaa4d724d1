//! Nonlocal diffusion with a variable differentiability order.
//!
//! Discretizes a bounded domain plus an explicit exterior collar, assembles a
//! singular pair kernel whose order varies with the node pair, and evolves
//! L1-type data by implicit Euler steps through proximal (resolvent) solves.
//! Structural inequalities of the continuous model — contraction, comparison,
//! truncation energy bounds, renormalized and entropy formulations — are
//! exposed as executable checks.

pub mod cascade;
pub mod checks;
pub mod config;
pub mod field;
pub mod grid;
pub mod kernel;
pub mod linear;
pub mod ops;
pub mod profiles;
pub mod report;
pub mod runner;
pub mod solver;
