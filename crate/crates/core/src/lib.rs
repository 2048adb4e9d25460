//! Counting-constraint synthesis for large fleets of switched systems.
//!
//! The pipeline abstracts each continuous subsystem family to a finite
//! deterministic transition system, encodes prefix-suffix schedules as a
//! linear feasibility program over aggregate histograms, solves or rounds it,
//! and extracts per-subsystem switching signals that are verified by
//! co-simulation.

pub mod abstraction;
pub mod aggregate;
pub mod control;
pub mod graph;
pub mod model;
pub mod rounding;
pub mod scenario;
pub mod sim;
pub mod solver;
pub mod synthesis;
