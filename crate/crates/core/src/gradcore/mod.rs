//! Minimal reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value; [`Tensor`] is a cheap handle into that tape. Nodes are appended
//! in evaluation order, so walking the node list backwards is a reverse
//! topological order and [`Tape::backward`] visits each node once.
//!
//! Learnable parameters live in a [`ParamSet`] that outlives tapes. A tape
//! copies a parameter in on first use (subsequent uses of the same parameter
//! share the node) and [`ParamSet::accumulate`] pulls the gradients back out.

mod check;
mod ops;
mod params;
mod shape;
mod tape;

pub use check::{grad_check, GradCheck, GradCheckReport, Probe};
pub use params::{Init, Param, ParamId, ParamSet};
pub use shape::Shape;
pub use tape::{Fault, Tape, Tensor};

/// Layer-norm epsilon used throughout the networks.
pub const LN_EPS: f64 = 1e-5;
