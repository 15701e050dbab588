//! Distributed optimization driven by a discrete-time optimal-control
//! formulation: each agent's state is steered by a Riccati feedback on
//! pairwise disagreement plus an averaged-gradient term.
//!
//! The crate provides the building blocks ([`graph`], [`objective`],
//! [`control`], [`consensus`], [`algorithms`]), a deterministic multi-agent
//! [`sim`]ulator and an experiment [`harness`].

pub mod algorithms;
pub mod consensus;
pub mod control;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod objective;
pub mod sim;

pub use error::{Error, Result};
