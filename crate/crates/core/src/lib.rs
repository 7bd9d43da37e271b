//! Anytime, sound under-approximation of ReLU network preimages.
//!
//! The pipeline bounds a network with backward linear relaxation, turns the
//! lower bounds of each output constraint into input half-spaces, and refines
//! the input box with a priority queue until the union of per-box polytopes
//! covers enough of the true preimage. The same machinery certifies
//! quantitative properties with an exact-volume check.

pub mod approximator;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod lirpa;
pub mod model;
pub mod oracle;
pub mod quantverify;
pub mod refinement;

pub use error::{Error, Result};
pub use geometry::{DisjointPolytopeUnion, Halfspace, Hyperrectangle, Polytope, SeededSampler};
pub use model::{Layer, Network, NetworkFormat, OutputConstraint, OutputSpec};
