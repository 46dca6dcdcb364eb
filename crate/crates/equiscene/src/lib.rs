//! Self-supervised equivariant scene representations.
//!
//! Learns, from pairs of nearby video frames, a scene code split into a
//! transformation-equivariant object map and an invariant background map,
//! then recombines objects, backgrounds, and learned transformations from
//! unrelated clips into novel rendered scenes.

pub mod error;
pub mod cli;
pub mod datagen;
pub mod evalsuite;
pub mod frame;
pub mod manip;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
